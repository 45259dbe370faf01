// Minimal end-to-end run on a small synthetic corpus: pool, sample a 20-shot
// pool, meta-train briefly and report per-language accuracy.
#include <iostream>

#include "xlabuse/xlabuse.hpp"

int main() {
  using namespace xlabuse;

  SynthSpec spec = SynthSpec::uniform(4, 30, 20);
  spec.dim = 16;
  const Corpus corpus = synth_corpus(spec, 7);
  const FeatureSet features = normalize_corpus(corpus, Pooling::l2_norm);

  const SupportPool pool = build_pool(features, 20, 11);
  TrainConfig config;
  config.epochs = 40;
  config.meta_lr = 0.01;
  config.hidden1 = 32;
  config.hidden2 = 16;
  const TrainResult trained = meta_train(pool, features, config);

  std::cout << "meta-loss " << trained.log.epochs.front().meta_loss << " -> "
            << trained.log.epochs.back().meta_loss << '\n';
  for (const auto& cell : evaluate_all(trained.params, features, pool, EvalOptions::from(config))) {
    std::cout << cell.language << "  acc " << fixed2(cell.accuracy) << "  macro-F1 " << fixed2(cell.macro_f1)
              << '\n';
  }
}
