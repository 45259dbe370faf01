// Command-line driver: synth, validate, normalize, train, eval, grid, tsne,
// report. Every subcommand writes bundle.json (resolved config, digest,
// seeds, interpretation log, version) next to its outputs.
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/corpus.hpp"
#include "xlabuse/evaluation.hpp"
#include "xlabuse/learner.hpp"
#include "xlabuse/maml.hpp"
#include "xlabuse/normalization.hpp"
#include "xlabuse/sampler.hpp"
#include "xlabuse/tsne.hpp"

namespace xlabuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "XLABUSE_OUT";

/// Interpretations baked into training and evaluation; copied into every
/// experiment's metadata.
inline std::vector<std::string> interpretation_log(const TrainConfig& c) {
  return {
      "task granularity: one MAML task per language",
      "query set: carved from the k-shot pool, support_fraction=" + std::to_string(c.support_fraction),
      "meta gradient order: " + to_string(c.meta_mode),
      "inner steps: " + std::to_string(c.inner_steps),
      "batch_size: query chunk size per meta-step, not tasks per meta-batch",
      "lr schedule: linear warm-up from 1/3 to 1 over 5 epochs, applied to " +
          std::string(c.schedule_task_lr ? "task and meta" : "meta") + " learning rate",
      "adam: beta1=0.9 beta2=0.999 eps=1e-8",
      "init: uniform fan-in with leaky-ReLU gain, zero biases; leaky slope " + std::to_string(c.negative_slope),
      "loss: mean softmax cross-entropy",
      "test-time adaptation: inner loop on the language's k-shot support set",
      "macro-F1: class absent from both predictions and targets scores 0",
  };
}

inline void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline void write_bundle(const fs::path& out_dir, const std::string& subcommand, const json& config,
                         const json& seeds, const std::vector<std::string>& interpretations = {}) {
  write_json(out_dir / "bundle.json", {{"tool", "xlabuse"},
                                       {"version", std::string(kVersion)},
                                       {"subcommand", subcommand},
                                       {"config", config},
                                       {"config_digest", config_digest(config)},
                                       {"seeds", seeds},
                                       {"interpretations", interpretations}});
}

inline fs::path default_out(const std::string& subcommand) {
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "xlabuse-out") / subcommand;
}

inline void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw ValidationError(what + " directory does not exist: " + p.string());
}

inline void check_shots(const std::vector<std::size_t>& shots) {
  if (shots.empty()) throw ValidationError("shot list must not be empty");
  for (auto k : shots)
    if (k == 0 || k % 2) throw ValidationError("shot " + std::to_string(k) + " is not a positive even number");
}

/// Flags shared by train and grid. Values given on the command line win
/// over the config file.
struct TrainFlags {
  std::optional<double> task_lr, meta_lr, support_fraction;
  std::optional<std::size_t> inner_steps, epochs, batch_size;
  std::optional<std::string> meta_mode;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--task-lr", task_lr, "inner-loop learning rate");
    app->add_option("--meta-lr", meta_lr, "outer Adam learning rate");
    app->add_option("--inner-steps", inner_steps, "inner gradient steps per task");
    app->add_option("--epochs", epochs, "meta-training epochs");
    app->add_option("--batch-size", batch_size, "query chunk size");
    app->add_option("--meta-mode", meta_mode, "first_order | second_order");
    app->add_option("--support-fraction", support_fraction, "support share of each k-shot set");
    app->add_option("--seed", seed, "experiment seed");
  }

  void apply(TrainConfig& c) const {
    if (task_lr) c.task_lr = *task_lr;
    if (meta_lr) c.meta_lr = *meta_lr;
    if (inner_steps) c.inner_steps = *inner_steps;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (meta_mode) c.meta_mode = parse_meta_mode(*meta_mode);
    if (support_fraction) c.support_fraction = *support_fraction;
    if (seed) c.seed = *seed;
  }
};

inline void update_from_json(TsneConfig& c, const json& j) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("tsne_perplexity", c.perplexity);
  take("tsne_iterations", c.iterations);
  take("tsne_learning_rate", c.learning_rate);
  take("tsne_early_exaggeration", c.early_exaggeration);
  take("tsne_exaggeration_iters", c.exaggeration_iters);
  take("tsne_standardize", c.standardize);
  take("tsne_seed", c.seed);
}

/// Reads the flat experiment config used by `grid`.
struct ExperimentConfig {
  fs::path corpus;
  std::vector<Pooling> methods{Pooling::temporal_mean, Pooling::l2_norm};
  std::vector<std::size_t> shots{50, 100, 150, 200};
  TrainConfig train;
  TsneConfig tsne;
  fs::path output;
  bool adapt_at_test = true;

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig e;
    try {
      if (j.contains("corpus")) e.corpus = j.at("corpus").get<std::string>();
      if (j.contains("methods")) {
        e.methods.clear();
        for (const auto& m : j.at("methods")) e.methods.push_back(parse_pooling(m.get<std::string>()));
      }
      if (j.contains("shots")) e.shots = j.at("shots").get<std::vector<std::size_t>>();
      if (j.contains("output")) e.output = j.at("output").get<std::string>();
      if (j.contains("adapt_at_test")) e.adapt_at_test = j.at("adapt_at_test").get<bool>();
      update_from_json(e.train, j);
      update_from_json(e.tsne, j);
    } catch (const json::exception& ex) {
      throw ValidationError(std::string("experiment config: ") + ex.what());
    }
    return e;
  }

  json to_json() const {
    json j = xlabuse::to_json(train);
    j["corpus"] = corpus.string();
    j["methods"] = json::array();
    for (auto m : methods) j["methods"].push_back(to_string(m));
    j["shots"] = shots;
    j["adapt_at_test"] = adapt_at_test;
    const json t = xlabuse::to_json(tsne);
    for (auto& [k, v] : t.items()) j["tsne_" + k] = v;
    return j;
  }
};

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Few-shot cross-lingual abuse classification over speech embeddings", "xlabuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic embedding corpus");
  fs::path synth_out, synth_config;
  std::size_t synth_langs = 10, synth_train = 60, synth_test = 40, synth_dim = 64, synth_tmin = 4, synth_tmax = 12;
  double synth_class_sep = 8.0, synth_lang_sep = 4.0, synth_noise = 1.0;
  std::uint64_t synth_seed = 0;
  bool synth_adima = false;
  synth->add_option("--out", synth_out, "corpus directory");
  synth->add_option("--config", synth_config, "JSON file with synth keys");
  synth->add_option("--languages", synth_langs, "number of languages");
  synth->add_option("--train-per-class", synth_train);
  synth->add_option("--test-per-class", synth_test);
  synth->add_option("--dim", synth_dim);
  synth->add_option("--frames-min", synth_tmin);
  synth->add_option("--frames-max", synth_tmax);
  synth->add_option("--class-separation", synth_class_sep);
  synth->add_option("--language-separation", synth_lang_sep);
  synth->add_option("--noise", synth_noise);
  synth->add_option("--seed", synth_seed);
  synth->add_flag("--adima-counts", synth_adima, "use the ADIMA per-language class/split counts");

  // validate
  auto* validate = app.add_subcommand("validate", "validate a corpus directory and print its counts");
  fs::path validate_corpus, validate_out;
  validate->add_option("--corpus", validate_corpus)->required();
  validate->add_option("--out", validate_out);

  // normalize
  auto* normalize = app.add_subcommand("normalize", "pool a corpus into a feature set");
  fs::path norm_corpus, norm_out;
  std::string norm_method = "l2-norm";
  normalize->add_option("--corpus", norm_corpus)->required();
  normalize->add_option("--method", norm_method, "temporal-mean | l2-norm");
  normalize->add_option("--out", norm_out);

  // train
  auto* train = app.add_subcommand("train", "meta-train one model on a k-shot pool");
  fs::path train_features, train_out, train_config;
  std::size_t train_shots = 50;
  TrainFlags train_flags;
  train->add_option("--features", train_features)->required();
  train->add_option("--shots", train_shots, "k, total clips per language");
  train->add_option("--config", train_config);
  train->add_option("--out", train_out);
  train_flags.add(train);

  // eval
  auto* eval = app.add_subcommand("eval", "adapt and score a trained model per language");
  fs::path eval_features, eval_model, eval_out;
  bool eval_no_adapt = false;
  eval->add_option("--features", eval_features)->required();
  eval->add_option("--model", eval_model, "output directory of `train`")->required();
  eval->add_option("--out", eval_out);
  eval->add_flag("--no-adapt", eval_no_adapt, "score the meta-learned initialisation directly");

  // grid
  auto* grid = app.add_subcommand("grid", "train and evaluate every (method, shot) cell");
  fs::path grid_config, grid_corpus, grid_out;
  std::vector<std::size_t> grid_shots;
  TrainFlags grid_flags;
  grid->add_option("--config", grid_config, "experiment JSON");
  grid->add_option("--corpus", grid_corpus);
  grid->add_option("--shots", grid_shots);
  grid->add_option("--out", grid_out);
  grid_flags.add(grid);

  // tsne
  auto* tsne = app.add_subcommand("tsne", "2-D t-SNE projection of a feature set");
  fs::path tsne_features, tsne_out;
  TsneConfig tsne_cfg;
  tsne->add_option("--features", tsne_features)->required();
  tsne->add_option("--out", tsne_out);
  tsne->add_option("--perplexity", tsne_cfg.perplexity);
  tsne->add_option("--iterations", tsne_cfg.iterations);
  tsne->add_option("--learning-rate", tsne_cfg.learning_rate);
  tsne->add_option("--seed", tsne_cfg.seed);
  tsne->add_flag("--standardize", tsne_cfg.standardize, "z-score feature columns first");

  // report
  auto* report = app.add_subcommand("report", "compare a grid report with baseline macro-F1 values");
  fs::path report_grid, report_baseline, report_out;
  report->add_option("--grid", report_grid, "report.json written by grid or eval")->required();
  report->add_option("--baseline", report_baseline, "language,macro_f1 CSV (default: ADIMA baseline)");
  report->add_option("--out", report_out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) err << app.help();
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      SynthSpec spec = synth_adima ? SynthSpec{} : SynthSpec::uniform(synth_langs, synth_train, synth_test);
      if (synth_adima) spec.languages = adima_counts();
      spec.dim = synth_dim;
      spec.frames_min = synth_tmin;
      spec.frames_max = synth_tmax;
      spec.class_separation = synth_class_sep;
      spec.language_separation = synth_lang_sep;
      spec.noise_sigma = synth_noise;
      if (!synth_config.empty()) {
        const json j = read_json(synth_config);
        if (j.contains("languages") && !synth->count("--languages")) {
          spec = SynthSpec::uniform(j.at("languages").get<std::size_t>(), j.value("train_per_class", synth_train),
                                    j.value("test_per_class", synth_test));
        }
        spec.dim = synth->count("--dim") ? synth_dim : j.value("dim", spec.dim);
        spec.class_separation = synth->count("--class-separation") ? synth_class_sep : j.value("class_separation", spec.class_separation);
        spec.language_separation = synth->count("--language-separation") ? synth_lang_sep : j.value("language_separation", spec.language_separation);
        spec.noise_sigma = synth->count("--noise") ? synth_noise : j.value("noise_sigma", spec.noise_sigma);
        spec.frames_min = synth->count("--frames-min") ? synth_tmin : j.value("frames_min", spec.frames_min);
        spec.frames_max = synth->count("--frames-max") ? synth_tmax : j.value("frames_max", spec.frames_max);
        if (!synth->count("--seed")) synth_seed = j.value("seed", synth_seed);
      }
      if (synth_out.empty()) synth_out = default_out("synth");
      const Corpus c = synth_corpus(spec, synth_seed);
      write_corpus(c, synth_out);
      json counts = json::array();
      for (const auto& lc : spec.languages) {
        counts.push_back({{"language", lc.name}, {"abusive_train", lc.abusive_train}, {"abusive_test", lc.abusive_test},
                          {"non_abusive_train", lc.non_abusive_train}, {"non_abusive_test", lc.non_abusive_test}});
      }
      write_bundle(synth_out, "synth",
                   {{"dim", spec.dim}, {"frames_min", spec.frames_min}, {"frames_max", spec.frames_max},
                    {"class_separation", spec.class_separation}, {"language_separation", spec.language_separation},
                    {"noise_sigma", spec.noise_sigma}, {"counts", counts}},
                   {{"seed", synth_seed}});
      out << "wrote " << c.records.size() << " clips to " << synth_out.string() << '\n';
      return 0;
    }

    if (*validate) {
      require_dir(validate_corpus, "corpus");
      const Corpus c = read_corpus(validate_corpus);
      if (validate_out.empty()) validate_out = default_out("validate");
      json rows = json::array();
      out << "language,label,split,count\n";
      for (const auto& [key, n] : c.counts()) {
        out << key.language << ',' << to_string(key.label) << ',' << to_string(key.split) << ',' << n << '\n';
        rows.push_back({{"language", key.language}, {"label", to_string(key.label)}, {"split", to_string(key.split)},
                        {"count", n}});
      }
      const auto degenerate = c.degenerate_languages();
      for (const auto& l : degenerate) out << "warning: language " << l << " lacks train clips of some class\n";
      out << "total " << c.records.size() << " clips, dim " << c.dim << '\n';
      fs::create_directories(validate_out);
      write_json(validate_out / "counts.json", {{"dim", c.dim}, {"total", c.records.size()}, {"cells", rows},
                                                {"degenerate_languages", degenerate}, {"provenance", c.provenance}});
      write_bundle(validate_out, "validate", {{"corpus", validate_corpus.string()}}, json::object());
      return 0;
    }

    if (*normalize) {
      require_dir(norm_corpus, "corpus");
      const Pooling method = parse_pooling(norm_method);
      if (norm_out.empty()) norm_out = default_out("features") / to_string(method);
      const Corpus c = read_corpus(norm_corpus);
      NormalizationReport rep;
      const FeatureSet features = normalize_corpus(c, method, &rep);
      write_features(features, norm_out);
      write_json(norm_out / "normalization_report.json",
                 {{"errors", rep.errors}, {"zero_norm_frames", rep.zero_norm_frames}, {"vectors", features.entries.size()}});
      write_bundle(norm_out, "normalize", {{"corpus", norm_corpus.string()}, {"method", to_string(method)}},
                   json::object());
      out << "wrote " << features.entries.size() << " " << to_string(method) << " vectors to " << norm_out.string()
          << '\n';
      if (!rep.ok()) {
        err << rep.errors.size() << " clips failed; see normalization_report.json\n";
        return 1;
      }
      return 0;
    }

    if (*train) {
      require_dir(train_features, "features");
      TrainConfig cfg;
      if (!train_config.empty()) update_from_json(cfg, read_json(train_config));
      train_flags.apply(cfg);
      cfg.validate();
      check_shots({train_shots});
      if (train_out.empty()) train_out = default_out("train") / ("k" + std::to_string(train_shots));
      const FeatureSet features = read_features(train_features);
      const std::uint64_t pool_seed = derive_seed(cfg.seed, "pool");
      const SupportPool pool = build_pool(features, train_shots, pool_seed);
      const TrainResult result = meta_train(pool, features, cfg);
      fs::create_directories(train_out);
      write_checkpoint(result.params, cfg.seed, train_out / "checkpoint.bin");
      write_json(train_out / "trainlog.json", to_json(result.log));
      write_json(train_out / "pool.json", to_json(pool));
      json meta = to_json(cfg);
      meta["shots"] = train_shots;
      meta["features"] = train_features.string();
      meta["method"] = to_string(features.method);
      meta["dim"] = features.dim;
      meta["interpretations"] = interpretation_log(cfg);
      write_json(train_out / "experiment.json", meta);
      write_bundle(train_out, "train", meta, {{"seed", cfg.seed}, {"pool_seed", pool_seed}}, interpretation_log(cfg));
      out << "trained " << cfg.epochs << " epochs, final meta-loss " << result.log.epochs.back().meta_loss << '\n';
      return 0;
    }

    if (*eval) {
      require_dir(eval_features, "features");
      require_dir(eval_model, "model");
      const FeatureSet features = read_features(eval_features);
      const json meta = read_json(eval_model / "experiment.json");
      TrainConfig cfg;
      update_from_json(cfg, meta);
      const Checkpoint ck = read_checkpoint(eval_model / "checkpoint.bin");
      if (ck.params.arch.input != features.dim) throw ValidationError("checkpoint dim does not match feature dim");
      const SupportPool pool = pool_from_json(read_json(eval_model / "pool.json"));
      if (eval_out.empty()) eval_out = default_out("eval");
      ReportGrid g;
      g.cells = evaluate_all(ck.params, features, pool, EvalOptions::from(cfg, !eval_no_adapt));
      json cfg_json = meta;
      cfg_json["adapt_at_test"] = !eval_no_adapt;
      g.config_digest = config_digest(cfg_json);
      fs::create_directories(eval_out);
      write_text(eval_out / "report.csv", report_csv(g));
      write_json(eval_out / "report.json", to_json(g));
      write_bundle(eval_out, "eval", cfg_json, {{"seed", cfg.seed}}, interpretation_log(cfg));
      out << report_csv(g);
      return 0;
    }

    if (*grid) {
      ExperimentConfig ec;
      if (!grid_config.empty()) ec = ExperimentConfig::from_json(read_json(grid_config));
      if (!grid_corpus.empty()) ec.corpus = grid_corpus;
      if (!grid_shots.empty()) ec.shots = grid_shots;
      if (!grid_out.empty()) ec.output = grid_out;
      if (ec.output.empty()) ec.output = default_out("grid");
      grid_flags.apply(ec.train);
      ec.train.validate();
      check_shots(ec.shots);
      if (ec.methods.empty()) throw ValidationError("no normalization methods configured");
      if (ec.corpus.empty()) throw ValidationError("grid needs a corpus (config key \"corpus\" or --corpus)");
      require_dir(ec.corpus, "corpus");

      const Corpus corpus = read_corpus(ec.corpus);
      std::vector<FeatureSet> sets;
      for (Pooling m : ec.methods) {
        NormalizationReport rep;
        sets.push_back(normalize_corpus(corpus, m, &rep));
        if (!rep.ok()) throw ValidationError(std::to_string(rep.errors.size()) + " clips failed " + to_string(m));
        write_features(sets.back(), ec.output / "features" / to_string(m));
      }
      GridOptions opts{ec.shots, ec.train, ec.adapt_at_test};
      const ReportGrid g = run_grid(sets, opts, [&](const FeatureSet& features, std::size_t shot, const SupportPool& pool,
                                                    const TrainResult& result, const TrainConfig& tc) {
        const fs::path cell_dir = ec.output / "cells" / (to_string(features.method) + "_k" + std::to_string(shot));
        fs::create_directories(cell_dir);
        write_checkpoint(result.params, tc.seed, cell_dir / "checkpoint.bin");
        write_json(cell_dir / "trainlog.json", to_json(result.log));
        write_json(cell_dir / "pool.json", to_json(pool));
        json meta = to_json(tc);
        meta["shots"] = shot;
        meta["method"] = to_string(features.method);
        meta["interpretations"] = interpretation_log(tc);
        write_json(cell_dir / "experiment.json", meta);
      });
      write_text(ec.output / "report.csv", report_csv(g));
      json rj = to_json(g);
      rj["config"] = ec.to_json();
      rj["interpretations"] = interpretation_log(ec.train);
      write_json(ec.output / "report.json", rj);
      json seeds = {{"seed", ec.train.seed}};
      for (Pooling m : ec.methods)
        for (auto k : ec.shots) seeds[to_string(m) + "_k" + std::to_string(k)] = cell_seed(ec.train.seed, m, k);
      write_bundle(ec.output, "grid", ec.to_json(), seeds, interpretation_log(ec.train));
      out << "wrote " << g.cells.size() << " cells to " << (ec.output / "report.csv").string() << '\n';
      if (!g.complete) {
        for (const auto& f : g.failures) err << "cell failed: " << f << '\n';
        return 2;
      }
      return 0;
    }

    if (*tsne) {
      require_dir(tsne_features, "features");
      const FeatureSet features = read_features(tsne_features);
      if (tsne_out.empty()) tsne_out = default_out("tsne");
      const Projection proj = project_features(features, tsne_cfg);
      write_projection(proj, features, tsne_cfg, tsne_out);
      write_bundle(tsne_out, "tsne", to_json(tsne_cfg), {{"seed", tsne_cfg.seed}});
      out << "KL " << proj.initial_kl << " -> " << proj.final_kl << '\n';
      if (proj.jittered_points) err << "warning: " << proj.jittered_points << " duplicate points jittered\n";
      return 0;
    }

    if (*report) {
      const ReportGrid g = grid_from_json(read_json(report_grid));
      Baseline baseline = adima_baseline();
      if (!report_baseline.empty()) {
        std::ifstream in(report_baseline);
        if (!in) throw ValidationError("cannot open " + report_baseline.string());
        baseline = parse_baseline_csv(in);
      }
      if (report_out.empty()) report_out = default_out("report");
      fs::create_directories(report_out);
      const auto rows = compare_to_baseline(g, baseline);
      write_text(report_out / "baseline_comparison.csv", baseline_csv(rows));
      json jb = json::object();
      for (const auto& [k, v] : baseline) jb[k] = v;
      write_bundle(report_out, "report", {{"grid", report_grid.string()}, {"baseline", jb}}, json::object());
      out << baseline_csv(rows);
      return 0;
    }
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace xlabuse::cli
