#include <gtest/gtest.h>

#include <limits>

#include "oracles.hpp"
#include "test_util.hpp"
#include "xlabuse/evaluation.hpp"

using namespace xlabuse;
using testing_util::make_features;

namespace {

/// A model whose output ignores the input and always favours `cls`.
ModelParams constant_model(std::size_t dim, int cls) {
  Architecture a;
  a.input = dim;
  a.hidden1 = 2;
  a.hidden2 = 2;
  auto p = ModelParams::zeros(a);
  p.b3(cls) = 1.0;
  return p;
}

std::vector<std::string> erase_some(FeatureSet& fs, const std::string& lang, Label label, Split split, std::size_t n) {
  auto ids = fs.ids(lang, label, split);
  std::vector<std::string> gone(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
  for (const auto& id : gone) fs.entries.erase(id);
  return gone;
}

TrainConfig quick_train() {
  TrainConfig c;
  c.hidden1 = 16;
  c.hidden2 = 8;
  c.epochs = 15;
  c.meta_lr = 0.01;
  c.task_lr = 0.01;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Metrics, HandComputedMacroF1) {
  const ConfusionMatrix cm{40, 10, 30, 20};
  // F1(abusive) = 80/110, F1(non_abusive) = 60/90.
  EXPECT_NEAR(macro_f1(cm), 100.0 * (80.0 / 110.0 + 60.0 / 90.0) / 2.0, 1e-12);
  EXPECT_NEAR(macro_f1(cm), 69.70, 0.01);
  EXPECT_EQ(fixed2(macro_f1(cm)), "69.70");
  EXPECT_DOUBLE_EQ(accuracy(cm), 70.0);
}

TEST(Metrics, SymmetricAndPerfectCases) {
  EXPECT_DOUBLE_EQ(macro_f1({25, 25, 25, 25}), 50.0);
  EXPECT_DOUBLE_EQ(accuracy({25, 25, 25, 25}), 50.0);
  EXPECT_DOUBLE_EQ(macro_f1({7, 0, 9, 0}), 100.0);
  EXPECT_DOUBLE_EQ(accuracy({7, 0, 9, 0}), 100.0);
  EXPECT_THROW(accuracy({}), ValidationError);
}

TEST(Metrics, EmptyClassScoresZero) {
  // Every clip abusive and predicted abusive: the negative class is neither
  // present nor predicted.
  EXPECT_DOUBLE_EQ(macro_f1({10, 0, 0, 0}), 50.0);
  // Always predicting non_abusive on a mixed split.
  EXPECT_NEAR(macro_f1({0, 0, 222, 148}), 100.0 * (0.0 + 444.0 / 592.0) / 2.0, 1e-12);
}

TEST(Metrics, MatchBruteForceRecount) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const double bias = std::uniform_real_distribution<double>(0, 1)(rng);
    std::bernoulli_distribution coin(bias);
    std::vector<int> pred(n), target(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = coin(rng);
      target[i] = static_cast<int>(rng() % 2);
    }
    const auto cm = ConfusionMatrix::from(pred, target);
    const auto ref = oracle::recount(pred, target);
    EXPECT_EQ(cm.total(), n);
    EXPECT_EQ(accuracy(cm), ref.accuracy);
    EXPECT_NEAR(macro_f1(cm), ref.macro_f1, 1e-12);
    EXPECT_EQ(fixed2(macro_f1(cm)), oracle::exact_macro_f1_2dp(pred, target));
    // Swapping which class counts as positive leaves macro-F1 unchanged.
    EXPECT_EQ(macro_f1(cm), macro_f1({cm.tn, cm.fn, cm.tp, cm.fp}));
  }
}

TEST(Metrics, Formatting) {
  EXPECT_EQ(fixed2(82.454), "82.45");
  EXPECT_EQ(fixed2(-0.001), "0.00");
  EXPECT_EQ(signed2(3.35), "+3.35");
  EXPECT_EQ(signed2(-1.2), "-1.20");
  EXPECT_EQ(signed2(0.0), "+0.00");
  EXPECT_DOUBLE_EQ(round2(82.45 - 79.1), 3.35);
}

TEST(EvaluateLanguage, MajorityPredictorOnBengaliShapedSplit) {
  auto fs = make_features({"Bengali"}, 4, 222);
  erase_some(fs, "Bengali", Label::abusive, Split::test, 222 - 148);
  ASSERT_EQ(fs.ids("Bengali", Split::test).size(), 370u);
  const auto support = build_support_set(fs, "Bengali", 2, 1);
  const auto cell = evaluate_language(constant_model(fs.dim, 0), fs, "Bengali", support, {0.001, 1, false});
  EXPECT_DOUBLE_EQ(cell.accuracy, 100.0 * 222.0 / 370.0);
  EXPECT_EQ(fixed2(cell.accuracy), "60.00");
  EXPECT_EQ(cell.confusion, (ConfusionMatrix{0, 0, 222, 148}));
  EXPECT_EQ(cell.shot, 2u);
  EXPECT_EQ(cell.language, "Bengali");
}

TEST(EvaluateLanguage, PerfectPredictorScoresHundred) {
  // A one-hidden-unit pass-through of the first coordinate separates the
  // fixture classes, whose means sit at +-20 with unit noise.
  auto fs = make_features({"Hindi"}, 4, 30, 3, 7, 40.0);
  Architecture a;
  a.input = 3;
  a.hidden1 = 1;
  a.hidden2 = 1;
  auto p = ModelParams::zeros(a);
  p.w1(0, 0) = 1.0;
  p.w2(0, 0) = 1.0;
  p.w3(0, 1) = 1.0;
  p.w3(0, 0) = -1.0;
  const auto cell = evaluate_language(p, fs, "Hindi", build_support_set(fs, "Hindi", 4, 1), {0.001, 1, false});
  EXPECT_DOUBLE_EQ(cell.accuracy, 100.0);
  EXPECT_DOUBLE_EQ(cell.macro_f1, 100.0);
}

TEST(EvaluateLanguage, ReadsOnlySupportAndOwnTestClips) {
  auto fs = make_features({"Hindi", "Tamil"}, 12, 5);
  const auto support = build_support_set(fs, "Hindi", 6, 3);
  const auto members = support.members();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& [id, e] : fs.entries) {
    const bool is_member = std::find(members.begin(), members.end(), id) != members.end();
    const bool own_test = e.language == "Hindi" && e.split == Split::test;
    if (!is_member && !own_test) std::fill(e.values.begin(), e.values.end(), nan);
  }
  Architecture a;
  a.input = fs.dim;
  a.hidden1 = 8;
  a.hidden2 = 4;
  const auto p = init_params(a, 1);
  const auto cell = evaluate_language(p, fs, "Hindi", support, {0.01, 2, true});
  EXPECT_EQ(cell.confusion.total(), 10u);

  // A support set that names a test clip or another language is refused.
  SupportSet bad = support;
  bad.abusive[0] = fs.ids("Hindi", Label::abusive, Split::test)[0];
  EXPECT_THROW(evaluate_language(p, fs, "Hindi", bad, {}), ValidationError);
  bad = support;
  bad.non_abusive[0] = fs.ids("Tamil", Label::non_abusive, Split::train)[0];
  EXPECT_THROW(evaluate_language(p, fs, "Hindi", bad, {}), ValidationError);
  EXPECT_THROW(evaluate_language(p, fs, "Tamil", support, {}), ValidationError);
}

TEST(EvaluateLanguage, EmptyTestSplitIsAnError) {
  auto fs = make_features({"Odia"}, 4, 1);
  erase_some(fs, "Odia", Label::abusive, Split::test, 1);
  erase_some(fs, "Odia", Label::non_abusive, Split::test, 1);
  EXPECT_THROW(evaluate_language(constant_model(fs.dim, 0), fs, "Odia", build_support_set(fs, "Odia", 2, 1), {}),
               ValidationError);
}

TEST(EvaluateLanguage, AdaptationUsesSupportSet) {
  const auto fs = make_features({"Hindi"}, 10, 20, 4, 2, 6.0);
  Architecture a;
  a.input = 4;
  a.hidden1 = 8;
  a.hidden2 = 4;
  const auto p = init_params(a, 2);
  const auto support = build_support_set(fs, "Hindi", 20, 1);
  const auto plain = evaluate_language(p, fs, "Hindi", support, {0.5, 20, false});
  const auto adapted = evaluate_language(p, fs, "Hindi", support, {0.5, 20, true});
  const auto expect_params =
      inner_adapt(p, make_batch(fs, support.members()), 0.5, 20).adapted;
  const auto test_ids = fs.ids("Hindi", Split::test);
  const auto expected = ConfusionMatrix::from(predict(expect_params, make_batch(fs, test_ids)),
                                              make_batch(fs, test_ids).targets);
  EXPECT_EQ(adapted.confusion, expected);
  EXPECT_GE(adapted.accuracy, plain.accuracy);
}

TEST(RunGrid, CardinalityDeterminismAndSchema) {
  SynthSpec spec = SynthSpec::uniform(3, 12, 6);
  spec.dim = 8;
  const auto corpus = synth_corpus(spec, 3);
  const std::vector<FeatureSet> sets = {normalize_corpus(corpus, Pooling::temporal_mean),
                                        normalize_corpus(corpus, Pooling::l2_norm)};
  GridOptions opt;
  opt.shots = {4, 8};
  opt.train = quick_train();
  const auto g1 = run_grid(sets, opt);
  EXPECT_TRUE(g1.complete);
  EXPECT_EQ(g1.cells.size(), 3u * 2u * 2u);
  std::set<std::tuple<std::string, std::size_t, std::string>> keys;
  for (const auto& c : g1.cells) keys.insert({c.language, c.shot, c.method});
  EXPECT_EQ(keys.size(), g1.cells.size());
  const auto csv = report_csv(g1);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "language,shot,method,model,accuracy,macro_f1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  const auto g2 = run_grid(sets, opt);
  EXPECT_EQ(report_csv(g2), csv);
  EXPECT_EQ(g2.config_digest, g1.config_digest);
  EXPECT_EQ(to_json(g2), to_json(g1));

  opt.train.seed += 1;
  EXPECT_NE(run_grid(sets, opt).config_digest, g1.config_digest);
}

TEST(RunGrid, CellsReproducibleAlone) {
  SynthSpec spec = SynthSpec::uniform(2, 12, 4);
  spec.dim = 6;
  const auto fs = normalize_corpus(synth_corpus(spec, 4), Pooling::l2_norm);
  GridOptions opt;
  opt.shots = {4, 8};
  opt.train = quick_train();
  const auto full = run_grid({fs}, opt);
  opt.shots = {8};
  const auto alone = run_grid({fs}, opt);
  ASSERT_EQ(alone.cells.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(alone.cells[i].confusion, full.cells[2 + i].confusion);
    EXPECT_EQ(alone.cells[i].shot, 8u);
  }
}

TEST(RunGrid, FailedCellsMarkGridIncomplete) {
  const auto fs = make_features({"A", "B"}, 5, 3);
  GridOptions opt;
  opt.shots = {4, 20};
  opt.train = quick_train();
  const auto g = run_grid({fs}, opt);
  EXPECT_FALSE(g.complete);
  EXPECT_EQ(g.cells.size(), 2u);
  ASSERT_EQ(g.failures.size(), 1u);
  EXPECT_NE(g.failures[0].find("20"), std::string::npos);
}

TEST(RunGrid, JsonRoundTrip) {
  ReportGrid g;
  g.config_digest = "abc";
  g.cells.push_back({"Hindi", 50, "l2_norm", "fixture", 81.25, 80.5, {1, 2, 3, 4}});
  const auto back = grid_from_json(nlohmann::json::parse(to_json(g).dump()));
  ASSERT_EQ(back.cells.size(), 1u);
  EXPECT_EQ(back.cells[0].confusion, (ConfusionMatrix{1, 2, 3, 4}));
  EXPECT_EQ(report_csv(back), report_csv(g));
}

TEST(Baseline, PublishedValues) {
  const auto b = adima_baseline();
  EXPECT_EQ(b.size(), 5u);
  EXPECT_EQ(b.at("Bengali"), 79.1);
  EXPECT_EQ(b.at("Hindi"), 80.7);
  EXPECT_EQ(b.at("Kannada"), 78.4);
  EXPECT_EQ(b.at("Punjabi"), 83.4);
  EXPECT_EQ(b.at("Tamil"), 75.2);
  EXPECT_FALSE(b.contains("Bhojpuri"));
}

TEST(Baseline, DeltasAndMissingRows) {
  ReportGrid g;
  g.cells.push_back({"Bengali", 50, "l2_norm", "m", 80, 70.0, {}});
  g.cells.push_back({"Bengali", 100, "l2_norm", "m", 85, 82.45, {}});
  g.cells.push_back({"Bhojpuri", 50, "l2_norm", "m", 60, 61.0, {}});
  g.cells.push_back({"Hindi", 50, "l2_norm", "m", 60, 80.7, {}});
  g.cells.push_back({"Tamil", 50, "l2_norm", "m", 60, 70.004, {}});
  const auto rows = compare_to_baseline(g, adima_baseline());
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].ours, 82.45);
  EXPECT_EQ(*rows[0].delta, 3.35);
  EXPECT_FALSE(rows[1].baseline.has_value());
  EXPECT_EQ(*rows[2].delta, 0.0);
  EXPECT_EQ(baseline_csv(rows),
            "language,ours_macro_f1,baseline_macro_f1,delta\n"
            "Bengali,82.45,79.10,+3.35\n"
            "Bhojpuri,61.00,n/a,n/a\n"
            "Hindi,80.70,80.70,+0.00\n"
            "Tamil,70.00,75.20,-5.20\n");
}

TEST(Baseline, ParsesCsv) {
  std::istringstream in("language,macro_f1\r\nBengali,79.1\nBhojpuri,-\nHindi,80.7\n\nOdia,\n");
  const auto b = parse_baseline_csv(in);
  EXPECT_EQ(b, (Baseline{{"Bengali", 79.1}, {"Hindi", 80.7}}));
  std::istringstream bad("Hindi;80\n");
  EXPECT_THROW(parse_baseline_csv(bad), ValidationError);
  std::istringstream worse("Hindi,eighty\n");
  EXPECT_THROW(parse_baseline_csv(worse), ValidationError);
}
