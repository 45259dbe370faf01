// Per-language test-time adaptation and scoring, result grids, and the
// comparison against published baseline macro-F1 values.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/maml.hpp"
#include "xlabuse/normalization.hpp"
#include "xlabuse/sampler.hpp"

namespace xlabuse {

/// Binary confusion counts with abusive as the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  void add(int predicted, int target) {
    if (predicted == 1) (target == 1 ? tp : fp) += 1;
    else (target == 0 ? tn : fn) += 1;
  }

  static ConfusionMatrix from(std::span<const int> predicted, std::span<const int> targets) {
    if (predicted.size() != targets.size()) throw ValidationError("prediction/target length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(predicted[i], targets[i]);
    return cm;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

/// Percent correct.
inline double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ValidationError("accuracy of an empty confusion matrix");
  return 100.0 * static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

/// Unweighted mean of the two per-class F1 scores, in percent. A class that
/// is neither predicted nor present scores F1 = 0.
/// Per-class F1 is 2tp / (2tp + fp + fn), so the macro average reduces to one
/// integer fraction and a single rounding; a class with an empty
/// denominator scores 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  const double da = static_cast<double>(2 * cm.tp + cm.fp + cm.fn);
  const double db = static_cast<double>(2 * cm.tn + cm.fn + cm.fp);
  const double ta = static_cast<double>(cm.tp), tb = static_cast<double>(cm.tn);
  if (da == 0.0) return 100.0 * tb / db;
  if (db == 0.0) return 100.0 * ta / da;
  return 100.0 * (ta * db + tb * da) / (da * db);
}

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

inline std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round2(v) + 0.0);
  return buf;
}

struct MetricsCell {
  std::string language;
  std::size_t shot = 0;
  std::string method;
  std::string model;
  double accuracy = 0.0;  // percent
  double macro_f1 = 0.0;  // percent
  ConfusionMatrix confusion;
};

struct EvalOptions {
  double task_lr = 0.001;
  std::size_t inner_steps = 1;
  /// Adapt on the language's support set before scoring; false scores the
  /// meta-learned initialisation directly.
  bool adapt = true;

  static EvalOptions from(const TrainConfig& c, bool adapt = true) { return {c.task_lr, c.inner_steps, adapt}; }
};

/// Adapts on `support` and scores every test clip of `language`. Only the
/// support members and the language's test clips are read from `features`.
inline MetricsCell evaluate_language(const ModelParams& params, const FeatureSet& features,
                                     const std::string& language, const SupportSet& support,
                                     const EvalOptions& options) {
  if (support.language != language) {
    throw ValidationError("support set is for " + support.language + ", not " + language);
  }
  const auto members = support.members();
  for (const auto& id : members) {
    const FeatureEntry& e = features.at(id);
    if (e.language != language || e.split != Split::train) {
      throw ValidationError("support clip " + id + " is not a " + language + " train clip");
    }
  }
  const auto test_ids = features.ids(language, Split::test);
  if (test_ids.empty()) throw ValidationError("language " + language + " has no test clips");

  ModelParams adapted = params;
  if (options.adapt && !members.empty()) {
    adapted = inner_adapt(params, make_batch(features, members), options.task_lr, options.inner_steps).adapted;
  }
  const Batch test = make_batch(features, test_ids);
  const auto predicted = predict(adapted, test);
  MetricsCell cell;
  cell.language = language;
  cell.shot = support.k;
  cell.method = to_string(features.method);
  cell.model = features.provenance;
  cell.confusion = ConfusionMatrix::from(predicted, test.targets);
  cell.accuracy = accuracy(cell.confusion);
  cell.macro_f1 = macro_f1(cell.confusion);
  return cell;
}

inline std::vector<MetricsCell> evaluate_all(const ModelParams& params, const FeatureSet& features,
                                             const SupportPool& pool, const EvalOptions& options) {
  std::vector<MetricsCell> out;
  for (const auto& set : pool.sets) out.push_back(evaluate_language(params, features, set.language, set, options));
  return out;
}

// ---------------------------------------------------------------------------

struct ReportGrid {
  std::vector<MetricsCell> cells;
  std::string config_digest;
  bool complete = true;
  std::vector<std::string> failures;

  std::vector<std::string> languages() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
      if (std::find(out.begin(), out.end(), c.language) == out.end()) out.push_back(c.language);
    return out;
  }
};

inline std::string config_digest(const nlohmann::json& config) { return hex64(fnv1a(config.dump())); }

inline std::uint64_t cell_seed(std::uint64_t seed, Pooling method, std::size_t shot) {
  return derive_seed(seed, "cell/" + to_string(method) + "/" + std::to_string(shot));
}

struct GridOptions {
  std::vector<std::size_t> shots{50, 100, 150, 200};
  TrainConfig train;
  bool adapt_at_test = true;
};

/// Called after each cell is trained, e.g. to persist its checkpoint.
using CellCallback = std::function<void(const FeatureSet&, std::size_t shot, const SupportPool&,
                                        const TrainResult&, const TrainConfig&)>;

/// Trains one model per (method, shot) and evaluates every language.
/// Cells get independent seeds, so any cell can be reproduced alone.
inline ReportGrid run_grid(const std::vector<FeatureSet>& feature_sets, const GridOptions& options,
                           const CellCallback& on_cell = {}) {
  if (feature_sets.empty()) throw ValidationError("run_grid needs at least one feature set");
  if (options.shots.empty()) throw ValidationError("shot list is empty");
  ReportGrid grid;
  nlohmann::json digest_src = {{"train", to_json(options.train)},
                               {"shots", options.shots},
                               {"adapt_at_test", options.adapt_at_test}};
  for (const auto& fs : feature_sets) digest_src["methods"].push_back(to_string(fs.method));
  grid.config_digest = config_digest(digest_src);

  for (const auto& fs : feature_sets) {
    for (std::size_t shot : options.shots) {
      const std::uint64_t seed = cell_seed(options.train.seed, fs.method, shot);
      try {
        const SupportPool pool = build_pool(fs, shot, seed);
        TrainConfig tc = options.train;
        tc.seed = seed;
        const TrainResult trained = meta_train(pool, fs, tc);
        if (on_cell) on_cell(fs, shot, pool, trained, tc);
        for (auto& cell : evaluate_all(trained.params, fs, pool, EvalOptions::from(tc, options.adapt_at_test))) {
          grid.cells.push_back(std::move(cell));
        }
      } catch (const std::exception& e) {
        grid.complete = false;
        grid.failures.push_back(to_string(fs.method) + "/" + std::to_string(shot) + ": " + e.what());
      }
    }
  }
  return grid;
}

inline std::string report_csv(const ReportGrid& grid) {
  std::ostringstream out;
  out << "language,shot,method,model,accuracy,macro_f1\n";
  for (const auto& c : grid.cells) {
    out << c.language << ',' << c.shot << ',' << c.method << ',' << c.model << ',' << fixed2(c.accuracy) << ','
        << fixed2(c.macro_f1) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const MetricsCell& c) {
  return {{"language", c.language},
          {"shot", c.shot},
          {"method", c.method},
          {"model", c.model},
          {"accuracy", round2(c.accuracy)},
          {"macro_f1", round2(c.macro_f1)},
          {"confusion", {{"tp", c.confusion.tp}, {"fp", c.confusion.fp}, {"tn", c.confusion.tn}, {"fn", c.confusion.fn}}}};
}

inline nlohmann::json to_json(const ReportGrid& grid) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : grid.cells) cells.push_back(to_json(c));
  return {{"cells", cells}, {"config_digest", grid.config_digest}, {"complete", grid.complete},
          {"failures", grid.failures}};
}

inline ReportGrid grid_from_json(const nlohmann::json& j) {
  ReportGrid g;
  g.config_digest = j.value("config_digest", "");
  g.complete = j.value("complete", true);
  g.failures = j.value("failures", std::vector<std::string>{});
  for (const auto& c : j.at("cells")) {
    MetricsCell m;
    m.language = c.at("language").get<std::string>();
    m.shot = c.at("shot").get<std::size_t>();
    m.method = c.at("method").get<std::string>();
    m.model = c.value("model", "");
    m.accuracy = c.at("accuracy").get<double>();
    m.macro_f1 = c.at("macro_f1").get<double>();
    if (c.contains("confusion")) {
      const auto& cm = c.at("confusion");
      m.confusion = {cm.at("tp").get<std::size_t>(), cm.at("fp").get<std::size_t>(),
                     cm.at("tn").get<std::size_t>(), cm.at("fn").get<std::size_t>()};
    }
    g.cells.push_back(std::move(m));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Baseline comparison

using Baseline = std::map<std::string, double>;  // language -> macro-F1 percent

/// Macro-F1 values reported for the original ADIMA cross-lingual baseline.
/// Languages without a published value are absent.
inline Baseline adima_baseline() {
  return {{"Bengali", 79.1}, {"Hindi", 80.7}, {"Kannada", 78.4}, {"Punjabi", 83.4}, {"Tamil", 75.2}};
}

/// Parses `language,macro_f1` rows. A header row and rows whose value is
/// empty or "-" are skipped.
inline Baseline parse_baseline_csv(std::istream& in) {
  Baseline out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError("baseline row without comma: " + line);
    const std::string lang = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    if (lang == "language") continue;
    if (value.empty() || value == "-" || value == "n/a") continue;
    try {
      out[lang] = std::stod(value);
    } catch (const std::exception&) {
      throw ValidationError("bad baseline value for " + lang + ": " + value);
    }
  }
  return out;
}

struct BaselineRow {
  std::string language;
  double ours = 0.0;  // best macro-F1 over the grid, rounded to 2 decimals
  std::optional<double> baseline;
  std::optional<double> delta;
};

/// One row per grid language, in grid order: the best macro-F1 over all
/// cells of that language against the baseline value, when one exists.
inline std::vector<BaselineRow> compare_to_baseline(const ReportGrid& grid, const Baseline& baseline) {
  std::vector<BaselineRow> rows;
  for (const auto& lang : grid.languages()) {
    double best = -1.0;
    for (const auto& c : grid.cells)
      if (c.language == lang) best = std::max(best, round2(c.macro_f1));
    BaselineRow row{lang, best, std::nullopt, std::nullopt};
    if (auto it = baseline.find(lang); it != baseline.end()) {
      row.baseline = it->second;
      row.delta = round2(best - it->second);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string signed2(double v) {
  const double r = round2(v) + 0.0;
  return (r >= 0.0 ? "+" : "") + fixed2(r);
}

inline std::string baseline_csv(const std::vector<BaselineRow>& rows) {
  std::ostringstream out;
  out << "language,ours_macro_f1,baseline_macro_f1,delta\n";
  for (const auto& r : rows) {
    out << r.language << ',' << fixed2(r.ours) << ',' << (r.baseline ? fixed2(*r.baseline) : "n/a") << ','
        << (r.delta ? signed2(*r.delta) : "n/a") << '\n';
  }
  return out.str();
}

}  // namespace xlabuse
