// Exact t-SNE to two dimensions plus cluster-separation summaries.
//
// Points are processed in ascending key order internally, so permuting the
// input permutes the output and nothing else (initial positions are also
// seeded per key).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/learner.hpp"
#include "xlabuse/normalization.hpp"

namespace xlabuse {

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double min_gain = 0.01;
  double init_stddev = 1e-4;
  std::size_t kl_every = 50;
  bool standardize = false;
  std::uint64_t seed = 0;

  void validate(std::size_t n) const {
    if (n < 4) throw ValidationError("t-SNE needs at least 4 points");
    if (!(perplexity > 0.0) || !(perplexity < static_cast<double>(n) / 3.0)) {
      throw ValidationError("perplexity must be in (0, N/3); N=" + std::to_string(n));
    }
    if (iterations < 1) throw ValidationError("t-SNE iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("t-SNE learning rate must be > 0");
  }
};

inline nlohmann::json to_json(const TsneConfig& c) {
  return {{"perplexity", c.perplexity},           {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},     {"early_exaggeration", c.early_exaggeration},
          {"exaggeration_iters", c.exaggeration_iters}, {"initial_momentum", c.initial_momentum},
          {"final_momentum", c.final_momentum},   {"momentum_switch", c.momentum_switch},
          {"min_gain", c.min_gain},               {"init_stddev", c.init_stddev},
          {"kl_every", c.kl_every},               {"standardize", c.standardize},
          {"seed", c.seed}};
}

struct Affinities {
  Matrix p;            // symmetric joint affinities, sums to 1
  Matrix conditional;  // row-stochastic p_{j|i}
  std::vector<double> betas;          // 1 / (2 sigma_i^2)
  std::vector<double> entropy_bits;   // achieved row entropies
  std::size_t jittered_points = 0;    // duplicates perturbed before the search
};

namespace detail {

inline Matrix squared_distances(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

// Row i of p_{j|i} for precision beta; returns the entropy in nats. Shifting
// by the smallest distance leaves the normalised row unchanged and keeps the
// exponentials in range.
inline double conditional_row(const Matrix& d2, Eigen::Index i, double beta, std::vector<double>& row) {
  const Eigen::Index n = d2.rows();
  double dmin = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j)
    if (j != i) dmin = std::min(dmin, d2(i, j));
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    row[static_cast<std::size_t>(j)] = j == i ? 0.0 : std::exp(-beta * (d2(i, j) - dmin));
    sum += row[static_cast<std::size_t>(j)];
  }
  double h = 0.0;
  for (auto& v : row) {
    v /= sum;
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace detail

inline constexpr double kEntropyTolerance = 1e-5;
inline constexpr int kMaxBisectionSteps = 50;

/// Gaussian input affinities with per-row bandwidth chosen by bisection so
/// that each conditional row has entropy log2(perplexity) bits.
inline Affinities pairwise_affinities(Matrix x, double perplexity, std::uint64_t jitter_seed = 0) {
  const Eigen::Index n = x.rows();
  if (n < 4) throw ValidationError("t-SNE needs at least 4 points");
  if (!x.allFinite()) throw ValidationError("non-finite t-SNE input");
  Affinities a;

  // Exact duplicates get a 1e-10 perturbation.
  {
    std::mt19937_64 rng(derive_seed(jitter_seed, "jitter"));
    std::normal_distribution<double> g(0.0, 1e-10);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < i; ++j) {
        if (x.row(i) == x.row(j)) {
          for (Eigen::Index c = 0; c < x.cols(); ++c) x(i, c) += g(rng);
          ++a.jittered_points;
          break;
        }
      }
    }
  }

  const Matrix d2 = detail::squared_distances(x);
  const double target = std::log2(perplexity);
  a.conditional = Matrix::Zero(n, n);
  a.betas.resize(static_cast<std::size_t>(n));
  a.entropy_bits.resize(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity(), dsum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, d2(i, j));
      dsum += d2(i, j);
    }
    const double spread = dsum / static_cast<double>(n - 1) - dmin;
    double beta = spread > 0.0 ? 1.0 / spread : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = detail::conditional_row(d2, i, beta, row) / std::log(2.0);
    for (int step = 0; step < kMaxBisectionSteps && std::abs(h - target) > kEntropyTolerance; ++step) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
      h = detail::conditional_row(d2, i, beta, row) / std::log(2.0);
    }
    a.betas[static_cast<std::size_t>(i)] = beta;
    a.entropy_bits[static_cast<std::size_t>(i)] = h;
    for (Eigen::Index j = 0; j < n; ++j) a.conditional(i, j) = row[static_cast<std::size_t>(j)];
  }

  a.p = (a.conditional + a.conditional.transpose()) / (2.0 * static_cast<double>(n));
  a.p /= a.p.sum();
  return a;
}

struct KlSample {
  std::size_t iteration = 0;
  double kl = 0.0;
};

struct Projection {
  Matrix coords;  // N x 2, in input order
  std::vector<std::string> keys;
  std::vector<KlSample> kl_trace;
  double initial_kl = 0.0;
  double final_kl = 0.0;
  std::size_t jittered_points = 0;
};

namespace detail {

// Student-t kernel numerators (zero diagonal) and their sum.
inline double student_kernel(const Matrix& y, Matrix& num) {
  const Eigen::Index n = y.rows();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    num(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      num(i, j) = v;
      num(j, i) = v;
      sum += 2.0 * v;
    }
  }
  return sum;
}

inline double kl_divergence(const Matrix& p, const Matrix& num, double sum) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (i != j && p(i, j) > 0.0) kl += p(i, j) * std::log(p(i, j) / (num(i, j) / sum));
  return kl;
}

inline Matrix standardize_columns(Matrix x) {
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    x.col(c).array() -= mean;
    const double sd = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(x.rows()));
    if (sd > 0.0) x.col(c) /= sd;
  }
  return x;
}

}  // namespace detail

/// Embeds the rows of `x` (one per key) in two dimensions by momentum
/// gradient descent with per-coordinate gains on KL(P || Q). Keys must be
/// unique; they fix both the processing order and each point's initial
/// position.
inline Projection project(const Matrix& x, const std::vector<std::string>& keys, const TsneConfig& config) {
  const auto n_points = static_cast<std::size_t>(x.rows());
  if (keys.size() != n_points) throw ValidationError("one key per t-SNE input row required");
  config.validate(n_points);

  std::vector<std::size_t> order(n_points);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (keys[order[i]] == keys[order[i - 1]]) throw ValidationError("duplicate t-SNE key " + keys[order[i]]);
  }

  const auto n = static_cast<Eigen::Index>(n_points);
  Matrix xs(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) xs.row(i) = x.row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(i)]));
  if (config.standardize) xs = detail::standardize_columns(xs);

  const Affinities aff = pairwise_affinities(xs, config.perplexity, config.seed);
  const Matrix& p = aff.p;

  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, "init/" + keys[order[static_cast<std::size_t>(i)]]));
    std::normal_distribution<double> g(0.0, config.init_stddev);
    y(i, 0) = g(rng);
    y(i, 1) = g(rng);
  }

  Projection out;
  out.jittered_points = aff.jittered_points;
  Matrix num(n, n);
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix grad(n, 2);

  {
    const double sum = detail::student_kernel(y, num);
    out.initial_kl = detail::kl_divergence(p, num, sum);
    out.kl_trace.push_back({0, out.initial_kl});
  }

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const double exaggeration = it < config.exaggeration_iters ? config.early_exaggeration : 1.0;
    const double momentum = it < config.momentum_switch ? config.initial_momentum : config.final_momentum;
    const double sum = detail::student_kernel(y, num);
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = (exaggeration * p(i, j) - num(i, j) / sum) * num(i, j);
        gx += w * (y(i, 0) - y(j, 0));
        gy += w * (y(i, 1) - y(j, 1));
      }
      grad(i, 0) = 4.0 * gx;
      grad(i, 1) = 4.0 * gy;
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
        gains(i, c) = same_sign ? gains(i, c) * 0.8 : gains(i, c) + 0.2;
        gains(i, c) = std::max(gains(i, c), config.min_gain);
        update(i, c) = momentum * update(i, c) - config.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += update(i, c);
      }
    }
    const Eigen::RowVector2d mean = y.colwise().mean();
    y.rowwise() -= mean;

    const std::size_t done = it + 1;
    if (done % config.kl_every == 0 || done == config.iterations) {
      const double s = detail::student_kernel(y, num);
      const double kl = detail::kl_divergence(p, num, s);
      if (!std::isfinite(kl)) {
        std::string trace;
        for (const auto& k : out.kl_trace) trace += " " + std::to_string(k.iteration) + ":" + std::to_string(k.kl);
        throw NumericalError("t-SNE diverged at iteration " + std::to_string(done) + "; KL trace" + trace);
      }
      out.kl_trace.push_back({done, kl});
    }
  }
  out.final_kl = out.kl_trace.back().kl;

  out.coords.resize(n, 2);
  out.keys.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    out.coords.row(static_cast<Eigen::Index>(order[i])) = y.row(static_cast<Eigen::Index>(i));
  }
  out.keys = keys;
  return out;
}

// ---------------------------------------------------------------------------

struct GroupStats {
  std::string name;
  std::size_t size = 0;
  double cx = 0.0, cy = 0.0;
  double mean_intra_distance = 0.0;  // mean pairwise distance inside the group
  double silhouette = 0.0;           // mean silhouette of the group's points
  bool singleton = false;
};

struct ClusterSummary {
  std::vector<GroupStats> groups;  // sorted by name
  std::map<std::pair<std::string, std::string>, double> centroid_distances;  // name_a < name_b
  double silhouette = 0.0;
};

/// Silhouette-based separation summary of 2-D points grouped by `labels`.
/// Singleton groups contribute silhouette 0 and are flagged.
inline ClusterSummary cluster_summary(const Matrix& coords, const std::vector<std::string>& labels) {
  const auto n = static_cast<std::size_t>(coords.rows());
  if (labels.size() != n) throw ValidationError("one label per point required");
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) throw ValidationError("cluster summary needs at least two groups");

  auto dist = [&](std::size_t a, std::size_t b) {
    return (coords.row(static_cast<Eigen::Index>(a)) - coords.row(static_cast<Eigen::Index>(b))).norm();
  };

  ClusterSummary out;
  std::map<std::string, std::size_t> index;
  for (const auto& [name, idx] : members) {
    GroupStats g;
    g.name = name;
    g.size = idx.size();
    g.singleton = idx.size() == 1;
    for (std::size_t i : idx) {
      g.cx += coords(static_cast<Eigen::Index>(i), 0);
      g.cy += coords(static_cast<Eigen::Index>(i), 1);
    }
    g.cx /= static_cast<double>(idx.size());
    g.cy /= static_cast<double>(idx.size());
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b, ++pairs) total += dist(idx[a], idx[b]);
    g.mean_intra_distance = pairs ? total / static_cast<double>(pairs) : 0.0;
    index[name] = out.groups.size();
    out.groups.push_back(g);
  }
  for (std::size_t a = 0; a < out.groups.size(); ++a)
    for (std::size_t b = a + 1; b < out.groups.size(); ++b)
      out.centroid_distances[{out.groups[a].name, out.groups[b].name}] =
          std::hypot(out.groups[a].cx - out.groups[b].cx, out.groups[a].cy - out.groups[b].cy);

  double total = 0.0;
  std::vector<double> group_sum(out.groups.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = members[labels[i]];
    double s = 0.0;
    if (own.size() > 1) {
      double a = 0.0;
      for (std::size_t j : own)
        if (j != i) a += dist(i, j);
      a /= static_cast<double>(own.size() - 1);
      double b = std::numeric_limits<double>::infinity();
      for (const auto& [name, idx] : members) {
        if (name == labels[i]) continue;
        double m = 0.0;
        for (std::size_t j : idx) m += dist(i, j);
        b = std::min(b, m / static_cast<double>(idx.size()));
      }
      const double denom = std::max(a, b);
      s = denom > 0.0 ? (b - a) / denom : 0.0;
    }
    total += s;
    group_sum[index[labels[i]]] += s;
  }
  for (std::size_t g = 0; g < out.groups.size(); ++g) {
    out.groups[g].silhouette = group_sum[g] / static_cast<double>(out.groups[g].size);
  }
  out.silhouette = total / static_cast<double>(n);
  return out;
}

inline nlohmann::json to_json(const ClusterSummary& s) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.groups) {
    groups.push_back({{"name", g.name}, {"size", g.size}, {"centroid", {g.cx, g.cy}},
                      {"mean_intra_distance", g.mean_intra_distance}, {"silhouette", g.silhouette},
                      {"singleton", g.singleton}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [k, d] : s.centroid_distances) pairs.push_back({{"a", k.first}, {"b", k.second}, {"distance", d}});
  return {{"groups", groups}, {"centroid_distances", pairs}, {"silhouette", s.silhouette}};
}

/// Projects a whole feature set (all splits) keyed by clip_id.
inline Projection project_features(const FeatureSet& features, const TsneConfig& config) {
  Matrix x(static_cast<Eigen::Index>(features.entries.size()), static_cast<Eigen::Index>(features.dim));
  std::vector<std::string> keys;
  Eigen::Index r = 0;
  for (const auto& [id, e] : features.entries) {
    for (std::size_t j = 0; j < features.dim; ++j) x(r, static_cast<Eigen::Index>(j)) = e.values[j];
    keys.push_back(id);
    ++r;
  }
  return project(x, keys, config);
}

inline void write_projection(const Projection& proj, const FeatureSet& features, const TsneConfig& config,
                             const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  std::ofstream csv(directory / "tsne.csv", std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write tsne.csv");
  csv << "clip_id,language,label,x,y\n";
  csv.precision(17);
  for (std::size_t i = 0; i < proj.keys.size(); ++i) {
    const auto& e = features.at(proj.keys[i]);
    csv << proj.keys[i] << ',' << e.language << ',' << to_string(e.label) << ','
        << proj.coords(static_cast<Eigen::Index>(i), 0) << ',' << proj.coords(static_cast<Eigen::Index>(i), 1) << '\n';
  }
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& k : proj.kl_trace) trace.push_back({{"iteration", k.iteration}, {"kl", k.kl}});
  std::vector<std::string> langs, labels;
  for (const auto& key : proj.keys) {
    langs.push_back(features.at(key).language);
    labels.push_back(to_string(features.at(key).label));
  }
  nlohmann::json meta = {{"config", to_json(config)},      {"kl_trace", trace},
                         {"initial_kl", proj.initial_kl},  {"final_kl", proj.final_kl},
                         {"jittered_points", proj.jittered_points},
                         {"method", to_string(features.method)}};
  std::set<std::string> distinct_langs(langs.begin(), langs.end());
  if (distinct_langs.size() >= 2) meta["by_language"] = to_json(cluster_summary(proj.coords, langs));
  std::set<std::string> distinct_labels(labels.begin(), labels.end());
  if (distinct_labels.size() >= 2) meta["by_label"] = to_json(cluster_summary(proj.coords, labels));
  std::ofstream(directory / "tsne_meta.json", std::ios::trunc) << meta.dump(2) << '\n';
}

}  // namespace xlabuse
