// Independent reference computations for tests. Nothing here calls into the
// code path it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "xlabuse/corpus.hpp"
#include "xlabuse/learner.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

/// Column sums divided by the row count, computed column-major with a
/// Kahan-compensated sum.
inline std::vector<double> column_mean(const Grid& rows) {
  const std::size_t d = rows.front().size();
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0, comp = 0.0;
    for (const auto& r : rows) {
      const double y = r[j] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    out[j] = sum / static_cast<double>(rows.size());
  }
  return out;
}

/// Explicit two-pass version: first every norm, then the normalised rows,
/// then their mean.
inline std::vector<double> unit_rows_mean(const Grid& rows, std::vector<Grid::value_type>* normalized = nullptr) {
  std::vector<double> norms;
  for (const auto& r : rows) {
    double s = 0.0;
    for (double v : r) s += v * v;
    norms.push_back(std::sqrt(s));
  }
  Grid unit;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> u(rows[i].size(), 0.0);
    if (norms[i] >= 1e-12)
      for (std::size_t j = 0; j < u.size(); ++j) u[j] = rows[i][j] / norms[i];
    unit.push_back(u);
  }
  if (normalized) *normalized = unit;
  return column_mean(unit);
}

inline Grid to_grid(const xlabuse::EmbeddingTensor& t) {
  Grid g(t.frames, std::vector<double>(t.dim));
  for (std::size_t i = 0; i < t.frames; ++i)
    for (std::size_t j = 0; j < t.dim; ++j) g[i][j] = t.values[i * t.dim + j];
  return g;
}

/// Central finite differences of f over a flat parameter vector.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Per-entry relative error with a small absolute floor in the denominator,
/// so entries that are zero up to round-off do not dominate.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Mean cross-entropy written out with scalar loops, for finite differences
/// that do not share code with the Eigen forward pass.
inline double scalar_loss(const xlabuse::Architecture& arch, const std::vector<double>& flat,
                          const std::vector<std::vector<double>>& x, const std::vector<int>& y) {
  const std::size_t d = arch.input, h1 = arch.hidden1, h2 = arch.hidden2, o = arch.output;
  // Flat layout follows Eigen column-major storage: W(r, c) at r + c * rows.
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const double* p = flat.data() + off;
    off += n;
    return p;
  };
  const double* w1 = take(d * h1);
  const double* b1 = take(h1);
  const double* w2 = take(h1 * h2);
  const double* b2 = take(h2);
  const double* w3 = take(h2 * o);
  const double* b3 = take(o);
  auto act = [&](double v) { return v > 0 ? v : arch.negative_slope * v; };
  double total = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    std::vector<double> a1(h1), a2(h2), z(o);
    for (std::size_t c = 0; c < h1; ++c) {
      double s = b1[c];
      for (std::size_t r = 0; r < d; ++r) s += x[n][r] * w1[r + c * d];
      a1[c] = act(s);
    }
    for (std::size_t c = 0; c < h2; ++c) {
      double s = b2[c];
      for (std::size_t r = 0; r < h1; ++r) s += a1[r] * w2[r + c * h1];
      a2[c] = act(s);
    }
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < o; ++c) {
      double s = b3[c];
      for (std::size_t r = 0; r < h2; ++r) s += a2[r] * w3[r + c * h2];
      z[c] = s;
      zmax = std::max(zmax, s);
    }
    double se = 0.0;
    for (double v : z) se += std::exp(v - zmax);
    total += zmax + std::log(se) - z[static_cast<std::size_t>(y[n])];
  }
  return total / static_cast<double>(x.size());
}

/// Accuracy and macro-F1 (percent) from raw (prediction, target) pairs via
/// per-class precision and recall.
struct Scores {
  double accuracy;
  double macro_f1;
};

inline Scores recount(const std::vector<int>& pred, const std::vector<int>& target) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == target[i];
  double f1_sum = 0.0;
  for (int cls : {0, 1}) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += (pred[i] == cls && target[i] == cls);
      predicted += pred[i] == cls;
      actual += target[i] == cls;
    }
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    f1_sum += (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return {100.0 * static_cast<double>(correct) / static_cast<double>(pred.size()), 100.0 * f1_sum / 2.0};
}

/// Macro-F1 in percent rounded half away from zero to two decimals, using
/// only integer arithmetic on the exact fraction.
inline std::string exact_macro_f1_2dp(const std::vector<int>& pred, const std::vector<int>& target) {
  long long num = 0, den = 1;  // sum of 2*tp_c / (2*tp_c + fp_c + fn_c), as num/den
  for (int cls : {0, 1}) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == cls && target[i] == cls;
      fp += pred[i] == cls && target[i] != cls;
      fn += pred[i] != cls && target[i] == cls;
    }
    const long long d = 2 * tp + fp + fn;
    if (d == 0) continue;
    num = num * d + 2 * tp * den;
    den *= d;
  }
  // percent = 100 * num / (2 * den); cents = round(10000 * num / (2 * den))
  const long long cents = (2 * 10000 * num + 2 * den) / (4 * den);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld", cents / 100, cents % 100);
  return buf;
}

/// Shannon entropy in bits of a probability row (zero entries skipped).
inline double entropy_bits(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log2(v);
  return h;
}

/// Mean silhouette coefficient from the textbook definition.
inline double silhouette(const std::vector<std::pair<double, double>>& pts, const std::vector<int>& label) {
  const std::size_t n = pts.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second);
      acc[label[j]].first += d;
      acc[label[j]].second += 1;
    }
    if (acc[label[i]].second == 0) continue;  // singleton
    const double a = acc[label[i]].first / static_cast<double>(acc[label[i]].second);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, v] : acc)
      if (l != label[i] && v.second > 0) b = std::min(b, v.first / static_cast<double>(v.second));
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

/// Leave-nothing-out nearest-centroid training accuracy on per-clip vectors
/// grouped by (language, label).
inline double nearest_centroid_accuracy(const std::vector<std::vector<double>>& x, const std::vector<std::string>& group,
                                        const std::vector<int>& label) {
  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::size_t>> cent;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto& c = cent[{group[i], label[i]}];
    if (c.first.empty()) c.first.assign(x[i].size(), 0.0);
    for (std::size_t j = 0; j < x[i].size(); ++j) c.first[j] += x[i][j];
    c.second += 1;
  }
  for (auto& [k, c] : cent)
    for (auto& v : c.first) v /= static_cast<double>(c.second);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_label = -1;
    for (const auto& [k, c] : cent) {
      if (k.first != group[i]) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < x[i].size(); ++j) d += (x[i][j] - c.first[j]) * (x[i][j] - c.first[j]);
      if (d < best) {
        best = d;
        best_label = k.second;
      }
    }
    correct += best_label == label[i];
  }
  return static_cast<double>(correct) / static_cast<double>(x.size());
}

}  // namespace oracle
