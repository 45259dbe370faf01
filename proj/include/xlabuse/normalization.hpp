// Clip-level pooling of frame matrices into fixed-length feature vectors.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/corpus.hpp"

namespace xlabuse {

enum class Pooling { temporal_mean, l2_norm };

inline std::string to_string(Pooling p) {
  return p == Pooling::temporal_mean ? "temporal_mean" : "l2_norm";
}

/// Accepts both the underscore and dash spellings.
inline Pooling parse_pooling(std::string s) {
  for (auto& c : s)
    if (c == '-') c = '_';
  if (s == "temporal_mean") return Pooling::temporal_mean;
  if (s == "l2_norm") return Pooling::l2_norm;
  throw ValidationError("unknown normalization method '" + s + "'");
}

struct FeatureVector {
  std::string clip_id;
  Pooling method = Pooling::temporal_mean;
  std::vector<double> values;
  /// Frames whose norm was below the zero threshold (l2_norm only).
  std::size_t zero_norm_frames = 0;
};

inline constexpr double kZeroNormThreshold = 1e-12;

/// Column mean over frames, accumulated in double.
inline FeatureVector temporal_mean(const EmbeddingTensor& tensor) {
  if (tensor.frames == 0) throw ValidationError("empty tensor for clip " + tensor.clip_id);
  FeatureVector out{tensor.clip_id, Pooling::temporal_mean, std::vector<double>(tensor.dim, 0.0), 0};
  for (std::size_t t = 0; t < tensor.frames; ++t)
    for (std::size_t j = 0; j < tensor.dim; ++j) out.values[j] += static_cast<double>(tensor.at(t, j));
  const double inv = 1.0 / static_cast<double>(tensor.frames);
  for (auto& v : out.values) v *= inv;
  return out;
}

/// Each frame scaled to unit Euclidean norm, then averaged over frames.
/// Frames with norm below kZeroNormThreshold contribute a zero vector and
/// are counted in `zero_norm_frames`.
inline FeatureVector l2_norm_mean(const EmbeddingTensor& tensor) {
  if (tensor.frames == 0) throw ValidationError("empty tensor for clip " + tensor.clip_id);
  FeatureVector out{tensor.clip_id, Pooling::l2_norm, std::vector<double>(tensor.dim, 0.0), 0};
  for (std::size_t t = 0; t < tensor.frames; ++t) {
    double sq = 0.0;
    for (std::size_t j = 0; j < tensor.dim; ++j) {
      const double x = tensor.at(t, j);
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm < kZeroNormThreshold) {
      ++out.zero_norm_frames;
      continue;
    }
    for (std::size_t j = 0; j < tensor.dim; ++j) out.values[j] += static_cast<double>(tensor.at(t, j)) / norm;
  }
  const double inv = 1.0 / static_cast<double>(tensor.frames);
  for (auto& v : out.values) v *= inv;
  return out;
}

inline FeatureVector pool(const EmbeddingTensor& tensor, Pooling method) {
  return method == Pooling::temporal_mean ? temporal_mean(tensor) : l2_norm_mean(tensor);
}

struct FeatureEntry {
  std::string language;
  Label label = Label::non_abusive;
  Split split = Split::train;
  std::vector<double> values;

  bool operator==(const FeatureEntry&) const = default;
};

/// One pooled vector per clip, keyed by clip_id so assembly order never
/// matters.
struct FeatureSet {
  Pooling method = Pooling::temporal_mean;
  std::size_t dim = 0;
  std::vector<std::string> languages;
  std::string provenance;
  std::map<std::string, FeatureEntry> entries;

  const FeatureEntry& at(const std::string& clip_id) const {
    auto it = entries.find(clip_id);
    if (it == entries.end()) throw ValidationError("clip " + clip_id + " not in feature set");
    return it->second;
  }

  /// Clip ids of one (language, label, split) cell in ascending id order.
  std::vector<std::string> ids(const std::string& language, Label label, Split split) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries)
      if (e.language == language && e.label == label && e.split == split) out.push_back(id);
    return out;
  }

  std::vector<std::string> ids(const std::string& language, Split split) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries)
      if (e.language == language && e.split == split) out.push_back(id);
    return out;
  }
};

struct NormalizationReport {
  std::map<std::string, std::string> errors;  // clip_id -> message
  std::map<std::string, std::size_t> zero_norm_frames;  // clip_id -> count, nonzero only

  bool ok() const { return errors.empty(); }
};

/// Pools every clip of the corpus. Per-clip failures are collected in the
/// report rather than aborting; failed clips are absent from the result.
inline FeatureSet normalize_corpus(const Corpus& corpus, Pooling method,
                                   NormalizationReport* report = nullptr) {
  FeatureSet fs{method, corpus.dim, corpus.languages, corpus.provenance, {}};
  NormalizationReport local;
  NormalizationReport& rep = report ? *report : local;
  for (const auto& rec : corpus.records) {
    try {
      FeatureVector v = pool(corpus.tensor(rec), method);
      for (double x : v.values) {
        if (!std::isfinite(x)) throw NumericalError("non-finite pooled value");
      }
      if (v.zero_norm_frames > 0) rep.zero_norm_frames[rec.clip_id] = v.zero_norm_frames;
      fs.entries.emplace(rec.clip_id, FeatureEntry{rec.language, rec.label, rec.split, std::move(v.values)});
    } catch (const std::exception& e) {
      rep.errors[rec.clip_id] = e.what();
    }
  }
  return fs;
}

// ---------------------------------------------------------------------------
// features.jsonl + <clip_id>.fv.f64 export

namespace detail {

inline void write_le_f64(std::ostream& out, const std::vector<double>& data) {
  for (double d : data) {
    std::uint64_t w = std::bit_cast<std::uint64_t>(d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(w >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline std::vector<double> decode_le_f64(const std::vector<char>& bytes) {
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t w = 0;
    for (int b = 0; b < 8; ++b)
      w |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 * i + static_cast<std::size_t>(b)])) << (8 * b);
    out[i] = std::bit_cast<double>(w);
  }
  return out;
}

}  // namespace detail

inline fs::path write_features(const FeatureSet& features, const fs::path& directory) {
  fs::create_directories(directory / "vectors");
  const fs::path manifest = directory / "features.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << nlohmann::json{{"dim", features.dim},
                        {"languages", features.languages},
                        {"provenance", features.provenance},
                        {"method", to_string(features.method)}}
             .dump()
      << '\n';
  for (const auto& [id, e] : features.entries) {
    const std::string rel = "vectors/" + id + ".fv.f64";
    std::ofstream bout(directory / rel, std::ios::binary | std::ios::trunc);
    if (!bout) throw std::runtime_error("cannot write " + (directory / rel).string());
    detail::write_le_f64(bout, e.values);
    out << nlohmann::json{{"clip_id", id}, {"language", e.language}, {"label", to_string(e.label)},
                          {"split", to_string(e.split)}, {"blob", rel}}
               .dump()
        << '\n';
  }
  return manifest;
}

inline FeatureSet read_features(const fs::path& directory) {
  const fs::path manifest = directory / "features.jsonl";
  std::ifstream in(manifest);
  if (!in) throw ValidationError("missing feature manifest " + manifest.string());
  FeatureSet fs;
  std::string line;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        fs.dim = j.at("dim").get<std::size_t>();
        fs.languages = j.at("languages").get<std::vector<std::string>>();
        fs.provenance = j.value("provenance", "");
        fs.method = parse_pooling(j.at("method").get<std::string>());
        have_header = true;
        continue;
      }
      const auto id = j.at("clip_id").get<std::string>();
      const auto bytes = detail::read_all_bytes(directory / j.at("blob").get<std::string>());
      if (bytes.size() != fs.dim * 8) throw ValidationError("feature blob size mismatch for clip " + id);
      FeatureEntry e{j.at("language").get<std::string>(), parse_label(j.at("label").get<std::string>()),
                     parse_split(j.at("split").get<std::string>()), detail::decode_le_f64(bytes)};
      if (!fs.entries.emplace(id, std::move(e)).second) throw ValidationError("duplicate clip_id " + id);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("feature manifest: ") + e.what());
  }
  if (!have_header) throw ValidationError("feature manifest has no header line");
  return fs;
}

}  // namespace xlabuse
