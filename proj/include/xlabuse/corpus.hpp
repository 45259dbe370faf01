// On-disk embedding corpus: manifest.jsonl plus one float32 blob per clip.
//
// Layout of a corpus directory:
//   manifest.jsonl      line 1 header {"dim","languages","provenance"},
//                       then one object per clip
//   blobs/<id>.f32      little-endian float32, row-major [frames, dim]
//
// A clip's frame matrix corresponds to the [1, T, D] encoder output with the
// leading batch axis dropped.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"

namespace xlabuse {

namespace fs = std::filesystem;

struct ClipRecord {
  std::string clip_id;
  std::string language;
  Label label = Label::non_abusive;
  Split split = Split::train;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::string blob_path;  // relative to the corpus root

  bool operator==(const ClipRecord&) const = default;
};

/// One clip's frame matrix, row-major [frames, dim].
struct EmbeddingTensor {
  std::string clip_id;
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  float at(std::size_t t, std::size_t j) const { return values[t * dim + j]; }
  std::span<const float> row(std::size_t t) const {
    return {values.data() + t * dim, dim};
  }
};

namespace detail {

inline void write_le_f32(std::ostream& out, std::span<const float> data) {
  std::vector<std::uint32_t> words(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t w = std::bit_cast<std::uint32_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) {
      w = ((w & 0xFFu) << 24) | ((w & 0xFF00u) << 8) | ((w >> 8) & 0xFF00u) | (w >> 24);
    }
    words[i] = w;
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
}

inline std::vector<float> decode_le_f32(const std::vector<char>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t w;
    std::memcpy(&w, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) {
      w = ((w & 0xFFu) << 24) | ((w & 0xFF00u) << 8) | ((w >> 8) & 0xFF00u) | (w >> 24);
    }
    out[i] = std::bit_cast<float>(w);
  }
  return out;
}

inline std::vector<char> read_all_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Clip ids become file names.
inline void check_clip_id(const std::string& id) {
  if (id.empty() || id == "." || id == ".." ||
      id.find_first_of("/\\") != std::string::npos || id.find('\0') != std::string::npos) {
    throw ValidationError("clip_id '" + id + "' is not usable as a file name");
  }
}

}  // namespace detail

/// Counts of one (language, label, split) cell.
struct CellKey {
  std::string language;
  Label label;
  Split split;
  auto operator<=>(const CellKey&) const = default;
};

class Corpus {
 public:
  std::size_t dim = 0;
  std::vector<std::string> languages;
  std::string provenance;
  std::vector<ClipRecord> records;

  /// Directory the blobs are read from; empty for in-memory corpora.
  fs::path root;
  /// In-memory frame data keyed by clip_id (synthetic corpora).
  std::map<std::string, std::vector<float>> memory;

  EmbeddingTensor tensor(const ClipRecord& rec) const {
    EmbeddingTensor t{rec.clip_id, rec.frames, rec.dim, {}};
    if (auto it = memory.find(rec.clip_id); it != memory.end()) {
      t.values = it->second;
    } else {
      if (root.empty()) throw ValidationError("no frame data for clip " + rec.clip_id);
      const auto bytes = detail::read_all_bytes(root / rec.blob_path);
      if (bytes.size() != rec.frames * rec.dim * 4) {
        throw ValidationError("blob size mismatch for clip " + rec.clip_id);
      }
      t.values = detail::decode_le_f32(bytes);
    }
    return t;
  }

  std::size_t count(const std::string& language, Label label, Split split) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const ClipRecord& r) {
      return r.language == language && r.label == label && r.split == split;
    }));
  }

  std::map<CellKey, std::size_t> counts() const {
    std::map<CellKey, std::size_t> out;
    for (const auto& lang : languages)
      for (Label l : {Label::abusive, Label::non_abusive})
        for (Split s : {Split::train, Split::test}) out[{lang, l, s}] = 0;
    for (const auto& r : records) ++out[{r.language, r.label, r.split}];
    return out;
  }

  /// Languages lacking a train record of some class. Flagged, not rejected:
  /// such corpora are still usable for evaluation.
  std::vector<std::string> degenerate_languages() const {
    std::vector<std::string> out;
    for (const auto& lang : languages) {
      if (count(lang, Label::abusive, Split::train) == 0 ||
          count(lang, Label::non_abusive, Split::train) == 0) {
        out.push_back(lang);
      }
    }
    return out;
  }
};

/// Checks the record-level invariants that do not need blob access.
inline void validate_records(const Corpus& corpus) {
  if (corpus.dim == 0) throw ValidationError("corpus dim must be >= 1");
  if (corpus.languages.empty()) throw ValidationError("corpus must declare at least one language");
  const std::set<std::string> langs(corpus.languages.begin(), corpus.languages.end());
  if (langs.size() != corpus.languages.size()) throw ValidationError("duplicate language in header");
  std::set<std::string> seen;
  for (const auto& r : corpus.records) {
    detail::check_clip_id(r.clip_id);
    if (!seen.insert(r.clip_id).second) throw ValidationError("duplicate clip_id " + r.clip_id);
    if (!langs.contains(r.language)) {
      throw ValidationError("clip " + r.clip_id + " has undeclared language '" + r.language + "'");
    }
    if (r.frames == 0) throw ValidationError("clip " + r.clip_id + " has zero frames");
    if (r.dim != corpus.dim) {
      throw ValidationError("clip " + r.clip_id + " has dim " + std::to_string(r.dim) +
                            ", corpus dim is " + std::to_string(corpus.dim));
    }
  }
}

inline nlohmann::json header_json(const Corpus& c) {
  return {{"dim", c.dim}, {"languages", c.languages}, {"provenance", c.provenance}};
}

inline nlohmann::json record_json(const ClipRecord& r) {
  return {{"clip_id", r.clip_id}, {"language", r.language}, {"label", to_string(r.label)},
          {"split", to_string(r.split)}, {"frames", r.frames}, {"blob", r.blob_path}};
}

/// Writes `directory/manifest.jsonl` and one blob per clip. Records whose
/// blob_path is empty are assigned `blobs/<clip_id>.f32`.
inline fs::path write_corpus(const Corpus& corpus, const fs::path& directory) {
  validate_records(corpus);
  fs::create_directories(directory / "blobs");
  const fs::path manifest = directory / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  out << header_json(corpus).dump() << '\n';
  for (ClipRecord rec : corpus.records) {
    if (rec.blob_path.empty()) rec.blob_path = "blobs/" + rec.clip_id + ".f32";
    const EmbeddingTensor t = corpus.tensor(rec);
    if (t.values.size() != rec.frames * rec.dim) {
      throw ValidationError("clip " + rec.clip_id + " tensor has " + std::to_string(t.values.size()) +
                            " values, expected frames*dim = " + std::to_string(rec.frames * rec.dim));
    }
    for (float v : t.values) {
      if (!std::isfinite(v)) throw ValidationError("non-finite value in clip " + rec.clip_id);
    }
    const fs::path blob = directory / rec.blob_path;
    fs::create_directories(blob.parent_path());
    std::ofstream bout(blob, std::ios::binary | std::ios::trunc);
    if (!bout) throw std::runtime_error("cannot write " + blob.string());
    detail::write_le_f32(bout, t.values);
    if (!bout) throw std::runtime_error("write failed for " + blob.string());
    out << record_json(rec).dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + manifest.string());
  return manifest;
}

/// Loads and fully validates a corpus directory. Blob contents are scanned
/// for non-finite values here but are re-read lazily by Corpus::tensor.
inline Corpus read_corpus(const fs::path& directory) {
  const fs::path manifest = directory / "manifest.jsonl";
  std::ifstream in(manifest);
  if (!in) throw ValidationError("missing manifest " + manifest.string());

  Corpus corpus;
  corpus.root = directory;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        corpus.dim = j.at("dim").get<std::size_t>();
        corpus.languages = j.at("languages").get<std::vector<std::string>>();
        corpus.provenance = j.value("provenance", "");
        have_header = true;
        continue;
      }
      ClipRecord r;
      r.clip_id = j.at("clip_id").get<std::string>();
      r.language = j.at("language").get<std::string>();
      r.label = parse_label(j.at("label").get<std::string>());
      r.split = parse_split(j.at("split").get<std::string>());
      r.frames = j.at("frames").get<std::size_t>();
      r.dim = j.contains("dim") ? j.at("dim").get<std::size_t>() : corpus.dim;
      r.blob_path = j.at("blob").get<std::string>();
      corpus.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ValidationError("manifest has no header line");
  validate_records(corpus);

  for (const auto& r : corpus.records) {
    const fs::path blob = directory / r.blob_path;
    std::error_code ec;
    const auto size = fs::file_size(blob, ec);
    if (ec) throw ValidationError("missing blob for clip " + r.clip_id + ": " + blob.string());
    if (size != r.frames * r.dim * 4) {
      throw ValidationError("blob size mismatch for clip " + r.clip_id + ": " + std::to_string(size) +
                            " bytes, expected " + std::to_string(r.frames * r.dim * 4));
    }
    for (float v : detail::decode_le_f32(detail::read_all_bytes(blob))) {
      if (!std::isfinite(v)) throw ValidationError("non-finite value in blob of clip " + r.clip_id);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

struct LanguageCounts {
  std::string name;
  std::size_t abusive_train = 0;
  std::size_t abusive_test = 0;
  std::size_t non_abusive_train = 0;
  std::size_t non_abusive_test = 0;

  std::size_t get(Label l, Split s) const {
    if (l == Label::abusive) return s == Split::train ? abusive_train : abusive_test;
    return s == Split::train ? non_abusive_train : non_abusive_test;
  }
  std::size_t total() const {
    return abusive_train + abusive_test + non_abusive_train + non_abusive_test;
  }
};

/// The ten ADIMA languages in their customary order.
inline const std::array<std::string, 10>& adima_languages() {
  static const std::array<std::string, 10> names = {
      "Bengali", "Bhojpuri", "Gujarati", "Haryanvi", "Hindi",
      "Kannada", "Malayalam", "Odia",    "Punjabi",  "Tamil"};
  return names;
}

/// Per-language (abusive train/test, non-abusive train/test) clip counts of
/// the ADIMA release.
inline std::vector<LanguageCounts> adima_counts() {
  return {{"Bengali", 394, 148, 428, 222},   {"Bhojpuri", 253, 122, 506, 214},
          {"Gujarati", 516, 255, 301, 107},  {"Haryanvi", 419, 193, 399, 173},
          {"Hindi", 449, 186, 373, 183},     {"Kannada", 530, 243, 289, 126},
          {"Malayalam", 582, 257, 237, 115}, {"Odia", 491, 209, 323, 156},
          {"Punjabi", 405, 176, 413, 191},   {"Tamil", 572, 267, 248, 104}};
}

struct SynthSpec {
  std::vector<LanguageCounts> languages;
  std::size_t dim = 64;
  std::size_t frames_min = 4;
  std::size_t frames_max = 12;
  double class_separation = 8.0;
  double language_separation = 4.0;
  double noise_sigma = 1.0;

  /// `num_languages` languages with identical per-class counts. The first ten
  /// reuse the ADIMA language names.
  static SynthSpec uniform(std::size_t num_languages, std::size_t train_per_class,
                           std::size_t test_per_class) {
    SynthSpec s;
    for (std::size_t i = 0; i < num_languages; ++i) {
      std::string name = i < adima_languages().size() ? adima_languages()[i]
                                                      : "Lang" + std::to_string(i);
      s.languages.push_back({name, train_per_class, test_per_class, train_per_class, test_per_class});
    }
    return s;
  }

  void validate() const {
    if (languages.empty()) throw ValidationError("synthetic spec needs at least one language");
    if (dim == 0) throw ValidationError("synthetic spec dim must be >= 1");
    if (frames_min < 1 || frames_max < frames_min) {
      throw ValidationError("synthetic spec needs 1 <= frames_min <= frames_max");
    }
    if (!(noise_sigma > 0.0)) throw ValidationError("noise_sigma must be > 0");
    if (!(class_separation >= 0.0) || !(language_separation >= 0.0)) {
      throw ValidationError("separations must be >= 0");
    }
  }
};

namespace detail {

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-9) {
    norm = 0.0;
    for (auto& x : v) {
      x = g(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
  }
  for (auto& x : v) x /= norm;
  return v;
}

inline std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace detail

/// Gaussian clusters per (language, class). Each language gets a centre at
/// distance `language_separation` from the origin and its own class axis; the
/// two class means sit at +-class_separation/2 along that axis. Every frame is
/// its class mean plus isotropic noise. Pure in (spec, seed).
inline Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Corpus c;
  c.dim = spec.dim;
  c.provenance = "synthetic";
  for (const auto& lc : spec.languages) c.languages.push_back(lc.name);

  for (const auto& lc : spec.languages) {
    std::mt19937_64 geo(derive_seed(seed, "geometry/" + lc.name));
    const auto centre_dir = detail::random_unit(geo, spec.dim);
    const auto axis = detail::random_unit(geo, spec.dim);
    for (Label label : {Label::abusive, Label::non_abusive}) {
      const double sign = label == Label::abusive ? 0.5 : -0.5;
      std::vector<double> mean(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        mean[j] = spec.language_separation * centre_dir[j] + sign * spec.class_separation * axis[j];
      }
      for (Split split : {Split::train, Split::test}) {
        const std::size_t n = lc.get(label, split);
        for (std::size_t i = 0; i < n; ++i) {
          char idx[24];
          std::snprintf(idx, sizeof idx, "%05zu", i);
          const std::string id = detail::lowercase(lc.name) + "_" + to_string(split) + "_" +
                                 (label == Label::abusive ? "a" : "n") + "_" + idx;
          std::mt19937_64 rng(derive_seed(seed, "clip/" + id));
          std::uniform_int_distribution<std::size_t> frames_dist(spec.frames_min, spec.frames_max);
          std::normal_distribution<double> noise(0.0, spec.noise_sigma);
          const std::size_t frames = frames_dist(rng);
          std::vector<float> values(frames * spec.dim);
          for (std::size_t t = 0; t < frames; ++t)
            for (std::size_t j = 0; j < spec.dim; ++j)
              values[t * spec.dim + j] = static_cast<float>(mean[j] + noise(rng));
          c.records.push_back({id, lc.name, label, split, frames, spec.dim, "blobs/" + id + ".f32"});
          c.memory.emplace(id, std::move(values));
        }
      }
    }
  }
  return c;
}

}  // namespace xlabuse
