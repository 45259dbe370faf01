// Stratified k-shot support sets, the cross-lingual pool, and per-language
// episodes split into support and query halves.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xlabuse/common.hpp"
#include "xlabuse/normalization.hpp"

namespace xlabuse {

/// k train clips of one language, k/2 per class, drawn without replacement.
struct SupportSet {
  std::string language;
  std::size_t k = 0;
  std::vector<std::string> abusive;
  std::vector<std::string> non_abusive;

  std::vector<std::string> members() const {
    std::vector<std::string> out(abusive);
    out.insert(out.end(), non_abusive.begin(), non_abusive.end());
    return out;
  }

  bool operator==(const SupportSet&) const = default;
};

struct SupportPool {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<SupportSet> sets;  // one per language, in feature-set language order

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& s : sets) n += s.abusive.size() + s.non_abusive.size();
    return n;
  }
  const SupportSet& for_language(const std::string& language) const {
    for (const auto& s : sets)
      if (s.language == language) return s;
    throw ValidationError("no support set for language " + language);
  }

  bool operator==(const SupportPool&) const = default;
};

/// One MAML task: a language's support set split into an inner-loop part
/// and a query part.
struct Episode {
  std::string language;
  std::vector<std::string> support_ids;
  std::vector<std::string> query_ids;
};

inline std::uint64_t language_seed(std::uint64_t seed, const std::string& language) {
  return derive_seed(seed, "language/" + language);
}

inline SupportSet build_support_set(const FeatureSet& features, const std::string& language,
                                    std::size_t k, std::uint64_t seed) {
  if (k == 0 || k % 2 != 0) {
    throw ValidationError("shot count k must be a positive even number, got " + std::to_string(k));
  }
  const std::size_t per_class = k / 2;
  SupportSet set{language, k, {}, {}};
  std::mt19937_64 rng(language_seed(seed, language));
  for (Label label : {Label::abusive, Label::non_abusive}) {
    const auto candidates = features.ids(language, label, Split::train);
    if (candidates.size() < per_class) {
      throw ValidationError("language " + language + ", class " + to_string(label) + ": need " +
                            std::to_string(per_class) + " train clips, " + std::to_string(candidates.size()) +
                            " available");
    }
    auto& dst = label == Label::abusive ? set.abusive : set.non_abusive;
    std::sample(candidates.begin(), candidates.end(), std::back_inserter(dst), per_class, rng);
  }
  return set;
}

inline SupportPool build_pool(const FeatureSet& features, std::size_t k, std::uint64_t seed) {
  SupportPool pool{k, seed, {}};
  std::string failures;
  for (const auto& lang : features.languages) {
    try {
      pool.sets.push_back(build_support_set(features, lang, k, seed));
    } catch (const ValidationError& e) {
      failures += std::string(failures.empty() ? "" : "; ") + e.what();
    }
  }
  if (!failures.empty()) throw ValidationError("cannot build " + std::to_string(k) + "-shot pool: " + failures);
  return pool;
}

/// Splits each language's support set into support and query parts,
/// stratified by class. round(k * support_fraction) clips go to the support
/// side; when that count is odd the extra clip's class is drawn at random,
/// so both sides are balanced to within one clip.
inline std::vector<Episode> make_episodes(const SupportPool& pool, double support_fraction,
                                          std::uint64_t epoch_seed) {
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ValidationError("support_fraction must lie in (0, 1)");
  }
  std::vector<Episode> out;
  out.reserve(pool.sets.size());
  for (const auto& set : pool.sets) {
    std::mt19937_64 rng(language_seed(epoch_seed, set.language));
    const std::size_t per_class = set.abusive.size();
    const auto support_total =
        static_cast<std::size_t>(std::llround(static_cast<double>(set.abusive.size() + set.non_abusive.size()) *
                                              support_fraction));
    std::size_t support_abusive = support_total / 2;
    std::size_t support_non = support_total / 2;
    if (support_total % 2 == 1) {
      if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) ++support_abusive;
      else ++support_non;
    }
    if (support_abusive < 1 || support_non < 1 || support_abusive >= per_class ||
        support_non >= set.non_abusive.size()) {
      throw ValidationError("support_fraction " + std::to_string(support_fraction) + " with k=" +
                            std::to_string(set.k) + " leaves a class empty on the support or query side");
    }
    Episode ep{set.language, {}, {}};
    auto split_class = [&](std::vector<std::string> ids, std::size_t n_support) {
      std::shuffle(ids.begin(), ids.end(), rng);
      ep.support_ids.insert(ep.support_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_support));
      ep.query_ids.insert(ep.query_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_support), ids.end());
    };
    split_class(set.abusive, support_abusive);
    split_class(set.non_abusive, support_non);
    out.push_back(std::move(ep));
  }
  return out;
}

inline nlohmann::json to_json(const SupportPool& pool) {
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& s : pool.sets) {
    sets.push_back({{"language", s.language}, {"abusive", s.abusive}, {"non_abusive", s.non_abusive}});
  }
  return {{"k", pool.k}, {"seed", pool.seed}, {"sets", sets}};
}

inline SupportPool pool_from_json(const nlohmann::json& j) {
  SupportPool pool;
  pool.k = j.at("k").get<std::size_t>();
  pool.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("sets")) {
    pool.sets.push_back({s.at("language").get<std::string>(), pool.k,
                         s.at("abusive").get<std::vector<std::string>>(),
                         s.at("non_abusive").get<std::vector<std::string>>()});
  }
  return pool;
}

inline nlohmann::json to_json(const std::vector<Episode>& episodes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : episodes) {
    out.push_back({{"language", e.language}, {"support", e.support_ids}, {"query", e.query_ids}});
  }
  return out;
}

}  // namespace xlabuse
