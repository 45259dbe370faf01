#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "xlabuse/normalization.hpp"

namespace testing_util {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("xlabuse_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Feature set with `train` clips per class in the train split and `test`
/// per class in the test split for each named language. Vectors are
/// Gaussian around a per-class mean of +-sep/2 on the first coordinate.
inline xlabuse::FeatureSet make_features(const std::vector<std::string>& languages, std::size_t train,
                                         std::size_t test, std::size_t dim = 4, std::uint64_t seed = 1,
                                         double sep = 4.0) {
  using namespace xlabuse;
  FeatureSet fs;
  fs.dim = dim;
  fs.languages = languages;
  fs.provenance = "fixture";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (const auto& lang : languages) {
    for (Label label : {Label::abusive, Label::non_abusive}) {
      for (Split split : {Split::train, Split::test}) {
        const std::size_t n = split == Split::train ? train : test;
        for (std::size_t i = 0; i < n; ++i) {
          FeatureEntry e{lang, label, split, std::vector<double>(dim)};
          for (auto& v : e.values) v = g(rng);
          e.values[0] += label == Label::abusive ? sep / 2 : -sep / 2;
          const std::string id = lang + "_" + to_string(split) + "_" + (label == Label::abusive ? "a" : "n") + "_" +
                                 std::to_string(10000 + i);
          fs.entries.emplace(id, std::move(e));
        }
      }
    }
  }
  return fs;
}

}  // namespace testing_util
