#pragma once

// Seeded generators shared by the property tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "dynst/autodiff.hpp"
#include "dynst/mask.hpp"
#include "dynst/morph.hpp"

namespace dynst::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double real(double lo = -1.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  std::vector<double> reals(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(lo, hi);
    return v;
  }

  // Values bounded away from zero so relu kinks stay out of the FD stencil.
  std::vector<double> reals_off_zero(std::size_t n, double margin = 0.05) {
    std::vector<double> v(n);
    for (auto& x : v) {
      const double mag = real(margin, 1.0);
      x = coin() ? mag : -mag;
    }
    return v;
  }

  STSeries image_series(std::size_t max_side = 6) {
    const auto t = size(1, 4), c = size(1, 3), h = size(1, max_side), w = size(1, max_side);
    return STSeries::image(t, c, h, w, reals(t * c * h * w));
  }

  STSeries graph_series() {
    const auto t = size(1, 5), n = size(1, 20), d = size(1, 3);
    return STSeries::graph(t, n, d, reals(t * n * d));
  }

  // Symmetric random graph with roughly `p` edge density.
  Graph graph(std::size_t nodes, double p) {
    std::vector<Graph::Edge> edges;
    for (std::size_t i = 0; i < nodes; ++i) {
      for (std::size_t j = i + 1; j < nodes; ++j) {
        if (coin(p)) edges.emplace_back(i, j);
      }
    }
    return Graph(nodes, std::move(edges));
  }

  // Binary mask over `units` with exactly `active` active units.
  SensorMask binary_mask(std::size_t units, std::size_t active) {
    std::vector<std::size_t> ids(units);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng_);
    std::vector<double> scores(units, 0.0);
    for (std::size_t i = 0; i < active; ++i) scores[ids[i]] = 1.0;
    return binarize_prune_count(SensorMask::make(scores, MaskMode::dense, identity_rows(units)),
                                units - active);
  }

  static std::vector<std::vector<std::size_t>> identity_rows(std::size_t units) {
    std::vector<std::vector<std::size_t>> rows(units);
    for (std::size_t u = 0; u < units; ++u) rows[u] = {u};
    return rows;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dynst_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace dynst::testing
