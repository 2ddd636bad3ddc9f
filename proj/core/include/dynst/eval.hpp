#pragma once

// Forecast quality metrics, the relative-epsilon comparison against a dense
// baseline, and the dense-vs-compacted inference timing harness.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynst/data.hpp"
#include "dynst/mask.hpp"
#include "dynst/models.hpp"
#include "dynst/morph.hpp"

namespace dynst {

struct MetricsReport {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  std::optional<double> ssim;  // image layout only
  double psnr = 0.0;           // +infinity when mse == 0
  std::vector<double> per_horizon_mae;
  std::string scope = "all-units";
  std::size_t samples = 0;
};

// Predictions and targets are target-shaped series ([K,C,H,W] or [K,N,D]),
// one pair per sample. Errors average over every element of every sample.
MetricsReport metrics(std::span<const STSeries> predictions, std::span<const STSeries> targets,
                      double data_range);
MetricsReport metrics(const STSeries& prediction, const STSeries& target, double data_range);

// Mean SSIM of one H x W frame over all win x win uniform windows
// (win = min(8, H, W)), population statistics.
double ssim_frame(std::span<const double> a, std::span<const double> b, std::size_t height,
                  std::size_t width, double data_range);

// "inf" for an infinite PSNR, shortest round-trip decimal otherwise.
std::string format_metric(double value);

// Target-shaped predictions for the listed samples.
std::vector<STSeries> forecast(const Model& model, const Dataset& dataset, const SensorMask& mask,
                               std::span<const std::size_t> samples, std::size_t patch = 1);
// Metrics over every unit of the test split.
MetricsReport evaluate(const Model& model, const Dataset& dataset, const SensorMask& mask,
                       double data_range, std::size_t patch = 1);

struct EpsilonVerdict {
  bool pass = false;
  double delta = 0.0;           // |mae_dyn - mae_dense|
  double relative_delta = 0.0;  // delta / mae_dense (0 when both are 0)
};

EpsilonVerdict epsilon_check(const MetricsReport& dynamic, const MetricsReport& dense,
                             double epsilon_rel);

struct SpeedReport {
  double dense_median_ms = 0.0;
  double dense_min_ms = 0.0;
  double dense_max_ms = 0.0;
  double compact_median_ms = 0.0;
  double compact_min_ms = 0.0;
  double compact_max_ms = 0.0;
  double ratio = 0.0;  // dense median / compacted median
  double sparsity = 0.0;
  std::size_t repetitions = 0;
  std::size_t samples = 0;
};

// Times full-size masked inference against compacted inference over every
// input. Both paths run single-threaded. Before timing, the active-row
// outputs of both paths must agree within 1e-9, otherwise ContractError.
// Each repetition processes all inputs once; the first repetition is a
// discarded warmup, so repetitions >= 11.
SpeedReport bench_speed(const Model& model, std::span<const MorphedInput> inputs,
                        const Graph* graph, const SensorMask& mask, std::size_t repetitions);
// Uses the test split (every sample when the dataset is unsplit).
SpeedReport bench_speed(const Model& model, const Dataset& dataset, const SensorMask& mask,
                        std::size_t repetitions, std::size_t patch = 1);

// Plain-text key=value blocks.
void save_report(const MetricsReport& report, const std::filesystem::path& path);
MetricsReport load_report(const std::filesystem::path& path);
void save_report(const SpeedReport& report, const std::filesystem::path& path);
std::string to_text(const MetricsReport& report);
std::string to_text(const SpeedReport& report);

}  // namespace dynst
