#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dynst/error.hpp"
#include "dynst/eval.hpp"
#include "support.hpp"

namespace dynst {
namespace {

using testing::Gen;
using testing::TempDir;

// Direct transcription of windowed SSIM, kept independent of the library.
double brute_ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t h,
                  std::size_t w, double range) {
  const std::size_t win = std::min<std::size_t>({8, h, w});
  const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i + win <= h; ++i) {
    for (std::size_t j = 0; j + win <= w; ++j) {
      double mx = 0, my = 0;
      for (std::size_t di = 0; di < win; ++di) {
        for (std::size_t dj = 0; dj < win; ++dj) {
          mx += a[(i + di) * w + j + dj];
          my += b[(i + di) * w + j + dj];
        }
      }
      const double n = static_cast<double>(win * win);
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t di = 0; di < win; ++di) {
        for (std::size_t dj = 0; dj < win; ++dj) {
          const double x = a[(i + di) * w + j + dj] - mx, y = b[(i + di) * w + j + dj] - my;
          vx += x * x;
          vy += y * y;
          cxy += x * y;
        }
      }
      vx /= n;
      vy /= n;
      cxy /= n;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

std::vector<double> wave_field(std::size_t h, std::size_t w) {
  std::vector<double> t(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      t[i * w + j] = 0.5 + 0.3 * std::sin(0.7 * static_cast<double>(i)) * std::cos(0.4 * static_cast<double>(j));
    }
  }
  return t;
}

TEST(Metrics, IdenticalSeriesArePerfect) {
  Gen g(1);
  const auto s = STSeries::image(2, 1, 8, 8, g.reals(128, 0.0, 1.0));
  const auto r = metrics(s, s, 1.0);
  EXPECT_EQ(r.mae, 0.0);
  EXPECT_EQ(r.mse, 0.0);
  ASSERT_TRUE(r.ssim.has_value());
  EXPECT_DOUBLE_EQ(*r.ssim, 1.0);
  EXPECT_TRUE(std::isinf(r.psnr));
  EXPECT_EQ(format_metric(r.psnr), "inf");
}

TEST(Metrics, HandExample) {
  const auto r = metrics(STSeries::graph(1, 2, 1, {2, 2}), STSeries::graph(1, 2, 1, {0, 4}), 1.0);
  EXPECT_DOUBLE_EQ(r.mae, 2.0);
  EXPECT_DOUBLE_EQ(r.mse, 4.0);
  EXPECT_DOUBLE_EQ(r.rmse, 2.0);
  EXPECT_FALSE(r.ssim.has_value());
  EXPECT_DOUBLE_EQ(r.psnr, 10.0 * std::log10(1.0 / 4.0));
}

TEST(Metrics, PerHorizonMaeSplitsTimeSteps) {
  const auto p = STSeries::graph(2, 2, 1, {1, 1, 0, 0});
  const auto t = STSeries::graph(2, 2, 1, {0, 0, 0, 3});
  const auto r = metrics(p, t, 1.0);
  EXPECT_EQ(r.per_horizon_mae, (std::vector<double>{1.0, 1.5}));
  EXPECT_DOUBLE_EQ(r.mae, 1.25);
}

TEST(Metrics, ShapeMismatchIsRejected) {
  EXPECT_THROW(metrics(STSeries::graph(1, 2, 1, {1, 2}), STSeries::graph(1, 3, 1, {1, 2, 3}), 1.0),
               Error);
}

TEST(Ssim, ShiftedWaveMatchesFrozenOracle) {
  // Frozen from tests/oracles/derive.py.
  const auto t = wave_field(10, 12);
  auto p = t;
  for (auto& v : p) v += 0.1;
  EXPECT_NEAR(ssim_frame(p, t, 10, 12, 1.0), 0.983604030252298, 1e-12);
}

TEST(SsimProperty, AgreesWithBruteForceOnRandomFrames) {
  Gen g(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t h = g.size(1, 14), w = g.size(1, 14);
    const auto a = g.reals(h * w, 0.0, 1.0);
    auto b = a;
    for (auto& v : b) v += g.real(-0.2, 0.2);
    const double range = g.real(0.5, 2.0);
    EXPECT_NEAR(ssim_frame(a, b, h, w, range), brute_ssim(a, b, h, w, range), 1e-12);
  }
}

TEST(SsimProperty, SymmetricAndBoundedByOne) {
  Gen g(3);
  for (int i = 0; i < 100; ++i) {
    const auto a = g.reals(64, 0.0, 1.0), b = g.reals(64, 0.0, 1.0);
    const double ab = ssim_frame(a, b, 8, 8, 1.0);
    EXPECT_NEAR(ab, ssim_frame(b, a, 8, 8, 1.0), 1e-14);
    EXPECT_LE(ab, 1.0 + 1e-12);
  }
}

TEST(Epsilon, WithinTenPercentPasses) {
  MetricsReport dyn, dense;
  dyn.mae = 4.37;
  dense.mae = 4.35;
  const auto v = epsilon_check(dyn, dense, 0.10);
  EXPECT_TRUE(v.pass);
  EXPECT_NEAR(v.relative_delta, 0.004597701149425394, 1e-15);
}

TEST(Epsilon, EqualPassesAndDoubleFails) {
  MetricsReport a, b;
  a.mae = b.mae = 3.0;
  EXPECT_TRUE(epsilon_check(a, b, 0.0).pass);
  a.mae = 2.0;
  b.mae = 1.0;
  const auto v = epsilon_check(a, b, 0.10);
  EXPECT_FALSE(v.pass);
  EXPECT_DOUBLE_EQ(v.relative_delta, 1.0);
  a.mae = b.mae = 0.0;
  EXPECT_TRUE(epsilon_check(a, b, 0.10).pass);
}

TEST(EpsilonProperty, PassIffRelativeDeltaWithinBound) {
  Gen g(4);
  for (int i = 0; i < 500; ++i) {
    MetricsReport a, b;
    b.mae = g.real(0.01, 10.0);
    a.mae = b.mae * g.real(0.5, 1.5);
    const double eps = g.real(0.0, 0.5);
    const auto v = epsilon_check(a, b, eps);
    EXPECT_EQ(v.pass, std::abs(a.mae - b.mae) / b.mae <= eps);
  }
}

TEST(Bench, FewerThanElevenRepetitionsIsAnError) {
  std::mt19937_64 rng(1);
  NodeMlp model(2, {4}, 2, rng);
  MorphedInput in;
  in.matrix = Matrix(4, 2, std::vector<double>(8, 1.0));
  in.layout = Layout::graph;
  const std::vector<MorphedInput> inputs{in};
  const auto mask = binarize_prune_count(init_mask(4), 2);
  EXPECT_THROW(bench_speed(model, inputs, nullptr, mask, 10), ContractError);
  const auto report = bench_speed(model, inputs, nullptr, mask, 11);
  EXPECT_EQ(report.repetitions, 11u);
  EXPECT_GT(report.ratio, 0.0);
  EXPECT_LE(report.dense_min_ms, report.dense_median_ms);
  EXPECT_LE(report.compact_median_ms, report.compact_max_ms);
}

TEST(Reports, MetricsRoundTripThroughText) {
  TempDir dir("report");
  MetricsReport r;
  r.mae = 0.1;
  r.mse = 1.0 / 3.0;
  r.rmse = std::sqrt(r.mse);
  r.ssim = 0.97;
  r.psnr = std::numeric_limits<double>::infinity();
  r.per_horizon_mae = {0.05, 0.15};
  r.samples = 7;
  save_report(r, dir / "m.txt");
  const auto back = load_report(dir / "m.txt");
  EXPECT_EQ(back.mae, r.mae);
  EXPECT_EQ(back.mse, r.mse);
  EXPECT_EQ(back.rmse, r.rmse);
  EXPECT_EQ(back.ssim, r.ssim);
  EXPECT_TRUE(std::isinf(back.psnr));
  EXPECT_EQ(back.per_horizon_mae, r.per_horizon_mae);
  EXPECT_EQ(back.samples, r.samples);
  EXPECT_THROW(load_report(dir / "missing.txt"), IoError);
}

}  // namespace
}  // namespace dynst
