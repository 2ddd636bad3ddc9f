#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "dynst/data.hpp"
#include "dynst/error.hpp"
#include "support.hpp"

namespace dynst {
namespace {

using testing::Gen;
using testing::TempDir;

DiffusionParams small_diffusion(std::uint64_t seed) {
  DiffusionParams p;
  p.seed = seed;
  p.height = 8;
  p.width = 8;
  p.total_steps = 40;
  return p;
}

std::vector<double> frame(const STSeries& s, std::size_t t) {
  const std::size_t n = s.element_count() / s.time_steps();
  return {s.values.begin() + t * n, s.values.begin() + (t + 1) * n};
}

TEST(Diffusion, ZeroAlphaFreezesEveryFrame) {
  auto p = small_diffusion(1);
  p.alpha = 0.0;
  const auto ds = gen_diffusion_grid(p);
  const auto& s = ds.trajectories.front();
  for (std::size_t t = 1; t < s.time_steps(); ++t) EXPECT_EQ(frame(s, t), frame(s, 0));
}

TEST(Diffusion, HandComputedStencilStep) {
  std::vector<double> u(9, 0.0);
  u[4] = 1.0;
  const auto next = diffusion_step(u, 3, 3, 0.25);
  EXPECT_EQ(next, (std::vector<double>{0, 0.25, 0, 0.25, 0, 0.25, 0, 0.25, 0}));
}

TEST(Diffusion, AlphaOutsideStabilityBoundNamesTheBound) {
  auto p = small_diffusion(1);
  p.alpha = 0.3;
  try {
    gen_diffusion_grid(p);
    FAIL() << "expected an error";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("0.25"), std::string::npos) << e.what();
  }
  p.alpha = -0.01;
  EXPECT_THROW(gen_diffusion_grid(p), ContractError);
  p.alpha = 0.2;
  p.height = 2;
  EXPECT_THROW(gen_diffusion_grid(p), ContractError);
}

TEST(Diffusion, ProvidesRequestedSamplesAsWindows) {
  DiffusionParams p;
  p.seed = 4;
  p.num_samples = 500;
  const auto ds = gen_diffusion_grid(p);
  EXPECT_EQ(ds.size(), 500u);
  const auto [in, target] = ds.sample(123);
  EXPECT_EQ(in.dims, (std::array<std::size_t, 4>{8, 1, 16, 16}));
  EXPECT_EQ(target.dims, (std::array<std::size_t, 4>{8, 1, 16, 16}));
}

TEST(Diffusion, TargetsFollowInputsInTime) {
  const auto ds = gen_diffusion_grid(small_diffusion(2));
  const auto& w = ds.windows[3];
  const auto& s = ds.trajectories[w.trajectory];
  const auto [in, target] = ds.sample(3);
  EXPECT_EQ(frame(in, 0), frame(s, w.start));
  EXPECT_EQ(frame(target, 0), frame(s, w.start + ds.input_steps));
}

TEST(DiffusionProperty, MassIsConservedAndBoundedByInitialRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = small_diffusion(seed);
    p.alpha = 0.05 + 0.2 * static_cast<double>(seed % 5) / 4.0;
    const auto ds = gen_diffusion_grid(p);
    const auto& s = ds.trajectories.front();
    const auto f0 = frame(s, 0);
    const double mass0 = std::accumulate(f0.begin(), f0.end(), 0.0);
    const auto [lo, hi] = std::minmax_element(f0.begin(), f0.end());
    for (std::size_t t = 1; t < s.time_steps(); ++t) {
      const auto f = frame(s, t);
      EXPECT_NEAR(std::accumulate(f.begin(), f.end(), 0.0), mass0, 1e-9);
      for (double v : f) {
        EXPECT_GE(v, *lo - 1e-12);
        EXPECT_LE(v, *hi + 1e-12);
      }
    }
  }
}

TEST(DataProperty, GeneratorsArePureFunctionsOfTheSeed) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = gen_diffusion_grid(small_diffusion(seed));
    const auto b = gen_diffusion_grid(small_diffusion(seed));
    EXPECT_EQ(a.trajectories, b.trajectories);
    PlantedGraphParams p;
    p.seed = seed;
    const auto c = gen_planted_graph(p);
    const auto d = gen_planted_graph(p);
    EXPECT_EQ(c.trajectories, d.trajectories);
    EXPECT_EQ(*c.graph, *d.graph);
    EXPECT_EQ(c.noise_units, d.noise_units);
  }
  EXPECT_NE(gen_diffusion_grid(small_diffusion(1)).trajectories,
            gen_diffusion_grid(small_diffusion(2)).trajectories);
}

TEST(Planted, StructureAndNoiseSet) {
  PlantedGraphParams p;
  p.seed = 3;
  const auto ds = gen_planted_graph(p);
  ASSERT_TRUE(ds.graph);
  EXPECT_EQ(ds.layout, Layout::graph);
  EXPECT_EQ(ds.graph->nodes(), 64u);
  EXPECT_EQ(ds.noise_units.size(), 16u);
  EXPECT_TRUE(std::is_sorted(ds.noise_units.begin(), ds.noise_units.end()));
  EXPECT_LT(ds.noise_units.back(), 64u);
  double degree = 0.0;
  for (std::size_t v = 0; v < 64; ++v) degree += static_cast<double>(ds.graph->degree(v));
  EXPECT_GT(degree / 64.0, 4.0);
  EXPECT_LT(degree / 64.0, 8.0);
}

TEST(Planted, NoNoiseIsPureDiffusion) {
  PlantedGraphParams p;
  p.seed = 5;
  p.noise_count = 0;
  const auto ds = gen_planted_graph(p);
  EXPECT_TRUE(ds.noise_units.empty());
  // Relaxation toward the neighbour mean is a convex combination: the range shrinks.
  const auto& s = ds.trajectories.front();
  const auto f0 = frame(s, 0), fl = frame(s, s.time_steps() - 1);
  const auto [lo0, hi0] = std::minmax_element(f0.begin(), f0.end());
  const auto [lo1, hi1] = std::minmax_element(fl.begin(), fl.end());
  EXPECT_LE(*hi1 - *lo1, *hi0 - *lo0);
}

TEST(Planted, NoiseCountMustBeBelowNodeCount) {
  PlantedGraphParams p;
  p.nodes = 8;
  p.noise_count = 8;
  EXPECT_THROW(gen_planted_graph(p), ContractError);
}

TEST(Planted, NoiseInputsAreUncorrelatedWithEveryTarget) {
  PlantedGraphParams p;
  p.seed = 9;
  p.num_samples = 4000;
  const auto ds = gen_planted_graph(p);
  ASSERT_GE(ds.size(), 1000u);
  const std::size_t n = ds.size(), nodes = 64, tin = ds.input_steps, k = ds.horizon;
  std::vector<std::vector<double>> inputs(ds.noise_units.size() * tin, std::vector<double>(n));
  std::vector<std::vector<double>> targets(nodes * k, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto [in, tg] = ds.sample(i);
    for (std::size_t a = 0; a < ds.noise_units.size(); ++a) {
      for (std::size_t t = 0; t < tin; ++t) inputs[a * tin + t][i] = in.values[t * nodes + ds.noise_units[a]];
    }
    for (std::size_t v = 0; v < nodes; ++v) {
      for (std::size_t t = 0; t < k; ++t) targets[v * k + t][i] = tg.values[t * nodes + v];
    }
  }
  auto standardize = [](std::vector<double>& x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double& v : x) {
      v -= m;
      ss += v * v;
    }
    const double sd = std::sqrt(ss);
    for (double& v : x) v = sd > 0 ? v / sd : 0.0;
  };
  for (auto& x : inputs) standardize(x);
  for (auto& y : targets) standardize(y);
  double worst = 0.0;
  for (const auto& x : inputs) {
    for (const auto& y : targets) {
      worst = std::max(worst, std::abs(std::inner_product(x.begin(), x.end(), y.begin(), 0.0)));
    }
  }
  EXPECT_LT(worst, 0.1);
}

TEST(Planted, RelabelPermutesConsistently) {
  PlantedGraphParams p;
  p.seed = 2;
  const auto ds = gen_planted_graph(p);
  Gen g(2);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), g.engine());
  const auto r = relabel(ds, perm);
  EXPECT_EQ(*r.graph, ds.graph->relabeled(perm));
  std::vector<std::size_t> noise;
  for (auto u : ds.noise_units) noise.push_back(perm[u]);
  std::sort(noise.begin(), noise.end());
  EXPECT_EQ(r.noise_units, noise);
  const auto [in, tg] = ds.sample(0);
  const auto [rin, rtg] = r.sample(0);
  for (std::size_t t = 0; t < ds.input_steps; ++t) {
    for (std::size_t v = 0; v < 64; ++v) EXPECT_EQ(rin.values[t * 64 + perm[v]], in.values[t * 64 + v]);
  }
  EXPECT_THROW(relabel(ds, std::vector<std::size_t>{0, 1}), ContractError);
}

TEST(Split, PaperRatioOnTenSamples) {
  auto p = small_diffusion(1);
  p.num_samples = 10;
  const auto ds = split_811(gen_diffusion_grid(p), 3);
  EXPECT_EQ(ds.split->train.size(), 8u);
  EXPECT_EQ(ds.split->val.size(), 1u);
  EXPECT_EQ(ds.split->test.size(), 1u);
}

TEST(Split, HundredSamplesAndDeterminism) {
  auto p = small_diffusion(1);
  p.num_samples = 100;
  const auto base = gen_diffusion_grid(p);
  const auto a = split_811(base, 3), b = split_811(base, 3), c = split_811(base, 4);
  EXPECT_EQ(a.split->train.size(), 80u);
  EXPECT_EQ(a.split->val.size(), 10u);
  EXPECT_EQ(a.split->test.size(), 10u);
  EXPECT_EQ(*a.split, *b.split);
  EXPECT_NE(*a.split, *c.split);
}

TEST(Split, TooFewSamplesIsAnError) {
  auto p = small_diffusion(1);
  p.num_samples = 9;
  EXPECT_THROW(split_811(gen_diffusion_grid(p), 1), ContractError);
}

TEST(SplitProperty, DisjointCoveringAndWithinRounding) {
  Gen g(41);
  for (int i = 0; i < 30; ++i) {
    auto p = small_diffusion(static_cast<std::uint64_t>(i));
    p.num_samples = g.size(10, 300);
    const auto ds = split_811(gen_diffusion_grid(p), g.size(0, 1000));
    const auto& s = *ds.split;
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.val.begin(), s.val.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expect(ds.size());
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
    const double n = static_cast<double>(ds.size());
    EXPECT_LE(std::abs(static_cast<double>(s.train.size()) - 0.8 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s.val.size()) - 0.1 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s.test.size()) - 0.1 * n), 1.0);
  }
}

TEST(SeriesIo, RandomSeriesRoundTripBitExactly) {
  TempDir dir("series");
  Gen g(51);
  for (int i = 0; i < 50; ++i) {
    const auto s = i == 0 ? STSeries::image(2, 1, 4, 4, g.reals(32)) : (g.coin() ? g.image_series() : g.graph_series());
    save_series(s, dir / "s.bin");
    EXPECT_EQ(load_series(dir / "s.bin"), s);
  }
}

TEST(SeriesIo, HeaderDimsFixPayloadLength) {
  TempDir dir("series_len");
  auto write = [&](const std::string& name, std::size_t values) {
    std::ofstream out(dir / name, std::ios::binary);
    out << "DYNST1\nlayout=image dims=12,2,8,8\n";
    const double v = 0.5;
    for (std::size_t i = 0; i < values; ++i) out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  write("ok.bin", 1536);
  EXPECT_EQ(load_series(dir / "ok.bin").values.size(), 1536u);
  write("short.bin", 1535);
  try {
    load_series(dir / "short.bin");
    FAIL() << "expected payload-length error";
  } catch (const SeriesFormatError& e) {
    EXPECT_EQ(e.kind(), SeriesFormatError::Kind::payload_length);
  }
}

TEST(SeriesIo, DistinctErrorsForMagicAndNonFinite) {
  TempDir dir("series_bad");
  {
    std::ofstream(dir / "magic.bin", std::ios::binary) << "NOPE01\nlayout=image dims=1,1,1,1\n";
    std::ofstream out(dir / "nan.bin", std::ios::binary);
    out << "DYNST1\nlayout=graph dims=1,1,1\n";
    const double v = std::nan("");
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  auto kind_of = [](const std::filesystem::path& p) {
    try {
      load_series(p);
    } catch (const SeriesFormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error for " << p;
    return SeriesFormatError::Kind::bad_header;
  };
  EXPECT_EQ(kind_of(dir / "magic.bin"), SeriesFormatError::Kind::bad_magic);
  EXPECT_EQ(kind_of(dir / "nan.bin"), SeriesFormatError::Kind::non_finite);
}

TEST(DatasetIo, SaveLoadRoundTripKeepsNoiseSetAndSplit) {
  TempDir dir("dataset");
  PlantedGraphParams p;
  p.seed = 8;
  p.num_samples = 50;
  const auto ds = split_811(gen_planted_graph(p), 8);
  const auto manifest = save_dataset(ds, dir.path());
  const auto back = load_dataset(manifest);
  EXPECT_EQ(back.trajectories, ds.trajectories);
  EXPECT_EQ(back.windows, ds.windows);
  EXPECT_EQ(*back.graph, *ds.graph);
  EXPECT_EQ(back.noise_units, ds.noise_units);
  EXPECT_EQ(*back.split, *ds.split);
  save_graph(*ds.graph, dir / "g.txt");
  EXPECT_EQ(load_graph(dir / "g.txt"), *ds.graph);
}

TEST(DatasetIo, SensorGraphFollowsLayout) {
  const auto img = gen_diffusion_grid(small_diffusion(1));
  EXPECT_EQ(sensor_graph(img), grid_graph(8, 8));
  PlantedGraphParams p;
  const auto g = gen_planted_graph(p);
  EXPECT_EQ(sensor_graph(g), *g.graph);
}

}  // namespace
}  // namespace dynst
