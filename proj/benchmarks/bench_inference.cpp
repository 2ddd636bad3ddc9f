// Full-size masked inference against compacted inference on the active rows.

#include <benchmark/benchmark.h>

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>

#include "dynst/mask.hpp"
#include "dynst/models.hpp"

namespace {

using namespace dynst;

constexpr std::size_t kIn = 16, kOut = 8;

MorphedInput random_input(std::size_t rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(rows * kIn);
  for (auto& x : v) x = u(rng);
  MorphedInput in;
  in.matrix = Matrix(rows, kIn, std::move(v));
  in.layout = Layout::graph;
  return in;
}

// Random binary mask with round(sparsity * units) pruned units.
SensorMask random_mask(std::size_t units, double sparsity, std::mt19937_64& rng) {
  std::vector<double> scores(units);
  std::iota(scores.begin(), scores.end(), 1.0);
  std::shuffle(scores.begin(), scores.end(), rng);
  auto dense = init_mask(units);
  std::copy(scores.begin(), scores.end(), dense.mutable_scores().begin());
  return binarize_prune(dense, sparsity);
}

Graph ring_lattice(std::size_t n) {
  std::vector<Graph::Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 1; k <= 3; ++k) edges.emplace_back(i, (i + k) % n);
  }
  return Graph(n, std::move(edges));
}

struct Fixture {
  std::unique_ptr<Model> model;
  MorphedInput input;
  std::optional<Graph> graph;
  SensorMask mask;
};

Fixture make_fixture(BackboneKind kind, const benchmark::State& state) {
  const auto units = static_cast<std::size_t>(state.range(0));
  const double sparsity = static_cast<double>(state.range(1)) / 100.0;
  std::mt19937_64 rng(7);
  ArchSpec arch;
  arch.kind = kind;
  arch.input_width = kIn;
  arch.output_width = kOut;
  arch.hidden = kind == BackboneKind::mlp ? std::vector<std::size_t>{64, 64} : std::vector<std::size_t>{16};
  arch.layers = 2;
  Fixture f;
  f.model = make_model(arch, rng);
  f.input = random_input(units, rng);
  if (kind == BackboneKind::mpn) f.graph = ring_lattice(units);
  f.mask = random_mask(units, sparsity, rng);
  return f;
}

void masked(benchmark::State& state, BackboneKind kind) {
  const auto f = make_fixture(kind, state);
  const Graph* g = f.graph ? &*f.graph : nullptr;
  for (auto _ : state) benchmark::DoNotOptimize(forward(*f.model, f.input, g, f.mask));
}

void compacted(benchmark::State& state, BackboneKind kind) {
  const auto f = make_fixture(kind, state);
  const auto plan = plan_compact(*f.model, f.graph ? &*f.graph : nullptr, f.mask);
  for (auto _ : state) benchmark::DoNotOptimize(run_compact(*f.model, f.input.matrix, plan));
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int units : {1024, 4096}) {
    for (int sparsity : {0, 30, 50, 90}) b->Args({units, sparsity});
  }
  b->ArgNames({"units", "sparsity_pct"})->Unit(benchmark::kMicrosecond);
}

BENCHMARK_CAPTURE(masked, mlp, BackboneKind::mlp)->Apply(sizes);
BENCHMARK_CAPTURE(compacted, mlp, BackboneKind::mlp)->Apply(sizes);
BENCHMARK_CAPTURE(masked, mpn, BackboneKind::mpn)->Apply(sizes);
BENCHMARK_CAPTURE(compacted, mpn, BackboneKind::mpn)->Apply(sizes);

}  // namespace

BENCHMARK_MAIN();
