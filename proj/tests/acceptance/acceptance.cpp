// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <malloc.h>
#include <sched.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cli.hpp"
#include "dynst/data.hpp"
#include "dynst/eval.hpp"
#include "dynst/mask.hpp"
#include "dynst/models.hpp"
#include "dynst/morph.hpp"
#include "dynst/trainer.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

namespace dynst {
namespace {

using testing::Gen;
using testing::TempDir;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, const char* f = "%.5f") {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(f, x);
  return s;
}

Verdict gradient_correctness() {
  Gen g(101);
  double worst = 0.0;
  std::size_t cases = 0;
  for (const auto kind : testing::differentiable_ops()) {
    for (int i = 0; i < 100; ++i, ++cases) {
      worst = std::max(worst, testing::relative_gradient_error(testing::random_case(kind, g)));
    }
  }
  return {worst < 1e-5, fmt("%zu cases over %zu ops, worst relative error %.2e", cases,
                            testing::differentiable_ops().size(), worst)};
}

bool is_partition(const std::vector<std::vector<std::size_t>>& parts, std::size_t rows,
                  std::size_t patch) {
  std::vector<int> seen(rows, 0);
  for (const auto& p : parts) {
    if (p.size() != patch * patch) return false;
    for (auto r : p) {
      if (r >= rows) return false;
      ++seen[r];
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });
}

Verdict morph_bijection() {
  Gen g(102);
  std::size_t bad_round_trips = 0, bad_partitions = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = g.coin() ? g.image_series(12) : g.graph_series();
    if (unmorph(morph(s)) != s) ++bad_round_trips;
    if (s.layout == Layout::image) {
      const std::size_t h = s.dims[2], w = s.dims[3];
      for (std::size_t p = 1; p <= std::min(h, w); ++p) {
        if (h % p || w % p) continue;
        const auto m = morph(s, p);
        if (unmorph(m) != s) ++bad_round_trips;
        if (!is_partition(patchify(m, p), h * w, p)) ++bad_partitions;
      }
    }
  }
  return {bad_round_trips == 0 && bad_partitions == 0,
          fmt("1000 series: %zu round-trip mismatches, %zu non-partitions", bad_round_trips,
              bad_partitions)};
}

ArchSpec arch_of(BackboneKind kind, std::size_t in, std::vector<std::size_t> hidden,
                 std::size_t layers, std::size_t out) {
  ArchSpec a;
  a.kind = kind;
  a.input_width = in;
  a.output_width = out;
  a.hidden = std::move(hidden);
  a.layers = layers;
  return a;
}

MorphedInput graph_input(std::size_t rows, std::size_t cols, std::vector<double> values) {
  MorphedInput in;
  in.matrix = Matrix(rows, cols, std::move(values));
  in.layout = Layout::graph;
  return in;
}

Verdict compact_equivalence() {
  Gen g(103);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = g.size(2, 60), in_w = g.size(1, 8), out_w = g.size(1, 4);
    const auto graph = g.graph(n, g.real(0.03, 0.4));
    const auto arch = g.coin() ? arch_of(BackboneKind::mpn, in_w, {g.size(1, 12)}, g.size(1, 3), out_w)
                               : arch_of(BackboneKind::mlp, in_w, {g.size(1, 12), g.size(1, 12)}, 0, out_w);
    auto model = make_model(arch, g.engine());
    const auto mask = g.binary_mask(n, g.size(1, n));
    const auto in = graph_input(n, in_w, g.reals(n * in_w, -2.0, 2.0));
    const auto full = forward(*model, in, &graph, mask);
    const auto compact = compact_forward(*model, in, &graph, mask);
    if (compact.rows != mask.active_rows()) return {false, fmt("triple %d: active rows differ", i)};
    for (std::size_t r = 0; r < compact.rows.size(); ++r) {
      for (std::size_t c = 0; c < out_w; ++c) {
        worst = std::max(worst, std::abs(compact.values(r, c) - full(compact.rows[r], c)));
      }
    }
  }
  return {worst <= 1e-9, fmt("200 triples, worst absolute difference %.2e", worst)};
}

Verdict sparsity_ledger() {
  PlantedGraphParams p;
  p.seed = 4;
  p.nodes = 100;
  p.noise_count = 0;
  p.num_samples = 40;
  const auto data = TrainingData::from(split_811(gen_planted_graph(p), 4));
  Schedule s;
  s.seed = 4;
  s.model_iters = 6;
  s.mask_iters = 3;
  s.dst_interval = 3;
  s.dst_steps = 2;
  s.finetune_iters = 6;
  s.batch_size = 8;
  s.log_interval = 0;
  const auto r = run(data, s, arch_of(BackboneKind::mpn, data.input_width(), {8}, 2, data.output_width()));
  std::size_t prunes = 0, exchanges = 0, broken = 0, active = data.units();
  for (const auto& e : r.trace) {
    if (e.event == TraceEvent::prune) {
      ++prunes;
      active = e.active;
    } else if (e.event == TraceEvent::exchange) {
      ++exchanges;
      if (e.active != active) ++broken;
    }
  }
  const double sp = sparsity(r.mask);
  const bool ok = prunes == 10 && std::abs(sp - 0.30) <= 1.0 / 100 + 1e-12 && broken == 0 && exchanges > 0;
  return {ok, fmt("%zu prune events, final sparsity %.4f, %zu exchanges, %zu changed cardinality",
                  prunes, sp, exchanges, broken)};
}

// Shared desk-scale forecasting setup on the 16x16 diffusion grid with 2x2
// patches (64 units).
constexpr std::size_t kPatch = 2;
constexpr std::uint64_t kSeeds = 5;

struct DiffusionRun {
  MetricsReport report;
  double sparsity = 0.0;
};

class DiffusionBench {
 public:
  const Dataset& dataset(std::uint64_t seed) {
    auto it = datasets_.find(seed);
    if (it == datasets_.end()) {
      DiffusionParams p;
      p.seed = seed;
      p.num_samples = 500;
      it = datasets_.emplace(seed, split_811(gen_diffusion_grid(p), seed)).first;
      training_.emplace(seed, TrainingData::from(it->second, kPatch));
    }
    return it->second;
  }

  const DiffusionRun& get(Scheme scheme, std::uint64_t seed, double target = 0.30) {
    const auto key = std::make_tuple(scheme, seed, target);
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    const auto& ds = dataset(seed);
    const auto& data = training_.at(seed);
    Schedule s;
    s.scheme = scheme;
    s.seed = seed;
    s.target_sparsity = target;
    s.prune_frac = target / 10;
    s.q_frac = std::min(Schedule{}.q_frac, s.prune_frac / 2);
    s.lr_model = s.lr_mask = 0.3;
    s.model_iters = 40;
    s.mask_iters = 10;
    s.dst_interval = 10;
    s.dst_steps = 2;
    s.batch_size = 16;
    s.finetune_iters = 200;
    s.loss_scope = LossScope::all_units;
    s.log_interval = 0;
    const auto r = run(data, s, arch_of(BackboneKind::mpn, data.input_width(), {16}, 2, data.output_width()));
    DiffusionRun out;
    out.report = evaluate(*r.model, ds, r.mask, 1.0, kPatch);
    out.sparsity = sparsity(r.mask);
    return runs_.emplace(key, std::move(out)).first->second;
  }

 private:
  std::map<std::uint64_t, Dataset> datasets_;
  std::map<std::uint64_t, TrainingData> training_;
  std::map<std::tuple<Scheme, std::uint64_t, double>, DiffusionRun> runs_;
};

Verdict epsilon_constraint(DiffusionBench& bench) {
  std::size_t within = 0;
  std::vector<double> deltas;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto v = epsilon_check(bench.get(Scheme::ip, seed).report, bench.get(Scheme::dense, seed).report, 0.10);
    within += v.pass;
    deltas.push_back(v.relative_delta);
  }
  return {within >= 4, fmt("%zu/5 seeds within 10%% of dense MAE; relative deltas %s", within,
                           join(deltas, "%.3f").c_str())};
}

Verdict planted_recovery() {
  std::size_t good = 0;
  std::vector<double> fractions;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    PlantedGraphParams p;
    p.seed = seed;
    p.num_samples = 500;
    const auto ds = split_811(gen_planted_graph(p), seed);
    const auto data = TrainingData::from(ds);
    Schedule s;
    s.seed = seed;
    s.target_sparsity = 0.25;
    s.lr_model = s.lr_mask = 0.1;
    s.batch_size = 16;
    s.finetune_iters = 100;
    s.log_interval = 0;
    const auto r = run(data, s, arch_of(BackboneKind::mpn, data.input_width(), {16}, 2, data.output_width()));
    const auto pruned = r.mask.pruned_set();
    std::size_t hits = 0;
    for (auto u : pruned) hits += std::binary_search(ds.noise_units.begin(), ds.noise_units.end(), u);
    const double frac = pruned.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pruned.size());
    fractions.push_back(frac);
    good += frac >= 0.75;
  }
  return {good >= 4, fmt("%zu/5 seeds with >= 75%% noise among pruned units; noise fractions %s", good,
                         join(fractions, "%.3f").c_str())};
}

void pin_to_one_cpu() {
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(0, &set);
  sched_setaffinity(0, sizeof set, &set);
}

Verdict measured_speedup() {
  pin_to_one_cpu();
  constexpr std::size_t kUnits = 4096, kIn = 16, kOut = 8;
  std::mt19937_64 rng(107);
  NodeMlp model(kIn, {64, 64}, kOut, rng);
  Gen g(107);
  std::vector<MorphedInput> inputs;
  for (int i = 0; i < 4; ++i) inputs.push_back(graph_input(kUnits, kIn, g.reals(kUnits * kIn)));
  const auto half = bench_speed(model, inputs, nullptr, g.binary_mask(kUnits, kUnits / 2), 31);
  const auto none = bench_speed(model, inputs, nullptr, g.binary_mask(kUnits, kUnits), 31);
  const bool ok = half.ratio >= 1.5 && none.ratio >= 0.9 && none.ratio <= 1.1;
  return {ok, fmt("speedup %.3fx at sparsity 0.5 (dense %.3f ms, compact %.3f ms), %.3fx at sparsity 0",
                  half.ratio, half.dense_median_ms, half.compact_median_ms, none.ratio)};
}

Verdict scheme_ordering(DiffusionBench& bench) {
  std::vector<double> ip, os, dst;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    ip.push_back(bench.get(Scheme::ip, seed).report.rmse);
    os.push_back(bench.get(Scheme::os, seed).report.rmse);
    dst.push_back(bench.get(Scheme::dst, seed).report.rmse);
  }
  const double mi = median(ip), mo = median(os), md = median(dst);
  return {md <= mo && mi <= mo, fmt("median test RMSE ip %.5f, dst %.5f, os %.5f", mi, md, mo)};
}

Verdict ssim_trend(DiffusionBench& bench) {
  const std::vector<double> levels{0.10, 0.20, 0.30, 0.40, 0.50, 0.60};
  auto mean_ssim = [&](Scheme scheme, double target) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) total += *bench.get(scheme, seed, target).report.ssim;
    return total / kSeeds;
  };
  const double dense = mean_ssim(Scheme::dense, 0.30);
  std::vector<double> curve;
  for (double level : levels) curve.push_back(mean_ssim(Scheme::ip, level));
  bool monotone = true;
  for (std::size_t i = 1; i < curve.size(); ++i) monotone = monotone && curve[i] <= curve[i - 1] + 0.01;
  const bool near_dense = dense - curve[2] <= 0.02;
  return {monotone && near_dense,
          fmt("mean SSIM over 5 seeds at 10..60%%: %s; dense %.5f; non-increasing within 0.01: %s; "
              "30%% within 0.02 of dense: %s",
              join(curve).c_str(), dense, monotone ? "yes" : "no", near_dense ? "yes" : "no")};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string final_loss_line(const std::string& summary) {
  std::istringstream in(summary);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("final_loss=", 0) == 0) return line;
  }
  return {};
}

Verdict determinism() {
  TempDir dir("acceptance_det");
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) { return cli::run_cli(args, sink, sink); };
  const auto data = (dir / "data").string();
  if (cli({"gen", "planted-graph", "--seed", "9", "--out", data, "--samples", "60"}) != 0) {
    return {false, "dataset generation failed"};
  }
  std::ofstream(dir / "run.conf") << "model_iters = 10\nmask_iters = 3\ndst_interval = 3\ndst_steps = 2\n"
                                     "finetune_iters = 10\nbatch_size = 8\nhidden = 8\nlayers = 2\n"
                                     "target_sparsity = 0.25\n";
  std::vector<std::string> masks, losses;
  std::size_t failures = 0;
  for (const char* scheme : {"ip", "os", "dst"}) {
    for (const char* name : {"a", "b"}) {
      const auto out = dir / (std::string(scheme) + name);
      failures += cli({"--config", (dir / "run.conf").string(), "--seed", "5", "--out", out.string(), "train",
                       "--data", data + "/dataset.txt", "--scheme", scheme}) != 0;
      masks.push_back(slurp(out / "mask.txt"));
      losses.push_back(final_loss_line(slurp(out / "summary.txt")));
    }
  }
  std::size_t differing = 0;
  for (std::size_t i = 0; i < masks.size(); i += 2) {
    differing += masks[i].empty() || masks[i] != masks[i + 1] || losses[i].empty() || losses[i] != losses[i + 1];
  }
  return {failures == 0 && differing == 0,
          fmt("3 schemes trained twice: %zu failed runs, %zu pairs with differing mask or final loss", failures,
              differing)};
}

}  // namespace
}  // namespace dynst

int main() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  using namespace dynst;
  DiffusionBench bench;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"morph bijection", morph_bijection},
      {"masked/compacted equivalence", compact_equivalence},
      {"exact sparsity ledger", sparsity_ledger},
      {"dense-epsilon constraint", [&] { return epsilon_constraint(bench); }},
      {"planted-irrelevance recovery", planted_recovery},
      {"measured speedup", measured_speedup},
      {"scheme ordering", [&] { return scheme_ordering(bench); }},
      {"SSIM degradation trend", [&] { return ssim_trend(bench); }},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
