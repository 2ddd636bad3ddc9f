#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "dynst/config.hpp"
#include "dynst/data.hpp"
#include "dynst/error.hpp"
#include "dynst/eval.hpp"
#include "dynst/mask.hpp"
#include "dynst/models.hpp"
#include "dynst/trainer.hpp"

namespace dynst::cli {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct GenArgs {
  std::string generator;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t steps = 0;
  double alpha = 0.2;
  double sigma_min = 2.0;
  double sigma_max = 4.0;
  std::size_t samples = 0;
  std::size_t input_steps = 8;
  std::size_t horizon = 8;
  std::size_t nodes = 64;
  std::size_t noise = 16;
  double rate = 0.5;
  double noise_std = 1.0;
};

struct TrainArgs {
  std::string data;
  std::string scheme;
};

struct ArtifactArgs {
  std::string checkpoint;
  std::string mask;
  std::string data;
  std::string dense_report;
  std::optional<double> epsilon;
  std::optional<std::size_t> repetitions;
  std::string report;
};

struct ExportArgs {
  std::string mask;
  std::string data;
  std::string format = "units";
  std::string to;
};

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

RunConfig load_run_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.schedule.seed = *g.seed;
  if (!g.out.empty()) c.out = g.out;
  return c;
}

void require_files(const std::vector<std::pair<std::string, fs::path>>& files) {
  std::string missing;
  for (const auto& [what, path] : files) {
    if (path.empty()) {
      missing += "\n  " + what + ": no path given";
    } else if (!fs::exists(path)) {
      missing += "\n  " + what + ": " + path.string() + " does not exist";
    }
  }
  if (!missing.empty()) throw IoError("missing input" + missing);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Masks on disk carry one row per unit; image units cover p x p pixel rows.
SensorMask load_bound_mask(const fs::path& path, const Dataset& data, std::size_t patch) {
  auto mask = load_mask(path);
  if (data.layout == Layout::image) {
    const auto& dims = data.trajectories.front().dims;
    mask.bind_rows(patchify(dims[2], dims[3], patch));
  } else if (mask.units() != data.sensors()) {
    throw ShapeError("mask has " + std::to_string(mask.units()) + " units, dataset has " +
                     std::to_string(data.sensors()) + " sensors");
  }
  return mask;
}

void print_table(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  for (const auto& [k, v] : rows) out << std::left << std::setw(static_cast<int>(width) + 2) << k << v << "\n";
}

int cmd_gen(const Globals& g, const GenArgs& a, std::ostream& out) {
  if (!g.seed) throw ConfigError("gen needs --seed");
  if (g.out.empty()) throw ConfigError("gen needs --out");
  Dataset ds;
  try {
    if (a.generator == "diffusion") {
      DiffusionParams p;
      p.seed = *g.seed;
      p.height = a.height;
      p.width = a.width;
      p.total_steps = a.steps ? a.steps : 64;
      p.alpha = a.alpha;
      p.sigma_min = a.sigma_min;
      p.sigma_max = a.sigma_max;
      p.num_samples = a.samples;
      p.input_steps = a.input_steps;
      p.horizon = a.horizon;
      ds = gen_diffusion_grid(p);
    } else {
      PlantedGraphParams p;
      p.seed = *g.seed;
      p.nodes = a.nodes;
      p.noise_count = a.noise;
      p.total_steps = a.steps ? a.steps : 32;
      p.num_samples = a.samples;
      p.input_steps = a.input_steps;
      p.horizon = a.horizon;
      p.rate = a.rate;
      p.noise_std = a.noise_std;
      ds = gen_planted_graph(p);
    }
  } catch (const ContractError& e) {
    throw ConfigError("gen " + a.generator + ": " + e.what());
  }
  if (ds.size() >= 10) ds = split_811(std::move(ds), *g.seed);
  const auto manifest = save_dataset(ds, g.out);
  out << "wrote " << ds.size() << " samples (" << ds.trajectories.size() << " trajectories) to "
      << manifest.string() << "\n";
  return ExitCode::ok;
}

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  RunConfig c = load_run_config(g);
  if (!a.data.empty()) c.data = a.data;
  if (!a.scheme.empty()) c.schedule.scheme = parse_scheme(a.scheme);
  require_files({{"dataset manifest", c.data}});
  c.schedule.validate();

  const auto ds = load_dataset(c.data);
  const auto td = TrainingData::from(ds, c.patch);
  c.schedule.preflight(td.units());
  ensure_dir(c.out);
  write_text(c.out / "config.txt", to_text(c));

  const auto result = run(td, c.schedule, c.arch());
  save_checkpoint(*result.model, c.out / "model.ckpt");
  save_mask(result.mask, c.out / "mask.txt");
  write_trace(result.trace, c.out / "trace.csv");

  std::size_t prunes = 0;
  for (const auto& e : result.trace) prunes += e.event == TraceEvent::prune ? 1 : 0;
  const double achieved = sparsity(result.mask);
  std::ostringstream summary;
  summary << "scheme=" << to_string(c.schedule.scheme) << "\n"
          << "seed=" << c.schedule.seed << "\n"
          << "units=" << td.units() << "\n"
          << "active=" << result.mask.active_count() << "\n"
          << "sparsity=" << fmt(achieved) << "\n"
          << "prune_events=" << prunes << "\n"
          << "final_loss=" << fmt(result.final_loss) << "\n";
  write_text(c.out / "summary.txt", summary.str());
  out << summary.str();

  if (c.schedule.scheme != Scheme::dense) {
    const double tolerance = 1.0 / static_cast<double>(td.units());
    if (achieved + 1e-12 < c.schedule.target_sparsity - tolerance) {
      out << "target sparsity " << fmt(c.schedule.target_sparsity) << " not reached\n";
      return ExitCode::failure;
    }
  }
  return ExitCode::ok;
}

struct Artifacts {
  RunConfig config;
  Dataset data;
  std::unique_ptr<Model> model;
  SensorMask mask;
};

Artifacts load_artifacts(const Globals& g, const ArtifactArgs& a) {
  Artifacts r;
  r.config = load_run_config(g);
  const fs::path data = a.data.empty() ? r.config.data : fs::path(a.data);
  const fs::path ckpt = a.checkpoint.empty() ? r.config.out / "model.ckpt" : fs::path(a.checkpoint);
  const fs::path mask = a.mask.empty() ? r.config.out / "mask.txt" : fs::path(a.mask);
  require_files({{"dataset manifest", data}, {"checkpoint", ckpt}, {"mask", mask}});
  r.data = load_dataset(data);
  r.model = load_checkpoint(ckpt);
  r.mask = load_bound_mask(mask, r.data, r.config.patch);
  return r;
}

int cmd_eval(const Globals& g, const ArtifactArgs& a, std::ostream& out) {
  const auto art = load_artifacts(g, a);
  const fs::path dense_path = a.dense_report.empty() ? art.config.dense_report : fs::path(a.dense_report);
  if (!dense_path.empty()) require_files({{"dense report", dense_path}});

  const auto report = evaluate(*art.model, art.data, art.mask, art.config.data_range, art.config.patch);
  std::vector<std::pair<std::string, std::string>> rows = {
      {"scope", report.scope},
      {"samples", std::to_string(report.samples)},
      {"sparsity", fmt(art.mask.mode() == MaskMode::binary ? sparsity(art.mask) : 0.0)},
      {"mae", fmt(report.mae)},
      {"mse", fmt(report.mse)},
      {"rmse", fmt(report.rmse)},
      {"psnr", format_metric(report.psnr)},
  };
  if (report.ssim) rows.insert(rows.begin() + 6, {"ssim", fmt(*report.ssim)});
  print_table(out, rows);

  const fs::path report_path = a.report.empty() ? art.config.out / "metrics.txt" : fs::path(a.report);
  if (report_path.has_parent_path()) ensure_dir(report_path.parent_path());
  save_report(report, report_path);

  if (dense_path.empty()) return ExitCode::ok;
  const double eps = a.epsilon.value_or(art.config.epsilon_rel);
  const auto verdict = epsilon_check(report, load_report(dense_path), eps);
  print_table(out, {{"epsilon_rel", fmt(eps)},
                    {"delta", fmt(verdict.delta)},
                    {"relative_delta", fmt(verdict.relative_delta)},
                    {"verdict", verdict.pass ? "pass" : "fail"}});
  return verdict.pass ? ExitCode::ok : ExitCode::failure;
}

int cmd_bench(const Globals& g, const ArtifactArgs& a, std::ostream& out) {
  const auto art = load_artifacts(g, a);
  const std::size_t reps = a.repetitions.value_or(art.config.bench_repetitions);
  const auto report = bench_speed(*art.model, art.data, art.mask, reps, art.config.patch);
  print_table(out, {{"sparsity", fmt(report.sparsity)},
                    {"samples", std::to_string(report.samples)},
                    {"repetitions", std::to_string(report.repetitions)},
                    {"dense_median_ms", fmt(report.dense_median_ms)},
                    {"compact_median_ms", fmt(report.compact_median_ms)},
                    {"ratio", fmt(report.ratio)}});
  const fs::path report_path = a.report.empty() ? art.config.out / "speed.txt" : fs::path(a.report);
  if (report_path.has_parent_path()) ensure_dir(report_path.parent_path());
  save_report(report, report_path);
  return ExitCode::ok;
}

int cmd_export_mask(const Globals& g, const ExportArgs& a, std::ostream& out) {
  const auto c = load_run_config(g);
  const fs::path mask_path = a.mask.empty() ? c.out / "mask.txt" : fs::path(a.mask);
  const fs::path data_path = a.data.empty() ? c.data : fs::path(a.data);
  require_files({{"mask", mask_path}});

  std::ostringstream text;
  if (a.format == "units") {
    const auto mask = load_mask(mask_path);
    text << "unit,active\n";
    for (std::size_t u = 0; u < mask.units(); ++u) text << u << "," << (mask.is_active(u) ? 1 : 0) << "\n";
  } else {
    require_files({{"dataset manifest", data_path}});
    const auto ds = load_dataset(data_path);
    const auto mask = load_bound_mask(mask_path, ds, c.patch);
    const auto active = mask.row_active();
    if (a.format == "sensors") {
      text << "sensor,unit,active\n";
      for (std::size_t r = 0; r < active.size(); ++r) {
        text << r << "," << mask.row_units()[r] << "," << (active[r] ? 1 : 0) << "\n";
      }
    } else {
      if (ds.layout != Layout::image) throw ConfigError("grid export needs an image dataset");
      const auto& dims = ds.trajectories.front().dims;
      for (std::size_t h = 0; h < dims[2]; ++h) {
        for (std::size_t w = 0; w < dims[3]; ++w) text << (active[h * dims[3] + w] ? '#' : '.');
        text << "\n";
      }
    }
  }
  if (a.to.empty()) {
    out << text.str();
  } else {
    const fs::path to(a.to);
    if (to.has_parent_path()) ensure_dir(to.parent_path());
    write_text(to, text.str());
    out << "wrote " << to.string() << "\n";
  }
  return ExitCode::ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learn which sensors a spatio-temporal forecaster can do without."};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Run configuration (key = value lines)");
  app.add_option("--seed", g.seed, "Seed for generation and training");
  app.add_option("--out", g.out, "Output directory");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->set_help_flag("--help", "Print this help message and exit");
  gen_cmd->add_option("generator", gen.generator)->required()->check(CLI::IsMember({"diffusion", "planted-graph"}));
  gen_cmd->add_option("--h", gen.height, "Grid height (diffusion)");
  gen_cmd->add_option("--w", gen.width, "Grid width (diffusion)");
  gen_cmd->add_option("--t", gen.steps, "Frames per trajectory");
  gen_cmd->add_option("--alpha", gen.alpha, "Diffusion coefficient, 0..0.25");
  gen_cmd->add_option("--sigma-min", gen.sigma_min, "Smallest initial bump width");
  gen_cmd->add_option("--sigma-max", gen.sigma_max, "Largest initial bump width");
  gen_cmd->add_option("--samples", gen.samples, "Windows to provide (0: one trajectory)");
  gen_cmd->add_option("--t-in", gen.input_steps, "Input frames per sample");
  gen_cmd->add_option("--horizon", gen.horizon, "Forecast frames per sample");
  gen_cmd->add_option("--nodes", gen.nodes, "Node count (planted-graph)");
  gen_cmd->add_option("--noise", gen.noise, "Planted noise nodes (planted-graph)");
  gen_cmd->add_option("--rate", gen.rate, "Relaxation rate (planted-graph)");
  gen_cmd->add_option("--noise-std", gen.noise_std, "Noise amplitude (planted-graph)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and its sensor mask");
  train_cmd->add_option("--data", train.data, "Dataset manifest (overrides config)");
  train_cmd->add_option("--scheme", train.scheme, "ip, os, dst or dense (overrides config)");

  ArtifactArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a trained model on the test split");
  ArtifactArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Time dense against compacted inference");
  for (auto [cmd, a] : {std::pair{eval_cmd, &eval}, std::pair{bench_cmd, &bench}}) {
    cmd->add_option("--checkpoint", a->checkpoint, "Model checkpoint (default OUT/model.ckpt)");
    cmd->add_option("--mask", a->mask, "Mask file (default OUT/mask.txt)");
    cmd->add_option("--data", a->data, "Dataset manifest (default from config)");
    cmd->add_option("--report", a->report, "Where to write the report");
  }
  eval_cmd->add_option("--dense-report", eval.dense_report, "Dense baseline metrics for the epsilon check");
  eval_cmd->add_option("--epsilon", eval.epsilon, "Relative MAE tolerance");
  bench_cmd->add_option("--reps", bench.repetitions, "Repetitions, first one discarded (>= 11)");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export-mask", "Write the learned mask as a table or grid");
  export_cmd->add_option("--mask", exp.mask, "Mask file (default OUT/mask.txt)");
  export_cmd->add_option("--data", exp.data, "Dataset manifest, needed for sensors/grid");
  export_cmd->add_option("--format", exp.format, "units, sensors or grid")
      ->check(CLI::IsMember({"units", "sensors", "grid"}));
  export_cmd->add_option("--to", exp.to, "Output file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ExitCode::ok : ExitCode::usage;
  }

  try {
    if (*gen_cmd) return cmd_gen(g, gen, out);
    if (*train_cmd) return cmd_train(g, train, out);
    if (*eval_cmd) return cmd_eval(g, eval, out);
    if (*bench_cmd) return cmd_bench(g, bench, out);
    return cmd_export_mask(g, exp, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::usage;
  } catch (const ScheduleError& e) {
    err << "error: infeasible schedule: " << e.what() << "\n";
    return ExitCode::usage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return ExitCode::failure;
  }
}

}  // namespace dynst::cli
