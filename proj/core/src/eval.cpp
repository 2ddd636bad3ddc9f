#include "dynst/eval.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dynst/error.hpp"

namespace dynst {

namespace {

constexpr double kEquivalenceTol = 1e-9;

void require_same_dims(const STSeries& a, const STSeries& b) {
  if (a.layout != b.layout || a.dims != b.dims || a.values.size() != b.values.size()) {
    throw ShapeError("prediction and target series differ in layout or dims");
  }
}

struct Stats {
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

Stats summarize(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return {median, v.front(), v.back()};
}

double parse_metric(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  return std::stod(text);
}

}  // namespace

double ssim_frame(std::span<const double> a, std::span<const double> b, std::size_t height,
                  std::size_t width, double data_range) {
  if (a.size() != height * width || b.size() != a.size()) {
    throw ShapeError("ssim_frame: frame sizes do not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  if (!(data_range > 0.0)) throw ContractError("ssim requires data_range > 0");
  const std::size_t win = std::min<std::size_t>({8, height, width});
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y = 0; y + win <= height; ++y) {
    for (std::size_t x = 0; x + win <= width; ++x) {
      double sa = 0.0, sb = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          sa += a[(y + i) * width + x + j];
          sb += b[(y + i) * width + x + j];
        }
      }
      const double ma = sa / n;
      const double mb = sb / n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < win; ++i) {
        for (std::size_t j = 0; j < win; ++j) {
          const double da = a[(y + i) * width + x + j] - ma;
          const double db = b[(y + i) * width + x + j] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

MetricsReport metrics(std::span<const STSeries> predictions, std::span<const STSeries> targets,
                      double data_range) {
  if (predictions.size() != targets.size()) {
    throw ShapeError("metrics: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (predictions.empty()) throw ContractError("metrics: no samples");
  if (!(data_range > 0.0)) throw ContractError("metrics requires data_range > 0");

  const auto& first = targets.front();
  const std::size_t horizon = first.time_steps();
  const std::size_t frame = first.element_count() / horizon;
  const bool image = first.layout == Layout::image;

  MetricsReport r;
  r.samples = predictions.size();
  r.per_horizon_mae.assign(horizon, 0.0);
  double abs_sum = 0.0, sq_sum = 0.0, ssim_sum = 0.0;
  std::size_t ssim_frames = 0;
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    const auto& p = predictions[s];
    const auto& t = targets[s];
    require_same_dims(p, t);
    require_same_dims(t, first);
    for (std::size_t k = 0; k < horizon; ++k) {
      double frame_abs = 0.0;
      for (std::size_t e = k * frame; e < (k + 1) * frame; ++e) {
        const double err = p.values[e] - t.values[e];
        frame_abs += std::abs(err);
        sq_sum += err * err;
      }
      abs_sum += frame_abs;
      r.per_horizon_mae[k] += frame_abs;
    }
    if (image) {
      const std::size_t h = t.dims[2], w = t.dims[3], plane = h * w;
      for (std::size_t f = 0; f < t.dims[0] * t.dims[1]; ++f) {
        ssim_sum += ssim_frame(std::span(p.values).subspan(f * plane, plane),
                               std::span(t.values).subspan(f * plane, plane), h, w, data_range);
        ++ssim_frames;
      }
    }
  }
  const double count = static_cast<double>(predictions.size() * first.element_count());
  r.mae = abs_sum / count;
  r.mse = sq_sum / count;
  r.rmse = std::sqrt(r.mse);
  r.psnr = r.mse == 0.0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(data_range * data_range / r.mse);
  for (auto& v : r.per_horizon_mae) v /= static_cast<double>(predictions.size() * frame);
  if (image) r.ssim = ssim_sum / static_cast<double>(ssim_frames);
  return r;
}

MetricsReport metrics(const STSeries& prediction, const STSeries& target, double data_range) {
  return metrics(std::span(&prediction, 1), std::span(&target, 1), data_range);
}

std::vector<STSeries> forecast(const Model& model, const Dataset& dataset, const SensorMask& mask,
                               std::span<const std::size_t> samples, std::size_t patch) {
  std::optional<Graph> graph;
  if (model.needs_graph()) graph = sensor_graph(dataset);
  std::vector<STSeries> out;
  out.reserve(samples.size());
  for (auto i : samples) {
    const auto [in, target] = dataset.sample(i);
    auto shaped = morph(target, patch);
    shaped.matrix = forward(model, morph(in, patch), graph ? &*graph : nullptr, mask);
    out.push_back(unmorph(shaped));
  }
  return out;
}

MetricsReport evaluate(const Model& model, const Dataset& dataset, const SensorMask& mask,
                       double data_range, std::size_t patch) {
  if (!dataset.split) throw ContractError("evaluate needs a split dataset");
  const auto& ids = dataset.split->test;
  const auto preds = forecast(model, dataset, mask, ids, patch);
  std::vector<STSeries> targets;
  targets.reserve(ids.size());
  for (auto i : ids) targets.push_back(dataset.sample(i).second);
  return metrics(preds, targets, data_range);
}

std::string format_metric(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

EpsilonVerdict epsilon_check(const MetricsReport& dynamic, const MetricsReport& dense,
                             double epsilon_rel) {
  EpsilonVerdict v;
  v.delta = std::abs(dynamic.mae - dense.mae);
  if (dense.mae > 0.0) {
    v.relative_delta = v.delta / dense.mae;
  } else if (v.delta > 0.0) {
    v.relative_delta = std::numeric_limits<double>::infinity();
  }
  v.pass = v.delta <= epsilon_rel * dense.mae;
  return v;
}

SpeedReport bench_speed(const Model& model, std::span<const MorphedInput> inputs,
                        const Graph* graph, const SensorMask& mask, std::size_t repetitions) {
  if (repetitions < 11) {
    throw ContractError("bench_speed needs >= 11 repetitions (first is warmup), got " +
                        std::to_string(repetitions));
  }
  if (inputs.empty()) throw ContractError("bench_speed: no inputs");
  const int saved_threads = Eigen::nbThreads();
  Eigen::setNbThreads(1);

  const auto plan = plan_compact(model, graph, mask);
  const auto scores = mask.scores();
  const auto gate = row_gate(mask, ad::Tensor::constant({mask.units(), 1}, {scores.begin(), scores.end()}));
  GraphOperators ops;
  if (model.needs_graph()) ops = graph_operators(*graph, mask.row_active());
  std::vector<ad::Tensor> dense_inputs;
  for (const auto& in : inputs) {
    if (in.rows() != mask.row_count()) {
      throw ShapeError("bench input has " + std::to_string(in.rows()) + " rows, mask covers " +
                       std::to_string(mask.row_count()));
    }
    dense_inputs.push_back(ad::Tensor::constant(in.matrix));
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto full = masked_forward(model, dense_inputs[i], gate, ops).to_matrix();
    const auto compact = run_compact(model, inputs[i].matrix, plan);
    for (std::size_t r = 0; r < plan.rows.size(); ++r) {
      for (std::size_t c = 0; c < compact.cols; ++c) {
        const double d = std::abs(full(plan.rows[r], c) - compact(r, c));
        if (!(d <= kEquivalenceTol)) {
          Eigen::setNbThreads(saved_threads);
          throw ContractError("compacted output differs from masked output at row " +
                              std::to_string(plan.rows[r]) + " by " + format_metric(d));
        }
      }
    }
  }

  using clock = std::chrono::steady_clock;
  std::vector<double> dense_ms, compact_ms;
  double sink = 0.0;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    const auto t0 = clock::now();
    for (const auto& x : dense_inputs) sink += masked_forward(model, x, gate, ops).values()[0];
    const auto t1 = clock::now();
    for (const auto& in : inputs) sink += run_compact(model, in.matrix, plan).data[0];
    const auto t2 = clock::now();
    if (rep == 0) continue;
    dense_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    compact_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
  }
  Eigen::setNbThreads(saved_threads);
  if (!std::isfinite(sink)) throw ContractError("bench_speed: non-finite model output");

  const auto d = summarize(dense_ms);
  const auto c = summarize(compact_ms);
  SpeedReport r;
  r.dense_median_ms = d.median;
  r.dense_min_ms = d.min;
  r.dense_max_ms = d.max;
  r.compact_median_ms = c.median;
  r.compact_min_ms = c.min;
  r.compact_max_ms = c.max;
  r.ratio = d.median / c.median;
  r.sparsity = sparsity(mask);
  r.repetitions = repetitions;
  r.samples = inputs.size();
  return r;
}

SpeedReport bench_speed(const Model& model, const Dataset& dataset, const SensorMask& mask,
                        std::size_t repetitions, std::size_t patch) {
  std::vector<std::size_t> ids;
  if (dataset.split) {
    ids = dataset.split->test;
  } else {
    for (std::size_t i = 0; i < dataset.size(); ++i) ids.push_back(i);
  }
  std::vector<MorphedInput> inputs;
  for (auto i : ids) inputs.push_back(morph(dataset.sample(i).first, patch));
  std::optional<Graph> graph;
  if (model.needs_graph()) graph = sensor_graph(dataset);
  return bench_speed(model, inputs, graph ? &*graph : nullptr, mask, repetitions);
}

std::string to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "scope=" << r.scope << "\n";
  os << "samples=" << r.samples << "\n";
  os << "mae=" << format_metric(r.mae) << "\n";
  os << "mse=" << format_metric(r.mse) << "\n";
  os << "rmse=" << format_metric(r.rmse) << "\n";
  if (r.ssim) os << "ssim=" << format_metric(*r.ssim) << "\n";
  os << "psnr=" << format_metric(r.psnr) << "\n";
  os << "per_horizon_mae=";
  for (std::size_t k = 0; k < r.per_horizon_mae.size(); ++k) {
    os << (k ? "," : "") << format_metric(r.per_horizon_mae[k]);
  }
  os << "\n";
  return os.str();
}

std::string to_text(const SpeedReport& r) {
  std::ostringstream os;
  os << "dense_median_ms=" << format_metric(r.dense_median_ms) << "\n";
  os << "dense_min_ms=" << format_metric(r.dense_min_ms) << "\n";
  os << "dense_max_ms=" << format_metric(r.dense_max_ms) << "\n";
  os << "compact_median_ms=" << format_metric(r.compact_median_ms) << "\n";
  os << "compact_min_ms=" << format_metric(r.compact_min_ms) << "\n";
  os << "compact_max_ms=" << format_metric(r.compact_max_ms) << "\n";
  os << "ratio=" << format_metric(r.ratio) << "\n";
  os << "sparsity=" << format_metric(r.sparsity) << "\n";
  os << "repetitions=" << r.repetitions << "\n";
  os << "samples=" << r.samples << "\n";
  return os.str();
}

void save_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_text(report);
}

void save_report(const SpeedReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << to_text(report);
}

MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  MetricsReport r;
  bool have_mae = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError("report line " + std::to_string(lineno) + " of " + path.string() +
                    " is not key=value");
    }
    const auto key = line.substr(0, eq);
    const auto val = line.substr(eq + 1);
    try {
      if (key == "scope") r.scope = val;
      else if (key == "samples") r.samples = std::stoul(val);
      else if (key == "mae") { r.mae = parse_metric(val); have_mae = true; }
      else if (key == "mse") r.mse = parse_metric(val);
      else if (key == "rmse") r.rmse = parse_metric(val);
      else if (key == "ssim") r.ssim = parse_metric(val);
      else if (key == "psnr") r.psnr = parse_metric(val);
      else if (key == "per_horizon_mae") {
        std::stringstream ss(val);
        std::string item;
        while (std::getline(ss, item, ',')) r.per_horizon_mae.push_back(parse_metric(item));
      }
    } catch (const std::exception& e) {
      throw IoError("report " + path.string() + " line " + std::to_string(lineno) + " (" + key +
                    "): " + e.what());
    }
  }
  if (!have_mae) throw IoError("report " + path.string() + " has no mae");
  return r;
}

}  // namespace dynst
