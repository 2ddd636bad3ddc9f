#include "dynst/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dynst/error.hpp"

namespace dynst {

namespace {

struct Batch {
  ad::Tensor x;
  ad::Tensor y;
  std::size_t count = 0;
};

Batch stack(const std::vector<Matrix>& xs, const std::vector<Matrix>& ys,
            std::span<const std::size_t> ids) {
  std::vector<Matrix> bx, by;
  bx.reserve(ids.size());
  by.reserve(ids.size());
  for (auto i : ids) {
    bx.push_back(xs[i]);
    by.push_back(ys[i]);
  }
  return {ad::Tensor::constant(vstack(bx)), ad::Tensor::constant(vstack(by)), ids.size()};
}

std::vector<std::size_t> all_ids(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<std::size_t> next_batch(TrainState& s, std::size_t n, std::size_t batch_size) {
  if (batch_size == 0 || batch_size >= n) return all_ids(n);
  std::vector<std::size_t> ids;
  ids.reserve(batch_size);
  while (ids.size() < batch_size) {
    if (s.epoch_cursor >= s.epoch_order.size()) {
      s.epoch_order = all_ids(n);
      std::shuffle(s.epoch_order.begin(), s.epoch_order.end(), s.rng);
      s.epoch_cursor = 0;
    }
    ids.push_back(s.epoch_order[s.epoch_cursor++]);
  }
  return ids;
}

std::vector<char> tiled_rows(const SensorMask& mask, std::size_t copies) {
  const auto one = mask.row_active();
  std::vector<char> out;
  out.reserve(one.size() * copies);
  for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), one.begin(), one.end());
  return out;
}

ad::Tensor score_tensor(const SensorMask& mask, bool trainable) {
  const auto s = mask.scores();
  std::vector<double> v(s.begin(), s.end());
  return trainable ? ad::Tensor::parameter({mask.units(), 1}, std::move(v))
                   : ad::Tensor::constant({mask.units(), 1}, std::move(v));
}

ad::Tensor predict(const Model& model, const TrainingData& data, const SensorMask& mask,
                   const ad::Tensor& scores, const ad::Tensor& x, std::size_t count) {
  const auto gate = row_gate(mask, scores, count);
  GraphOperators ops;
  if (model.needs_graph()) {
    if (!data.graph) throw ContractError("message passing net requires a graph");
    ops = graph_operators(*data.graph, mask.row_active(), count);
  }
  return masked_forward(model, x, gate, ops);
}

ad::Tensor batch_loss(const TrainState& s, const TrainingData& data, const Schedule& schedule,
                      const Batch& b, const ad::Tensor& scores) {
  const auto pred = predict(*s.model, data, s.mask, scores, b.x, b.count);
  return loss(pred, b.y, tiled_rows(s.mask, b.count), schedule.loss_scope);
}

double current_sparsity(const SensorMask& mask) {
  return mask.mode() == MaskMode::binary ? sparsity(mask) : 0.0;
}

void record(TrainState& s, const TrainingData& data, TraceEvent event, double train_loss) {
  TraceEntry e;
  e.step = s.iteration;
  e.round = s.round;
  e.sparsity = current_sparsity(s.mask);
  e.train_loss = train_loss;
  e.val_mae = validation_mae(s, data);
  e.event = event;
  e.active = s.mask.active_count();
  s.trace.push_back(e);
}

double last_loss(const TrainState& s) {
  return s.loss_history.empty() ? 0.0 : s.loss_history.back();
}

void model_step(TrainState& s, const TrainingData& data, const Schedule& schedule) {
  const auto ids = next_batch(s, data.train_x.size(), schedule.batch_size);
  const auto b = stack(data.train_x, data.train_y, ids);
  s.model->set_parameters_trainable(true);
  for (auto& p : s.model->parameters()) p.tensor.zero_grad();
  const auto L = batch_loss(s, data, schedule, b, score_tensor(s.mask, false));
  ad::backward(L);
  for (auto& p : s.model->parameters()) {
    auto v = p.tensor.mutable_values();
    const auto g = p.tensor.grad();
    if (g.empty()) continue;  // parameter not reached by this batch
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= schedule.lr_model * g[i];
    p.tensor.zero_grad();
  }
  s.loss_history.push_back(L.values()[0]);
  ++s.iteration;
  ++s.model_steps;
  if (schedule.log_interval > 0 && s.model_steps % schedule.log_interval == 0) {
    record(s, data, TraceEvent::log, L.values()[0]);
  }
}

void mask_step(TrainState& s, const TrainingData& data, const Schedule& schedule) {
  const auto ids = next_batch(s, data.train_x.size(), schedule.batch_size);
  const auto grad = mask_gradient(s, data, schedule, ids);
  s.mask.train_scores(grad, schedule.lr_mask);
  ++s.iteration;
}

std::size_t ip_step_units(const Schedule& schedule, std::size_t units) {
  return units_for_fraction(schedule.prune_frac, units);
}

std::size_t ip_rounds(const Schedule& schedule, std::size_t units) {
  const auto k = ip_step_units(schedule, units);
  const auto target = target_pruned_units(schedule, units);
  return (target + k - 1) / k;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::ip: return "ip";
    case Scheme::os: return "os";
    case Scheme::dst: return "dst";
    case Scheme::dense: return "dense";
  }
  return "?";
}

Scheme parse_scheme(const std::string& text) {
  if (text == "ip" || text == "iterative") return Scheme::ip;
  if (text == "os" || text == "one-shot") return Scheme::os;
  if (text == "dst") return Scheme::dst;
  if (text == "dense") return Scheme::dense;
  throw ConfigError("unknown scheme '" + text + "' (expected ip, os, dst or dense)");
}

const char* to_string(LossScope scope) {
  return scope == LossScope::active_units ? "active-units" : "all-units";
}

LossScope parse_loss_scope(const std::string& text) {
  if (text == "active-units") return LossScope::active_units;
  if (text == "all-units") return LossScope::all_units;
  throw ConfigError("unknown loss scope '" + text + "' (expected active-units or all-units)");
}

const char* to_string(TraceEvent event) {
  switch (event) {
    case TraceEvent::log: return "log";
    case TraceEvent::prune: return "prune";
    case TraceEvent::exchange: return "exchange";
    case TraceEvent::final: return "final";
  }
  return "?";
}

std::size_t Schedule::rounds() const {
  return static_cast<std::size_t>(std::ceil(target_sparsity / prune_frac - 1e-9));
}

void Schedule::validate() const {
  if (!(target_sparsity > 0.0 && target_sparsity < 1.0)) {
    throw ScheduleError("target_sparsity must lie in (0,1), got " + format_double(target_sparsity));
  }
  if (!(prune_frac > 0.0 && prune_frac <= target_sparsity)) {
    throw ScheduleError("prune_frac must satisfy 0 < prune_frac <= target_sparsity, got " +
                        format_double(prune_frac));
  }
  if (!(q_frac >= 0.0 && q_frac < prune_frac)) {
    throw ScheduleError("q_frac must satisfy 0 <= q_frac < prune_frac, got " + format_double(q_frac));
  }
  if (!(lr_model > 0.0 && std::isfinite(lr_model))) throw ScheduleError("lr_model must be > 0");
  if (!(lr_mask > 0.0 && std::isfinite(lr_mask))) throw ScheduleError("lr_mask must be > 0");
  if (dst_steps > 0 && dst_interval == 0) {
    throw ScheduleError("dst_interval must be >= 1 when dst_steps > 0");
  }
}

std::size_t target_pruned_units(const Schedule& schedule, std::size_t units) {
  return static_cast<std::size_t>(
      std::ceil(schedule.target_sparsity * static_cast<double>(units) - 1e-9));
}

void Schedule::preflight(std::size_t units) const {
  validate();
  if (scheme == Scheme::dense) return;
  const auto target = target_pruned_units(*this, units);
  if (target >= units) {
    throw ScheduleError("target_sparsity " + format_double(target_sparsity) + " prunes all " +
                        std::to_string(units) + " units");
  }
  const auto k = ip_step_units(*this, units);
  if (scheme == Scheme::ip && k == 0) {
    throw ScheduleError("prune_frac " + format_double(prune_frac) + " rounds to 0 of " +
                        std::to_string(units) + " units per round; sparsity is unreachable");
  }
  if (k > target) {
    throw ScheduleError("one prune of " + std::to_string(k) + " units overshoots the target of " +
                        std::to_string(target));
  }
  const auto q = units_for_fraction(q_frac, units);
  if (dst_steps > 0 && scheme != Scheme::os) {
    const auto first_pruned = scheme == Scheme::ip ? k : target;
    if (q > first_pruned || q > units - target) {
      throw ScheduleError("exchange of " + std::to_string(q) +
                          " units exceeds the pruned or active set");
    }
  }
}

TrainingData TrainingData::from(const Dataset& ds, std::size_t patch) {
  if (!ds.split) throw ContractError("training data needs a split dataset");
  if (ds.split->train.empty() || ds.split->val.empty()) {
    throw ContractError("training data needs non-empty train and val splits");
  }
  TrainingData d;
  d.layout = ds.layout;
  d.patch = ds.layout == Layout::image ? patch : 1;
  auto add = [&](const std::vector<std::size_t>& ids, std::vector<Matrix>& xs,
                 std::vector<Matrix>& ys) {
    for (auto i : ids) {
      const auto [in, out] = ds.sample(i);
      xs.push_back(morph(in, d.patch).matrix);
      ys.push_back(morph(out, d.patch).matrix);
    }
  };
  add(ds.split->train, d.train_x, d.train_y);
  add(ds.split->val, d.val_x, d.val_y);
  d.rows = d.train_x.front().rows;
  d.graph = sensor_graph(ds);
  if (ds.layout == Layout::image) {
    const auto& dims = ds.trajectories.front().dims;
    d.unit_rows = patchify(dims[2], dims[3], d.patch);
  } else {
    d.unit_rows.resize(d.rows);
    for (std::size_t r = 0; r < d.rows; ++r) d.unit_rows[r] = {r};
  }
  return d;
}

SensorMask TrainingData::initial_mask() const { return init_mask(unit_rows); }

TrainState::TrainState(std::unique_ptr<Model> m, SensorMask mk, std::uint64_t seed)
    : model(std::move(m)), mask(std::move(mk)), rng(seed) {}

TrainState TrainState::clone() const {
  TrainState c;
  c.model = model ? model->clone() : nullptr;
  c.mask = mask;
  c.round = round;
  c.iteration = iteration;
  c.model_steps = model_steps;
  c.loss_history = loss_history;
  c.rng = rng;
  c.epoch_order = epoch_order;
  c.epoch_cursor = epoch_cursor;
  c.trace = trace;
  return c;
}

ad::Tensor loss(const ad::Tensor& predictions, const ad::Tensor& targets,
                std::span<const char> row_active, LossScope scope) {
  if (predictions.shape() != targets.shape()) {
    throw ShapeError("loss: predictions " + ad::to_string(predictions.shape()) + " vs targets " +
                     ad::to_string(targets.shape()));
  }
  const auto diff = ad::sub(predictions, targets);
  if (scope == LossScope::all_units) return ad::mean(ad::square(diff));
  if (row_active.size() != predictions.shape().rows) {
    throw ShapeError("loss: " + std::to_string(row_active.size()) + " row flags for " +
                     std::to_string(predictions.shape().rows) + " rows");
  }
  auto rows = std::make_shared<std::vector<std::size_t>>();
  for (std::size_t r = 0; r < row_active.size(); ++r) {
    if (row_active[r]) rows->push_back(r);
  }
  if (rows->empty()) throw ContractError("loss over an empty active set");
  if (rows->size() == row_active.size()) return ad::mean(ad::square(diff));
  return ad::mean(ad::square(ad::gather_rows(diff, std::move(rows))));
}

ad::Tensor loss(const ad::Tensor& predictions, const ad::Tensor& targets, const SensorMask& mask,
                LossScope scope) {
  return loss(predictions, targets, mask.row_active(), scope);
}

double train_loss(const TrainState& s, const TrainingData& data, const Schedule& schedule) {
  const auto ids = all_ids(data.train_x.size());
  const auto b = stack(data.train_x, data.train_y, ids);
  return batch_loss(s, data, schedule, b, score_tensor(s.mask, false)).values()[0];
}

std::vector<double> mask_gradient(const TrainState& s, const TrainingData& data,
                                  const Schedule& schedule, std::span<const std::size_t> samples) {
  const auto b = stack(data.train_x, data.train_y, samples);
  s.model->set_parameters_trainable(false);
  const auto scores = score_tensor(s.mask, true);
  const auto L = batch_loss(s, data, schedule, b, scores);
  ad::backward(L);
  s.model->set_parameters_trainable(true);
  const auto g = scores.grad();
  return {g.begin(), g.end()};
}

double validation_mae(const TrainState& s, const TrainingData& data) {
  const auto ids = all_ids(data.val_x.size());
  const auto b = stack(data.val_x, data.val_y, ids);
  s.model->set_parameters_trainable(false);
  const auto pred = predict(*s.model, data, s.mask, score_tensor(s.mask, false), b.x, b.count);
  s.model->set_parameters_trainable(true);
  const auto p = pred.values();
  const auto y = b.y.values();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - y[i]);
  return total / static_cast<double>(p.size());
}

TrainState train_model(TrainState s, const TrainingData& data, const Schedule& schedule,
                       std::size_t steps) {
  for (std::size_t i = 0; i < steps; ++i) model_step(s, data, schedule);
  return s;
}

TrainState alternate_round(TrainState s, const TrainingData& data, const Schedule& schedule) {
  for (std::size_t i = 0; i < schedule.model_iters; ++i) model_step(s, data, schedule);
  for (std::size_t i = 0; i < schedule.mask_iters; ++i) mask_step(s, data, schedule);
  return s;
}

TrainState dst_finetune(TrainState s, const TrainingData& data, const Schedule& schedule) {
  if (schedule.dst_steps == 0) return s;
  if (s.mask.mode() != MaskMode::binary) {
    throw ContractError("drop/regrow fine-tuning requires a binarized mask");
  }
  const bool exchange = units_for_fraction(schedule.q_frac, s.mask.units()) > 0;
  for (std::size_t step = 0; step < schedule.dst_steps; ++step) {
    for (std::size_t i = 0; i < schedule.dst_interval; ++i) model_step(s, data, schedule);
    if (!exchange) continue;
    const auto ids = next_batch(s, data.train_x.size(), schedule.batch_size);
    const auto grad = mask_gradient(s, data, schedule, ids);
    s.mask = dst_step(s.mask, grad, schedule.q_frac);
    record(s, data, TraceEvent::exchange, last_loss(s));
  }
  return s;
}

RunResult run(const TrainingData& data, const Schedule& schedule, const ArchSpec& requested) {
  const std::size_t units = data.units();
  schedule.preflight(units);

  ArchSpec arch = requested;
  arch.input_width = data.input_width();
  arch.output_width = data.output_width();
  std::mt19937_64 init_rng(schedule.seed);
  TrainState s(make_model(arch, init_rng), data.initial_mask(), schedule.seed ^ 0x9e3779b97f4a7c15ULL);

  const std::size_t target = target_pruned_units(schedule, units);
  const std::size_t k = ip_step_units(schedule, units);
  // Every scheme spends the same parameter-step budget as the ip ladder.
  const std::size_t rounds = schedule.scheme == Scheme::dense || k == 0
                                 ? schedule.rounds()
                                 : ip_rounds(schedule, units);
  const std::size_t exchange_budget = rounds * schedule.dst_interval * schedule.dst_steps;
  const std::size_t model_budget = rounds * schedule.model_iters + exchange_budget;

  auto prune_to = [&](std::size_t count) {
    s.mask = binarize_prune_count(s.mask, count);
    record(s, data, TraceEvent::prune, last_loss(s));
  };

  switch (schedule.scheme) {
    case Scheme::ip: {
      std::size_t pruned = 0;
      while (pruned < target) {
        ++s.round;
        s = alternate_round(std::move(s), data, schedule);
        const std::size_t step = std::min(k, target - pruned);
        prune_to(step);
        pruned += step;
        s = dst_finetune(std::move(s), data, schedule);
      }
      s = train_model(std::move(s), data, schedule, schedule.finetune_iters);
      break;
    }
    case Scheme::os: {
      Schedule longer = schedule;
      longer.model_iters = schedule.model_iters * rounds;
      longer.mask_iters = schedule.mask_iters * rounds;
      s.round = 1;
      s = alternate_round(std::move(s), data, longer);
      prune_to(target);
      s = train_model(std::move(s), data, schedule, exchange_budget + schedule.finetune_iters);
      break;
    }
    case Scheme::dst: {
      s.round = 1;
      s = alternate_round(std::move(s), data, schedule);
      prune_to(target);
      const std::size_t remaining = model_budget - schedule.model_iters;
      Schedule constant = schedule;
      constant.dst_steps =
          schedule.dst_interval == 0 ? 0 : remaining / schedule.dst_interval;
      s = dst_finetune(std::move(s), data, constant);
      const std::size_t used = constant.dst_steps * schedule.dst_interval;
      s = train_model(std::move(s), data, schedule, remaining - used + schedule.finetune_iters);
      break;
    }
    case Scheme::dense: {
      s = train_model(std::move(s), data, schedule, model_budget + schedule.finetune_iters);
      s.mask = binarize_prune_count(s.mask, 0);
      break;
    }
  }

  RunResult r;
  r.final_loss = train_loss(s, data, schedule);
  record(s, data, TraceEvent::final, r.final_loss);
  r.model = std::move(s.model);
  r.mask = std::move(s.mask);
  r.trace = std::move(s.trace);
  return r;
}

void write_trace(std::span<const TraceEntry> trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace " + path.string());
  out << "step,round,sparsity,train_loss,val_mae,event\n";
  for (const auto& e : trace) {
    out << e.step << ',' << e.round << ',' << format_double(e.sparsity) << ','
        << format_double(e.train_loss) << ',' << format_double(e.val_mae) << ','
        << to_string(e.event) << '\n';
  }
  if (!out) throw IoError("failed writing trace " + path.string());
}

std::vector<TraceEntry> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "step,round,sparsity,train_loss,val_mae,event") {
    throw IoError("unexpected trace header in " + path.string());
  }
  std::vector<TraceEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(trim(item));
    if (f.size() != 6) {
      throw IoError("trace line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                    " fields");
    }
    TraceEntry e;
    try {
      e.step = std::stoul(f[0]);
      e.round = std::stoul(f[1]);
      e.sparsity = std::stod(f[2]);
      e.train_loss = std::stod(f[3]);
      e.val_mae = std::stod(f[4]);
    } catch (const std::exception&) {
      throw IoError("malformed trace line " + std::to_string(lineno));
    }
    if (f[5] == "log") e.event = TraceEvent::log;
    else if (f[5] == "prune") e.event = TraceEvent::prune;
    else if (f[5] == "exchange") e.event = TraceEvent::exchange;
    else if (f[5] == "final") e.event = TraceEvent::final;
    else throw IoError("unknown trace event '" + f[5] + "'");
    out.push_back(e);
  }
  return out;
}

}  // namespace dynst
