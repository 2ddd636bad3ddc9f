#pragma once

// Joint training of model parameters and the sensor mask.
//
// A round alternates R gradient steps on the parameters (mask frozen) with M
// steps on the mask scores (parameters frozen). Schemes:
//   ip    repeat {round; prune k units; drop/regrow fine-tune} until the
//         target is reached, then parameter-only fine-tuning
//   os    one long round, a single prune to the target, fine-tuning
//   dst   a dense warmup round, an immediate prune to the target, then
//         drop/regrow fine-tuning at constant sparsity
//   dense no pruning; reference model for epsilon comparisons
// All schemes spend the same number of parameter steps, so their results are
// comparable. Optimisation is plain gradient descent.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dynst/data.hpp"
#include "dynst/mask.hpp"
#include "dynst/matrix.hpp"
#include "dynst/models.hpp"

namespace dynst {

enum class Scheme { ip, os, dst, dense };
enum class LossScope { active_units, all_units };

const char* to_string(Scheme scheme);
Scheme parse_scheme(const std::string& text);
const char* to_string(LossScope scope);
LossScope parse_loss_scope(const std::string& text);

struct Schedule {
  double target_sparsity = 0.30;
  double prune_frac = 0.03;  // of the original unit count, per round
  double q_frac = 0.01;      // drop/regrow exchange size
  std::size_t model_iters = 100;  // R
  std::size_t mask_iters = 20;    // M
  std::size_t dst_interval = 20;  // parameter steps between exchanges
  std::size_t dst_steps = 3;      // exchanges per fine-tune phase
  double lr_model = 1e-2;
  double lr_mask = 1e-2;
  Scheme scheme = Scheme::ip;
  std::uint64_t seed = 0;
  LossScope loss_scope = LossScope::active_units;
  std::size_t finetune_iters = 300;
  std::size_t batch_size = 0;     // samples per step; 0 = full batch
  std::size_t log_interval = 50;  // parameter steps between trace entries

  // ceil(target_sparsity / prune_frac).
  std::size_t rounds() const;
  // Field-level checks; throws ScheduleError.
  void validate() const;
  // validate() plus unit-count feasibility for `units` maskable units.
  void preflight(std::size_t units) const;
};

// Units pruned once the target is met: ceil(target_sparsity * U).
std::size_t target_pruned_units(const Schedule& schedule, std::size_t units);

// Morphed, model-ready view of a split dataset.
struct TrainingData {
  Layout layout = Layout::image;
  std::size_t patch = 1;
  std::size_t rows = 0;  // morphed rows per sample
  std::vector<Matrix> train_x, train_y;
  std::vector<Matrix> val_x, val_y;
  std::optional<Graph> graph;  // row adjacency
  std::vector<std::vector<std::size_t>> unit_rows;

  static TrainingData from(const Dataset& dataset, std::size_t patch = 1);

  std::size_t units() const { return unit_rows.size(); }
  std::size_t input_width() const { return train_x.front().cols; }
  std::size_t output_width() const { return train_y.front().cols; }
  // Fresh dense mask over this data's units.
  SensorMask initial_mask() const;
};

enum class TraceEvent { log, prune, exchange, final };

const char* to_string(TraceEvent event);

struct TraceEntry {
  std::size_t step = 0;
  std::size_t round = 0;
  double sparsity = 0.0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  TraceEvent event = TraceEvent::log;
  std::size_t active = 0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct TrainState {
  std::unique_ptr<Model> model;
  SensorMask mask;
  std::size_t round = 0;
  std::size_t iteration = 0;  // optimisation steps taken, parameters and mask
  std::size_t model_steps = 0;
  std::vector<double> loss_history;  // training loss before each parameter step
  std::mt19937_64 rng;
  std::vector<std::size_t> epoch_order;
  std::size_t epoch_cursor = 0;
  std::vector<TraceEntry> trace;

  TrainState() = default;
  TrainState(std::unique_ptr<Model> model, SensorMask mask, std::uint64_t seed);
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;
  TrainState clone() const;
};

// Mean squared error over all outputs of the selected rows. `row_active`
// (one entry per prediction row) restricts the mean for active_units scope;
// an empty active set is a ContractError.
ad::Tensor loss(const ad::Tensor& predictions, const ad::Tensor& targets,
                std::span<const char> row_active, LossScope scope);
// Per-sample convenience: rows follow mask.row_active(); dense masks count
// every unit as active.
ad::Tensor loss(const ad::Tensor& predictions, const ad::Tensor& targets, const SensorMask& mask,
                LossScope scope);

// Full training-set loss of the current state (no parameter updates).
double train_loss(const TrainState& state, const TrainingData& data, const Schedule& schedule);
// dLoss/dscore for every unit on the given training samples, parameters frozen.
std::vector<double> mask_gradient(const TrainState& state, const TrainingData& data,
                                  const Schedule& schedule, std::span<const std::size_t> samples);
// Validation MAE over every unit.
double validation_mae(const TrainState& state, const TrainingData& data);

// `steps` parameter-only gradient steps.
TrainState train_model(TrainState state, const TrainingData& data, const Schedule& schedule,
                       std::size_t steps);
TrainState alternate_round(TrainState state, const TrainingData& data, const Schedule& schedule);
TrainState dst_finetune(TrainState state, const TrainingData& data, const Schedule& schedule);

struct RunResult {
  std::unique_ptr<Model> model;
  SensorMask mask;  // binary
  std::vector<TraceEntry> trace;
  double final_loss = 0.0;  // full training-set loss at the end
};

RunResult run(const TrainingData& data, const Schedule& schedule, const ArchSpec& arch);

// CSV: "step,round,sparsity,train_loss,val_mae,event".
void write_trace(std::span<const TraceEntry> trace, const std::filesystem::path& path);
std::vector<TraceEntry> read_trace(const std::filesystem::path& path);

}  // namespace dynst
