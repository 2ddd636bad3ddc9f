#pragma once

// Forecasting backbones over morphed inputs (one row per sensor).
//
// NodeMlp applies the same MLP to every row independently.
//
// MessagePassingNet runs L layers of
//     h' = gate * relu(h W_self + mean_active_nbrs(h) W_nbr + b)
// where `gate` is the per-row mask score (0 for pruned rows in binary mode,
// which re-zeroes their hidden state) and the neighbour mean divides by the
// number of ACTIVE neighbours (0 when there are none). The readout is
//     own  = h R_self + mean_active_nbrs(h) R_nbr + c
//     y0   = gate * own + (1 - gate) * (mean_active_nbrs(h) R_fill + c)
//     y_j  = gate * own + (1 - gate) * mean_all_nbrs(y_{j-1}),  j = 1..S
// so a pruned sensor gets a forecast inpainted from its surroundings by S
// neighbour-averaging sweeps, while active rows never see pruned state. That
// makes forward() restricted to active rows equal compact_forward(), which
// runs on the induced active subproblem only.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dynst/autodiff.hpp"
#include "dynst/mask.hpp"
#include "dynst/matrix.hpp"
#include "dynst/morph.hpp"

namespace dynst {

enum class BackboneKind { mlp, mpn };

const char* to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& text);

struct ArchSpec {
  BackboneKind kind = BackboneKind::mlp;
  std::size_t input_width = 1;
  std::size_t output_width = 1;
  // mlp: widths of the hidden layers. mpn: hidden[0] is the layer width.
  std::vector<std::size_t> hidden{64, 64};
  // mpn only.
  std::size_t layers = 3;
  std::size_t fill_steps = 8;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

struct NamedParam {
  std::string name;
  ad::Tensor tensor;
};

// Neighbourhood operators over `batch` stacked copies of a graph.
struct GraphOperators {
  std::shared_ptr<const ad::SparseMatrix> aggregate;  // mean over active neighbours
  std::shared_ptr<const ad::SparseMatrix> smooth;     // mean over all neighbours
};

// Inputs to one batched prediction. Rows of `x` are `batch` stacked copies of
// the sensor layout.
struct RowBatch {
  ad::Tensor x;     // masked features [rows, input_width]
  ad::Tensor gate;  // [rows, 1]; undefined means "all rows active"
  GraphOperators graph;  // mpn only
};

class Model {
 public:
  virtual ~Model() = default;

  virtual ArchSpec arch() const = 0;
  virtual ad::Tensor predict(const RowBatch& batch) const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  std::vector<NamedParam>& parameters() { return params_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  void set_parameters_trainable(bool on);

  bool needs_graph() const { return arch().kind == BackboneKind::mpn; }
  std::size_t input_width() const { return arch().input_width; }
  std::size_t output_width() const { return arch().output_width; }

 protected:
  std::vector<NamedParam> params_;

  ad::Tensor param(std::size_t i) const { return params_[i].tensor; }
  void copy_params_from(const Model& other);
};

class NodeMlp final : public Model {
 public:
  NodeMlp(std::size_t input_width, std::vector<std::size_t> hidden, std::size_t output_width,
          std::mt19937_64& rng);

  ArchSpec arch() const override { return arch_; }
  ad::Tensor predict(const RowBatch& batch) const override;
  std::unique_ptr<Model> clone() const override;

 private:
  ArchSpec arch_;
};

class MessagePassingNet final : public Model {
 public:
  MessagePassingNet(std::size_t input_width, std::size_t hidden, std::size_t layers,
                    std::size_t output_width, std::mt19937_64& rng, std::size_t fill_steps = 8);

  ArchSpec arch() const override { return arch_; }
  ad::Tensor predict(const RowBatch& batch) const override;
  std::unique_ptr<Model> clone() const override;

  // Hidden state after the last message-passing layer (before readout).
  ad::Tensor encode(const RowBatch& batch) const;

 private:
  ArchSpec arch_;
};

// Builds and initialises weights uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
std::unique_ptr<Model> make_model(const ArchSpec& arch, std::mt19937_64& rng);

// Masked-mean operator over `batch` stacked copies of `graph`. Row i sums all
// neighbours with weight 1/max(1, #active neighbours); pruned neighbours carry
// zero state, so this is the mean over active neighbours only.
std::shared_ptr<const ad::SparseMatrix> masked_mean_operator(const Graph& graph,
                                                             std::span<const char> row_active,
                                                             std::size_t batch = 1);
// Both operators for `graph` under the given active rows.
GraphOperators graph_operators(const Graph& graph, std::span<const char> row_active,
                               std::size_t batch = 1);

// Differentiable full-size forward for a stacked batch: masks `x` with the
// per-row gate and predicts every row.
ad::Tensor masked_forward(const Model& model, const ad::Tensor& x, const ad::Tensor& gate,
                          const GraphOperators& graph);

// Predictions for every row of one morphed sample; pruned rows see zeroed input.
Matrix forward(const Model& model, const MorphedInput& input, const Graph* graph,
               const SensorMask& mask);

struct CompactPrediction {
  std::vector<std::size_t> rows;  // active row ids, ascending
  Matrix values;                  // rows.size() x output_width
};

// Runs the model on the active rows only (and the induced subgraph on them).
// Requires a binary mask.
CompactPrediction compact_forward(const Model& model, const MorphedInput& input,
                                  const Graph* graph, const SensorMask& mask);

// Reusable pieces of compact_forward() for repeated inference with one mask.
struct CompactPlan {
  std::vector<std::size_t> rows;
  GraphOperators graph;
};
CompactPlan plan_compact(const Model& model, const Graph* graph, const SensorMask& mask);
Matrix run_compact(const Model& model, const Matrix& input, const CompactPlan& plan);

// "# dynst-ckpt v1", an arch line, then per tensor a "tensor name=... shape=r,c"
// line followed by r*c little-endian float64 values.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace dynst
