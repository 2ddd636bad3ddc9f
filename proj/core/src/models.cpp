#include "dynst/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dynst/error.hpp"

namespace dynst {

namespace {

ad::Tensor uniform_param(std::size_t rows, std::size_t cols, std::size_t fan_in,
                         std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return ad::Tensor::parameter({rows, cols}, std::move(v));
}

// x + 1 * bias, with bias [1,F] expanded through a ones column.
ad::Tensor add_bias(const ad::Tensor& x, const ad::Tensor& bias) {
  const auto ones = ad::Tensor::filled({x.shape().rows, 1}, 1.0);
  return ad::add(x, ad::matmul(ones, bias));
}

void check_width(const ad::Tensor& x, std::size_t width) {
  if (x.shape().cols != width) {
    throw ShapeError("model expects input width " + std::to_string(width) + ", got " +
                     std::to_string(x.shape().cols));
  }
}

void write_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

const char* to_string(BackboneKind kind) { return kind == BackboneKind::mlp ? "mlp" : "mpn"; }

BackboneKind parse_backbone(const std::string& text) {
  if (text == "mlp") return BackboneKind::mlp;
  if (text == "mpn") return BackboneKind::mpn;
  throw ConfigError("unknown backbone '" + text + "' (expected mlp|mpn)");
}

void Model::set_parameters_trainable(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

void Model::copy_params_from(const Model& other) {
  params_.clear();
  for (const auto& p : other.params_) {
    auto v = p.tensor.values();
    params_.push_back({p.name, ad::Tensor::parameter(p.tensor.shape(), {v.begin(), v.end()})});
    params_.back().tensor.set_requires_grad(p.tensor.requires_grad());
  }
}

NodeMlp::NodeMlp(std::size_t input_width, std::vector<std::size_t> hidden,
                 std::size_t output_width, std::mt19937_64& rng) {
  arch_ = {BackboneKind::mlp, input_width, output_width, std::move(hidden), 0};
  std::size_t fan_in = input_width;
  for (std::size_t i = 0; i < arch_.hidden.size(); ++i) {
    const auto w = arch_.hidden[i];
    params_.push_back({"hidden" + std::to_string(i) + ".weight", uniform_param(fan_in, w, fan_in, rng)});
    params_.push_back({"hidden" + std::to_string(i) + ".bias", uniform_param(1, w, fan_in, rng)});
    fan_in = w;
  }
  params_.push_back({"out.weight", uniform_param(fan_in, output_width, fan_in, rng)});
  params_.push_back({"out.bias", uniform_param(1, output_width, fan_in, rng)});
}

ad::Tensor NodeMlp::predict(const RowBatch& batch) const {
  check_width(batch.x, arch_.input_width);
  ad::Tensor h = batch.x;
  const std::size_t layers = arch_.hidden.size();
  for (std::size_t i = 0; i < layers; ++i) {
    h = ad::relu(add_bias(ad::matmul(h, param(2 * i)), param(2 * i + 1)));
  }
  return add_bias(ad::matmul(h, param(2 * layers)), param(2 * layers + 1));
}

std::unique_ptr<Model> NodeMlp::clone() const {
  auto copy = std::make_unique<NodeMlp>(*this);
  copy->copy_params_from(*this);
  return copy;
}

MessagePassingNet::MessagePassingNet(std::size_t input_width, std::size_t hidden,
                                     std::size_t layers, std::size_t output_width,
                                     std::mt19937_64& rng, std::size_t fill_steps) {
  if (layers == 0) throw ContractError("message passing net needs at least one layer");
  arch_ = {BackboneKind::mpn, input_width, output_width, {hidden}, layers, fill_steps};
  std::size_t fan_in = input_width;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    params_.push_back({p + ".self", uniform_param(fan_in, hidden, fan_in, rng)});
    params_.push_back({p + ".nbr", uniform_param(fan_in, hidden, fan_in, rng)});
    params_.push_back({p + ".bias", uniform_param(1, hidden, fan_in, rng)});
    fan_in = hidden;
  }
  params_.push_back({"readout.self", uniform_param(hidden, output_width, hidden, rng)});
  params_.push_back({"readout.nbr", uniform_param(hidden, output_width, hidden, rng)});
  params_.push_back({"readout.fill", uniform_param(hidden, output_width, hidden, rng)});
  params_.push_back({"readout.bias", uniform_param(1, output_width, hidden, rng)});
}

ad::Tensor MessagePassingNet::encode(const RowBatch& batch) const {
  check_width(batch.x, arch_.input_width);
  const auto& aggregate = batch.graph.aggregate;
  if (!aggregate) throw ContractError("message passing net requires a graph");
  if (aggregate->rows() != batch.x.shape().rows) {
    throw ShapeError("graph covers " + std::to_string(aggregate->rows()) +
                     " rows, input has " + std::to_string(batch.x.shape().rows));
  }
  ad::Tensor h = batch.x;
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    const auto agg = ad::spmm(aggregate, h);
    auto z = add_bias(
        ad::add(ad::matmul(h, param(3 * l)), ad::matmul(agg, param(3 * l + 1))),
        param(3 * l + 2));
    z = ad::relu(z);
    h = batch.gate.defined() ? ad::broadcast_mul(batch.gate, z) : z;
  }
  return h;
}

ad::Tensor MessagePassingNet::predict(const RowBatch& batch) const {
  const auto h = encode(batch);
  const std::size_t base = 3 * arch_.layers;
  const auto agg = ad::spmm(batch.graph.aggregate, h);
  const auto own = add_bias(ad::add(ad::matmul(h, param(base)), ad::matmul(agg, param(base + 1))),
                            param(base + 3));
  if (!batch.gate.defined()) return own;
  if (arch_.fill_steps > 0 && !batch.graph.smooth) {
    throw ContractError("message passing net fill needs the all-neighbour operator");
  }
  const auto ones = ad::Tensor::filled(batch.gate.shape(), 1.0);
  const auto off = ad::sub(ones, batch.gate);
  const auto kept = ad::broadcast_mul(batch.gate, own);
  auto y = ad::add(kept, ad::broadcast_mul(off, add_bias(ad::matmul(agg, param(base + 2)),
                                                          param(base + 3))));
  for (std::size_t j = 0; j < arch_.fill_steps; ++j) {
    y = ad::add(kept, ad::broadcast_mul(off, ad::spmm(batch.graph.smooth, y)));
  }
  return y;
}

std::unique_ptr<Model> MessagePassingNet::clone() const {
  auto copy = std::make_unique<MessagePassingNet>(*this);
  copy->copy_params_from(*this);
  return copy;
}

std::unique_ptr<Model> make_model(const ArchSpec& arch, std::mt19937_64& rng) {
  if (arch.input_width == 0 || arch.output_width == 0) {
    throw ContractError("model widths must be positive");
  }
  if (arch.kind == BackboneKind::mlp) {
    return std::make_unique<NodeMlp>(arch.input_width, arch.hidden, arch.output_width, rng);
  }
  if (arch.hidden.empty()) throw ContractError("mpn needs a hidden width");
  return std::make_unique<MessagePassingNet>(arch.input_width, arch.hidden.front(), arch.layers,
                                             arch.output_width, rng, arch.fill_steps);
}

std::shared_ptr<const ad::SparseMatrix> masked_mean_operator(const Graph& graph,
                                                             std::span<const char> row_active,
                                                             std::size_t batch) {
  if (row_active.size() != graph.nodes()) {
    throw ShapeError("graph has " + std::to_string(graph.nodes()) + " nodes, mask covers " +
                     std::to_string(row_active.size()) + " rows");
  }
  std::vector<std::vector<ad::SparseMatrix::Entry>> rows(graph.nodes());
  for (std::size_t i = 0; i < graph.nodes(); ++i) {
    const auto nbrs = graph.neighbors(i);
    std::size_t active = 0;
    for (auto j : nbrs) active += row_active[j] ? 1 : 0;
    const double w = 1.0 / static_cast<double>(std::max<std::size_t>(active, 1));
    rows[i].reserve(nbrs.size());
    for (auto j : nbrs) rows[i].push_back({j, w});
  }
  ad::SparseMatrix single(graph.nodes(), rows);
  if (batch == 1) return std::make_shared<const ad::SparseMatrix>(std::move(single));
  return std::make_shared<const ad::SparseMatrix>(single.tiled(batch));
}

GraphOperators graph_operators(const Graph& graph, std::span<const char> row_active,
                               std::size_t batch) {
  GraphOperators ops;
  ops.aggregate = masked_mean_operator(graph, row_active, batch);
  const std::vector<char> all(graph.nodes(), 1);
  ops.smooth = masked_mean_operator(graph, all, batch);
  return ops;
}

ad::Tensor masked_forward(const Model& model, const ad::Tensor& x, const ad::Tensor& gate,
                          const GraphOperators& graph) {
  return model.predict({ad::broadcast_mul(gate, x), gate, graph});
}

namespace {

void check_inputs(const Model& model, const MorphedInput& input, const Graph* graph,
                  const SensorMask& mask) {
  if (input.cols() != model.input_width()) {
    throw ShapeError("input has " + std::to_string(input.cols()) + " columns, model expects " +
                     std::to_string(model.input_width()));
  }
  if (mask.row_count() != input.rows()) {
    throw ShapeError("mask covers " + std::to_string(mask.row_count()) + " rows, input has " +
                     std::to_string(input.rows()));
  }
  if (model.needs_graph()) {
    if (graph == nullptr) throw ContractError("message passing net requires a graph");
    if (graph->nodes() != input.rows()) {
      throw ShapeError("graph has " + std::to_string(graph->nodes()) + " nodes, input has " +
                       std::to_string(input.rows()) + " rows");
    }
  }
}

}  // namespace

Matrix forward(const Model& model, const MorphedInput& input, const Graph* graph,
               const SensorMask& mask) {
  check_inputs(model, input, graph, mask);
  auto scores = mask.scores();
  const auto score_t = ad::Tensor::constant({mask.units(), 1}, {scores.begin(), scores.end()});
  const auto gate = row_gate(mask, score_t);
  GraphOperators ops;
  if (model.needs_graph()) ops = graph_operators(*graph, mask.row_active());
  return masked_forward(model, ad::Tensor::constant(input.matrix), gate, ops).to_matrix();
}

CompactPlan plan_compact(const Model& model, const Graph* graph, const SensorMask& mask) {
  if (mask.mode() != MaskMode::binary) {
    throw ContractError("compact_forward requires a binarized mask");
  }
  CompactPlan plan;
  plan.rows = mask.active_rows();
  if (plan.rows.empty()) throw ContractError("compact_forward: mask has no active units");
  if (model.needs_graph()) {
    if (graph == nullptr) throw ContractError("message passing net requires a graph");
    const auto sub = graph->induced(plan.rows);
    const std::vector<char> all(sub.nodes(), 1);
    plan.graph.aggregate = masked_mean_operator(sub, all);
  }
  return plan;
}

Matrix run_compact(const Model& model, const Matrix& input, const CompactPlan& plan) {
  const auto x = ad::Tensor::constant(gather_rows(input, plan.rows));
  return model.predict({x, ad::Tensor{}, plan.graph}).to_matrix();
}

CompactPrediction compact_forward(const Model& model, const MorphedInput& input,
                                  const Graph* graph, const SensorMask& mask) {
  check_inputs(model, input, graph, mask);
  auto plan = plan_compact(model, graph, mask);
  auto values = run_compact(model, input.matrix, plan);
  return {std::move(plan.rows), std::move(values)};
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto a = model.arch();
  out << "# dynst-ckpt v1\n";
  out << "arch kind=" << to_string(a.kind) << " in=" << a.input_width << " out=" << a.output_width
      << " hidden=" << join(a.hidden) << " layers=" << a.layers << " fill=" << a.fill_steps
      << " tensors=" << model.parameters().size() << "\n";
  for (const auto& p : model.parameters()) {
    out << "tensor name=" << p.name << " shape=" << p.tensor.shape().rows << ','
        << p.tensor.shape().cols << "\n";
    for (double v : p.tensor.values()) write_le(out, v);
    out << "\n";
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "# dynst-ckpt v1") throw IoError("bad checkpoint magic in " + path.string());
  std::getline(in, line);
  std::istringstream arch_line(line);
  std::string word;
  arch_line >> word;
  if (word != "arch") throw IoError("missing arch line in " + path.string());
  ArchSpec arch;
  std::size_t tensors = 0;
  try {
    while (arch_line >> word) {
      const auto eq = word.find('=');
      const auto key = word.substr(0, eq);
      const auto val = eq == std::string::npos ? std::string{} : word.substr(eq + 1);
      if (key == "kind") arch.kind = parse_backbone(val);
      else if (key == "in") arch.input_width = std::stoul(val);
      else if (key == "out") arch.output_width = std::stoul(val);
      else if (key == "hidden") arch.hidden = split_sizes(val);
      else if (key == "layers") arch.layers = std::stoul(val);
      else if (key == "fill") arch.fill_steps = std::stoul(val);
      else if (key == "tensors") tensors = std::stoul(val);
    }
  } catch (const std::exception& e) {
    throw IoError("bad arch line in " + path.string() + ": " + e.what());
  }
  std::mt19937_64 rng(0);
  auto model = make_model(arch, rng);
  auto& params = model->parameters();
  if (params.size() != tensors) throw IoError("tensor count mismatch in " + path.string());
  for (auto& p : params) {
    std::getline(in, line);
    const std::string expect = "tensor name=" + p.name + " shape=" +
                               std::to_string(p.tensor.shape().rows) + "," +
                               std::to_string(p.tensor.shape().cols);
    if (line != expect) {
      throw IoError("expected '" + expect + "' in " + path.string() + ", found '" + line + "'");
    }
    auto values = p.tensor.mutable_values();
    for (auto& v : values) v = read_le(in);
    if (!in) throw IoError("truncated tensor " + p.name + " in " + path.string());
    in.ignore(1);
  }
  return model;
}

}  // namespace dynst
