#include "dynst/mask.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>

#include "dynst/error.hpp"

namespace dynst {

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::vector<std::size_t>> identity_rows(std::size_t units) {
  std::vector<std::vector<std::size_t>> rows(units);
  for (std::size_t u = 0; u < units; ++u) rows[u] = {u};
  return rows;
}

void require_binary(const SensorMask& mask, const char* what) {
  if (mask.mode() != MaskMode::binary) {
    throw ContractError(std::string(what) + " requires a binarized mask");
  }
}

void require_grad_length(const SensorMask& mask, std::span<const double> grads) {
  if (grads.size() != mask.units()) {
    throw ShapeError("mask gradient has " + std::to_string(grads.size()) + " entries for " +
                     std::to_string(mask.units()) + " units");
  }
}

// Units from `candidates` ordered by key ascending, ties by id ascending.
std::vector<std::size_t> rank(std::vector<std::size_t> candidates,
                              std::span<const double> key) {
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return key[a] < key[b];
  });
  return candidates;
}

}  // namespace

SensorMask SensorMask::make(std::vector<double> scores, MaskMode mode,
                            std::vector<std::vector<std::size_t>> unit_rows) {
  if (scores.empty()) throw ContractError("a mask needs at least one unit");
  SensorMask m;
  m.mode_ = mode;
  m.active_.resize(scores.size());
  for (std::size_t u = 0; u < scores.size(); ++u) {
    m.active_[u] = mode == MaskMode::dense || scores[u] != 0.0;
  }
  m.scores_ = std::move(scores);
  m.bind_rows(std::move(unit_rows));
  return m;
}

void SensorMask::bind_rows(std::vector<std::vector<std::size_t>> unit_rows) {
  if (unit_rows.size() != scores_.size()) {
    throw ShapeError("unit/row map covers " + std::to_string(unit_rows.size()) +
                     " units, mask has " + std::to_string(scores_.size()));
  }
  std::size_t rows = 0;
  for (const auto& r : unit_rows) {
    for (auto row : r) rows = std::max(rows, row + 1);
  }
  constexpr auto kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(rows, kUnset);
  for (std::size_t u = 0; u < unit_rows.size(); ++u) {
    for (auto row : unit_rows[u]) {
      if (owner[row] != kUnset) {
        throw ContractError("row " + std::to_string(row) + " belongs to two units");
      }
      owner[row] = u;
    }
  }
  if (std::find(owner.begin(), owner.end(), kUnset) != owner.end()) {
    throw ContractError("unit/row map leaves rows uncovered");
  }
  unit_rows_ = std::move(unit_rows);
  row_units_ = std::move(owner);
  row_count_ = rows;
}

bool SensorMask::is_active(std::size_t unit) const { return active_.at(unit) != 0; }

std::vector<std::size_t> SensorMask::active_set() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < active_.size(); ++u) {
    if (active_[u]) out.push_back(u);
  }
  return out;
}

std::vector<std::size_t> SensorMask::pruned_set() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < active_.size(); ++u) {
    if (!active_[u]) out.push_back(u);
  }
  return out;
}

std::size_t SensorMask::active_count() const {
  return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), 1));
}

std::vector<std::size_t> SensorMask::active_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < row_count_; ++r) {
    if (active_[row_units_[r]]) out.push_back(r);
  }
  return out;
}

std::vector<char> SensorMask::row_active() const {
  std::vector<char> out(row_count_);
  for (std::size_t r = 0; r < row_count_; ++r) out[r] = active_[row_units_[r]];
  return out;
}

void SensorMask::train_scores(std::span<const double> grad, double lr) {
  require_grad_length(*this, grad);
  for (std::size_t u = 0; u < scores_.size(); ++u) {
    if (active_[u]) scores_[u] -= lr * grad[u];
  }
}

SensorMask init_mask(std::size_t unit_count) {
  if (unit_count == 0) throw ContractError("init_mask: unit count must be >= 1");
  return SensorMask::make(std::vector<double>(unit_count, 1.0), MaskMode::dense,
                          identity_rows(unit_count));
}

SensorMask init_mask(std::vector<std::vector<std::size_t>> unit_rows) {
  if (unit_rows.empty()) throw ContractError("init_mask: unit count must be >= 1");
  const std::size_t n = unit_rows.size();
  return SensorMask::make(std::vector<double>(n, 1.0), MaskMode::dense, std::move(unit_rows));
}

MorphedInput apply_mask(const SensorMask& mask, const MorphedInput& input) {
  if (input.rows() != mask.row_count()) {
    throw ShapeError("mask covers " + std::to_string(mask.row_count()) + " rows, input has " +
                     std::to_string(input.rows()));
  }
  MorphedInput out = input;
  const auto& owner = mask.row_units();
  const auto scores = mask.scores();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const double s = scores[owner[r]];
    for (double& v : out.matrix.row(r)) v *= s;
  }
  return out;
}

ad::Tensor row_gate(const SensorMask& mask, const ad::Tensor& scores, std::size_t batch) {
  if (scores.shape() != ad::Shape{mask.units(), 1}) {
    throw ShapeError("score tensor " + ad::to_string(scores.shape()) + " for " +
                     std::to_string(mask.units()) + " units");
  }
  const auto& owner = mask.row_units();
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(owner.size() * batch);
  for (std::size_t b = 0; b < batch; ++b) index->insert(index->end(), owner.begin(), owner.end());
  return ad::gather_rows(scores, std::move(index));
}

double sparsity(const SensorMask& mask) {
  require_binary(mask, "sparsity");
  return 1.0 - static_cast<double>(mask.active_count()) / static_cast<double>(mask.units());
}

std::size_t units_for_fraction(double fraction, std::size_t unit_count) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ContractError("fraction " + std::to_string(fraction) + " outside [0,1]");
  }
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(unit_count)));
}

SensorMask binarize_prune(const SensorMask& mask, double prune_frac) {
  return binarize_prune_count(mask, units_for_fraction(prune_frac, mask.units()));
}

SensorMask binarize_prune_count(const SensorMask& mask, std::size_t k) {
  auto active = mask.active_set();
  if (k > active.size()) {
    throw ScheduleError("cannot prune " + std::to_string(k) + " units: only " +
                        std::to_string(active.size()) + " active");
  }
  std::vector<double> magnitude(mask.units());
  for (std::size_t u = 0; u < mask.units(); ++u) magnitude[u] = std::abs(mask.scores()[u]);
  const auto order = rank(std::move(active), magnitude);

  SensorMask out = mask;
  out.mode_ = MaskMode::binary;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool drop = i < k;
    out.scores_[order[i]] = drop ? 0.0 : 1.0;
    out.active_[order[i]] = !drop;
  }
  for (std::size_t u = 0; u < out.units(); ++u) {
    if (!out.active_[u]) out.scores_[u] = 0.0;
  }
  return out;
}

std::vector<std::size_t> dst_drop(const SensorMask& mask, std::span<const double> grads,
                                  double q_frac) {
  require_binary(mask, "dst_drop");
  require_grad_length(mask, grads);
  const std::size_t k = units_for_fraction(q_frac, mask.units());
  auto active = mask.active_set();
  if (k > active.size()) {
    throw ScheduleError("drop of " + std::to_string(k) + " exceeds " +
                        std::to_string(active.size()) + " active units");
  }
  std::vector<double> key(grads.size());
  for (std::size_t u = 0; u < grads.size(); ++u) key[u] = std::abs(grads[u]);
  auto order = rank(std::move(active), key);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> dst_regrow(const SensorMask& mask, std::span<const double> grads,
                                    double q_frac) {
  require_binary(mask, "dst_regrow");
  require_grad_length(mask, grads);
  const std::size_t k = units_for_fraction(q_frac, mask.units());
  auto pruned = mask.pruned_set();
  if (k > pruned.size()) {
    throw ScheduleError("regrow of " + std::to_string(k) + " exceeds " +
                        std::to_string(pruned.size()) + " pruned units");
  }
  std::vector<double> key(grads.size());
  for (std::size_t u = 0; u < grads.size(); ++u) key[u] = -std::abs(grads[u]);
  auto order = rank(std::move(pruned), key);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

SensorMask dst_step(const SensorMask& mask, std::span<const double> grads, double q_frac) {
  // Both sets are chosen from the pre-step mask.
  const auto drop = dst_drop(mask, grads, q_frac);
  const auto regrow = dst_regrow(mask, grads, q_frac);
  SensorMask out = mask;
  for (auto u : drop) {
    out.scores_[u] = 0.0;
    out.active_[u] = 0;
  }
  for (auto u : regrow) {
    out.scores_[u] = 1.0;
    out.active_[u] = 1;
  }
  return out;
}

void save_mask(const SensorMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write mask file " + path.string());
  const double s = mask.mode() == MaskMode::binary ? sparsity(mask) : 0.0;
  out << "# dynst-mask v1 units=" << mask.units() << " sparsity=" << shortest(s) << "\n";
  for (std::size_t u = 0; u < mask.units(); ++u) {
    out << u << ',' << shortest(mask.scores()[u]) << ',' << (mask.is_active(u) ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing mask file " + path.string());
}

SensorMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mask file " + path.string());
  std::string header;
  std::getline(in, header);
  const std::string magic = "# dynst-mask v1 units=";
  if (header.rfind(magic, 0) != 0) throw IoError("bad mask header in " + path.string());
  std::size_t units = 0;
  try {
    units = std::stoul(header.substr(magic.size()));
  } catch (const std::exception&) {
    throw IoError("bad unit count in mask header of " + path.string());
  }
  std::vector<double> scores(units, 0.0);
  std::vector<char> active(units, 0);
  std::vector<char> seen(units, 0);
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0;
    double score = 0.0;
    int flag = 0;
    char c1 = 0, c2 = 0;
    if (!(ls >> id >> c1 >> score >> c2 >> flag) || c1 != ',' || c2 != ',' || id >= units ||
        (flag != 0 && flag != 1) || seen[id]) {
      throw IoError("malformed mask line " + std::to_string(lineno) + " in " + path.string());
    }
    seen[id] = 1;
    scores[id] = flag ? score : 0.0;
    active[id] = static_cast<char>(flag);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw IoError("mask file " + path.string() + " does not list every unit");
  }
  SensorMask m = SensorMask::make(std::move(scores), MaskMode::binary, identity_rows(units));
  m.active_.assign(active.begin(), active.end());
  return m;
}

}  // namespace dynst
