#pragma once

// Trainable per-sensor input mask.
//
// One real score per unit (graph node or image patch). The mask starts dense
// with every score at 1. Binarization ranks units by |score| and zeroes the
// smallest ones; drop/regrow then exchanges active and pruned units by
// gradient magnitude without changing how many are active. All rankings break
// ties toward the lowest unit index.
//
// In binary mode pruned scores are hard zeros. Active scores are exactly 1
// after binarize/dst_step and may drift while the mask itself is being
// trained; the next binarization resets them.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dynst/autodiff.hpp"
#include "dynst/morph.hpp"

namespace dynst {

enum class MaskMode { dense, binary };

class SensorMask {
 public:
  SensorMask() = default;

  std::size_t units() const { return scores_.size(); }
  MaskMode mode() const { return mode_; }
  std::span<const double> scores() const { return scores_; }
  // Writable view for mask training. In binary mode callers must leave pruned
  // entries at zero; train_scores() does this for you.
  std::span<double> mutable_scores() { return scores_; }

  bool is_active(std::size_t unit) const;
  std::vector<std::size_t> active_set() const;
  std::vector<std::size_t> pruned_set() const;
  std::size_t active_count() const;

  // Rows of the morphed input covered by each unit.
  const std::vector<std::vector<std::size_t>>& unit_rows() const { return unit_rows_; }
  std::size_t row_count() const { return row_count_; }
  // row -> owning unit.
  const std::vector<std::size_t>& row_units() const { return row_units_; }
  // Row ids belonging to active units, ascending.
  std::vector<std::size_t> active_rows() const;
  // 0/1 per row.
  std::vector<char> row_active() const;

  // Replaces the unit -> rows map (e.g. after loading a mask from disk).
  void bind_rows(std::vector<std::vector<std::size_t>> unit_rows);

  // Gradient step on active scores only: s -= lr * grad.
  void train_scores(std::span<const double> grad, double lr);

  // Internal constructors used by the free functions below.
  static SensorMask make(std::vector<double> scores, MaskMode mode,
                         std::vector<std::vector<std::size_t>> unit_rows);

  friend bool operator==(const SensorMask& a, const SensorMask& b) {
    return a.mode_ == b.mode_ && a.scores_ == b.scores_ && a.active_ == b.active_;
  }

 private:
  std::vector<double> scores_;
  std::vector<char> active_;
  MaskMode mode_ = MaskMode::dense;
  std::vector<std::vector<std::size_t>> unit_rows_;
  std::vector<std::size_t> row_units_;
  std::size_t row_count_ = 0;

  friend SensorMask binarize_prune_count(const SensorMask&, std::size_t);
  friend SensorMask dst_step(const SensorMask&, std::span<const double>, double);
  friend SensorMask load_mask(const std::filesystem::path&);
};

// Dense, all scores 1, one row per unit.
SensorMask init_mask(std::size_t unit_count);
// Dense, one unit per patch (patchify() order).
SensorMask init_mask(std::vector<std::vector<std::size_t>> unit_rows);

// Value-level masking: every row of unit u is scaled by score_u.
MorphedInput apply_mask(const SensorMask& mask, const MorphedInput& input);

// Differentiable masking for a stack of `batch` copies of the unit's row
// layout. Returns the per-row gate column [batch*rows, 1] gathered from
// `scores` ([U,1]); multiply inputs by it with ad::broadcast_mul.
ad::Tensor row_gate(const SensorMask& mask, const ad::Tensor& scores, std::size_t batch = 1);

// 1 - active/U. Binary mode only.
double sparsity(const SensorMask& mask);

// Number of units a fraction of the ORIGINAL unit count corresponds to.
std::size_t units_for_fraction(double fraction, std::size_t unit_count);

// Prunes the round(prune_frac * U) active units with the smallest |score|;
// every surviving unit is reset to 1.
SensorMask binarize_prune(const SensorMask& mask, double prune_frac);
SensorMask binarize_prune_count(const SensorMask& mask, std::size_t k);

// The k = round(q_frac * U) active units with smallest |grad|. Ascending ids.
std::vector<std::size_t> dst_drop(const SensorMask& mask, std::span<const double> grads,
                                  double q_frac);
// The k pruned units with largest |grad|. Ascending ids.
std::vector<std::size_t> dst_regrow(const SensorMask& mask, std::span<const double> grads,
                                    double q_frac);
// (mask \ drop) U regrow. Active count is unchanged.
SensorMask dst_step(const SensorMask& mask, std::span<const double> grads, double q_frac);

// "# dynst-mask v1 units=U sparsity=S" then "unit_id,score,active" per unit.
void save_mask(const SensorMask& mask, const std::filesystem::path& path);
// Loaded masks are binary with an identity unit -> row map.
SensorMask load_mask(const std::filesystem::path& path);

}  // namespace dynst
