#pragma once

// Stream morph: fold the temporal axis of a spatio-temporal series into the
// feature axis so that each sensor location becomes exactly one matrix row.
//
//   image [T,C,H,W]:  (t,c,h,w) -> row h*W + w, column t*C + c
//   graph [T,N,D]:    (t,n,d)   -> row n,       column t*D + d
//
// Sensors keep their row across time, so reordering time only permutes
// columns. Image sensors are grouped into p x p patches (the maskable unit);
// patchify() enumerates patches in row-major block order.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dynst/matrix.hpp"

namespace dynst {

enum class Layout { image, graph };

const char* to_string(Layout layout);
Layout parse_layout(const std::string& text);

// Undirected/directed adjacency over node indices, stored as a sorted,
// duplicate-free edge list without self loops.
class Graph {
 public:
  using Edge = std::pair<std::size_t, std::size_t>;

  Graph() = default;
  // Sorts and deduplicates; drops self loops. When `symmetric` is set the
  // reverse of every edge is added.
  Graph(std::size_t nodes, std::vector<Edge> edges, bool symmetric = true);

  std::size_t nodes() const { return nodes_; }
  bool symmetric() const { return symmetric_; }
  const std::vector<Edge>& edges() const { return edges_; }

  // Outgoing neighbours of `n`, ascending.
  std::span<const std::size_t> neighbors(std::size_t n) const;
  std::size_t degree(std::size_t n) const { return neighbors(n).size(); }

  // Graph on `keep` (ascending node ids) relabelled to 0..keep.size()-1.
  Graph induced(std::span<const std::size_t> keep) const;
  // perm[old] = new.
  Graph relabeled(std::span<const std::size_t> perm) const;
  // True when every node is reachable from node 0 (ignoring `excluded`).
  bool connected(std::span<const std::size_t> excluded = {}) const;

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  void build_adjacency();

  std::size_t nodes_ = 0;
  bool symmetric_ = true;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> targets_;
};

// 8-neighbourhood lattice over an H x W pixel grid; node id h*W + w.
Graph grid_graph(std::size_t height, std::size_t width);

struct STSeries {
  Layout layout = Layout::image;
  // image: {T, C, H, W}; graph: {T, N, D, 1}.
  std::array<std::size_t, 4> dims{1, 1, 1, 1};
  std::vector<double> values;

  static STSeries image(std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                        std::vector<double> values);
  static STSeries graph(std::size_t t, std::size_t n, std::size_t d,
                        std::vector<double> values);

  std::size_t time_steps() const { return dims[0]; }
  // Number of sensor rows after morphing: H*W or N.
  std::size_t sensors() const;
  // Features per sensor per time step: C or D.
  std::size_t channels() const { return dims[1 + (layout == Layout::graph ? 1 : 0)]; }
  std::size_t element_count() const;
  // Throws ShapeError when dims/values disagree or a dim is zero.
  void validate() const;

  friend bool operator==(const STSeries&, const STSeries&) = default;
};

struct PatchGeometry {
  std::size_t patch = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t patch_count() const { return (height / patch) * (width / patch); }
};

struct MorphedInput {
  Matrix matrix;  // sensors x (T * channels)
  Layout layout = Layout::image;
  std::optional<PatchGeometry> geometry;  // image layout only
  std::optional<std::array<std::size_t, 4>> source_dims;

  std::size_t rows() const { return matrix.rows; }
  std::size_t cols() const { return matrix.cols; }
};

// `patch` only applies to image series and must divide H and W.
MorphedInput morph(const STSeries& series, std::size_t patch = 1);
// Inverse of morph(); requires source_dims.
STSeries unmorph(const MorphedInput& m);

// Row sets of the (H/p)*(W/p) patches, row-major over blocks. Each set holds
// p*p ascending row ids.
std::vector<std::vector<std::size_t>> patchify(const MorphedInput& m, std::size_t patch);
// Same partition from bare geometry.
std::vector<std::vector<std::size_t>> patchify(std::size_t height, std::size_t width,
                                               std::size_t patch);

}  // namespace dynst
