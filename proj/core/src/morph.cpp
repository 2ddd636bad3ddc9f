#include "dynst/morph.hpp"

#include <algorithm>
#include <queue>
#include <string>

#include "dynst/error.hpp"

namespace dynst {

const char* to_string(Layout layout) {
  return layout == Layout::image ? "image" : "graph";
}

Layout parse_layout(const std::string& text) {
  if (text == "image") return Layout::image;
  if (text == "graph") return Layout::graph;
  throw ConfigError("unknown layout '" + text + "' (expected image|graph)");
}

Graph::Graph(std::size_t nodes, std::vector<Edge> edges, bool symmetric)
    : nodes_(nodes), symmetric_(symmetric) {
  for (const auto& [u, v] : edges) {
    if (u >= nodes || v >= nodes) {
      throw ContractError("edge (" + std::to_string(u) + "," + std::to_string(v) +
                          ") out of range for " + std::to_string(nodes) + " nodes");
    }
  }
  std::erase_if(edges, [](const Edge& e) { return e.first == e.second; });
  if (symmetric) {
    const std::size_t n = edges.size();
    edges.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) edges.emplace_back(edges[i].second, edges[i].first);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);
  build_adjacency();
}

void Graph::build_adjacency() {
  offsets_.assign(nodes_ + 1, 0);
  for (const auto& e : edges_) ++offsets_[e.first + 1];
  for (std::size_t i = 0; i < nodes_; ++i) offsets_[i + 1] += offsets_[i];
  targets_.resize(edges_.size());
  // edges_ is sorted by (source, target), so a straight copy lands in CSR order.
  for (std::size_t i = 0; i < edges_.size(); ++i) targets_[i] = edges_[i].second;
}

std::span<const std::size_t> Graph::neighbors(std::size_t n) const {
  return {targets_.data() + offsets_[n], offsets_[n + 1] - offsets_[n]};
}

Graph Graph::induced(std::span<const std::size_t> keep) const {
  constexpr std::size_t kDropped = static_cast<std::size_t>(-1);
  std::vector<std::size_t> remap(nodes_, kDropped);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[keep[i]] = i;
  std::vector<Edge> sub;
  for (const auto& [u, v] : edges_) {
    if (remap[u] != kDropped && remap[v] != kDropped) sub.emplace_back(remap[u], remap[v]);
  }
  return Graph(keep.size(), std::move(sub), false);
}

Graph Graph::relabeled(std::span<const std::size_t> perm) const {
  if (perm.size() != nodes_) {
    throw ContractError("permutation of size " + std::to_string(perm.size()) + " for " +
                        std::to_string(nodes_) + " nodes");
  }
  std::vector<Edge> out;
  out.reserve(edges_.size());
  for (const auto& [u, v] : edges_) out.emplace_back(perm[u], perm[v]);
  Graph g(nodes_, std::move(out), false);
  g.symmetric_ = symmetric_;
  return g;
}

bool Graph::connected(std::span<const std::size_t> excluded) const {
  std::vector<char> skip(nodes_, 0);
  for (auto e : excluded) skip[e] = 1;
  std::size_t start = 0;
  while (start < nodes_ && skip[start]) ++start;
  if (start == nodes_) return true;
  std::vector<char> seen(nodes_, 0);
  std::queue<std::size_t> frontier;
  frontier.push(start);
  seen[start] = 1;
  std::size_t reached = 1;
  while (!frontier.empty()) {
    const auto n = frontier.front();
    frontier.pop();
    for (auto m : neighbors(n)) {
      if (!skip[m] && !seen[m]) {
        seen[m] = 1;
        ++reached;
        frontier.push(m);
      }
    }
  }
  return reached == nodes_ - excluded.size();
}

Graph grid_graph(std::size_t height, std::size_t width) {
  std::vector<Graph::Edge> edges;
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      for (int dh = -1; dh <= 1; ++dh) {
        for (int dw = -1; dw <= 1; ++dw) {
          const auto nh = static_cast<std::ptrdiff_t>(h) + dh;
          const auto nw = static_cast<std::ptrdiff_t>(w) + dw;
          if ((dh == 0 && dw == 0) || nh < 0 || nw < 0 ||
              nh >= static_cast<std::ptrdiff_t>(height) ||
              nw >= static_cast<std::ptrdiff_t>(width)) {
            continue;
          }
          edges.emplace_back(h * width + w,
                             static_cast<std::size_t>(nh) * width + static_cast<std::size_t>(nw));
        }
      }
    }
  }
  return Graph(height * width, std::move(edges), false);
}

STSeries STSeries::image(std::size_t t, std::size_t c, std::size_t h, std::size_t w,
                         std::vector<double> values) {
  STSeries s{Layout::image, {t, c, h, w}, std::move(values)};
  s.validate();
  return s;
}

STSeries STSeries::graph(std::size_t t, std::size_t n, std::size_t d,
                         std::vector<double> values) {
  STSeries s{Layout::graph, {t, n, d, 1}, std::move(values)};
  s.validate();
  return s;
}

std::size_t STSeries::sensors() const {
  return layout == Layout::image ? dims[2] * dims[3] : dims[1];
}

std::size_t STSeries::element_count() const {
  return dims[0] * dims[1] * dims[2] * dims[3];
}

void STSeries::validate() const {
  for (auto d : dims) {
    if (d == 0) throw ShapeError("series dimensions must all be >= 1");
  }
  if (layout == Layout::graph && dims[3] != 1) {
    throw ShapeError("graph series carries three dims [T,N,D]");
  }
  if (values.size() != element_count()) {
    throw ShapeError("series dims imply " + std::to_string(element_count()) +
                     " values, payload has " + std::to_string(values.size()));
  }
}

MorphedInput morph(const STSeries& series, std::size_t patch) {
  series.validate();
  const std::size_t t_steps = series.time_steps();
  const std::size_t ch = series.channels();
  const std::size_t rows = series.sensors();
  const std::size_t cols = t_steps * ch;

  MorphedInput out;
  out.layout = series.layout;
  out.source_dims = series.dims;
  out.matrix = Matrix(rows, cols);
  const auto& v = series.values;
  if (series.layout == Layout::graph) {
    for (std::size_t t = 0; t < t_steps; ++t) {
      for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t d = 0; d < ch; ++d) {
          out.matrix(n, t * ch + d) = v[(t * rows + n) * ch + d];
        }
      }
    }
  } else {
    const std::size_t h = series.dims[2];
    const std::size_t w = series.dims[3];
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
      throw ContractError("patch size " + std::to_string(patch) + " must divide H=" +
                          std::to_string(h) + " and W=" + std::to_string(w));
    }
    for (std::size_t t = 0; t < t_steps; ++t) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double* plane = v.data() + (t * ch + c) * rows;
        for (std::size_t r = 0; r < rows; ++r) out.matrix(r, t * ch + c) = plane[r];
      }
    }
    out.geometry = PatchGeometry{patch, h, w};
  }
  return out;
}

STSeries unmorph(const MorphedInput& m) {
  if (!m.source_dims) throw ContractError("unmorph: morphed input has no provenance");
  STSeries s;
  s.layout = m.layout;
  s.dims = *m.source_dims;
  const std::size_t t_steps = s.time_steps();
  const std::size_t ch = s.channels();
  const std::size_t rows = s.sensors();
  if (m.rows() != rows || m.cols() != t_steps * ch) {
    throw ShapeError("unmorph: matrix " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + " does not match provenance dims");
  }
  s.values.resize(s.element_count());
  for (std::size_t t = 0; t < t_steps; ++t) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t flat = m.layout == Layout::image ? (t * ch + c) * rows + r
                                                           : (t * rows + r) * ch + c;
        s.values[flat] = m.matrix(r, t * ch + c);
      }
    }
  }
  return s;
}

std::vector<std::vector<std::size_t>> patchify(std::size_t height, std::size_t width,
                                               std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ContractError("patch size p=" + std::to_string(patch) + " must divide H=" +
                        std::to_string(height) + " and W=" + std::to_string(width));
  }
  const std::size_t bh = height / patch;
  const std::size_t bw = width / patch;
  std::vector<std::vector<std::size_t>> sets(bh * bw);
  for (std::size_t i = 0; i < bh; ++i) {
    for (std::size_t j = 0; j < bw; ++j) {
      auto& set = sets[i * bw + j];
      set.reserve(patch * patch);
      for (std::size_t dh = 0; dh < patch; ++dh) {
        for (std::size_t dw = 0; dw < patch; ++dw) {
          set.push_back((i * patch + dh) * width + j * patch + dw);
        }
      }
    }
  }
  return sets;
}

std::vector<std::vector<std::size_t>> patchify(const MorphedInput& m, std::size_t patch) {
  if (m.layout != Layout::image || !m.geometry) {
    throw ContractError("patchify requires an image-layout morphed input");
  }
  return patchify(m.geometry->height, m.geometry->width, patch);
}

}  // namespace dynst
