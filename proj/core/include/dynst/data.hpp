#pragma once

// Synthetic spatio-temporal datasets and their on-disk formats.
//
// A Dataset keeps whole trajectories and cuts (input, target) samples as
// sliding windows on demand, so a 500-sample set over a 16x16 grid stays
// small. Everything here is a pure function of its seed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dynst/error.hpp"
#include "dynst/morph.hpp"

namespace dynst {

class SeriesFormatError : public IoError {
 public:
  enum class Kind { bad_magic, bad_header, payload_length, non_finite };
  SeriesFormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Window {
  std::size_t trajectory = 0;
  std::size_t start = 0;
  friend bool operator==(const Window&, const Window&) = default;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  friend bool operator==(const Split&, const Split&) = default;
};

struct Dataset {
  Layout layout = Layout::image;
  std::vector<STSeries> trajectories;
  std::vector<Window> windows;
  std::size_t input_steps = 8;
  std::size_t horizon = 8;
  std::optional<Graph> graph;             // graph layout only
  std::vector<std::size_t> noise_units;   // planted irrelevant sensors, ascending
  std::optional<Split> split;
  std::uint64_t split_seed = 0;

  std::size_t size() const { return windows.size(); }
  // (input over input_steps frames, target over the following horizon frames)
  std::pair<STSeries, STSeries> sample(std::size_t i) const;
  // Dims shared by every trajectory (time axis excluded).
  std::size_t sensors() const { return trajectories.front().sensors(); }
  std::size_t channels() const { return trajectories.front().channels(); }
};

struct DiffusionParams {
  std::uint64_t seed = 0;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t total_steps = 64;  // frames per trajectory
  double alpha = 0.2;
  // Initial bump widths (pixels), drawn uniformly.
  double sigma_min = 2.0;
  double sigma_max = 4.0;
  // 0 = every window of a single trajectory.
  std::size_t num_samples = 0;
  std::size_t input_steps = 8;
  std::size_t horizon = 8;
};

// One explicit step of u += alpha * laplacian(u) with zero-flux boundaries.
std::vector<double> diffusion_step(std::span<const double> field, std::size_t height,
                                   std::size_t width, double alpha);

// Each trajectory starts from three seeded Gaussian bumps and evolves by the
// 5-point stencil. Enough trajectories are generated to provide num_samples
// windows. Requires 0 <= alpha <= 0.25 and H, W >= 3.
Dataset gen_diffusion_grid(const DiffusionParams& params);

struct PlantedGraphParams {
  std::uint64_t seed = 0;
  std::size_t nodes = 64;
  std::size_t noise_count = 16;
  std::size_t total_steps = 32;
  std::size_t num_samples = 0;
  std::size_t input_steps = 8;
  std::size_t horizon = 8;
  double rate = 0.5;       // relaxation toward the neighbour mean per step
  double noise_std = 1.0;
};

// Random geometric graph on the unit square with expected degree ~6. Signal
// nodes relax toward the mean of their signal neighbours (a signal node with
// none keeps its value); the noise_count planted nodes carry i.i.d. Gaussian
// noise at every step (inputs and targets) and take no part in the coupling.
Dataset gen_planted_graph(const PlantedGraphParams& params);

// Adjacency used by graph backbones: the stored graph for graph layout, the
// 8-neighbour pixel lattice for image layout.
Graph sensor_graph(const Dataset& dataset);

// Seeded shuffle, then 80/10/10 contiguous partition. Needs >= 10 samples.
Dataset split_811(Dataset dataset, std::uint64_t seed);

// Applies node relabelling perm[old] = new to graph, trajectories and noise set.
Dataset relabel(const Dataset& dataset, std::span<const std::size_t> perm);

// Series container: "DYNST1\n", "layout=<image|graph> dims=<d0,...>\n", then
// row-major little-endian float64 payload.
void save_series(const STSeries& series, const std::filesystem::path& path);
STSeries load_series(const std::filesystem::path& path);

// "nodes=N" followed by one "u v" line per undirected edge.
void save_graph(const Graph& graph, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);

// Writes trajectories, graph and a key=value manifest into `dir`; returns the
// manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& manifest);

}  // namespace dynst
