#include "dynst/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

namespace dynst {

namespace {

// Radius at which n uniform points in the unit square have the given expected
// degree, including the loss of neighbourhood area at the borders.
double unit_square_radius(double degree, std::size_t n) {
  auto expected = [n](double r) {
    return static_cast<double>(n - 1) *
           (std::numbers::pi * r * r - 8.0 * r * r * r / 3.0 + r * r * r * r / 2.0);
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (expected(mid) < degree ? lo : hi) = mid;
  }
  return hi;
}

std::size_t windows_per_trajectory(std::size_t total, std::size_t in, std::size_t horizon) {
  if (in == 0 || horizon == 0) throw ContractError("window sizes must be >= 1");
  if (total < in + horizon) {
    throw ContractError("trajectory of " + std::to_string(total) +
                        " frames is shorter than one window (" + std::to_string(in) + "+" +
                        std::to_string(horizon) + ")");
  }
  return total - in - horizon + 1;
}

// Number of trajectories needed and the window list over them.
std::pair<std::size_t, std::vector<Window>> plan_windows(std::size_t total, std::size_t in,
                                                         std::size_t horizon,
                                                         std::size_t num_samples) {
  const std::size_t per = windows_per_trajectory(total, in, horizon);
  const std::size_t wanted = num_samples == 0 ? per : num_samples;
  const std::size_t trajectories = (wanted + per - 1) / per;
  std::vector<Window> windows;
  windows.reserve(wanted);
  for (std::size_t k = 0; k < wanted; ++k) windows.push_back({k / per, k % per});
  return {trajectories, std::move(windows)};
}

std::vector<Window> rebuild_windows(const std::vector<STSeries>& trajectories, std::size_t in,
                                    std::size_t horizon, std::size_t num_samples) {
  std::vector<Window> windows;
  for (std::size_t t = 0; t < trajectories.size() && windows.size() < num_samples; ++t) {
    const auto per = windows_per_trajectory(trajectories[t].time_steps(), in, horizon);
    for (std::size_t s = 0; s < per && windows.size() < num_samples; ++s) windows.push_back({t, s});
  }
  if (windows.size() != num_samples) {
    throw IoError("manifest asks for " + std::to_string(num_samples) +
                  " samples but trajectories only provide " + std::to_string(windows.size()));
  }
  return windows;
}

STSeries slice_frames(const STSeries& s, std::size_t start, std::size_t count) {
  const std::size_t frame = s.element_count() / s.time_steps();
  STSeries out;
  out.layout = s.layout;
  out.dims = s.dims;
  out.dims[0] = count;
  out.values.assign(s.values.begin() + static_cast<std::ptrdiff_t>(start * frame),
                    s.values.begin() + static_cast<std::ptrdiff_t>((start + count) * frame));
  return out;
}

void write_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double decode_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace

std::pair<STSeries, STSeries> Dataset::sample(std::size_t i) const {
  const auto& w = windows.at(i);
  const auto& traj = trajectories.at(w.trajectory);
  return {slice_frames(traj, w.start, input_steps),
          slice_frames(traj, w.start + input_steps, horizon)};
}

std::vector<double> diffusion_step(std::span<const double> u, std::size_t height,
                                   std::size_t width, double alpha) {
  std::vector<double> next(u.begin(), u.end());
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      const double c = u[h * width + w];
      // Missing neighbours mirror the cell itself: zero flux across the edge.
      double lap = 0.0;
      if (h > 0) lap += u[(h - 1) * width + w] - c;
      if (h + 1 < height) lap += u[(h + 1) * width + w] - c;
      if (w > 0) lap += u[h * width + w - 1] - c;
      if (w + 1 < width) lap += u[h * width + w + 1] - c;
      next[h * width + w] = c + alpha * lap;
    }
  }
  return next;
}

Dataset gen_diffusion_grid(const DiffusionParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha <= 0.25)) {
    throw ContractError("alpha=" + std::to_string(p.alpha) +
                        " violates the explicit 5-point stencil stability bound 0 <= alpha <= 0.25");
  }
  if (p.height < 3 || p.width < 3) throw ContractError("diffusion grid needs H, W >= 3");
  if (!(p.sigma_min > 0.0 && p.sigma_min <= p.sigma_max)) {
    throw ContractError("bump widths need 0 < sigma_min <= sigma_max");
  }
  auto [count, windows] = plan_windows(p.total_steps, p.input_steps, p.horizon, p.num_samples);

  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> row_pos(0.0, static_cast<double>(p.height - 1));
  std::uniform_real_distribution<double> col_pos(0.0, static_cast<double>(p.width - 1));
  std::uniform_real_distribution<double> sigma_dist(p.sigma_min, p.sigma_max);
  std::uniform_real_distribution<double> amp_dist(0.5, 1.0);

  Dataset ds;
  ds.layout = Layout::image;
  ds.input_steps = p.input_steps;
  ds.horizon = p.horizon;
  ds.windows = std::move(windows);
  const std::size_t cells = p.height * p.width;
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<double> field(cells, 0.0);
    for (int b = 0; b < 3; ++b) {
      const double cy = row_pos(rng);
      const double cx = col_pos(rng);
      const double sigma = sigma_dist(rng);
      const double amp = amp_dist(rng);
      for (std::size_t h = 0; h < p.height; ++h) {
        for (std::size_t w = 0; w < p.width; ++w) {
          const double dy = static_cast<double>(h) - cy;
          const double dx = static_cast<double>(w) - cx;
          field[h * p.width + w] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
      }
    }
    std::vector<double> values;
    values.reserve(cells * p.total_steps);
    for (std::size_t step = 0; step < p.total_steps; ++step) {
      values.insert(values.end(), field.begin(), field.end());
      field = diffusion_step(field, p.height, p.width, p.alpha);
    }
    ds.trajectories.push_back(STSeries::image(p.total_steps, 1, p.height, p.width, std::move(values)));
  }
  return ds;
}

Dataset gen_planted_graph(const PlantedGraphParams& p) {
  if (p.nodes == 0) throw ContractError("planted graph needs at least one node");
  if (p.noise_count >= p.nodes) {
    throw ContractError("noise_count=" + std::to_string(p.noise_count) + " must be < N=" +
                        std::to_string(p.nodes));
  }
  auto [count, windows] = plan_windows(p.total_steps, p.input_steps, p.horizon, p.num_samples);
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double radius = p.nodes > 1 ? unit_square_radius(6.0, p.nodes) : 0.0;
  std::vector<std::pair<double, double>> pos(p.nodes);
  for (auto& [x, y] : pos) {
    x = unit(rng);
    y = unit(rng);
  }
  std::vector<Graph::Edge> edges;
  for (std::size_t i = 0; i < p.nodes; ++i) {
    for (std::size_t j = i + 1; j < p.nodes; ++j) {
      const double dx = pos[i].first - pos[j].first;
      const double dy = pos[i].second - pos[j].second;
      if (dx * dx + dy * dy <= radius * radius) edges.emplace_back(i, j);
    }
  }
  std::vector<std::size_t> ids(p.nodes);
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::size_t> noise(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(p.noise_count));
  std::sort(noise.begin(), noise.end());
  auto graph = std::make_optional<Graph>(p.nodes, std::move(edges), true);

  std::vector<char> is_noise(p.nodes, 0);
  for (auto n : noise) is_noise[n] = 1;
  // Signal neighbours only: noise nodes are cut out of the coupling.
  std::vector<std::vector<std::size_t>> signal_nbrs(p.nodes);
  for (std::size_t i = 0; i < p.nodes; ++i) {
    if (is_noise[i]) continue;
    for (auto j : graph->neighbors(i)) {
      if (!is_noise[j]) signal_nbrs[i].push_back(j);
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.layout = Layout::graph;
  ds.input_steps = p.input_steps;
  ds.horizon = p.horizon;
  ds.windows = std::move(windows);
  ds.noise_units = noise;
  for (std::size_t t = 0; t < count; ++t) {
    std::vector<double> x(p.nodes);
    for (std::size_t i = 0; i < p.nodes; ++i) x[i] = is_noise[i] ? 0.0 : gauss(rng);
    std::vector<double> values;
    values.reserve(p.nodes * p.total_steps);
    for (std::size_t step = 0; step < p.total_steps; ++step) {
      for (std::size_t i = 0; i < p.nodes; ++i) {
        values.push_back(is_noise[i] ? p.noise_std * gauss(rng) : x[i]);
      }
      std::vector<double> next = x;
      for (std::size_t i = 0; i < p.nodes; ++i) {
        if (is_noise[i] || signal_nbrs[i].empty()) continue;
        double m = 0.0;
        for (auto j : signal_nbrs[i]) m += x[j];
        m /= static_cast<double>(signal_nbrs[i].size());
        next[i] = x[i] + p.rate * (m - x[i]);
      }
      x = std::move(next);
    }
    ds.trajectories.push_back(STSeries::graph(p.total_steps, p.nodes, 1, std::move(values)));
  }
  ds.graph = std::move(graph);
  return ds;
}

Graph sensor_graph(const Dataset& ds) {
  if (ds.layout == Layout::graph) {
    if (!ds.graph) throw ContractError("graph dataset carries no graph");
    return *ds.graph;
  }
  const auto& d = ds.trajectories.front().dims;
  return grid_graph(d[2], d[3]);
}

Dataset split_811(Dataset ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n < 10) {
    throw ContractError("8:1:1 split needs at least 10 samples, dataset has " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  const auto val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(train),
               order.begin() + static_cast<std::ptrdiff_t>(train + val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train + val), order.end());
  ds.split = std::move(s);
  ds.split_seed = seed;
  return ds;
}

Dataset relabel(const Dataset& ds, std::span<const std::size_t> perm) {
  if (ds.layout != Layout::graph) throw ContractError("relabel applies to graph datasets");
  const std::size_t n = ds.sensors();
  if (perm.size() != n) throw ContractError("permutation size does not match node count");
  Dataset out = ds;
  if (ds.graph) out.graph = ds.graph->relabeled(perm);
  for (auto& traj : out.trajectories) {
    const auto& src = traj.values;
    std::vector<double> dst(src.size());
    const std::size_t d = traj.dims[2];
    for (std::size_t t = 0; t < traj.time_steps(); ++t) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
          dst[(t * n + perm[i]) * d + c] = src[(t * n + i) * d + c];
        }
      }
    }
    traj.values = std::move(dst);
  }
  out.noise_units.clear();
  for (auto u : ds.noise_units) out.noise_units.push_back(perm[u]);
  std::sort(out.noise_units.begin(), out.noise_units.end());
  return out;
}

void save_series(const STSeries& s, const std::filesystem::path& path) {
  s.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write series file " + path.string());
  const std::size_t ndims = s.layout == Layout::graph ? 3 : 4;
  out << "DYNST1\n" << "layout=" << to_string(s.layout) << " dims=";
  for (std::size_t i = 0; i < ndims; ++i) out << (i ? "," : "") << s.dims[i];
  out << "\n";
  for (double v : s.values) write_le(out, v);
  if (!out) throw IoError("failed writing series file " + path.string());
}

STSeries load_series(const std::filesystem::path& path) {
  using Kind = SeriesFormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open series file " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != "DYNST1") {
    throw SeriesFormatError(Kind::bad_magic, "bad magic in series file " + path.string());
  }
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string layout_tok, dims_tok;
  hs >> layout_tok >> dims_tok;
  if (layout_tok.rfind("layout=", 0) != 0 || dims_tok.rfind("dims=", 0) != 0) {
    throw SeriesFormatError(Kind::bad_header, "malformed header in " + path.string());
  }
  STSeries s;
  std::vector<std::size_t> dims;
  try {
    s.layout = parse_layout(layout_tok.substr(7));
    dims = parse_index_list(dims_tok.substr(5));
  } catch (const std::exception& e) {
    throw SeriesFormatError(Kind::bad_header, "malformed header in " + path.string() + ": " + e.what());
  }
  const std::size_t expected_dims = s.layout == Layout::graph ? 3 : 4;
  if (dims.size() != expected_dims ||
      std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; })) {
    throw SeriesFormatError(Kind::bad_header, "dims do not match layout in " + path.string());
  }
  s.dims = {1, 1, 1, 1};
  std::copy(dims.begin(), dims.end(), s.dims.begin());
  const std::size_t expected = s.element_count();

  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
  if (payload.size() != expected * 8) {
    throw SeriesFormatError(Kind::payload_length,
                            "payload length mismatch in " + path.string() + ": header implies " +
                                std::to_string(expected) + " values, found " +
                                std::to_string(payload.size()) + " bytes");
  }
  s.values.resize(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    s.values[i] = decode_le(payload.data() + 8 * i);
    if (!std::isfinite(s.values[i])) {
      throw SeriesFormatError(Kind::non_finite, "non-finite value at index " + std::to_string(i) +
                                                    " in " + path.string());
    }
  }
  return s;
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file " + path.string());
  out << "nodes=" << g.nodes() << "\n";
  for (const auto& [u, v] : g.edges()) {
    if (u < v) out << u << ' ' << v << "\n";
  }
  if (!out) throw IoError("failed writing graph file " + path.string());
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("nodes=", 0) != 0) throw IoError("graph file " + path.string() + " lacks nodes=N");
  std::size_t nodes = 0;
  try {
    nodes = std::stoul(line.substr(6));
  } catch (const std::exception&) {
    throw IoError("bad node count in " + path.string());
  }
  std::vector<Graph::Edge> edges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    std::size_t u = 0, v = 0;
    if (!(ls >> u >> v) || u >= nodes || v >= nodes) {
      throw IoError("bad edge on line " + std::to_string(lineno) + " of " + path.string());
    }
    edges.emplace_back(u, v);
  }
  return Graph(nodes, std::move(edges), true);
}

std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<std::string> files;
  for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
    std::ostringstream name;
    name << "traj_" << std::setw(4) << std::setfill('0') << t << ".bin";
    files.push_back(name.str());
    save_series(ds.trajectories[t], dir / files.back());
  }
  if (ds.graph) save_graph(*ds.graph, dir / "graph.txt");

  const auto manifest = dir / "dataset.txt";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  out << "# dynst-dataset v1\n";
  out << "layout=" << to_string(ds.layout) << "\n";
  out << "trajectories=" << join(files) << "\n";
  out << "input_steps=" << ds.input_steps << "\n";
  out << "horizon=" << ds.horizon << "\n";
  out << "num_samples=" << ds.size() << "\n";
  if (ds.graph) out << "graph=graph.txt\n";
  out << "noise=" << join(ds.noise_units) << "\n";
  if (ds.split) out << "split_seed=" << ds.split_seed << "\n";
  if (!out) throw IoError("failed writing manifest " + manifest.string());
  return manifest;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open dataset manifest " + manifest.string());
  const auto dir = manifest.parent_path();
  Dataset ds;
  std::vector<std::string> files;
  std::size_t num_samples = 0;
  std::optional<std::uint64_t> split_seed;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError("manifest line " + std::to_string(lineno) + " is not key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    try {
      if (key == "layout") ds.layout = parse_layout(val);
      else if (key == "trajectories") {
        std::stringstream ss(val);
        std::string f;
        while (std::getline(ss, f, ',')) files.push_back(trim(f));
      } else if (key == "input_steps") ds.input_steps = std::stoul(val);
      else if (key == "horizon") ds.horizon = std::stoul(val);
      else if (key == "num_samples") num_samples = std::stoul(val);
      else if (key == "graph") ds.graph = load_graph(dir / val);
      else if (key == "noise") ds.noise_units = parse_index_list(val);
      else if (key == "split_seed") split_seed = std::stoull(val);
      else throw IoError("unknown manifest key '" + key + "'");
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError("manifest line " + std::to_string(lineno) + " (" + key + "): " + e.what());
    }
  }
  if (files.empty()) throw IoError("manifest " + manifest.string() + " lists no trajectories");
  for (const auto& f : files) ds.trajectories.push_back(load_series(dir / f));
  for (const auto& t : ds.trajectories) {
    if (t.layout != ds.layout) throw IoError("trajectory layout disagrees with manifest");
  }
  ds.windows = rebuild_windows(ds.trajectories, ds.input_steps, ds.horizon, num_samples);
  if (split_seed) ds = split_811(std::move(ds), *split_seed);
  return ds;
}

}  // namespace dynst
