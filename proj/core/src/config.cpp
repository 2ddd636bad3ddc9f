#include "dynst/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dynst/error.hpp"

namespace dynst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer");
  }
  return out;
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a number");
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(trim(item)));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"target_sparsity", [](RunConfig& c, const std::string& v) { c.schedule.target_sparsity = to_double(v); }},
      {"prune_frac", [](RunConfig& c, const std::string& v) { c.schedule.prune_frac = to_double(v); }},
      {"q_frac", [](RunConfig& c, const std::string& v) { c.schedule.q_frac = to_double(v); }},
      {"model_iters", [](RunConfig& c, const std::string& v) { c.schedule.model_iters = to_size(v); }},
      {"mask_iters", [](RunConfig& c, const std::string& v) { c.schedule.mask_iters = to_size(v); }},
      {"dst_interval", [](RunConfig& c, const std::string& v) { c.schedule.dst_interval = to_size(v); }},
      {"dst_steps", [](RunConfig& c, const std::string& v) { c.schedule.dst_steps = to_size(v); }},
      {"lr_model", [](RunConfig& c, const std::string& v) { c.schedule.lr_model = to_double(v); }},
      {"lr_mask", [](RunConfig& c, const std::string& v) { c.schedule.lr_mask = to_double(v); }},
      {"scheme", [](RunConfig& c, const std::string& v) { c.schedule.scheme = parse_scheme(v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.schedule.seed = to_u64(v); }},
      {"loss_scope", [](RunConfig& c, const std::string& v) { c.schedule.loss_scope = parse_loss_scope(v); }},
      {"finetune_iters", [](RunConfig& c, const std::string& v) { c.schedule.finetune_iters = to_size(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.schedule.batch_size = to_size(v); }},
      {"log_interval", [](RunConfig& c, const std::string& v) { c.schedule.log_interval = to_size(v); }},
      {"backbone", [](RunConfig& c, const std::string& v) { c.backbone = parse_backbone(v); }},
      {"hidden", [](RunConfig& c, const std::string& v) { c.hidden = to_sizes(v); }},
      {"layers", [](RunConfig& c, const std::string& v) { c.layers = to_size(v); }},
      {"fill_steps", [](RunConfig& c, const std::string& v) { c.fill_steps = to_size(v); }},
      {"patch", [](RunConfig& c, const std::string& v) { c.patch = to_size(v); }},
      {"data", [](RunConfig& c, const std::string& v) { c.data = v; }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
      {"dense_report", [](RunConfig& c, const std::string& v) { c.dense_report = v; }},
      {"epsilon_rel", [](RunConfig& c, const std::string& v) { c.epsilon_rel = to_double(v); }},
      {"data_range", [](RunConfig& c, const std::string& v) { c.data_range = to_double(v); }},
      {"bench_repetitions", [](RunConfig& c, const std::string& v) { c.bench_repetitions = to_size(v); }},
  };
  return table;
}

}  // namespace

ArchSpec RunConfig::arch() const {
  ArchSpec a;
  a.kind = backbone;
  a.hidden = hidden;
  a.layers = layers;
  a.fill_steps = fill_steps;
  return a;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                        line + "'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(c, value);
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "': bad value '" +
                        value + "' (" + e.what() + ")");
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& c) {
  const auto& s = c.schedule;
  std::ostringstream os;
  os << "target_sparsity = " << fmt(s.target_sparsity) << "\n";
  os << "prune_frac = " << fmt(s.prune_frac) << "\n";
  os << "q_frac = " << fmt(s.q_frac) << "\n";
  os << "model_iters = " << s.model_iters << "\n";
  os << "mask_iters = " << s.mask_iters << "\n";
  os << "dst_interval = " << s.dst_interval << "\n";
  os << "dst_steps = " << s.dst_steps << "\n";
  os << "lr_model = " << fmt(s.lr_model) << "\n";
  os << "lr_mask = " << fmt(s.lr_mask) << "\n";
  os << "scheme = " << to_string(s.scheme) << "\n";
  os << "seed = " << s.seed << "\n";
  os << "loss_scope = " << to_string(s.loss_scope) << "\n";
  os << "finetune_iters = " << s.finetune_iters << "\n";
  os << "batch_size = " << s.batch_size << "\n";
  os << "log_interval = " << s.log_interval << "\n";
  os << "backbone = " << to_string(c.backbone) << "\n";
  os << "hidden = ";
  for (std::size_t i = 0; i < c.hidden.size(); ++i) os << (i ? "," : "") << c.hidden[i];
  os << "\n";
  os << "layers = " << c.layers << "\n";
  os << "fill_steps = " << c.fill_steps << "\n";
  os << "patch = " << c.patch << "\n";
  if (!c.data.empty()) os << "data = " << c.data.string() << "\n";
  os << "out = " << c.out.string() << "\n";
  if (!c.dense_report.empty()) os << "dense_report = " << c.dense_report.string() << "\n";
  os << "epsilon_rel = " << fmt(c.epsilon_rel) << "\n";
  os << "data_range = " << fmt(c.data_range) << "\n";
  os << "bench_repetitions = " << c.bench_repetitions << "\n";
  return os.str();
}

}  // namespace dynst
