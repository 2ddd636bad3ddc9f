#pragma once

// Flat `key = value` run configuration. Blank lines and `#` comments are
// ignored; every key is optional and unknown keys are errors.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dynst/models.hpp"
#include "dynst/trainer.hpp"

namespace dynst {

struct RunConfig {
  Schedule schedule;
  BackboneKind backbone = BackboneKind::mpn;
  std::vector<std::size_t> hidden{16};
  std::size_t layers = 2;
  std::size_t fill_steps = 8;
  std::size_t patch = 1;
  std::filesystem::path data;        // dataset manifest
  std::filesystem::path out = "out";
  std::filesystem::path dense_report;  // optional cached baseline for eval
  double epsilon_rel = 0.10;
  double data_range = 1.0;
  std::size_t bench_repetitions = 11;

  ArchSpec arch() const;
};

// Throws ConfigError naming the line and key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical form; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

}  // namespace dynst
