#pragma once

// Simulation config files (YAML). Top-level keys map onto ScenarioConfig
// fields; any scalar field may be given as a list, and the cells are the
// Cartesian product of all listed values. Example:
//
//   id: congenial
//   n: 200
//   n_e_multiplier: [10, 100, 1000]
//   r2_ac: [0.05, 0.2]
//   r2_mac: [0.2, 0.5, 0.8]
//   theta_e: congenial            # or {fixed: 2} or {normal: {mean: 1, variance: 0.1}}
//   replicates: 2000
//   seed: 7
//   soft: {s2: eb}
//
// Cell ids append "_<key>-<value>" for every key that varies across the grid.

#include "medfuse/simlab.hpp"

#include <string>
#include <vector>

namespace medfuse {

std::vector<ScenarioConfig> parse_sim_config(const std::string& yaml_text);
std::vector<ScenarioConfig> load_sim_config(const std::string& path);

// Canonical text of a cell (stable across runs; hashed into the manifest).
std::string canonical_config(const ScenarioConfig& cfg);

// Filesystem-safe version of a cell id.
std::string file_stem(const std::string& id);

}  // namespace medfuse
