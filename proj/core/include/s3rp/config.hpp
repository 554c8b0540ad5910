#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "s3rp/advect.hpp"
#include "s3rp/data.hpp"
#include "s3rp/eval.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/model.hpp"
#include "s3rp/objective.hpp"
#include "s3rp/train.hpp"
#include "s3rp/windgen.hpp"

namespace s3rp::config {

/// Simulation settings shared by every generated run. Each simulation draws
/// its own wind seed and diffusivities kx, ky ~ U[k_min, k_max].
struct SimSection {
  double dt = 0.01;
  int n_steps = 150;
  double k_min = 1e-4;
  double k_max = 5e-4;
  double emission_rate = 1.0;
  double source_sigma_cells = 2.0;
  advect::Limiter limiter = advect::Limiter::van_leer;
  std::vector<std::array<double, 2>> sources;
  std::uint64_t seed = 0;
};

struct EvalSection {
  int members = 100;
  std::uint64_t seed = 0;
  int max_sequences = -1;
  bool keep_samples = false;
  int histogram_bins = 64;
  /// Extra free-run frames for `forecast`.
  int horizon = 30;
};

struct ToolkitConfig {
  GridSpec grid;
  windgen::WindConfig wind;
  SimSection sim;
  data::DatasetConfig dataset;
  model::ModelConfig model;
  objective::LossWeights loss;
  train::TrainConfig train;
  EvalSection eval;

  /// Copies the grid into the model section and checks every section.
  /// Throws ErrorCode::config.
  void validate();
};

/// Defaults overridden by `j`, then validated; unknown keys throw ErrorCode::config.
ToolkitConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToolkitConfig& c);
/// Throws ErrorCode::io if unreadable, ErrorCode::config on bad JSON.
ToolkitConfig load(const std::filesystem::path& path);

/// Per-simulation settings for simulation `index`.
advect::SimConfig sim_config(const ToolkitConfig& c, int index);

/// Runs every simulation and assembles the dataset. `jobs` parallelises the
/// per-source solves; results do not depend on it.
data::Dataset generate_dataset(const ToolkitConfig& c, int jobs = 1);

}  // namespace s3rp::config
