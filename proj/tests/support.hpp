#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3rp/config.hpp"
#include "s3rp/data.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/model.hpp"
#include "s3rp/objective.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::testing {

inline FieldSequence random_sequence(Resolution res, int frames, int n, std::uint64_t seed,
                                     double lo = -1.0, double hi = 1.0) {
  FieldSequence s(res, frames, n);
  NoiseSource rng(seed);
  for (double& v : s.data()) v = lo + (hi - lo) * rng.uniform();
  return s;
}

inline ScalarField random_field(int n, std::uint64_t seed) {
  ScalarField f(n);
  NoiseSource rng(seed);
  for (double& v : f.values) v = 2.0 * rng.uniform() - 1.0;
  return f;
}

inline VectorField random_vector_field(int n, std::uint64_t seed) {
  VectorField f(n);
  NoiseSource rng(seed);
  for (double& v : f.values) v = 2.0 * rng.uniform() - 1.0;
  return f;
}

/// 8^2 LR / 64^2 HR model small enough for finite-difference checks.
inline model::ModelConfig tiny_model(model::Mode mode = model::Mode::interpolation, int ratio = 8) {
  model::ModelConfig c;
  c.grid.n_lr = 8;
  c.grid.ratio = ratio;
  c.latent_channels = 4;
  c.hidden_channels = 6;
  c.ladder_channels = 4;
  c.mode = mode;
  return c;
}

/// Small toolkit configuration: 64^2 HR, 8^2 LR, short runs.
inline config::ToolkitConfig tiny_toolkit(int sims = 2, int seq_len = 12, int holdout = 1) {
  config::ToolkitConfig c;
  c.grid.n_lr = 8;
  c.grid.ratio = 8;
  c.wind.n_modes = 2;
  c.dataset.sims = sims;
  c.dataset.sequences_per_sim = 2;
  c.dataset.seq_len = seq_len;
  c.dataset.spinup = 10;
  c.dataset.holdout_sims = holdout;
  c.sim.n_steps = c.dataset.spinup + seq_len - 1;
  c.model.latent_channels = 4;
  c.model.hidden_channels = 8;
  c.model.ladder_channels = 4;
  c.train.batch = 2;
  c.train.chunk = std::min(6, seq_len);
  c.eval.members = 4;
  c.validate();
  return c;
}

inline std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "s3rp_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

struct GradCheck {
  int checked = 0;
  int passed = 0;
  double worst = 0.0;
};

/// Central-difference check of d total_loss / d theta on `coords` parameter
/// entries drawn uniformly from the whole parameter vector. The same noise
/// seed is used for every evaluation.
inline GradCheck grad_check_total(model::S3rpModel& m, std::span<const FieldSequence* const> batch,
                                  double dt, const objective::LossWeights& w, int coords,
                                  std::uint64_t seed, double tol = 1e-3, double h = 1e-5) {
  auto loss = [&] {
    NoiseSource noise(seed);
    return objective::total_loss(m, batch, dt, w, noise).total;
  };
  m.params().zero_grad();
  ad::backward(loss());

  std::vector<std::pair<ad::Var*, std::size_t>> index;
  for (auto& [name, v] : m.params().entries())
    for (std::size_t k = 0; k < v.numel(); ++k) index.emplace_back(&v, k);

  GradCheck out;
  NoiseSource pick(seed + 1);
  for (int n = 0; n < coords; ++n) {
    auto [var, k] = index[pick.below(index.size())];
    const double g = var->grad().empty() ? 0.0 : var->grad()[k];
    const double keep = var->value()[k];
    var->mutable_value()[k] = keep + h;
    const double up = loss().item();
    var->mutable_value()[k] = keep - h;
    const double down = loss().item();
    var->mutable_value()[k] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-7});
    out.worst = std::max(out.worst, err);
    ++out.checked;
    if (err <= tol) ++out.passed;
  }
  return out;
}

}  // namespace s3rp::testing
