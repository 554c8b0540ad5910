#pragma once

#include <span>
#include <utility>
#include <vector>

#include "s3rp/autodiff.hpp"
#include "s3rp/data.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/model.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::objective {

using ad::Var;

struct LossWeights {
  double lambda = 1.0;  // MMD
  double beta = 1.0;    // divergence penalty inside the physics term
  double gamma = 0.1;   // physics term
  /// IMQ kernel constant C = mmd_scale * d * prior_variance, d = latent size.
  double mmd_scale = 2.0;
  double prior_variance = 1.0;

  void validate() const;
};

struct LossBreakdown {
  double recon = 0.0;
  double mmd = 0.0;  // clamped at zero; the gradient uses the raw estimate
  double phys_adv = 0.0;
  double phys_div = 0.0;
  double total = 0.0;
};

/// Mean squared difference over every entry.
double reconstruction_loss(std::span<const double> target, std::span<const double> generated);
Var reconstruction_loss(const Var& target, const Var& generated);

/// k(a, b) = C / (C + |a - b|^2).
double imq_kernel(std::span<const double> a, std::span<const double> b, double c);

/// Unbiased MMD^2 estimate between two sample sets (each of size >= 2). For
/// equal sizes the cross term skips index-matched pairs (U-statistic), which
/// keeps it unbiased when q[i] and p[i] are drawn from related distributions.
double mmd(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& p,
           double c);
/// Biased (V-statistic) variant; zero for identical sets.
double mmd_biased(const std::vector<std::vector<double>>& q,
                  const std::vector<std::vector<double>>& p, double c);
/// Differentiable unbiased MMD^2; each batch element of q and p is one sample.
Var mmd(const Var& q, const Var& p, double c);

/// Converts normalised HR frames to grid units: velocities in cells per frame
/// and concentration in units of its normalisation std.
struct PhysicsScales {
  double dt = 1.0;  // time between frames
  double ds = 1.0;  // HR spacing
  data::Normalization norm;
};

/// Physics terms on consecutive frames (normalised, [B, 3, N, N]).
///
/// phys_adv: mean of (dc/dt + div(c u))^2 over pixels and frame pairs, using
/// c and u of the earlier frame; phys_div: mean of (div u)^2 over all frames.
/// Both are expressed in grid units, i.e. the physical residuals multiplied by
/// dt / std_c and dt respectively.
std::pair<Var, Var> physics_loss(std::span<const Var> frames, const PhysicsScales& scales);

/// Same quantities for a physical-unit HR sequence, from `diffops` stencils.
std::pair<double, double> physics_loss(const FieldSequence& yhat, const PhysicsScales& scales);

struct LossResult {
  LossBreakdown parts;
  Var total;
  model::Unroll unroll;
};

/// Objective over a batch of LR sequences (physical units). Decoded output k
/// is compared with x[k] after downsampling; the MMD is summed over decoded
/// steps between posterior samples and fresh prior samples across the batch.
LossResult total_loss(const model::S3rpModel& m, std::span<const FieldSequence* const> batch,
                      double dt_frame, const LossWeights& w, NoiseSource& noise);

}  // namespace s3rp::objective
