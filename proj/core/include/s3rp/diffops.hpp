#pragma once

#include <vector>

#include "s3rp/grid.hpp"

namespace s3rp::diffops {

// Second-order central differences in space, forward differences in time,
// periodic wrap in both axes. Axis convention: x runs along columns (j),
// y along rows (i).

struct StencilSpec {
  double ds = 1.0;
  double dt = 1.0;
  void validate() const;
};

struct DiffusionCoefficients {
  double kx = 0.0;
  double ky = 0.0;
  bool operator==(const DiffusionCoefficients&) const = default;
};

ScalarField ddx(const ScalarField& f, double ds);
ScalarField ddy(const ScalarField& f, double ds);

/// Forward difference (c[t+1] - c[t]) / dt; requires at least two frames.
std::vector<ScalarField> ddt(const std::vector<ScalarField>& series, double dt);

ScalarField divergence(const VectorField& v, double ds);

/// Central-difference divergence of the flux c * u.
ScalarField advective_flux_div(const ScalarField& c, const VectorField& u, double ds);

/// kx * d2c/dx2 + ky * d2c/dy2 with the 3-point stencil.
ScalarField diffusion_term(const ScalarField& c, DiffusionCoefficients k, double ds);

struct PhysicsErrors {
  double eps_advdiff = 0.0;
  double eps_div = 0.0;
  // Time-averaged squared residuals per pixel.
  ScalarField advdiff_map;
  ScalarField div_map;
};

/// Mean-squared residuals of the advection-diffusion equation and of the
/// incompressibility constraint over an HR (u, v, c) sequence in physical units.
/// The advection-diffusion residual at frame t uses c[t], u[t] and the forward
/// difference to c[t+1]. Requires frames >= 2 and q.n == yhat.n().
PhysicsErrors physics_errors(const FieldSequence& yhat, DiffusionCoefficients k,
                             const ScalarField& q, const StencilSpec& stencil);

double mean_square(const ScalarField& f);

}  // namespace s3rp::diffops
