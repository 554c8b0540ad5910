#include "s3rp/diffops.hpp"

#include <cmath>
#include <string>

#include "s3rp/error.hpp"

namespace s3rp::diffops {

void StencilSpec::validate() const {
  require(ds > 0.0 && dt > 0.0, ErrorCode::config, "stencil spacing and time step must be > 0");
}

ScalarField ddx(const ScalarField& f, double ds) {
  const int n = f.n;
  ScalarField out(n);
  const double inv = 1.0 / (2.0 * ds);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = (f(i, wrap(j + 1, n)) - f(i, wrap(j - 1, n))) * inv;
  return out;
}

ScalarField ddy(const ScalarField& f, double ds) {
  const int n = f.n;
  ScalarField out(n);
  const double inv = 1.0 / (2.0 * ds);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = (f(wrap(i + 1, n), j) - f(wrap(i - 1, n), j)) * inv;
  return out;
}

std::vector<ScalarField> ddt(const std::vector<ScalarField>& series, double dt) {
  require(series.size() >= 2, ErrorCode::data, "ddt needs at least two frames");
  std::vector<ScalarField> out;
  out.reserve(series.size() - 1);
  for (std::size_t t = 0; t + 1 < series.size(); ++t) {
    require(series[t].n == series[t + 1].n, ErrorCode::data, "ddt frame size mismatch");
    ScalarField d(series[t].n);
    for (std::size_t k = 0; k < d.values.size(); ++k)
      d.values[k] = (series[t + 1].values[k] - series[t].values[k]) / dt;
    out.push_back(std::move(d));
  }
  return out;
}

ScalarField divergence(const VectorField& v, double ds) {
  const int n = v.n;
  ScalarField out(n);
  const double inv = 1.0 / (2.0 * ds);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dux = v(i, wrap(j + 1, n), 0) - v(i, wrap(j - 1, n), 0);
      const double dvy = v(wrap(i + 1, n), j, 1) - v(wrap(i - 1, n), j, 1);
      out(i, j) = dux * inv + dvy * inv;
    }
  return out;
}

ScalarField advective_flux_div(const ScalarField& c, const VectorField& u, double ds) {
  require(c.n == u.n, ErrorCode::data, "advective_flux_div size mismatch");
  VectorField flux(c.n);
  for (std::size_t k = 0; k < c.values.size(); ++k) {
    flux.values[2 * k] = c.values[k] * u.values[2 * k];
    flux.values[2 * k + 1] = c.values[k] * u.values[2 * k + 1];
  }
  return divergence(flux, ds);
}

ScalarField diffusion_term(const ScalarField& c, DiffusionCoefficients k, double ds) {
  require(k.kx >= 0.0 && k.ky >= 0.0, ErrorCode::data, "diffusivities must be >= 0");
  const int n = c.n;
  ScalarField out(n);
  const double inv = 1.0 / (ds * ds);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double cxx = c(i, wrap(j + 1, n)) - 2.0 * c(i, j) + c(i, wrap(j - 1, n));
      const double cyy = c(wrap(i + 1, n), j) - 2.0 * c(i, j) + c(wrap(i - 1, n), j);
      out(i, j) = k.kx * cxx * inv + k.ky * cyy * inv;
    }
  return out;
}

double mean_square(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) s += v * v;
  return f.values.empty() ? 0.0 : s / static_cast<double>(f.values.size());
}

PhysicsErrors physics_errors(const FieldSequence& yhat, DiffusionCoefficients k,
                             const ScalarField& q, const StencilSpec& stencil) {
  stencil.validate();
  require(yhat.channels() == FieldSequence::kChannels, ErrorCode::evaluation,
          "physics errors need (u, v, c) frames");
  require(yhat.frames() >= 2, ErrorCode::evaluation, "physics errors need at least two frames");
  require(q.n == yhat.n(), ErrorCode::evaluation, "source field does not match the HR grid");

  const int n = yhat.n();
  PhysicsErrors out;
  out.advdiff_map = ScalarField(n);
  out.div_map = ScalarField(n);

  for (int t = 0; t < yhat.frames(); ++t) {
    const VectorField u = yhat.wind(t);
    const ScalarField div = divergence(u, stencil.ds);
    for (std::size_t p = 0; p < div.values.size(); ++p)
      out.div_map.values[p] += div.values[p] * div.values[p];

    if (t + 1 == yhat.frames()) continue;
    const ScalarField c = yhat.channel(t, FieldSequence::kC);
    const ScalarField c_next = yhat.channel(t + 1, FieldSequence::kC);
    const ScalarField adv = advective_flux_div(c, u, stencil.ds);
    const ScalarField dif = diffusion_term(c, k, stencil.ds);
    for (std::size_t p = 0; p < c.values.size(); ++p) {
      const double r = (c_next.values[p] - c.values[p]) / stencil.dt + adv.values[p] -
                       dif.values[p] - q.values[p];
      out.advdiff_map.values[p] += r * r;
    }
  }

  const double pixels = static_cast<double>(n) * n;
  double adv_sum = 0.0, div_sum = 0.0;
  for (std::size_t p = 0; p < out.div_map.values.size(); ++p) {
    adv_sum += out.advdiff_map.values[p];
    div_sum += out.div_map.values[p];
    out.advdiff_map.values[p] /= (yhat.frames() - 1);
    out.div_map.values[p] /= yhat.frames();
  }
  out.eps_advdiff = adv_sum / (pixels * (yhat.frames() - 1));
  out.eps_div = div_sum / (pixels * yhat.frames());
  return out;
}

}  // namespace s3rp::diffops
