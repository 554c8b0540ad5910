#include "s3rp/windgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "s3rp/diffops.hpp"
#include "s3rp/error.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::windgen {

void WindConfig::validate() const {
  require(n_modes >= 1, ErrorCode::config, "wind.n_modes must be >= 1");
  require(dt > 0.0, ErrorCode::config, "wind.dt must be > 0");
  require(n_steps >= 2, ErrorCode::config, "wind.n_steps must be >= 2");
  require(tau0 > 0.0, ErrorCode::config, "wind.tau0 must be > 0");
  require(amplitude >= 0.0, ErrorCode::config, "wind.amplitude must be >= 0");
  require(courant_target >= 0.0 && courant_target <= 1.0, ErrorCode::config,
          "wind.courant_target must lie in [0, 1]");
  require(std::isfinite(energy_slope) && std::isfinite(tau_scaling), ErrorCode::config,
          "wind spectral exponents must be finite");
  for (const auto& k : modes)
    require(k[0] != 0 || k[1] != 0, ErrorCode::config, "wind mode (0, 0) is not allowed");
}

WindField::WindField(GridSpec grid, int frames)
    : grid_(grid), frames_(frames),
      u_(static_cast<std::size_t>(frames) * grid.n_hr() * grid.n_hr() * 2, 0.0) {}

VectorField WindField::frame(int t) const {
  VectorField v(n());
  const auto begin = u_.begin() + static_cast<std::ptrdiff_t>(index(t, 0, 0, 0));
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(v.values.size()), v.values.begin());
  return v;
}

void WindField::set_frame(int t, const VectorField& v) {
  require(v.n == n(), ErrorCode::data, "wind frame size mismatch");
  std::copy(v.values.begin(), v.values.end(),
            u_.begin() + static_cast<std::ptrdiff_t>(index(t, 0, 0, 0)));
}

std::vector<std::array<int, 2>> active_modes(const WindConfig& cfg) {
  if (!cfg.modes.empty()) return cfg.modes;
  std::vector<std::array<int, 2>> out;
  for (int ky = 0; ky <= cfg.n_modes; ++ky)
    for (int kx = -cfg.n_modes; kx <= cfg.n_modes; ++kx)
      if (ky > 0 || kx > 0) out.push_back({kx, ky});
  return out;
}

std::vector<ScalarField> sample_streamfunction(const WindConfig& cfg, const GridSpec& grid) {
  cfg.validate();
  grid.validate();
  const int n = grid.n_hr();
  const auto modes = active_modes(cfg);

  struct Mode {
    int kx, ky;
    double sigma, rho;
    double a, b;
  };
  NoiseSource rng(cfg.seed);
  std::vector<Mode> state;
  for (const auto& k : modes) {
    const double mag = std::hypot(k[0], k[1]);
    const double sigma = cfg.amplitude * std::pow(mag, -0.5 * cfg.energy_slope);
    const double tau = cfg.tau0 * std::pow(mag, -cfg.tau_scaling);
    Mode m{k[0], k[1], sigma, std::exp(-cfg.dt / tau), 0.0, 0.0};
    m.a = sigma * rng.normal();
    m.b = sigma * rng.normal();
    state.push_back(m);
  }

  // Per-axis phase tables: theta = 2 pi k x / L at cell centres.
  const double two_pi = 2.0 * std::numbers::pi;
  auto table = [&](int k, bool sine) {
    std::vector<double> t(n);
    for (int j = 0; j < n; ++j) {
      const double theta = two_pi * k * (j + 0.5) / n;
      t[j] = sine ? std::sin(theta) : std::cos(theta);
    }
    return t;
  };
  struct Tables {
    std::vector<double> cx, sx, cy, sy;
  };
  std::vector<Tables> tables;
  for (const auto& m : state)
    tables.push_back({table(m.kx, false), table(m.kx, true), table(m.ky, false), table(m.ky, true)});

  std::vector<ScalarField> psi;
  psi.reserve(cfg.n_steps);
  for (int t = 0; t < cfg.n_steps; ++t) {
    if (t > 0) {
      for (auto& m : state) {
        const double kick = m.sigma * std::sqrt(1.0 - m.rho * m.rho);
        m.a = m.rho * m.a + kick * rng.normal();
        m.b = m.rho * m.b + kick * rng.normal();
      }
    }
    ScalarField f(n);
    for (std::size_t q = 0; q < state.size(); ++q) {
      const auto& m = state[q];
      const auto& tb = tables[q];
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double c = tb.cx[j] * tb.cy[i] - tb.sx[j] * tb.sy[i];
          const double s = tb.sx[j] * tb.cy[i] + tb.cx[j] * tb.sy[i];
          f(i, j) += m.a * c + m.b * s;
        }
    }
    psi.push_back(std::move(f));
  }
  return psi;
}

WindField wind_from_streamfunction(const std::vector<ScalarField>& psi, const GridSpec& grid) {
  grid.validate();
  const int n = grid.n_hr();
  const double ds = grid.spacing_hr();
  WindField wind(grid, static_cast<int>(psi.size()));
  for (std::size_t t = 0; t < psi.size(); ++t) {
    require(psi[t].n == n, ErrorCode::data, "streamfunction does not match the HR grid");
    for (double v : psi[t].values)
      require(std::isfinite(v), ErrorCode::data, "non-finite streamfunction value");
    const ScalarField dpx = diffops::ddx(psi[t], ds);
    const ScalarField dpy = diffops::ddy(psi[t], ds);
    VectorField v(n);
    for (std::size_t p = 0; p < dpx.values.size(); ++p) {
      v.values[2 * p] = dpy.values[p];
      v.values[2 * p + 1] = -dpx.values[p];
    }
    wind.set_frame(static_cast<int>(t), v);
  }
  return wind;
}

WindField generate_wind(const WindConfig& cfg, const GridSpec& grid) {
  WindField wind = wind_from_streamfunction(sample_streamfunction(cfg, grid), grid);
  if (cfg.courant_target > 0.0) {
    double max_speed = 0.0;
    const auto& u = wind.data();
    for (std::size_t p = 0; p < u.size(); p += 2)
      max_speed = std::max(max_speed, std::hypot(u[p], u[p + 1]));
    if (max_speed > 0.0) {
      const double scale = cfg.courant_target * grid.spacing_hr() / (cfg.dt * max_speed);
      for (double& v : wind.data()) v *= scale;
    }
  }
  return wind;
}

double relative_divergence(const WindField& wind) {
  double worst = 0.0;
  for (int t = 0; t < wind.frames(); ++t) {
    const VectorField u = wind.frame(t);
    const double div = std::sqrt(diffops::mean_square(diffops::divergence(u, wind.grid().spacing_hr())));
    double speed2 = 0.0;
    for (double v : u.values) speed2 += v * v;
    const double rms = std::sqrt(speed2 / (static_cast<double>(u.n) * u.n));
    if (rms > 0.0) worst = std::max(worst, div / rms);
  }
  return worst;
}

}  // namespace s3rp::windgen
