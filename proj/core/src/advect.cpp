#include "s3rp/advect.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "s3rp/error.hpp"

namespace s3rp::advect {
namespace {

// Limited slope for the van Leer limiter in terms of the upwind-side and
// downwind-side differences.
inline double van_leer_slope(double upwind, double downwind) {
  const double prod = upwind * downwind;
  return prod > 0.0 ? 2.0 * prod / (upwind + downwind) : 0.0;
}

}  // namespace

void SimConfig::validate() const {
  grid.validate();
  wind.validate();
  require(k_diag.kx >= 0.0 && k_diag.ky >= 0.0, ErrorCode::config, "sim.k_diag must be >= 0");
  require(dt > 0.0, ErrorCode::config, "sim.dt must be > 0");
  require(n_steps >= 1, ErrorCode::config, "sim.n_steps must be >= 1");
  require(emission_rate >= 0.0, ErrorCode::config, "sim.emission_rate must be >= 0");
  require(source_sigma_cells > 0.0, ErrorCode::config, "sim.source_sigma_cells must be > 0");
  const double ds = grid.spacing_hr();
  require(std::max(k_diag.kx, k_diag.ky) * dt / (ds * ds) <= 0.25, ErrorCode::stability,
          "diffusion number max(k) dt / ds^2 exceeds 0.25");
  for (const auto& s : sources()) {
    require(s[0] >= grid.origin && s[0] < grid.origin + grid.domain_size &&
                s[1] >= grid.origin && s[1] < grid.origin + grid.domain_size,
            ErrorCode::config, "source location outside the domain");
  }
}

std::vector<std::array<double, 2>> default_sources(const GridSpec& grid) {
  std::vector<std::array<double, 2>> out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      out.push_back({grid.origin + (j + 0.5) / 4.0 * grid.domain_size,
                     grid.origin + (i + 0.5) / 4.0 * grid.domain_size});
  return out;
}

std::vector<std::array<double, 2>> SimConfig::sources() const {
  return source_locations.empty() ? default_sources(grid) : source_locations;
}

ConcentrationField::ConcentrationField(GridSpec grid, int frames)
    : grid_(grid), frames_(frames),
      c_(static_cast<std::size_t>(frames) * grid.n_hr() * grid.n_hr(), 0.0) {}

ScalarField ConcentrationField::frame(int t) const {
  ScalarField f(n());
  const auto view = frame_view(t);
  std::copy(view.begin(), view.end(), f.values.begin());
  return f;
}

std::span<const double> ConcentrationField::frame_view(int t) const {
  const std::size_t size = static_cast<std::size_t>(n()) * n();
  return {c_.data() + t * size, size};
}

void ConcentrationField::set_frame(int t, const ScalarField& c) {
  require(c.n == n(), ErrorCode::data, "concentration frame size mismatch");
  std::copy(c.values.begin(), c.values.end(),
            c_.begin() + static_cast<std::ptrdiff_t>(t * c.values.size()));
}

ScalarField source_field(const GridSpec& grid, std::array<double, 2> centre, double sigma_cells,
                         double emission_rate) {
  const int n = grid.n_hr();
  const double ds = grid.spacing_hr();
  const double sigma = sigma_cells * ds;
  const double L = grid.domain_size;
  ScalarField q(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = grid.origin + (j + 0.5) * ds;
      const double y = grid.origin + (i + 0.5) * ds;
      // Minimum-image distance on the periodic domain.
      double dx = std::remainder(x - centre[0], L);
      double dy = std::remainder(y - centre[1], L);
      q(i, j) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += q(i, j);
    }
  const double scale = total > 0.0 ? emission_rate / (total * ds * ds) : 0.0;
  for (double& v : q.values) v *= scale;
  return q;
}

ScalarField combined_source(const SimRecord& record, std::span<const double> weights) {
  require(weights.size() == record.sources.size(), ErrorCode::data,
          "weight count does not match source count");
  ScalarField q(record.grid().n_hr());
  for (std::size_t s = 0; s < weights.size(); ++s) {
    const ScalarField blob =
        source_field(record.grid(), record.sources[s], record.source_sigma_cells, record.emission_rate);
    for (std::size_t p = 0; p < q.values.size(); ++p) q.values[p] += weights[s] * blob.values[p];
  }
  return q;
}

void check_stability(const VectorField& u, DiffusionCoefficients k, double dt, double ds) {
  double umax = 0.0;
  for (double v : u.values) umax = std::max(umax, std::abs(v));
  require(umax * dt / ds <= 1.0, ErrorCode::stability,
          "advective Courant number " + std::to_string(umax * dt / ds) + " exceeds 1");
  require(std::max(k.kx, k.ky) * dt / (ds * ds) <= 0.25, ErrorCode::stability,
          "diffusion number exceeds 0.25");
}

ScalarField step_concentration(const ScalarField& c, const VectorField& u,
                               DiffusionCoefficients k, const ScalarField& q, double dt,
                               double ds, Limiter limiter) {
  const int n = c.n;
  require(u.n == n && q.n == n, ErrorCode::data, "step_concentration size mismatch");
  check_stability(u, k, dt, ds);
  const bool limited = limiter == Limiter::van_leer;

  std::vector<int> prev(n), next(n), next2(n);
  for (int j = 0; j < n; ++j) {
    prev[j] = wrap(j - 1, n);
    next[j] = wrap(j + 1, n);
    next2[j] = wrap(j + 2, n);
  }

  // Flux through the face between cell a and cell b = a + 1 along one axis,
  // given the upstream-of-a value am and downstream-of-b value bp.
  auto face_flux = [&](double vel, double am, double a, double b, double bp) {
    const double nu = std::abs(vel) * dt / ds;
    double face;
    if (vel >= 0.0) {
      face = a;
      if (limited) face += 0.5 * (1.0 - nu) * van_leer_slope(a - am, b - a);
    } else {
      face = b;
      if (limited) face += 0.5 * (1.0 - nu) * van_leer_slope(b - bp, a - b);
    }
    return vel * face;
  };

  // fx(i, j): flux through the east face of cell (i, j); fy(i, j): north face.
  ScalarField fx(n), fy(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double ue = 0.5 * (u(i, j, 0) + u(i, next[j], 0));
      fx(i, j) = face_flux(ue, c(i, prev[j]), c(i, j), c(i, next[j]), c(i, next2[j]));
      const double vn = 0.5 * (u(i, j, 1) + u(next[i], j, 1));
      fy(i, j) = face_flux(vn, c(prev[i], j), c(i, j), c(next[i], j), c(next2[i], j));
    }

  const double rx = k.kx * dt / (ds * ds);
  const double ry = k.ky * dt / (ds * ds);
  const double lam = dt / ds;
  ScalarField out(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double adv = (fx(i, j) - fx(i, prev[j])) + (fy(i, j) - fy(prev[i], j));
      const double dif = rx * (c(i, next[j]) - 2.0 * c(i, j) + c(i, prev[j])) +
                         ry * (c(next[i], j) - 2.0 * c(i, j) + c(prev[i], j));
      out(i, j) = c(i, j) - lam * adv + dif + dt * q(i, j);
    }
  return out;
}

SimRecord simulate_sources(const SimConfig& cfg, const windgen::WindField& wind, int jobs) {
  cfg.validate();
  require(wind.grid() == cfg.grid, ErrorCode::data, "wind grid differs from simulation grid");
  require(wind.frames() >= cfg.n_steps, ErrorCode::data,
          "wind has fewer frames than simulation steps");

  SimRecord rec;
  rec.wind = wind;
  rec.k_diag = cfg.k_diag;
  rec.sources = cfg.sources();
  rec.emission_rate = cfg.emission_rate;
  rec.source_sigma_cells = cfg.source_sigma_cells;
  rec.dt = cfg.dt;
  rec.seed = cfg.seed;

  const double ds = cfg.grid.spacing_hr();
  std::vector<VectorField> frames;
  frames.reserve(cfg.n_steps);
  for (int t = 0; t < cfg.n_steps; ++t) {
    frames.push_back(wind.frame(t));
    check_stability(frames.back(), cfg.k_diag, cfg.dt, ds);
  }

  const std::size_t n_sources = rec.sources.size();
  rec.per_source_c.assign(n_sources, ConcentrationField(cfg.grid, cfg.n_steps + 1));
  auto run = [&](std::size_t s) {
    const ScalarField q = source_field(cfg.grid, rec.sources[s], cfg.source_sigma_cells,
                                       cfg.emission_rate);
    ScalarField c(cfg.grid.n_hr());
    for (int t = 0; t < cfg.n_steps; ++t) {
      c = step_concentration(c, frames[t], cfg.k_diag, q, cfg.dt, ds, cfg.limiter);
      rec.per_source_c[s].set_frame(t + 1, c);
    }
  };

  const int workers = std::clamp(jobs, 1, static_cast<int>(n_sources));
  if (workers == 1) {
    for (std::size_t s = 0; s < n_sources; ++s) run(s);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t s = w; s < n_sources; s += workers) run(s);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return rec;
}

ConcentrationField superpose(const std::vector<ConcentrationField>& per_source_c,
                             std::span<const double> weights) {
  require(!per_source_c.empty(), ErrorCode::data, "nothing to superpose");
  require(per_source_c.size() == weights.size(), ErrorCode::data,
          "weight count does not match field count");
  for (double w : weights)
    require(std::isfinite(w) && w >= 0.0, ErrorCode::data, "weights must be finite and >= 0");
  const auto& first = per_source_c.front();
  ConcentrationField out(first.grid(), first.frames());
  for (std::size_t s = 0; s < per_source_c.size(); ++s) {
    require(per_source_c[s].frames() == first.frames() && per_source_c[s].grid() == first.grid(),
            ErrorCode::data, "per-source fields differ in shape");
    const auto& src = per_source_c[s].data();
    auto& dst = out.data();
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += weights[s] * src[p];
  }
  return out;
}

}  // namespace s3rp::advect
