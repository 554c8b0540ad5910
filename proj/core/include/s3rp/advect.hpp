#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "s3rp/diffops.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/windgen.hpp"

namespace s3rp::advect {

using diffops::DiffusionCoefficients;

enum class Limiter {
  van_leer,  // second-order flux-limited upwind (default)
  none,      // first-order upwind; linear in c
};

struct SimConfig {
  GridSpec grid;
  windgen::WindConfig wind;
  DiffusionCoefficients k_diag{3e-4, 3e-4};
  /// Source centres in domain coordinates; empty selects the 4x4 lattice.
  std::vector<std::array<double, 2>> source_locations;
  double emission_rate = 1.0;
  /// Gaussian source width in HR cells.
  double source_sigma_cells = 2.0;
  double dt = 0.01;
  int n_steps = 150;
  std::uint64_t seed = 0;
  Limiter limiter = Limiter::van_leer;

  void validate() const;
  /// Resolved source centres (the 4x4 lattice when none are configured).
  std::vector<std::array<double, 2>> sources() const;
};

/// 4 x 4 lattice of source centres at ((i + 0.5) / 4, (j + 0.5) / 4) * domain.
std::vector<std::array<double, 2>> default_sources(const GridSpec& grid);

/// Concentration frames [T, N, N].
class ConcentrationField {
 public:
  ConcentrationField() = default;
  ConcentrationField(GridSpec grid, int frames);

  const GridSpec& grid() const { return grid_; }
  int frames() const { return frames_; }
  int n() const { return grid_.n_hr(); }

  ScalarField frame(int t) const;
  void set_frame(int t, const ScalarField& c);
  std::span<const double> frame_view(int t) const;

  std::vector<double>& data() { return c_; }
  const std::vector<double>& data() const { return c_; }

 private:
  GridSpec grid_;
  int frames_ = 0;
  std::vector<double> c_;
};

struct SimRecord {
  windgen::WindField wind;
  std::vector<ConcentrationField> per_source_c;
  DiffusionCoefficients k_diag;
  std::vector<std::array<double, 2>> sources;
  double emission_rate = 0.0;
  double source_sigma_cells = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 0;

  int frames() const { return per_source_c.empty() ? 0 : per_source_c.front().frames(); }
  const GridSpec& grid() const { return wind.grid(); }
};

/// Normalised Gaussian blob with integral emission_rate (sum * ds^2).
ScalarField source_field(const GridSpec& grid, std::array<double, 2> centre, double sigma_cells,
                         double emission_rate);

/// Weighted sum of the per-source blobs of a record.
ScalarField combined_source(const SimRecord& record, std::span<const double> weights);

/// Throws ErrorCode::stability unless max|u| dt / ds <= 1 and max(k) dt / ds^2 <= 0.25.
void check_stability(const VectorField& u, DiffusionCoefficients k, double dt, double ds);

/// One explicit step of dc/dt + div(c u) = div(K grad c) + Q in flux form with
/// periodic boundaries: face velocities are averages of the adjacent cell
/// velocities, face values are van-Leer limited upwind reconstructions.
ScalarField step_concentration(const ScalarField& c, const VectorField& u,
                               DiffusionCoefficients k, const ScalarField& q, double dt,
                               double ds, Limiter limiter = Limiter::van_leer);

/// One ConcentrationField per source, each from a zero initial state, frames
/// 0..n_steps (frame t + 1 is produced with wind frame t). `jobs` > 1 runs the
/// sources on worker threads; results do not depend on it.
SimRecord simulate_sources(const SimConfig& cfg, const windgen::WindField& wind, int jobs = 1);

/// Frame-wise weighted sum; throws ErrorCode::data on length mismatch or
/// negative / non-finite weights.
ConcentrationField superpose(const std::vector<ConcentrationField>& per_source_c,
                             std::span<const double> weights);

}  // namespace s3rp::advect
