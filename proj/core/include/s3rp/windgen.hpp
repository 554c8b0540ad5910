#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "s3rp/grid.hpp"

namespace s3rp::windgen {

/// Multiscale stochastic wind: the streamfunction is a sum of periodic Fourier
/// modes whose cosine/sine amplitudes are independent Ornstein-Uhlenbeck
/// processes, started from their stationary law.
///
/// Mode k has stationary variance amplitude^2 * |k|^-energy_slope and
/// relaxation time tau0 * |k|^-tau_scaling.
struct WindConfig {
  int n_modes = 3;
  double energy_slope = 5.0;
  double tau_scaling = 2.0 / 3.0;
  double tau0 = 0.5;
  double amplitude = 1.0;
  double dt = 0.01;
  int n_steps = 151;
  std::uint64_t seed = 0;
  /// Target for max |u| * dt / ds_hr after rescaling; 0 keeps the raw velocity.
  double courant_target = 0.5;
  /// Explicit mode list (kx, ky); empty selects every mode with
  /// max(|kx|, |ky|) <= n_modes in the upper half plane.
  std::vector<std::array<int, 2>> modes;

  void validate() const;
};

class WindField {
 public:
  WindField() = default;
  WindField(GridSpec grid, int frames);

  const GridSpec& grid() const { return grid_; }
  int frames() const { return frames_; }
  int n() const { return grid_.n_hr(); }

  double& at(int t, int i, int j, int k) { return u_[index(t, i, j, k)]; }
  double at(int t, int i, int j, int k) const { return u_[index(t, i, j, k)]; }

  VectorField frame(int t) const;
  void set_frame(int t, const VectorField& v);

  std::vector<double>& data() { return u_; }
  const std::vector<double>& data() const { return u_; }

 private:
  std::size_t index(int t, int i, int j, int k) const {
    const std::size_t n = static_cast<std::size_t>(grid_.n_hr());
    return ((static_cast<std::size_t>(t) * n + i) * n + j) * 2 + k;
  }

  GridSpec grid_;
  int frames_ = 0;
  std::vector<double> u_;
};

/// The mode set implied by cfg.
std::vector<std::array<int, 2>> active_modes(const WindConfig& cfg);

/// Streamfunction frames on the HR mesh; bit-identical for identical (cfg, grid).
std::vector<ScalarField> sample_streamfunction(const WindConfig& cfg, const GridSpec& grid);

/// u = (dpsi/dy, -dpsi/dx) with the central periodic stencil, so the discrete
/// central divergence vanishes up to round-off. Throws ErrorCode::data on
/// non-finite input.
WindField wind_from_streamfunction(const std::vector<ScalarField>& psi, const GridSpec& grid);

/// sample_streamfunction + wind_from_streamfunction + Courant rescaling.
WindField generate_wind(const WindConfig& cfg, const GridSpec& grid);

/// Max over frames of RMS(div u) / RMS(|u|) (0 for a zero field).
double relative_divergence(const WindField& wind);

}  // namespace s3rp::windgen
