#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace s3rp {

/// Deterministic source of uniform and unit-normal variates.
///
/// Wraps std::mt19937_64 (whose output sequence is fixed by the standard) and
/// converts to doubles by hand, so streams are reproducible across standard
/// libraries. Normals use Box-Muller without caching the second variate, which
/// keeps the complete generator state in the engine and makes it serializable.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // [0, 1)
  double normal();
  void fill_normal(std::span<double> out);
  std::vector<double> normals(std::size_t count);
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

  std::string state() const;
  void set_state(const std::string& text);

  /// Independent child stream, e.g. one per Monte-Carlo rollout.
  static NoiseSource derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace s3rp
