#include "s3rp/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "s3rp/error.hpp"

namespace s3rp {

double NoiseSource::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double NoiseSource::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void NoiseSource::fill_normal(std::span<double> out) {
  for (double& v : out) v = normal();
}

std::vector<double> NoiseSource::normals(std::size_t count) {
  std::vector<double> out(count);
  fill_normal(out);
  return out;
}

std::uint64_t NoiseSource::below(std::uint64_t bound) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

std::string NoiseSource::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void NoiseSource::set_state(const std::string& text) {
  std::istringstream is(text);
  is >> engine_;
  require(!is.fail(), ErrorCode::corrupt, "unreadable RNG state");
}

NoiseSource NoiseSource::derive(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x53335250u};
  std::uint64_t s = 0;
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  s = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return NoiseSource(s);
}

}  // namespace s3rp
