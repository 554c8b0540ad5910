#include "s3rp/grid.hpp"

#include <algorithm>
#include <cmath>

#include "s3rp/error.hpp"

namespace s3rp {

void GridSpec::validate() const {
  require(n_lr >= 1, ErrorCode::config, "grid.n_lr must be >= 1");
  require(ratio >= 2, ErrorCode::config, "grid.ratio must be an integer >= 2");
  require(domain_size > 0.0 && std::isfinite(domain_size), ErrorCode::config,
          "grid.domain_size must be positive");
}

FieldSequence::FieldSequence(Resolution res, int frames, int n, int channels)
    : res_(res), frames_(frames), n_(n), channels_(channels) {
  require(frames >= 0 && n >= 1 && channels >= 1, ErrorCode::data, "invalid sequence shape");
  data_.assign(static_cast<std::size_t>(frames) * frame_size(), 0.0);
}

FieldSequence FieldSequence::slice(int begin, int count) const {
  require(begin >= 0 && count >= 0 && begin + count <= frames_, ErrorCode::data,
          "slice out of range");
  FieldSequence out(res_, count, n_, channels_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
            data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * frame_size()),
            out.data_.begin());
  return out;
}

ScalarField FieldSequence::channel(int t, int ch) const {
  ScalarField f(n_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) f(i, j) = at(t, i, j, ch);
  return f;
}

VectorField FieldSequence::wind(int t) const {
  VectorField v(n_);
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < n_; ++j) {
      v(i, j, 0) = at(t, i, j, kU);
      v(i, j, 1) = at(t, i, j, kV);
    }
  return v;
}

void FieldSequence::validate() const {
  for (std::size_t k = 0; k < data_.size(); ++k) {
    require(std::isfinite(data_[k]), ErrorCode::data, "non-finite value in field sequence");
    if (channels_ == kChannels && static_cast<int>(k % channels_) == kC)
      require(data_[k] >= -1e-12, ErrorCode::data, "negative concentration in field sequence");
  }
}

}  // namespace s3rp
