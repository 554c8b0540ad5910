#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace s3rp {

/// HR/LR mesh pair on a periodic square domain [origin, origin + domain_size)^2.
///
/// Both meshes are cell-centred: HR point J sits at origin + (J + 0.5) * spacing_hr(),
/// LR point j at origin + (j + 0.5) * spacing_lr(), i.e. at the centroid of its
/// ratio x ratio HR block.
struct GridSpec {
  int n_lr = 16;
  int ratio = 8;
  double domain_size = 1.0;
  double origin = 0.0;

  int n_hr() const { return n_lr * ratio; }
  double spacing_hr() const { return domain_size / n_hr(); }
  double spacing_lr() const { return domain_size / n_lr; }

  /// Throws ErrorCode::config unless ratio >= 2, n_lr >= 1 and domain_size > 0.
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

enum class Resolution { hr, lr };

/// Row-major [N, N] scalar field; index (i, j) = (row/y, column/x).
struct ScalarField {
  int n = 0;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(int size, double fill = 0.0)
      : n(size), values(static_cast<std::size_t>(size) * size, fill) {}

  double& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
};

/// Row-major [N, N, 2] vector field, component 0 = x velocity, 1 = y velocity.
struct VectorField {
  int n = 0;
  std::vector<double> values;

  VectorField() = default;
  explicit VectorField(int size, double fill = 0.0)
      : n(size), values(static_cast<std::size_t>(size) * size * 2, fill) {}

  double& operator()(int i, int j, int k) {
    return values[(static_cast<std::size_t>(i) * n + j) * 2 + k];
  }
  double operator()(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(i) * n + j) * 2 + k];
  }
};

/// Time series of multi-channel square fields stored [T, N, N, C] row-major.
/// The toolkit uses C = 3 with channel order (u, v, c).
class FieldSequence {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kU = 0;
  static constexpr int kV = 1;
  static constexpr int kC = 2;

  FieldSequence() = default;
  FieldSequence(Resolution res, int frames, int n, int channels = kChannels);

  Resolution resolution() const { return res_; }
  int frames() const { return frames_; }
  int n() const { return n_; }
  int channels() const { return channels_; }
  std::size_t frame_size() const { return static_cast<std::size_t>(n_) * n_ * channels_; }

  double& at(int t, int i, int j, int ch) { return data_[index(t, i, j, ch)]; }
  double at(int t, int i, int j, int ch) const { return data_[index(t, i, j, ch)]; }

  std::span<double> frame(int t) { return {data_.data() + t * frame_size(), frame_size()}; }
  std::span<const double> frame(int t) const {
    return {data_.data() + t * frame_size(), frame_size()};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  /// Copies frames [begin, begin + count).
  FieldSequence slice(int begin, int count) const;

  /// Extracts one channel of frame t as a scalar field.
  ScalarField channel(int t, int ch) const;
  /// Extracts the (u, v) channels of frame t.
  VectorField wind(int t) const;

  /// Throws ErrorCode::data if any value is non-finite or, for 3-channel
  /// sequences, the concentration channel drops below -1e-12.
  void validate() const;

  bool operator==(const FieldSequence&) const = default;

 private:
  std::size_t index(int t, int i, int j, int ch) const {
    return ((static_cast<std::size_t>(t) * n_ + i) * n_ + j) * channels_ + ch;
  }

  Resolution res_ = Resolution::hr;
  int frames_ = 0;
  int n_ = 0;
  int channels_ = kChannels;
  std::vector<double> data_;
};

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

}  // namespace s3rp
