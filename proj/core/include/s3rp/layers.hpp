#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s3rp/autodiff.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::nn {

using ad::Shape;
using ad::Var;

/// Ordered, named collection of trainable tensors.
class ParameterStore {
 public:
  Var add(const std::string& name, Shape shape, std::vector<double> init);

  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  const Var& get(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

/// Uniform(-bound, bound) with bound = gain / sqrt(fan_in).
std::vector<double> uniform_init(NoiseSource& rng, std::size_t count, int fan_in, double gain = 1.0);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int cin, int cout, int k,
         NoiseSource& rng, double gain = 1.0);
  Var operator()(const Var& x) const { return ad::conv2d(x, w_, b_); }
  int out_channels() const { return cout_; }
  const Var& weight() const { return w_; }

 private:
  Var w_, b_;
  int cout_ = 0;
};

/// Kernel-4, stride-2 transposed convolution doubling the spatial size.
class ConvTranspose2x {
 public:
  ConvTranspose2x() = default;
  ConvTranspose2x(ParameterStore& store, const std::string& name, int cin, int cout,
                  NoiseSource& rng);
  Var operator()(const Var& x) const { return ad::conv_transpose2x(x, w_, b_); }

 private:
  Var w_, b_;
};

struct LstmState {
  Var h, c;
  bool defined() const { return h.defined(); }
};

/// Convolutional LSTM cell: gates from one convolution over [x, h].
class ConvLstmCell {
 public:
  ConvLstmCell() = default;
  ConvLstmCell(ParameterStore& store, const std::string& name, int cin, int hidden, int k,
               NoiseSource& rng);
  /// Advances `state` (zero-initialised when undefined) and returns the new h.
  Var step(const Var& x, LstmState& state) const;
  int hidden() const { return hidden_; }

 private:
  Conv2d gates_;
  int hidden_ = 0;
};

/// Index pairs (p, q) of the derivatives d^p/dx^p d^q/dy^q with p + q <= order,
/// in order of increasing total degree.
std::vector<std::pair<int, int>> derivative_orders(int order);

/// Discrete moments of an s x s kernel: m_pq = sum w[b, a] a^p b^q / (p! q!),
/// with a, b the x and y offsets from the centre, for every (p, q) of
/// derivative_orders(order).
std::vector<double> kernel_moments(const double* w, int s, int order);

/// Physics cell: h~ = h + mix(bank * h), h' = h~ + G (e - h~), G = sigmoid(conv([h~, e])).
/// Each bank kernel d is constrained so that its moments equal the one-hot
/// signature of derivative_orders(order)[d].
class PhyCell {
 public:
  PhyCell() = default;
  PhyCell(ParameterStore& store, const std::string& name, int channels, int kernel, int order,
          int gate_kernel, NoiseSource& rng);
  Var step(const Var& h, const Var& e) const;
  /// Physical prediction h~ only.
  Var predict(const Var& h) const;
  Var correct(const Var& h_tilde, const Var& e) const;

  /// Orthogonal projection of the bank onto the constraint set.
  void project();
  /// Largest absolute deviation of any constrained moment from its target.
  double max_violation() const;
  const Var& bank() const { return bank_; }
  Var& mutable_bank() { return bank_; }
  int order() const { return order_; }

 private:
  Var bank_;
  Conv2d mix_, gate_;
  int kernel_ = 0, order_ = 0, n_kernels_ = 0;
  std::vector<double> projector_;  // [s^2, s^2]
  std::vector<double> offsets_;    // [n_kernels, s^2]
};

}  // namespace s3rp::nn
