#include "s3rp/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

#include "s3rp/error.hpp"

namespace s3rp::nn {

Var ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  for (const auto& [n, v] : entries_)
    require(n != name, ErrorCode::model, "duplicate parameter name " + name);
  Var v = Var::parameter(shape, std::move(init));
  entries_.emplace_back(name, v);
  return v;
}

const Var& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  fail(ErrorCode::model, "unknown parameter " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.node()->grad.clear();
}

std::vector<double> uniform_init(NoiseSource& rng, std::size_t count, int fan_in, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::vector<double> v(count);
  for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return v;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int cin, int cout, int k,
               NoiseSource& rng, double gain)
    : cout_(cout) {
  const int fan_in = cin * k * k;
  Shape ws{cout, cin, k, k};
  w_ = store.add(name + ".w", ws, uniform_init(rng, ws.numel(), fan_in, gain));
  b_ = store.add(name + ".b", {1, cout, 1, 1}, std::vector<double>(cout, 0.0));
}

ConvTranspose2x::ConvTranspose2x(ParameterStore& store, const std::string& name, int cin,
                                 int cout, NoiseSource& rng) {
  // Each output pixel receives 4 taps per input channel. Channel pairs
  // (c, c mod cout) start from the bilinear x2 kernel plus small noise so the
  // ladder begins as a smooth interpolator.
  Shape ws{cin, cout, 4, 4};
  std::vector<double> w = uniform_init(rng, ws.numel(), cin * 4, 0.25);
  constexpr std::array<double, 4> tap{0.25, 0.75, 0.75, 0.25};
  for (int ci = 0; ci < cin; ++ci) {
    const int co = ci % cout;
    const double share = 1.0 / ((cin + cout - 1 - co) / cout);  // inputs feeding co
    for (int ky = 0; ky < 4; ++ky)
      for (int kx = 0; kx < 4; ++kx)
        w[((static_cast<std::size_t>(ci) * cout + co) * 4 + ky) * 4 + kx] += share * tap[ky] * tap[kx];
  }
  w_ = store.add(name + ".w", ws, std::move(w));
  b_ = store.add(name + ".b", {1, cout, 1, 1}, std::vector<double>(cout, 0.0));
}

ConvLstmCell::ConvLstmCell(ParameterStore& store, const std::string& name, int cin, int hidden,
                           int k, NoiseSource& rng)
    : gates_(store, name + ".gates", cin + hidden, 4 * hidden, k, rng), hidden_(hidden) {
  // Forget-gate bias starts at 1.
  Var bias = store.get(name + ".gates.b");
  for (int c = hidden; c < 2 * hidden; ++c) bias.mutable_value()[c] = 1.0;
}

Var ConvLstmCell::step(const Var& x, LstmState& state) const {
  const Shape xs = x.shape();
  if (!state.defined()) {
    state.h = Var::zeros({xs.b, hidden_, xs.h, xs.w});
    state.c = state.h;
  }
  const std::array<Var, 2> in{x, state.h};
  Var g = gates_(ad::concat_channels(in));
  Var i = ad::sigmoid(ad::slice_channels(g, 0, hidden_));
  Var f = ad::sigmoid(ad::slice_channels(g, hidden_, hidden_));
  Var o = ad::sigmoid(ad::slice_channels(g, 2 * hidden_, hidden_));
  Var u = ad::tanh(ad::slice_channels(g, 3 * hidden_, hidden_));
  state.c = f * state.c + i * u;
  state.h = o * ad::tanh(state.c);
  return state.h;
}

std::vector<std::pair<int, int>> derivative_orders(int order) {
  std::vector<std::pair<int, int>> out;
  for (int deg = 0; deg <= order; ++deg)
    for (int q = 0; q <= deg; ++q) out.emplace_back(deg - q, q);
  return out;
}

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// Row m of the moment matrix holds the coefficient of w[b, a] in moment m.
Eigen::MatrixXd moment_matrix(int s, int order) {
  const auto pq = derivative_orders(order);
  const int r = s / 2;
  Eigen::MatrixXd m(static_cast<int>(pq.size()), s * s);
  for (std::size_t k = 0; k < pq.size(); ++k) {
    const auto [p, q] = pq[k];
    for (int ky = 0; ky < s; ++ky)
      for (int kx = 0; kx < s; ++kx) {
        const double a = kx - r, b = ky - r;
        m(static_cast<int>(k), ky * s + kx) = std::pow(a, p) * std::pow(b, q) / (factorial(p) * factorial(q));
      }
  }
  return m;
}

}  // namespace

std::vector<double> kernel_moments(const double* w, int s, int order) {
  const Eigen::MatrixXd m = moment_matrix(s, order);
  const Eigen::VectorXd v = m * Eigen::Map<const Eigen::VectorXd>(w, s * s);
  return {v.data(), v.data() + v.size()};
}

PhyCell::PhyCell(ParameterStore& store, const std::string& name, int channels, int kernel,
                 int order, int gate_kernel, NoiseSource& rng)
    : kernel_(kernel), order_(order) {
  require(kernel % 2 == 1 && kernel >= 3, ErrorCode::config, "phycell kernel must be odd and >= 3");
  const int n_moments = static_cast<int>(derivative_orders(order).size());
  require(n_moments <= kernel * kernel, ErrorCode::config,
          "phycell kernel too small for the derivative order");
  n_kernels_ = n_moments;
  const int s2 = kernel * kernel;

  const Eigen::MatrixXd m = moment_matrix(kernel, order);
  const Eigen::MatrixXd pinv = m.transpose() * (m * m.transpose()).inverse();  // [s2, nm]
  const Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(s2, s2) - pinv * m;
  projector_.resize(static_cast<std::size_t>(s2) * s2);
  for (int i = 0; i < s2; ++i)
    for (int j = 0; j < s2; ++j) projector_[static_cast<std::size_t>(i) * s2 + j] = proj(i, j);
  offsets_.resize(static_cast<std::size_t>(n_kernels_) * s2);
  for (int d = 0; d < n_kernels_; ++d)
    for (int i = 0; i < s2; ++i) offsets_[static_cast<std::size_t>(d) * s2 + i] = pinv(i, d);

  Shape bs{n_kernels_, 1, kernel, kernel};
  bank_ = store.add(name + ".bank", bs, uniform_init(rng, bs.numel(), s2, 0.5));
  project();
  mix_ = Conv2d(store, name + ".mix", channels * n_kernels_, channels, 1, rng, 0.1);
  gate_ = Conv2d(store, name + ".gate", 2 * channels, channels, gate_kernel, rng);
}

Var PhyCell::predict(const Var& h) const { return h + mix_(ad::depthwise_bank(h, bank_)); }

Var PhyCell::correct(const Var& h_tilde, const Var& e) const {
  const std::array<Var, 2> in{h_tilde, e};
  Var g = ad::sigmoid(gate_(ad::concat_channels(in)));
  return h_tilde + g * (e - h_tilde);
}

Var PhyCell::step(const Var& h, const Var& e) const { return correct(predict(h), e); }

void PhyCell::project() {
  const int s2 = kernel_ * kernel_;
  auto& w = bank_.mutable_value();
  std::vector<double> tmp(s2);
  for (int d = 0; d < n_kernels_; ++d) {
    double* k = w.data() + static_cast<std::size_t>(d) * s2;
    for (int i = 0; i < s2; ++i) {
      double acc = offsets_[static_cast<std::size_t>(d) * s2 + i];
      for (int j = 0; j < s2; ++j) acc += projector_[static_cast<std::size_t>(i) * s2 + j] * k[j];
      tmp[i] = acc;
    }
    std::copy(tmp.begin(), tmp.end(), k);
  }
}

double PhyCell::max_violation() const {
  const int s2 = kernel_ * kernel_;
  double worst = 0.0;
  for (int d = 0; d < n_kernels_; ++d) {
    const auto mom = kernel_moments(bank_.value().data() + static_cast<std::size_t>(d) * s2, kernel_, order_);
    for (int k = 0; k < n_kernels_; ++k)
      worst = std::max(worst, std::abs(mom[k] - (k == d ? 1.0 : 0.0)));
  }
  return worst;
}

}  // namespace s3rp::nn
