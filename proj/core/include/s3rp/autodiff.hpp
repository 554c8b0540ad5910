#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace s3rp::ad {

/// NCHW tensor shape: batch, channels, height, width.
struct Shape {
  int b = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(b) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline constexpr Shape kScalar{1, 1, 1, 1};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<double> values);
  static Var zeros(Shape shape);
  static Var full(Shape shape, double v);
  /// Leaf that accumulates gradients.
  static Var parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value.at(0); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

  /// Same values, cut from the graph.
  Var detach() const { return constant(shape(), value()); }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op node. Parents are recorded and `backward` kept only when
/// recording is enabled and some parent requires gradients.
Var make_op(Shape shape, std::vector<double> value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root; adds d root / d leaf into every leaf's grad.
void backward(const Var& root);

// Element-wise arithmetic (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// log(1 + exp(a)), computed stably.
Var softplus(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }

/// Sum of scalars (or any identically shaped tensors).
Var sum_all(std::span<const Var> terms);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int begin, int count);

/// Stride-1 cross-correlation with periodic padding (output size = input size).
/// w: [Cout, Cin, k, k] with odd k, bias: [1, Cout, 1, 1].
Var conv2d(const Var& x, const Var& w, const Var& bias);

/// Stride-2 transposed convolution, kernel 4, padding 1, periodic wrap
/// (output size = 2 x input size). w: [Cin, Cout, 4, 4], bias: [1, Cout, 1, 1].
Var conv_transpose2x(const Var& x, const Var& w, const Var& bias);

/// Applies each kernel of a shared bank [D, 1, s, s] to every channel with
/// periodic padding. Output channel c * D + d holds kernel d applied to channel c.
Var depthwise_bank(const Var& x, const Var& kernels);

/// ratio x ratio block mean.
Var block_mean(const Var& x, int ratio);

/// y[:, c] = x[:, c] * gain[c] + offset[c].
Var channel_affine(const Var& x, std::span<const double> gain, std::span<const double> offset);

/// Central differences with periodic wrap, along width (x) and height (y).
Var ddx(const Var& x, double ds);
Var ddy(const Var& x, double ds);

/// Mean of squared entries, as a scalar.
Var mean_square(const Var& a);

}  // namespace s3rp::ad
