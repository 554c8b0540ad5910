#include "s3rp/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "s3rp/error.hpp"

namespace s3rp::ad {
namespace {

thread_local bool g_grad_enabled = true;

inline int wrap_index(int i, int n) {
  if (i >= 0 && i < n) return i;
  i %= n;
  return i < 0 ? i + n : i;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void expect_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::model,
          std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  std::vector<double> out(a.numel());
  const auto& x = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(x[k]);
  return make_op(a.shape(), std::move(out), {a}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t k = 0; k < g.size(); ++k)
      g[k] += self.grad[k] * dfdx(p.value[k], self.value[k]);
  });
}

// Periodic im2col for a k x k stencil centred on each pixel:
// col[(ci * k + ky) * k + kx, y * W + x] = x[ci, y + ky - p, x + kx - p].
void im2col(const double* x, int C, int H, int W, int k, double* col) {
  const int p = k / 2;
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * H * W;
        const double* src = x + static_cast<std::size_t>(ci) * H * W;
        for (int y = 0; y < H; ++y) {
          const int sy = wrap_index(y + ky - p, H);
          const double* row = src + static_cast<std::size_t>(sy) * W;
          for (int xx = 0; xx < W; ++xx) dst[y * W + xx] = row[wrap_index(xx + kx - p, W)];
        }
      }
}

void col2im_add(const double* col, int C, int H, int W, int k, double* x) {
  const int p = k / 2;
  for (int ci = 0; ci < C; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * H * W;
        double* dst = x + static_cast<std::size_t>(ci) * H * W;
        for (int y = 0; y < H; ++y) {
          const int sy = wrap_index(y + ky - p, H);
          double* row = dst + static_cast<std::size_t>(sy) * W;
          for (int xx = 0; xx < W; ++xx) row[wrap_index(xx + kx - p, W)] += src[y * W + xx];
        }
      }
}

}  // namespace

std::string Shape::str() const {
  return "[" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + "]";
}

Var Var::constant(Shape shape, std::vector<double> values) {
  require(values.size() == shape.numel(), ErrorCode::model, "constant: size/shape mismatch");
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  return Var(std::move(n));
}

Var Var::zeros(Shape shape) { return constant(shape, std::vector<double>(shape.numel(), 0.0)); }

Var Var::full(Shape shape, double v) { return constant(shape, std::vector<double>(shape.numel(), v)); }

Var Var::parameter(Shape shape, std::vector<double> values) {
  Var v = constant(shape, std::move(values));
  v.node_->requires_grad = true;
  return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Shape shape, std::vector<double> value, std::vector<Var> parents,
            std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.shared());
      n->backward = std::move(backward);
    }
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  require(root.numel() == 1, ErrorCode::model, "backward needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var add(const Var& a, const Var& b) {
  expect_same(a, b, "add");
  std::vector<double> out(a.value());
  const auto& y = b.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += y[k];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  expect_same(a, b, "sub");
  std::vector<double> out(a.value());
  const auto& y = b.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= y[k];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] -= self.grad[k];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  expect_same(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto& x = a.value();
  const auto& y = b.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = x[k] * y[k];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * pb.value[k];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k] * pa.value[k];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& a) {
  return unary(
      a,
      [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var sum_all(std::span<const Var> terms) {
  require(!terms.empty(), ErrorCode::model, "sum_all of nothing");
  std::vector<double> out(terms[0].value());
  for (std::size_t t = 1; t < terms.size(); ++t) {
    expect_same(terms[0], terms[t], "sum_all");
    const auto& v = terms[t].value();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += v[k];
  }
  return make_op(terms[0].shape(), std::move(out), {terms.begin(), terms.end()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += self.grad[k];
    }
  });
}

Var concat_channels(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::model, "concat of nothing");
  Shape s = parts[0].shape();
  int channels = 0;
  for (const auto& p : parts) {
    require(p.shape().b == s.b && p.shape().h == s.h && p.shape().w == s.w, ErrorCode::model,
            "concat_channels: incompatible shapes");
    channels += p.shape().c;
  }
  Shape out_shape{s.b, channels, s.h, s.w};
  const std::size_t plane = s.plane();
  std::vector<double> out(out_shape.numel());
  for (int b = 0; b < s.b; ++b) {
    std::size_t offset = static_cast<std::size_t>(b) * channels * plane;
    for (const auto& p : parts) {
      const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
      std::copy_n(p.value().begin() + static_cast<std::ptrdiff_t>(b * len), len,
                  out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += len;
    }
  }
  return make_op(out_shape, std::move(out), {parts.begin(), parts.end()},
                 [plane, channels, batch = s.b](Node& self) {
                   int c0 = 0;
                   for (auto& p : self.parents) {
                     const int pc = p->shape.c;
                     if (p->requires_grad) {
                       auto& g = p->ensure_grad();
                       const std::size_t len = static_cast<std::size_t>(pc) * plane;
                       for (int b = 0; b < batch; ++b) {
                         const double* src = self.grad.data() +
                                             (static_cast<std::size_t>(b) * channels + c0) * plane;
                         double* dst = g.data() + b * len;
                         for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
                       }
                     }
                     c0 += pc;
                   }
                 });
}

Var slice_channels(const Var& a, int begin, int count) {
  const Shape s = a.shape();
  require(begin >= 0 && count >= 1 && begin + count <= s.c, ErrorCode::model,
          "slice_channels out of range");
  Shape out_shape{s.b, count, s.h, s.w};
  const std::size_t plane = s.plane();
  const std::size_t len = static_cast<std::size_t>(count) * plane;
  std::vector<double> out(out_shape.numel());
  for (int b = 0; b < s.b; ++b)
    std::copy_n(a.value().begin() +
                    static_cast<std::ptrdiff_t>((static_cast<std::size_t>(b) * s.c + begin) * plane),
                len, out.begin() + static_cast<std::ptrdiff_t>(b * len));
  return make_op(out_shape, std::move(out), {a}, [=](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (int b = 0; b < s.b; ++b) {
      double* dst = g.data() + (static_cast<std::size_t>(b) * s.c + begin) * plane;
      const double* src = self.grad.data() + b * len;
      for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias) {
  const Shape xs = x.shape(), ws = w.shape();
  require(ws.c == xs.c && ws.h == ws.w && ws.h % 2 == 1, ErrorCode::model,
          "conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  require(bias.shape() == Shape{1, ws.b, 1, 1}, ErrorCode::model, "conv2d: bad bias shape");
  const int B = xs.b, Cin = xs.c, H = xs.h, W = xs.w, Cout = ws.b, k = ws.h;
  const int K = Cin * k * k, HW = H * W;
  Shape out_shape{B, Cout, H, W};
  std::vector<double> out(out_shape.numel());

  const bool keep = grad_enabled() && (x.requires_grad() || w.requires_grad() || bias.requires_grad());
  auto cols = std::make_shared<std::vector<double>>();
  std::vector<double> scratch;
  if (k != 1) {
    if (keep) cols->resize(static_cast<std::size_t>(B) * K * HW);
    else scratch.resize(static_cast<std::size_t>(K) * HW);
  }

  ConstMapMat wm(w.value().data(), Cout, K);
  for (int b = 0; b < B; ++b) {
    const double* xb = x.value().data() + static_cast<std::size_t>(b) * Cin * HW;
    const double* col = xb;
    if (k != 1) {
      double* dst = keep ? cols->data() + static_cast<std::size_t>(b) * K * HW : scratch.data();
      im2col(xb, Cin, H, W, k, dst);
      col = dst;
    }
    MapMat ob(out.data() + static_cast<std::size_t>(b) * Cout * HW, Cout, HW);
    ob.noalias() = wm * ConstMapMat(col, K, HW);
    for (int co = 0; co < Cout; ++co) ob.row(co).array() += bias.value()[co];
  }

  return make_op(out_shape, std::move(out), {x, w, bias}, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    ConstMapMat wmat(pw.value.data(), Cout, K);
    std::vector<double> dcol(k != 1 ? static_cast<std::size_t>(K) * HW : 0);
    for (int b = 0; b < B; ++b) {
      ConstMapMat gb(self.grad.data() + static_cast<std::size_t>(b) * Cout * HW, Cout, HW);
      const double* col = k != 1 ? cols->data() + static_cast<std::size_t>(b) * K * HW
                                 : px.value.data() + static_cast<std::size_t>(b) * Cin * HW;
      if (pw.requires_grad) {
        MapMat gw(pw.ensure_grad().data(), Cout, K);
        gw.noalias() += gb * ConstMapMat(col, K, HW).transpose();
      }
      if (pb.requires_grad) {
        auto& g = pb.ensure_grad();
        // Plain loop: Eigen's vectorised sum peels by address, which would make
        // the result depend on buffer alignment.
        for (int co = 0; co < Cout; ++co) {
          const double* row = self.grad.data() + (static_cast<std::size_t>(b) * Cout + co) * HW;
          double acc = 0.0;
          for (int k = 0; k < HW; ++k) acc += row[k];
          g[co] += acc;
        }
      }
      if (px.requires_grad) {
        double* gx = px.ensure_grad().data() + static_cast<std::size_t>(b) * Cin * HW;
        if (k == 1) {
          MapMat(gx, Cin, HW).noalias() += wmat.transpose() * gb;
        } else {
          MapMat(dcol.data(), K, HW).noalias() = wmat.transpose() * gb;
          col2im_add(dcol.data(), Cin, H, W, k, gx);
        }
      }
    }
  });
}

Var conv_transpose2x(const Var& x, const Var& w, const Var& bias) {
  const Shape xs = x.shape(), ws = w.shape();
  require(ws.b == xs.c && ws.h == 4 && ws.w == 4, ErrorCode::model,
          "conv_transpose2x: weight " + ws.str() + " incompatible with input " + xs.str());
  const int B = xs.b, Cin = xs.c, H = xs.h, W = xs.w, Cout = ws.c;
  require(bias.shape() == Shape{1, Cout, 1, 1}, ErrorCode::model, "conv_transpose2x: bad bias");
  const int HW = H * W, OH = 2 * H, OW = 2 * W, OHW = OH * OW, KO = Cout * 16;
  Shape out_shape{B, Cout, OH, OW};
  std::vector<double> out(out_shape.numel());

  // Output coordinate for input index i and tap t along one axis.
  auto target = [](int i, int t, int n2) { return wrap_index(2 * i + t - 1, n2); };

  ConstMapMat wm(w.value().data(), Cin, KO);
  std::vector<double> cols(static_cast<std::size_t>(KO) * HW);
  for (int b = 0; b < B; ++b) {
    ConstMapMat xb(x.value().data() + static_cast<std::size_t>(b) * Cin * HW, Cin, HW);
    MapMat(cols.data(), KO, HW).noalias() = wm.transpose() * xb;
    double* ob = out.data() + static_cast<std::size_t>(b) * Cout * OHW;
    for (int co = 0; co < Cout; ++co) {
      double* plane = ob + static_cast<std::size_t>(co) * OHW;
      for (int p = 0; p < OHW; ++p) plane[p] = bias.value()[co];
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          const double* src = cols.data() + static_cast<std::size_t>(co * 16 + ky * 4 + kx) * HW;
          for (int iy = 0; iy < H; ++iy) {
            double* row = plane + static_cast<std::size_t>(target(iy, ky, OH)) * OW;
            for (int ix = 0; ix < W; ++ix) row[target(ix, kx, OW)] += src[iy * W + ix];
          }
        }
    }
  }

  return make_op(out_shape, std::move(out), {x, w, bias}, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    ConstMapMat wmat(pw.value.data(), Cin, KO);
    std::vector<double> dcols(static_cast<std::size_t>(KO) * HW);
    for (int b = 0; b < B; ++b) {
      const double* gb = self.grad.data() + static_cast<std::size_t>(b) * Cout * OHW;
      for (int co = 0; co < Cout; ++co) {
        const double* plane = gb + static_cast<std::size_t>(co) * OHW;
        if (pb.requires_grad) {
          double s = 0.0;
          for (int p = 0; p < OHW; ++p) s += plane[p];
          pb.ensure_grad()[co] += s;
        }
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            double* dst = dcols.data() + static_cast<std::size_t>(co * 16 + ky * 4 + kx) * HW;
            for (int iy = 0; iy < H; ++iy) {
              const double* row = plane + static_cast<std::size_t>(target(iy, ky, OH)) * OW;
              for (int ix = 0; ix < W; ++ix) dst[iy * W + ix] = row[target(ix, kx, OW)];
            }
          }
      }
      ConstMapMat dc(dcols.data(), KO, HW);
      if (pw.requires_grad) {
        ConstMapMat xb(px.value.data() + static_cast<std::size_t>(b) * Cin * HW, Cin, HW);
        MapMat(pw.ensure_grad().data(), Cin, KO).noalias() += xb * dc.transpose();
      }
      if (px.requires_grad) {
        MapMat gx(px.ensure_grad().data() + static_cast<std::size_t>(b) * Cin * HW, Cin, HW);
        gx.noalias() += wmat * dc;
      }
    }
  });
}

Var depthwise_bank(const Var& x, const Var& kernels) {
  const Shape xs = x.shape(), ks = kernels.shape();
  require(ks.c == 1 && ks.h == ks.w && ks.h % 2 == 1, ErrorCode::model,
          "depthwise_bank: kernels must be [D, 1, s, s] with odd s");
  const int B = xs.b, C = xs.c, H = xs.h, W = xs.w, D = ks.b, s = ks.h, r = s / 2;
  const int HW = H * W;
  Shape out_shape{B, C * D, H, W};
  std::vector<double> out(out_shape.numel(), 0.0);
  const auto& kv = kernels.value();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* src = x.value().data() + (static_cast<std::size_t>(b) * C + c) * HW;
      for (int d = 0; d < D; ++d) {
        double* dst = out.data() + (static_cast<std::size_t>(b) * C * D + c * D + d) * HW;
        for (int ky = 0; ky < s; ++ky)
          for (int kx = 0; kx < s; ++kx) {
            const double kw = kv[(static_cast<std::size_t>(d) * s + ky) * s + kx];
            for (int y = 0; y < H; ++y) {
              const double* row = src + static_cast<std::size_t>(wrap_index(y + ky - r, H)) * W;
              for (int xx = 0; xx < W; ++xx) dst[y * W + xx] += kw * row[wrap_index(xx + kx - r, W)];
            }
          }
      }
    }
  return make_op(out_shape, std::move(out), {x, kernels}, [=](Node& self) {
    Node& px = *self.parents[0];
    Node& pk = *self.parents[1];
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const std::size_t in_off = (static_cast<std::size_t>(b) * C + c) * HW;
        for (int d = 0; d < D; ++d) {
          const double* g = self.grad.data() + (static_cast<std::size_t>(b) * C * D + c * D + d) * HW;
          for (int ky = 0; ky < s; ++ky)
            for (int kx = 0; kx < s; ++kx) {
              const std::size_t kidx = (static_cast<std::size_t>(d) * s + ky) * s + kx;
              double acc = 0.0;
              for (int y = 0; y < H; ++y) {
                const std::size_t row = static_cast<std::size_t>(wrap_index(y + ky - r, H)) * W;
                for (int xx = 0; xx < W; ++xx) {
                  const std::size_t sidx = in_off + row + wrap_index(xx + kx - r, W);
                  acc += g[y * W + xx] * px.value[sidx];
                  if (px.requires_grad) px.ensure_grad()[sidx] += g[y * W + xx] * pk.value[kidx];
                }
              }
              if (pk.requires_grad) pk.ensure_grad()[kidx] += acc;
            }
        }
      }
  });
}

Var block_mean(const Var& x, int ratio) {
  const Shape s = x.shape();
  require(ratio >= 1 && s.h % ratio == 0 && s.w % ratio == 0, ErrorCode::model,
          "block_mean: size not divisible by ratio");
  const int h = s.h / ratio, w = s.w / ratio;
  Shape out_shape{s.b, s.c, h, w};
  std::vector<double> out(out_shape.numel(), 0.0);
  const double inv = 1.0 / (static_cast<double>(ratio) * ratio);
  const auto& v = x.value();
  for (int bc = 0; bc < s.b * s.c; ++bc)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double sum = 0.0;
        for (int a = 0; a < ratio; ++a)
          for (int c = 0; c < ratio; ++c)
            sum += v[(static_cast<std::size_t>(bc) * s.h + i * ratio + a) * s.w + j * ratio + c];
        out[(static_cast<std::size_t>(bc) * h + i) * w + j] = sum * inv;
      }
  return make_op(out_shape, std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int bc = 0; bc < s.b * s.c; ++bc)
      for (int I = 0; I < s.h; ++I)
        for (int J = 0; J < s.w; ++J)
          g[(static_cast<std::size_t>(bc) * s.h + I) * s.w + J] +=
              self.grad[(static_cast<std::size_t>(bc) * h + I / ratio) * w + J / ratio] * inv;
  });
}

Var channel_affine(const Var& x, std::span<const double> gain, std::span<const double> offset) {
  const Shape s = x.shape();
  require(gain.size() == static_cast<std::size_t>(s.c) && offset.size() == gain.size(),
          ErrorCode::model, "channel_affine: coefficient count mismatch");
  std::vector<double> g(gain.begin(), gain.end());
  const std::size_t plane = s.plane();
  std::vector<double> out(x.value());
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < s.c; ++c) {
      double* p = out.data() + (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = p[k] * gain[c] + offset[c];
    }
  return make_op(s, std::move(out), {x}, [s, plane, g](Node& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (int b = 0; b < s.b; ++b)
      for (int c = 0; c < s.c; ++c) {
        const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) gx[off + k] += self.grad[off + k] * g[c];
      }
  });
}

namespace {

// Central difference along one axis; axis 0 = width (x), 1 = height (y).
Var central_difference(const Var& x, double ds, int axis) {
  const Shape s = x.shape();
  const int H = s.h, W = s.w;
  const double inv = 1.0 / (2.0 * ds);
  std::vector<double> out(s.numel());
  const auto& v = x.value();
  for (int bc = 0; bc < s.b * s.c; ++bc) {
    const double* src = v.data() + static_cast<std::size_t>(bc) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(bc) * H * W;
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        const double hi = axis == 0 ? src[i * W + wrap_index(j + 1, W)] : src[wrap_index(i + 1, H) * W + j];
        const double lo = axis == 0 ? src[i * W + wrap_index(j - 1, W)] : src[wrap_index(i - 1, H) * W + j];
        dst[i * W + j] = (hi - lo) * inv;
      }
  }
  return make_op(s, std::move(out), {x}, [=](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (int bc = 0; bc < s.b * s.c; ++bc) {
      const double* gs = self.grad.data() + static_cast<std::size_t>(bc) * H * W;
      double* gd = g.data() + static_cast<std::size_t>(bc) * H * W;
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const double d = gs[i * W + j] * inv;
          if (axis == 0) {
            gd[i * W + wrap_index(j + 1, W)] += d;
            gd[i * W + wrap_index(j - 1, W)] -= d;
          } else {
            gd[wrap_index(i + 1, H) * W + j] += d;
            gd[wrap_index(i - 1, H) * W + j] -= d;
          }
        }
    }
  });
}

}  // namespace

Var ddx(const Var& x, double ds) { return central_difference(x, ds, 0); }
Var ddy(const Var& x, double ds) { return central_difference(x, ds, 1); }

Var mean_square(const Var& a) {
  double s = 0.0;
  for (double v : a.value()) s += v * v;
  const double n = static_cast<double>(a.numel());
  return make_op(kScalar, {s / n}, {a}, [n](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    const double f = 2.0 * self.grad[0] / n;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += f * p.value[k];
  });
}

}  // namespace s3rp::ad
