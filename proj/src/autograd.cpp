#include "semdiff/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "semdiff/errors.hpp"

namespace semdiff::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

const Tensor& in(Node& self, std::size_t i) { return self.parents[i]->value; }
bool wants(Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
Tensor& gin(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

struct ConvGeom {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

// col has shape (channels * k * k, out_h * out_w).
void im2col(const double* img, const ConvGeom& g, double* col) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

// Accumulates columns back into the image (adjoint of im2col).
void col2im(const double* col, const ConvGeom& g, double* img) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel; ++kj) {
        const double* row = col + ((c * g.kernel + ki) * g.kernel + kj) * plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          double* dst = img + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Tensor out(x.shape());
  const auto xs = x.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(xs[i]);
  return Var::make(std::move(out), {x}, [df](Node& self) {
    const auto xs = in(self, 0).data();
    const auto ys = self.value.data();
    auto& g = gin(self, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(xs[i], ys[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() {
  if (node_) node_->grad = Tensor(node_->value.shape());
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->backward_fn = std::move(backward_fn);
    out.node_->parents.reserve(inputs.size());
    for (auto& v : inputs) out.node_->parents.push_back(v.node_);
  }
  return out;
}

void Var::backward() {
  if (node_->value.numel() != 1) throw ShapeError("backward() requires a scalar output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && p->backward_fn && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n != node_.get()) n->grad = Tensor(n->value.shape());
  }
  node_->grad = Tensor(node_->value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    (*it)->backward_fn(**it);
  }
  // Free interior buffers; leaves keep their accumulated gradient.
  for (Node* n : order) {
    if (n != node_.get()) n->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (wants(self, k)) gin(self, k) += self.grad;
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) gin(self, 0) += self.grad;
    if (wants(self, 1)) {
      auto& g = gin(self, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Var::make(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) {
      auto& g = gin(self, 0);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * in(self, 1)[i];
    }
    if (wants(self, 1)) {
      auto& g = gin(self, 1);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * in(self, 0)[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  return Var::make(std::move(out), {a}, [s](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return Var::make(std::move(out), {a}, [](Node& self) { gin(self, 0) += self.grad; });
}

Var scale_rows(const Var& a, std::span<const double> coeffs) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || x.dim(0) != coeffs.size()) {
    throw ShapeError("scale_rows: coefficient count does not match leading axis");
  }
  const std::size_t rs = x.row_size();
  Tensor out = x;
  for (std::size_t r = 0; r < coeffs.size(); ++r) {
    for (std::size_t i = 0; i < rs; ++i) out[r * rs + i] *= coeffs[r];
  }
  std::vector<double> c(coeffs.begin(), coeffs.end());
  return Var::make(std::move(out), {a}, [c = std::move(c), rs](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t r = 0; r < c.size(); ++r) {
      for (std::size_t i = 0; i < rs; ++i) g[r * rs + i] += c[r] * self.grad[r * rs + i];
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [inv_sqrt_2pi](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return Var::make(std::move(out), {x}, [](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_rank(x, 4, "concat_channels");
  require_rank(y, 4, "concat_channels");
  if (x.dim(0) != y.dim(0) || x.dim(2) != y.dim(2) || x.dim(3) != y.dim(3)) {
    throw ShapeError("concat_channels: incompatible " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  const std::size_t n = x.dim(0), ca = x.dim(1), cb = y.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out({n, ca + cb, x.dim(2), x.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.data().begin() + i * ca * plane, ca * plane,
                out.data().begin() + i * (ca + cb) * plane);
    std::copy_n(y.data().begin() + i * cb * plane, cb * plane,
                out.data().begin() + (i * (ca + cb) + ca) * plane);
  }
  return Var::make(std::move(out), {a, b}, [n, ca, cb, plane](Node& self) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* src = self.grad.data().data() + i * (ca + cb) * plane;
      if (wants(self, 0)) {
        double* g = gin(self, 0).data().data() + i * ca * plane;
        for (std::size_t j = 0; j < ca * plane; ++j) g[j] += src[j];
      }
      if (wants(self, 1)) {
        double* g = gin(self, 1).data().data() + i * cb * plane;
        for (std::size_t j = 0; j < cb * plane; ++j) g[j] += src[ca * plane + j];
      }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "add_channel_bias");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (bias.shape() != Shape{n, c}) {
    throw ShapeError("add_channel_bias: bias shape " + shape_str(bias.shape()) +
                     " does not match " + shape_str(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < n * c; ++i) {
    const double b = bias.value()[i];
    for (std::size_t p = 0; p < plane; ++p) out[i * plane + p] += b;
  }
  return Var::make(std::move(out), {x, bias}, [n, c, plane](Node& self) {
    if (wants(self, 0)) gin(self, 0) += self.grad;
    if (wants(self, 1)) {
      auto& g = gin(self, 1);
      for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += self.grad[i * plane + p];
        g[i] += s;
      }
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "upsample_nearest2x");
  const std::size_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t r = 0; r < 2 * h; ++r) {
      for (std::size_t s = 0; s < 2 * w; ++s) {
        out[(i * 2 * h + r) * 2 * w + s] = xv[(i * h + r / 2) * w + s / 2];
      }
    }
  }
  return Var::make(std::move(out), {x}, [nc, h, w](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t i = 0; i < nc; ++i) {
      for (std::size_t r = 0; r < 2 * h; ++r) {
        for (std::size_t s = 0; s < 2 * w; ++s) {
          g[(i * h + r / 2) * w + s / 2] += self.grad[(i * 2 * h + r) * 2 * w + s];
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 2, "linear");
  require_rank(wv, 2, "linear");
  const std::size_t n = xv.dim(0), fin = xv.dim(1), fout = wv.dim(0);
  if (wv.dim(1) != fin) {
    throw ShapeError("linear: input " + shape_str(xv.shape()) + " vs weight " +
                     shape_str(wv.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{fout}) throw ShapeError("linear: bias shape");
  Tensor out({n, fout});
  MatMap o(out.data().data(), n, fout);
  ConstMatMap X(xv.data().data(), n, fin);
  ConstMatMap W(wv.data().data(), fout, fin);
  o.noalias() = X * W.transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < fout; ++j) out[r * fout + j] += bias.value()[j];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [n, fin, fout](Node& self) {
    ConstMatMap G(self.grad.data().data(), n, fout);
    if (wants(self, 0)) {
      MatMap gx(gin(self, 0).data().data(), n, fin);
      gx.noalias() += G * ConstMatMap(in(self, 1).data().data(), fout, fin);
    }
    if (wants(self, 1)) {
      MatMap gw(gin(self, 1).data().data(), fout, fin);
      gw.noalias() += G.transpose() * ConstMatMap(in(self, 0).data().data(), n, fin);
    }
    if (self.parents.size() > 2 && wants(self, 2)) {
      auto& gb = gin(self, 2);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < fout; ++j) gb[j] += self.grad[r * fout + j];
      }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "conv2d");
  require_rank(wv, 4, "conv2d");
  const std::size_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin || wv.dim(3) != k) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " vs weight " +
                     shape_str(wv.shape()));
  }
  if (stride < 1 || padding < 0 || h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: invalid geometry for input " + shape_str(xv.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape");
  ConvGeom g{cin,
             h,
             w,
             k,
             static_cast<std::size_t>(stride),
             static_cast<std::size_t>(padding),
             (h + 2 * padding - k) / stride + 1,
             (w + 2 * padding - k) / stride + 1};
  const std::size_t plane = g.out_h * g.out_w, kk = cin * k * k;
  Tensor out({n, cout, g.out_h, g.out_w});
  std::vector<double> col(kk * plane);
  ConstMatMap W(wv.data().data(), cout, kk);
  ConstMatMap C(col.data(), kk, plane);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(xv.data().data() + i * cin * h * w, g, col.data());
    MatMap o(out.data().data() + i * cout * plane, cout, plane);
    o.noalias() = W * C;
    if (bias.defined()) o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data().data(), cout);
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [g, n, cout, plane, kk](Node& self) {
    const Tensor& xv = in(self, 0);
    const std::size_t in_size = g.channels * g.height * g.width;
    std::vector<double> col(kk * plane);
    ConstMatMap W(in(self, 1).data().data(), cout, kk);
    for (std::size_t i = 0; i < n; ++i) {
      ConstMatMap G(self.grad.data().data() + i * cout * plane, cout, plane);
      if (wants(self, 1)) {
        im2col(xv.data().data() + i * in_size, g, col.data());
        MatMap gw(gin(self, 1).data().data(), cout, kk);
        gw.noalias() += G * ConstMatMap(col.data(), kk, plane).transpose();
      }
      if (wants(self, 0)) {
        MatMap dcol(col.data(), kk, plane);
        dcol.noalias() = W.transpose() * G;
        col2im(col.data(), g, gin(self, 0).data().data() + i * in_size);
      }
      if (self.parents.size() > 2 && wants(self, 2)) {
        Eigen::Map<Eigen::VectorXd> gb(gin(self, 2).data().data(), cout);
        gb += G.rowwise().sum();
      }
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "conv_transpose2d");
  require_rank(wv, 4, "conv_transpose2d");
  const std::size_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != cin || wv.dim(3) != k) {
    throw ShapeError("conv_transpose2d: input " + shape_str(xv.shape()) + " vs weight " +
                     shape_str(wv.shape()));
  }
  if (stride < 1 || padding < 0 || output_padding < 0 || output_padding >= stride) {
    throw ShapeError("conv_transpose2d: invalid geometry");
  }
  const long oh = static_cast<long>((h - 1) * stride + k + output_padding) - 2L * padding;
  const long ow = static_cast<long>((w - 1) * stride + k + output_padding) - 2L * padding;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv_transpose2d: bias shape");
  }
  // Geometry of the adjoint convolution: output image -> columns over the input grid.
  ConvGeom g{cout,
             static_cast<std::size_t>(oh),
             static_cast<std::size_t>(ow),
             k,
             static_cast<std::size_t>(stride),
             static_cast<std::size_t>(padding),
             h,
             w};
  const std::size_t plane = h * w, kk = cout * k * k, out_size = cout * g.height * g.width;
  Tensor out({n, cout, g.height, g.width});
  std::vector<double> col(kk * plane);
  ConstMatMap W(wv.data().data(), cin, kk);
  for (std::size_t i = 0; i < n; ++i) {
    ConstMatMap X(xv.data().data() + i * cin * plane, cin, plane);
    MatMap C(col.data(), kk, plane);
    C.noalias() = W.transpose() * X;
    double* o = out.data().data() + i * out_size;
    col2im(col.data(), g, o);
    if (bias.defined()) {
      for (std::size_t c = 0; c < cout; ++c) {
        const double b = bias.value()[c];
        for (std::size_t p = 0; p < g.height * g.width; ++p) o[c * g.height * g.width + p] += b;
      }
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::make(std::move(out), std::move(inputs), [g, n, cin, cout, plane, kk, out_size](Node& self) {
    std::vector<double> col(kk * plane);
    ConstMatMap W(in(self, 1).data().data(), cin, kk);
    ConstMatMap C(col.data(), kk, plane);
    const std::size_t oplane = g.height * g.width;
    for (std::size_t i = 0; i < n; ++i) {
      const double* go = self.grad.data().data() + i * out_size;
      im2col(go, g, col.data());
      if (wants(self, 0)) {
        MatMap gx(gin(self, 0).data().data() + i * cin * plane, cin, plane);
        gx.noalias() += W * C;
      }
      if (wants(self, 1)) {
        ConstMatMap X(in(self, 0).data().data() + i * cin * plane, cin, plane);
        MatMap gw(gin(self, 1).data().data(), cin, kk);
        gw.noalias() += X * C.transpose();
      }
      if (self.parents.size() > 2 && wants(self, 2)) {
        auto& gb = gin(self, 2);
        for (std::size_t c = 0; c < cout; ++c) {
          double s = 0.0;
          for (std::size_t p = 0; p < oplane; ++p) s += go[c * oplane + p];
          gb[c] += s;
        }
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "group_norm");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const std::size_t gcount = static_cast<std::size_t>(groups);
  if (groups < 1 || c % gcount != 0) throw ShapeError("group_norm: channels not divisible");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("group_norm: affine shape");
  }
  const std::size_t per = c / gcount, len = per * plane;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(n * gcount);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n * gcount; ++i) {
    const double* src = xv.data().data() + i * len;
    double mu = 0.0;
    for (std::size_t j = 0; j < len; ++j) mu += src[j];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t j = 0; j < len; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= static_cast<double>(len);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t idx = i * len + j;
      const std::size_t ch = (idx / plane) % c;
      xhat[idx] = (src[j] - mu) * inv_std[i];
      out[idx] = xhat[idx] * gamma.value()[ch] + beta.value()[ch];
    }
  }
  return Var::make(std::move(out), {x, gamma, beta},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane, gcount,
                    len](Node& self) {
                     const Tensor& gam = in(self, 1);
                     if (wants(self, 1) || wants(self, 2)) {
                       for (std::size_t idx = 0; idx < self.grad.numel(); ++idx) {
                         const std::size_t ch = (idx / plane) % c;
                         if (wants(self, 1)) gin(self, 1)[ch] += self.grad[idx] * xhat[idx];
                         if (wants(self, 2)) gin(self, 2)[ch] += self.grad[idx];
                       }
                     }
                     if (!wants(self, 0)) return;
                     auto& gx = gin(self, 0);
                     for (std::size_t i = 0; i < n * gcount; ++i) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < len; ++j) {
                         const std::size_t idx = i * len + j;
                         const double d = self.grad[idx] * gam[(idx / plane) % c];
                         m1 += d;
                         m2 += d * xhat[idx];
                       }
                       m1 /= static_cast<double>(len);
                       m2 /= static_cast<double>(len);
                       for (std::size_t j = 0; j < len; ++j) {
                         const std::size_t idx = i * len + j;
                         const double d = self.grad[idx] * gam[(idx / plane) % c];
                         gx[idx] += inv_std[i] * (d - m1 - xhat[idx] * m2);
                       }
                     }
                   });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "batch_norm");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      state.running_mean.shape() != Shape{c} || state.running_var.shape() != Shape{c}) {
    throw ShapeError("batch_norm: parameter shape");
  }
  const double count = static_cast<double>(n * plane);
  std::vector<double> mu(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < plane; ++p) m += xv[(i * c + ch) * plane + p];
      }
      m /= count;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < plane; ++p) {
          const double d = xv[(i * c + ch) * plane + p] - m;
          v += d * d;
        }
      }
      v /= count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + state.eps);
      const double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
      state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * m;
      state.running_var[ch] =
          (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
    } else {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Tensor xhat(xv.shape()), out(xv.shape());
  for (std::size_t idx = 0; idx < xv.numel(); ++idx) {
    const std::size_t ch = (idx / plane) % c;
    xhat[idx] = (xv[idx] - mu[ch]) * inv_std[ch];
    out[idx] = xhat[idx] * gamma.value()[ch] + beta.value()[ch];
  }
  return Var::make(
      std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane, count,
       training](Node& self) {
        const Tensor& gam = in(self, 1);
        std::vector<double> m1(c, 0.0), m2(c, 0.0);
        for (std::size_t idx = 0; idx < self.grad.numel(); ++idx) {
          const std::size_t ch = (idx / plane) % c;
          m1[ch] += self.grad[idx];
          m2[ch] += self.grad[idx] * xhat[idx];
        }
        if (wants(self, 1)) {
          for (std::size_t ch = 0; ch < c; ++ch) gin(self, 1)[ch] += m2[ch];
        }
        if (wants(self, 2)) {
          for (std::size_t ch = 0; ch < c; ++ch) gin(self, 2)[ch] += m1[ch];
        }
        if (!wants(self, 0)) return;
        auto& gx = gin(self, 0);
        for (std::size_t idx = 0; idx < gx.numel(); ++idx) {
          const std::size_t ch = (idx / plane) % c;
          const double d = self.grad[idx] * gam[ch];
          if (training) {
            gx[idx] += inv_std[ch] * (d - gam[ch] * (m1[ch] + xhat[idx] * m2[ch]) / count);
          } else {
            gx[idx] += inv_std[ch] * d;
          }
        }
        (void)n;
      });
}

Var linear_attention(const Var& q, const Var& k, const Var& v) {
  const Tensor& qv = q.value();
  require_rank(qv, 3, "linear_attention");
  if (k.shape() != qv.shape() || v.shape() != qv.shape()) {
    throw ShapeError("linear_attention: q, k, v shapes differ");
  }
  const std::size_t n = qv.dim(0), d = qv.dim(1), p = qv.dim(2);
  Tensor qs(qv.shape()), ks(qv.shape()), ctx({n, d, d}), out(qv.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * d * p;
    // softmax over d for each position
    for (std::size_t j = 0; j < p; ++j) {
      double mx = -INFINITY;
      for (std::size_t i = 0; i < d; ++i) mx = std::max(mx, qv[base + i * p + j]);
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += (qs[base + i * p + j] = std::exp(qv[base + i * p + j] - mx));
      for (std::size_t i = 0; i < d; ++i) qs[base + i * p + j] /= s;
    }
    // softmax over positions for each channel
    for (std::size_t i = 0; i < d; ++i) {
      const double* src = k.value().data().data() + base + i * p;
      double* dst = ks.data().data() + base + i * p;
      const double mx = *std::max_element(src, src + p);
      double s = 0.0;
      for (std::size_t j = 0; j < p; ++j) s += (dst[j] = std::exp(src[j] - mx));
      for (std::size_t j = 0; j < p; ++j) dst[j] /= s;
    }
    ConstMatMap K(ks.data().data() + base, d, p);
    ConstMatMap V(v.value().data().data() + base, d, p);
    ConstMatMap Q(qs.data().data() + base, d, p);
    MatMap Cx(ctx.data().data() + b * d * d, d, d);
    Cx.noalias() = K * V.transpose();  // ctx[d, e]
    MatMap O(out.data().data() + base, d, p);
    O.noalias() = Cx.transpose() * Q;
  }
  return Var::make(std::move(out), {q, k, v},
                   [qs = std::move(qs), ks = std::move(ks), ctx = std::move(ctx), n, d,
                    p](Node& self) {
                     RowMat dq(d, p), dk(d, p), dctx(d, d);
                     for (std::size_t b = 0; b < n; ++b) {
                       const std::size_t base = b * d * p;
                       ConstMatMap G(self.grad.data().data() + base, d, p);
                       ConstMatMap Q(qs.data().data() + base, d, p);
                       ConstMatMap K(ks.data().data() + base, d, p);
                       ConstMatMap V(in(self, 2).data().data() + base, d, p);
                       ConstMatMap Cx(ctx.data().data() + b * d * d, d, d);
                       dctx.noalias() = Q * G.transpose();  // d out / d ctx[d, e]
                       if (wants(self, 0)) {
                         dq.noalias() = Cx * G;  // gradient wrt softmaxed q
                         MatMap gq(gin(self, 0).data().data() + base, d, p);
                         for (std::size_t j = 0; j < p; ++j) {
                           double dot = 0.0;
                           for (std::size_t i = 0; i < d; ++i) dot += dq(i, j) * Q(i, j);
                           for (std::size_t i = 0; i < d; ++i) gq(i, j) += Q(i, j) * (dq(i, j) - dot);
                         }
                       }
                       if (wants(self, 1)) {
                         dk.noalias() = dctx * V;
                         MatMap gk(gin(self, 1).data().data() + base, d, p);
                         for (std::size_t i = 0; i < d; ++i) {
                           double dot = 0.0;
                           for (std::size_t j = 0; j < p; ++j) dot += dk(i, j) * K(i, j);
                           for (std::size_t j = 0; j < p; ++j) gk(i, j) += K(i, j) * (dk(i, j) - dot);
                         }
                       }
                       if (wants(self, 2)) {
                         MatMap gv(gin(self, 2).data().data() + base, d, p);
                         gv.noalias() += dctx.transpose() * K;
                       }
                     }
                   });
}

Var power_normalize(const Var& x, double power) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "power_normalize");
  const std::size_t n = xv.dim(0), len = xv.dim(1);
  if (len == 0 || len % 2 != 0) throw ShapeError("power_normalize: latent length must be even");
  const double target = std::sqrt(static_cast<double>(len / 2) * power);
  std::vector<double> norms(n);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += xv[r * len + j] * xv[r * len + j];
    if (s == 0.0) throw InvalidArgument("power_normalize: all-zero latent");
    norms[r] = std::sqrt(s);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xv[r * len + j] * target / norms[r];
  }
  return Var::make(std::move(out), {x}, [norms = std::move(norms), n, len, target](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      // y = target * x / |x|  =>  dx = target / |x| * (g - u (u . g)), u = x / |x|
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += self.grad[r * len + j] * self.value[r * len + j];
      dot /= target;
      for (std::size_t j = 0; j < len; ++j) {
        const double u = self.value[r * len + j] / target;
        g[r * len + j] += target / norms[r] * (self.grad[r * len + j] - u * dot);
      }
    }
  });
}

Var pad_to_image(const Var& x, const Shape& image_shape) {
  const Tensor& xv = x.value();
  require_rank(xv, 2, "pad_to_image");
  const std::size_t n = xv.dim(0), len = xv.dim(1), per = shape_numel(image_shape);
  if (len > per) {
    throw ShapeError("pad_to_image: latent length " + std::to_string(len) + " exceeds " +
                     std::to_string(per));
  }
  Shape s{n};
  s.insert(s.end(), image_shape.begin(), image_shape.end());
  Tensor out(s);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(xv.data().begin() + r * len, len, out.data().begin() + r * per);
  }
  return Var::make(std::move(out), {x}, [n, len, per](Node& self) {
    auto& g = gin(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += self.grad[r * per + j];
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Var::make(Tensor({1}, {s}), {x}, [](Node& self) {
    auto& g = gin(self, 0);
    for (auto& v : g.data()) v += self.grad[0];
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.value().numel());
  return scale(sum(x), inv);
}

Var mse_loss(const Var& prediction, const Var& target) {
  require_same_shape(prediction.value(), target.value(), "mse_loss");
  const std::size_t count = prediction.value().numel();
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = prediction.value()[i] - target.value()[i];
    s += d * d;
  }
  const double inv = 1.0 / static_cast<double>(count);
  return Var::make(Tensor({1}, {s * inv}), {prediction, target}, [inv, count](Node& self) {
    const double g0 = self.grad[0] * 2.0 * inv;
    for (std::size_t i = 0; i < count; ++i) {
      const double d = in(self, 0)[i] - in(self, 1)[i];
      if (wants(self, 0)) gin(self, 0)[i] += g0 * d;
      if (wants(self, 1)) gin(self, 1)[i] -= g0 * d;
    }
  });
}

}  // namespace semdiff::ag
