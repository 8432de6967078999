#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "semdiff/tensor.hpp"

namespace semdiff {

// Reverse-mode automatic differentiation over Tensors.
//
// A Var is a shared handle to a graph node. Parameters are persistent leaf
// nodes owned by modules; every op creates a fresh node that keeps its inputs
// alive until backward() has run and the result is dropped.
namespace ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient buffer; zeros if nothing has been accumulated yet.
  const Tensor& grad() const;
  void zero_grad();

  // Seeds d(this)/d(this) = 1; this must hold a single element.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }

  // Internal: builds an op result.
  static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

 private:
  std::shared_ptr<Node> node_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// Multiplies leading-axis row i by coeffs[i].
Var scale_rows(const Var& a, std::span<const double> coeffs);

Var relu(const Var& x);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
// Values outside [lo, hi] are clipped and receive zero gradient.
Var clamp(const Var& x, double lo, double hi);

Var reshape(const Var& x, Shape shape);
// (N, C1, H, W) ++ (N, C2, H, W) -> (N, C1 + C2, H, W).
Var concat_channels(const Var& a, const Var& b);
// x (N, C, H, W) + bias (N, C) broadcast over spatial positions.
Var add_channel_bias(const Var& x, const Var& bias);
Var upsample_nearest2x(const Var& x);

// x (N, in) * W^T (out, in) + b (out).
Var linear(const Var& x, const Var& weight, const Var& bias);
// x (N, Cin, H, W), weight (Cout, Cin, k, k), bias (Cout) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
// x (N, Cin, H, W), weight (Cin, Cout, k, k), bias (Cout) or undefined.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding);

// Normalizes each (sample, group) slice; affine per channel.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// Training mode uses batch statistics and updates the running estimates.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training);

// Linear attention core over (N, D, P) query/key/value maps: queries are
// softmax-normalized over D, keys over P, and the output is
// out[e, p] = sum_d (sum_q k[d, q] v[e, q]) q[d, p].
Var linear_attention(const Var& q, const Var& k, const Var& v);

// Per-row power normalization of a (N, 2 * symbols) latent so that
// (1 / symbols) * sum |z_i|^2 == power.
Var power_normalize(const Var& x, double power);
// Places each (N, L) row into a zero (N, C, H, W) tensor in row-major order.
Var pad_to_image(const Var& x, const Shape& image_shape);

Var sum(const Var& x);
Var mean(const Var& x);
// Mean squared error over all elements.
Var mse_loss(const Var& prediction, const Var& target);

}  // namespace ag
}  // namespace semdiff
