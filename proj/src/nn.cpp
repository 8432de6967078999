#include "semdiff/nn.hpp"

#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff::nn {

void StateRefs::zero_grad() {
  for (auto& [name, v] : params) v.zero_grad();
}

std::size_t StateRefs::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params) n += v.value().numel();
  return n;
}

std::vector<Tensor> StateRefs::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params.size() + buffers.size());
  for (const auto& [name, v] : params) out.push_back(v.value());
  for (const auto& [name, t] : buffers) out.push_back(*t);
  return out;
}

void StateRefs::assign_from(const StateRefs& other) {
  if (other.params.size() != params.size() || other.buffers.size() != buffers.size()) {
    throw ShapeError("assign_from: model layouts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].first != other.params[i].first ||
        params[i].second.shape() != other.params[i].second.shape()) {
      throw ShapeError("assign_from: parameter mismatch at " + params[i].first);
    }
    auto v = params[i].second;
    v.mutable_value() = other.params[i].second.value();
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = *other.buffers[i].second;
}

Tensor fan_in_normal(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(gain / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = std * rng.normal();
  return t;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain)
    : weight(ag::Var::parameter(fan_in_normal({out, in}, in, rng, gain))),
      bias(ag::Var::parameter(Tensor({out}))) {}

void Linear::collect(const std::string& prefix, StateRefs& refs) const {
  refs.add(prefix + ".weight", weight);
  refs.add(prefix + ".bias", bias);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, int kernel, int stride_, int padding_, Rng& rng,
               double gain)
    : weight(ag::Var::parameter(fan_in_normal(
          {out, in, static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
          in * kernel * kernel, rng, gain))),
      bias(ag::Var::parameter(Tensor({out}))),
      stride(stride_),
      padding(padding_) {}

void Conv2d::collect(const std::string& prefix, StateRefs& refs) const {
  refs.add(prefix + ".weight", weight);
  refs.add(prefix + ".bias", bias);
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, int kernel, int stride_,
                                 int padding_, int output_padding_, Rng& rng, double gain)
    : weight(ag::Var::parameter(fan_in_normal(
          {in, out, static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)},
          in * kernel * kernel / static_cast<std::size_t>(stride_ * stride_), rng, gain))),
      bias(ag::Var::parameter(Tensor({out}))),
      stride(stride_),
      padding(padding_),
      output_padding(output_padding_) {}

void ConvTranspose2d::collect(const std::string& prefix, StateRefs& refs) const {
  refs.add(prefix + ".weight", weight);
  refs.add(prefix + ".bias", bias);
}

GroupNorm::GroupNorm(std::size_t channels, int groups_)
    : gamma(ag::Var::parameter(Tensor({channels}, 1.0))),
      beta(ag::Var::parameter(Tensor({channels}))),
      groups(groups_) {}

void GroupNorm::collect(const std::string& prefix, StateRefs& refs) const {
  refs.add(prefix + ".gamma", gamma);
  refs.add(prefix + ".beta", beta);
}

BatchNorm2d::BatchNorm2d(std::size_t channels, double momentum)
    : gamma(ag::Var::parameter(Tensor({channels}, 1.0))),
      beta(ag::Var::parameter(Tensor({channels}))) {
  state.running_mean = Tensor({channels});
  state.running_var = Tensor({channels}, 1.0);
  state.momentum = momentum;
}

void BatchNorm2d::collect(const std::string& prefix, StateRefs& refs) {
  refs.add(prefix + ".gamma", gamma);
  refs.add(prefix + ".beta", beta);
  refs.add_buffer(prefix + ".running_mean", &state.running_mean);
  refs.add_buffer(prefix + ".running_var", &state.running_var);
}

Adam::Adam(StateRefs refs, Options options) : refs_(std::move(refs)), options_(options) {
  for (const auto& [name, v] : refs_.params) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < refs_.params.size(); ++i) {
    auto var = refs_.params[i].second;
    const Tensor& g = var.grad();
    Tensor& p = var.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      p[j] -= options_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + options_.eps);
    }
  }
}

}  // namespace semdiff::nn
