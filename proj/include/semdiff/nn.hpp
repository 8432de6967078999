#pragma once

#include <string>
#include <utility>
#include <vector>

#include "semdiff/autograd.hpp"
#include "semdiff/rng.hpp"

namespace semdiff::nn {

// Flat, ordered view of a module tree's trainable parameters and buffers.
// Order is deterministic, so two models built from the same config line up.
struct StateRefs {
  std::vector<std::pair<std::string, ag::Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add(const std::string& name, const ag::Var& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }

  void zero_grad();
  std::size_t parameter_count() const;
  // Snapshot of parameter values followed by buffers.
  std::vector<Tensor> snapshot() const;
  // Copies values from another model with identical layout.
  void assign_from(const StateRefs& other);
};

// Gaussian init with std = sqrt(gain / fan_in).
Tensor fan_in_normal(Shape shape, std::size_t fan_in, Rng& rng, double gain = 2.0);

struct Linear {
  ag::Var weight;  // (out, in)
  ag::Var bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 2.0);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, StateRefs& refs) const;
};

struct Conv2d {
  ag::Var weight;  // (out, in, k, k)
  ag::Var bias;    // (out)
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, int kernel, int stride, int padding, Rng& rng,
         double gain = 2.0);
  ag::Var operator()(const ag::Var& x) const {
    return ag::conv2d(x, weight, bias, stride, padding);
  }
  void collect(const std::string& prefix, StateRefs& refs) const;
};

struct ConvTranspose2d {
  ag::Var weight;  // (in, out, k, k)
  ag::Var bias;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t in, std::size_t out, int kernel, int stride, int padding,
                  int output_padding, Rng& rng, double gain = 2.0);
  ag::Var operator()(const ag::Var& x) const {
    return ag::conv_transpose2d(x, weight, bias, stride, padding, output_padding);
  }
  void collect(const std::string& prefix, StateRefs& refs) const;
};

struct GroupNorm {
  ag::Var gamma;
  ag::Var beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(std::size_t channels, int groups);
  ag::Var operator()(const ag::Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
  void collect(const std::string& prefix, StateRefs& refs) const;
};

struct BatchNorm2d {
  ag::Var gamma;
  ag::Var beta;
  ag::BatchNormState state;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1);
  ag::Var operator()(const ag::Var& x, bool training) {
    return ag::batch_norm(x, gamma, beta, state, training);
  }
  void collect(const std::string& prefix, StateRefs& refs);
};

// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(StateRefs refs, Options options);
  void step();
  std::size_t steps() const noexcept { return step_; }
  const Options& options() const noexcept { return options_; }

 private:
  StateRefs refs_;
  Options options_;
  std::vector<Tensor> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace semdiff::nn
