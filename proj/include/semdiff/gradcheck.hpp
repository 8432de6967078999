#pragma once

#include <functional>
#include <string>
#include <vector>

#include "semdiff/nn.hpp"

namespace semdiff {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
};

// Compares backprop gradients of a scalar loss against central differences
// (f(p + h) - f(p - h)) / 2h on `samples` entries drawn uniformly over all
// parameter values. Relative error is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult check_gradients(const std::function<ag::Var()>& loss, const nn::StateRefs& refs,
                                std::size_t samples, Rng& rng, double step = 1e-4,
                                double abs_floor = 1e-6);

}  // namespace semdiff
