#include "semdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {

double GradCheckResult::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error);
  return m;
}

GradCheckResult check_gradients(const std::function<ag::Var()>& loss, const nn::StateRefs& refs,
                                std::size_t samples, Rng& rng, double step, double abs_floor) {
  const std::size_t total = refs.parameter_count();
  if (total == 0) throw InvalidArgument("no parameters to check");
  nn::StateRefs work = refs;
  work.zero_grad();
  ag::Var l = loss();
  l.backward();

  GradCheckResult result;
  for (std::size_t s = 0; s < samples; ++s) {
    auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
    std::size_t p = 0;
    while (flat >= work.params[p].second.value().numel()) flat -= work.params[p++].second.value().numel();
    ag::Var param = work.params[p].second;
    GradCheckEntry e;
    e.param = work.params[p].first;
    e.index = flat;
    e.analytic = param.grad()[flat];
    double& value = param.mutable_value()[flat];
    const double original = value;
    value = original + step;
    const double plus = loss().value()[0];
    value = original - step;
    const double minus = loss().value()[0];
    value = original;
    e.numeric = (plus - minus) / (2.0 * step);
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({std::abs(e.analytic), std::abs(e.numeric), abs_floor});
    result.entries.push_back(e);
  }
  return result;
}

}  // namespace semdiff
