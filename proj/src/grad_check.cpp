#include "modunet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "modunet/rng.hpp"

namespace modunet {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& [name, err] : max_relative_error) w = std::max(w, err);
  return w;
}

GradCheckReport grad_check(GradCheckTarget& target, double tolerance, const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;
  const auto analytic = target.analytic();
  Rng rng(options.seed, 0x6772616463686bull);

  for (auto& [name, tensor] : target.tensors) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw std::invalid_argument("grad_check: no analytic gradient for '" + name + "'");
    const Tensor<double>& grad = it->second;
    if (!grad.same_shape(*tensor)) throw ShapeError("grad_check: gradient shape mismatch for '" + name + "'");

    std::vector<std::size_t> indices(tensor->size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_samples && options.max_samples < indices.size()) {
      // partial Fisher-Yates keeps the sample deterministic given the seed
      for (std::size_t i = 0; i < options.max_samples; ++i) {
        const std::size_t j = i + rng.uniform_int(indices.size() - i);
        std::swap(indices[i], indices[j]);
      }
      indices.resize(options.max_samples);
    }

    double worst = 0.0;
    for (const std::size_t i : indices) {
      const double original = (*tensor)[i];
      const double h = options.step * std::max(1.0, std::abs(original));
      (*tensor)[i] = original + h;
      const double up = target.objective();
      (*tensor)[i] = original - h;
      const double down = target.objective();
      (*tensor)[i] = original;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw NonFiniteError("grad_check: non-finite value in '" + name + "'");
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    report.max_relative_error[name] = worst;
  }
  return report;
}

}  // namespace modunet
