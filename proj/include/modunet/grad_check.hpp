#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "modunet/tensor.hpp"

namespace modunet {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar function of some named 64-bit tensors, with its analytic gradient.
/// The tensors are perturbed in place during the check and restored afterwards.
struct GradCheckTarget {
  std::map<std::string, Tensor<double>*> tensors;
  std::function<double()> objective;
  std::function<std::map<std::string, Tensor<double>>()> analytic;
};

struct GradCheckOptions {
  double step = 1e-5;              // relative to max(1, |value|)
  double denominator_floor = 1e-8; // keeps near-zero gradients from reporting huge ratios
  std::size_t max_samples = 0;     // per tensor; 0 checks every element
  std::uint64_t seed = 0;          // picks the sampled elements
};

struct GradCheckReport {
  std::map<std::string, double> max_relative_error;
  double tolerance = 0.0;

  double worst() const;
  bool passed() const { return worst() < tolerance; }
};

/// Compares analytic gradients against central finite differences.
/// Relative error per element is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(GradCheckTarget& target, double tolerance, const GradCheckOptions& options = {});

}  // namespace modunet
