#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modunet/grad_check.hpp"
#include "modunet/model.hpp"

namespace modunet {

struct AdaBeliefConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// AdaBelief: Adam with the second moment tracking (g - m)^2, the "belief" in
/// the current gradient direction.
template <typename T>
class AdaBelief {
 public:
  AdaBelief() = default;
  explicit AdaBelief(AdaBeliefConfig config) : config_(config) {}

  /// Lazily sizes the moments from the first call. Throws NonFiniteError and
  /// leaves everything untouched if any gradient entry is NaN or infinite.
  void step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads, double lr);
  /// Flat-array form used by tests.
  void step(std::span<T> params, std::span<const T> grads, double lr);

  std::uint64_t steps() const noexcept { return t_; }
  const AdaBeliefConfig& config() const noexcept { return config_; }
  const std::vector<std::vector<double>>& first_moment() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moment() const noexcept { return s_; }

 private:
  void ensure(const std::vector<std::size_t>& sizes);
  void update(std::size_t slot, std::span<T> p, std::span<const T> g, double lr, double c1, double c2);

  AdaBeliefConfig config_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> s_;
};

}  // namespace modunet
