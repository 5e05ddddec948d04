#include "modunet/optimizer.hpp"

#include <cmath>

namespace modunet {

template <typename T>
void AdaBelief<T>::ensure(const std::vector<std::size_t>& sizes) {
  if (m_.empty()) {
    for (auto n : sizes) {
      m_.emplace_back(n, 0.0);
      s_.emplace_back(n, 0.0);
    }
    return;
  }
  if (m_.size() != sizes.size()) throw ShapeError("optimizer: parameter count changed between steps");
  for (std::size_t i = 0; i < sizes.size(); ++i)
    if (m_[i].size() != sizes[i]) throw ShapeError("optimizer: parameter shape changed between steps");
}

template <typename T>
void AdaBelief<T>::update(std::size_t slot, std::span<T> p, std::span<const T> g, double lr, double c1, double c2) {
  auto& m = m_[slot];
  auto& s = s_[slot];
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.epsilon;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g[i];
    m[i] = b1 * m[i] + (1.0 - b1) * gi;
    const double d = gi - m[i];
    s[i] = b2 * s[i] + (1.0 - b2) * d * d + eps;
    const double m_hat = m[i] / c1;
    const double s_hat = s[i] / c2;
    if (lr != 0.0) p[i] = static_cast<T>(p[i] - lr * m_hat / (std::sqrt(s_hat) + eps));
  }
}

namespace {

template <typename T>
void check_finite(std::span<const T> g, const std::string& name) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(static_cast<double>(g[i])))
      throw NonFiniteError("non-finite gradient in " + name + " at element " + std::to_string(i));
}

}  // namespace

template <typename T>
void AdaBelief<T>::step(std::vector<NamedTensor<T>>& params, const std::vector<Tensor<T>>& grads, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (params.size() != grads.size()) throw ShapeError("optimizer: gradient count does not match parameters");
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value.same_shape(grads[i])) throw ShapeError("optimizer: gradient shape mismatch for " + params[i].name);
    check_finite(grads[i].data(), params[i].name);
    sizes.push_back(params[i].value.size());
  }
  ensure(sizes);
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i].value.data(), grads[i].data(), lr, c1, c2);
}

template <typename T>
void AdaBelief<T>::step(std::span<T> params, std::span<const T> grads, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (params.size() != grads.size()) throw ShapeError("optimizer: gradient size mismatch");
  check_finite(grads, "params");
  ensure({params.size()});
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  update(0, params, grads, lr, c1, c2);
}

template class AdaBelief<float>;
template class AdaBelief<double>;

}  // namespace modunet
