#pragma once

// The Modular U-Net. The builder lowers a ModUNetSpec into a flat, fixed list
// of nodes (encoder ConvBlock/Downsample pairs, bottleneck, decoder
// Upsample/concat/ConvBlock triples, 1x1 head, softmax). Forward runs the list
// in order; backward walks it in reverse.
//
// Value slot 0 is the model input; node i writes slot i + 1.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modunet/ops.hpp"
#include "modunet/rng.hpp"
#include "modunet/spec.hpp"
#include "modunet/tensor.hpp"

namespace modunet {

enum class OpKind {
  GaussianNoise,
  Conv,
  SeparableConv,
  TransposedConv,
  BatchNorm,
  LayerNorm,
  Relu,
  Add,
  Dropout,
  MaxPool,
  NearestUpsample,
  Concat,
  Softmax,
};

std::string to_string(OpKind kind);

struct Node {
  OpKind kind = OpKind::Relu;
  std::string name;
  int input = 0;
  int input2 = -1;          // second operand of Add / Concat
  std::size_t stride = 1;   // conv stride, pool window or upsample factor
  int weights = -1;         // parameter indices
  int pointwise = -1;
  int bias = -1;
  int gamma = -1;
  int beta = -1;
  int running_mean = -1;    // running-stat indices
  int running_var = -1;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

struct ParamLayout {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for non-kernel parameters
  enum class Init { HeUniform, Zeros, Ones } init = Init::Zeros;
};

/// Everything a backward pass needs from a Train-mode forward.
template <typename T>
struct Tape {
  std::vector<Tensor<T>> values;
  std::vector<NormCache<T>> norm;
  std::vector<Tensor<T>> masks;
  std::vector<std::vector<std::size_t>> argmax;
};

template <typename T>
struct ModelGrads {
  std::vector<Tensor<T>> params;  // aligned with Model::params()
  Tensor<T> input;
};

template <typename T>
class Model {
 public:
  Model() = default;

  static Model build(const ModUNetSpec& spec, Rng& rng);

  const ModUNetSpec& spec() const noexcept { return spec_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::vector<NamedTensor<T>>& params() noexcept { return params_; }
  const std::vector<NamedTensor<T>>& params() const noexcept { return params_; }
  std::vector<NamedTensor<T>>& stats() noexcept { return stats_; }
  const std::vector<NamedTensor<T>>& stats() const noexcept { return stats_; }

  std::size_t param_count() const;
  int find_param(std::string_view name) const;

  /// Throws ShapeError unless `shape` is a valid input for this model.
  void check_input(const Shape& shape) const;

  /// Train mode folds the batch statistics into the running averages.
  Tensor<T> forward(const Tensor<T>& x, LayerMode mode, Rng& rng, Tape<T>* tape = nullptr);
  /// Same computation as forward, but never mutates the model.
  Tensor<T> evaluate(const Tensor<T>& x, LayerMode mode, Rng& rng, Tape<T>* tape = nullptr) const;
  /// Infer-mode probabilities. Safe to call concurrently.
  Tensor<T> predict(const Tensor<T>& x) const;

  /// Backpropagates `dprobs` (gradient w.r.t. the softmax output) through a Train-mode tape.
  ModelGrads<T> backward(const Tape<T>& tape, const Tensor<T>& dprobs) const;

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.spec_ = spec_;
    m.nodes_ = nodes_;
    m.last_use_ = last_use_;
    for (const auto& p : params_) m.params_.push_back({p.name, p.value.template cast<U>()});
    for (const auto& s : stats_) m.stats_.push_back({s.name, s.value.template cast<U>()});
    return m;
  }

  /// Builds an uninitialized model (zero parameters, unit running variance) from a spec.
  static Model skeleton(const ModUNetSpec& spec);

 private:
  template <typename>
  friend class Model;

  Tensor<T> run(const Tensor<T>& x, LayerMode mode, Rng* rng, Tape<T>* tape,
                std::vector<std::pair<int, BatchStats>>* updates) const;

  ModUNetSpec spec_;
  std::vector<Node> nodes_;
  std::vector<int> last_use_;  // per value slot: last node index reading it
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> stats_;
};

/// Parameter shapes in build order (the order used by the model file).
std::vector<ParamLayout> param_layout(const ModUNetSpec& spec);
/// Exact number of learnable scalars: kernels, biases, norm gamma/beta.
std::size_t param_count(const ModUNetSpec& spec);

/// Per-voxel argmax over the channel axis; ties go to the lowest class id.
template <typename T>
std::vector<std::uint8_t> predict_labels(const Tensor<T>& probs);

}  // namespace modunet
