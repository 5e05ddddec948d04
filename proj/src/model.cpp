#include "modunet/model.hpp"

#include <algorithm>
#include <cmath>

namespace modunet {

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::GaussianNoise: return "gaussian_noise";
    case OpKind::Conv: return "conv";
    case OpKind::SeparableConv: return "separable_conv";
    case OpKind::TransposedConv: return "transposed_conv";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::Dropout: return "dropout";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::NearestUpsample: return "nearest_upsample";
    case OpKind::Concat: return "concat";
    case OpKind::Softmax: return "softmax";
  }
  return "?";
}

namespace {

// Lowers a spec into nodes plus parameter / running-stat layouts.
class Builder {
 public:
  explicit Builder(const ModUNetSpec& spec) : spec_(spec) {
    spec_.validate();
    const std::size_t rank = static_cast<std::size_t>(spec_.spatial_rank());
    taps_ = 1;
    for (std::size_t a = 0; a < rank; ++a) taps_ *= static_cast<std::size_t>(spec_.kernel);

    int x = 0;
    if (spec_.noise_std > 0.0) x = push({.kind = OpKind::GaussianNoise, .name = "input_noise", .input = x});

    std::vector<std::pair<int, std::size_t>> skips;
    std::size_t cin = spec_.input_channels();
    for (int level = 0; level < spec_.u_depth; ++level) {
      const std::size_t c = spec_.level_channels(level);
      x = conv_block("enc" + std::to_string(level), x, cin, c);
      skips.emplace_back(x, c);
      x = downsample("down" + std::to_string(level), x, c);
      cin = c;
    }
    std::size_t prev = spec_.level_channels(spec_.u_depth);
    x = conv_block("bottleneck", x, cin, prev);
    for (int level = spec_.u_depth - 1; level >= 0; --level) {
      const auto [skip, c] = skips[static_cast<std::size_t>(level)];
      x = upsample("up" + std::to_string(level), x, prev);
      x = push({.kind = OpKind::Concat, .name = "cat" + std::to_string(level), .input = x, .input2 = skip});
      x = conv_block("dec" + std::to_string(level), x, prev + c, c);
      prev = c;
    }
    x = conv("head", x, prev, static_cast<std::size_t>(spec_.num_classes), 1, 1, false);
    push({.kind = OpKind::Softmax, .name = "softmax", .input = x});
  }

  std::vector<Node> nodes;
  std::vector<ParamLayout> params;
  std::vector<std::string> stats;

 private:
  int push(Node n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size());
  }

  int param(std::string name, Shape shape, ParamLayout::Init init, std::size_t fan_in = 0) {
    params.push_back({std::move(name), std::move(shape), fan_in, init});
    return static_cast<int>(params.size()) - 1;
  }

  Shape kernel_shape(std::size_t k, std::size_t a, std::size_t b) const {
    Shape s(static_cast<std::size_t>(spec_.spatial_rank()), k);
    s.push_back(a);
    s.push_back(b);
    return s;
  }

  int conv(const std::string& name, int x, std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride,
           bool separable) {
    const std::size_t taps = k == 1 ? 1 : taps_;
    Node n{.name = name, .input = x, .stride = stride};
    if (separable) {
      n.kind = OpKind::SeparableConv;
      n.weights = param(name + ".depthwise", kernel_shape(k, cin, 1), ParamLayout::Init::HeUniform, taps);
      n.pointwise = param(name + ".pointwise", kernel_shape(1, cin, cout), ParamLayout::Init::HeUniform, cin);
    } else {
      n.kind = OpKind::Conv;
      n.weights = param(name + ".weights", kernel_shape(k, cin, cout), ParamLayout::Init::HeUniform, taps * cin);
    }
    n.bias = param(name + ".bias", {cout}, ParamLayout::Init::Zeros);
    return push(std::move(n));
  }

  int norm(const std::string& name, int x, std::size_t c) {
    if (spec_.norm == NormKind::None) return x;
    Node n{.kind = spec_.norm == NormKind::Batch ? OpKind::BatchNorm : OpKind::LayerNorm, .name = name, .input = x};
    n.gamma = param(name + ".gamma", {c}, ParamLayout::Init::Ones);
    n.beta = param(name + ".beta", {c}, ParamLayout::Init::Zeros);
    if (spec_.norm == NormKind::Batch) {
      stats.push_back(name + ".running_mean");
      n.running_mean = static_cast<int>(stats.size()) - 1;
      stats.push_back(name + ".running_var");
      n.running_var = static_cast<int>(stats.size()) - 1;
    }
    return push(std::move(n));
  }

  // conv -> norm -> relu -> conv -> norm [+ 1x1 residual] -> relu -> dropout
  int conv_block(const std::string& name, int x, std::size_t cin, std::size_t c) {
    const std::size_t k = static_cast<std::size_t>(spec_.kernel);
    int h = conv(name + ".conv1", x, cin, c, k, 1, spec_.separable);
    h = norm(name + ".norm1", h, c);
    h = push({.kind = OpKind::Relu, .name = name + ".relu1", .input = h});
    h = conv(name + ".conv2", h, c, c, k, 1, spec_.separable);
    h = norm(name + ".norm2", h, c);
    if (spec_.residual) {
      const int r = conv(name + ".residual", x, cin, c, 1, 1, false);
      h = push({.kind = OpKind::Add, .name = name + ".add", .input = h, .input2 = r});
    }
    h = push({.kind = OpKind::Relu, .name = name + ".relu2", .input = h});
    if (spec_.dropout_rate > 0.0) h = push({.kind = OpKind::Dropout, .name = name + ".dropout", .input = h});
    return h;
  }

  int downsample(const std::string& name, int x, std::size_t c) {
    if (spec_.sampling == Sampling::Rigid) {
      return push({.kind = OpKind::MaxPool, .name = name, .input = x, .stride = 2});
    }
    return conv(name, x, c, c, static_cast<std::size_t>(spec_.kernel), 2, false);
  }

  int upsample(const std::string& name, int x, std::size_t c) {
    if (spec_.sampling == Sampling::Rigid) {
      return push({.kind = OpKind::NearestUpsample, .name = name, .input = x, .stride = 2});
    }
    Node n{.kind = OpKind::TransposedConv, .name = name, .input = x, .stride = 2};
    n.weights = param(name + ".weights", kernel_shape(static_cast<std::size_t>(spec_.kernel), c, c),
                      ParamLayout::Init::HeUniform, taps_ * c);
    n.bias = param(name + ".bias", {c}, ParamLayout::Init::Zeros);
    return push(std::move(n));
  }

  ModUNetSpec spec_;
  std::size_t taps_ = 1;
};

template <typename T>
void accumulate_into(Tensor<T>& slot, Tensor<T>&& g) {
  if (slot.empty())
    slot = std::move(g);
  else
    accumulate(slot, g);
}

}  // namespace

std::vector<ParamLayout> param_layout(const ModUNetSpec& spec) { return Builder(spec).params; }

std::size_t param_count(const ModUNetSpec& spec) {
  std::size_t n = 0;
  for (const auto& p : param_layout(spec)) n += shape_numel(p.shape);
  return n;
}

template <typename T>
Model<T> Model<T>::skeleton(const ModUNetSpec& spec) {
  Builder b(spec);
  Model m;
  m.spec_ = spec;
  m.nodes_ = std::move(b.nodes);
  for (const auto& p : b.params) {
    m.params_.push_back({p.name, Tensor<T>(p.shape, p.init == ParamLayout::Init::Ones ? T{1} : T{0})});
  }
  for (const auto& s : b.stats) {
    const bool is_var = s.ends_with(".running_var");
    const auto& node = *std::find_if(m.nodes_.begin(), m.nodes_.end(), [&](const Node& n) {
      return n.running_mean >= 0 && s.starts_with(n.name + ".");
    });
    const std::size_t c = m.params_[static_cast<std::size_t>(node.gamma)].value.size();
    m.stats_.push_back({s, Tensor<T>({c}, is_var ? T{1} : T{0})});
  }
  m.last_use_.assign(m.nodes_.size() + 1, -1);
  for (std::size_t i = 0; i < m.nodes_.size(); ++i) {
    m.last_use_[static_cast<std::size_t>(m.nodes_[i].input)] = static_cast<int>(i);
    if (m.nodes_[i].input2 >= 0) m.last_use_[static_cast<std::size_t>(m.nodes_[i].input2)] = static_cast<int>(i);
  }
  return m;
}

template <typename T>
Model<T> Model<T>::build(const ModUNetSpec& spec, Rng& rng) {
  Model m = skeleton(spec);
  const auto layout = param_layout(spec);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].init != ParamLayout::Init::HeUniform) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(layout[i].fan_in));
    for (auto& v : m.params_[i].value.data()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  }
  return m;
}

template <typename T>
std::size_t Model<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
int Model<T>::find_param(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  return -1;
}

template <typename T>
void Model<T>::check_input(const Shape& shape) const {
  const std::size_t rank = static_cast<std::size_t>(spec_.spatial_rank()) + 2;
  if (shape.size() != rank) {
    throw ShapeError("model (" + to_string(spec_.variant) + ") expects a rank-" + std::to_string(rank) +
                     " input, got " + shape_str(shape));
  }
  if (shape.back() != spec_.input_channels()) {
    throw ShapeError("model expects " + std::to_string(spec_.input_channels()) + " input channels, got " +
                     std::to_string(shape.back()));
  }
  for (std::size_t a = 1; a + 1 < rank; ++a) {
    if (shape[a] % spec_.divisor() != 0) {
      throw ShapeError("spatial extents " + shape_str(shape) + " must be divisible by " +
                       std::to_string(spec_.divisor()));
    }
  }
}

template <typename T>
Tensor<T> Model<T>::run(const Tensor<T>& x, LayerMode mode, Rng* rng, Tape<T>* tape,
                        std::vector<std::pair<int, BatchStats>>* updates) const {
  check_input(x.shape());
  const bool train = mode == LayerMode::Train;
  std::vector<Tensor<T>> values(nodes_.size() + 1);
  values[0] = x;
  if (tape) {
    tape->norm.assign(nodes_.size(), {});
    tape->masks.assign(nodes_.size(), {});
    tape->argmax.assign(nodes_.size(), {});
  }
  const auto P = [&](int i) -> const Tensor<T>& { return params_[static_cast<std::size_t>(i)].value; };

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const Tensor<T>& in = values[static_cast<std::size_t>(n.input)];
    Tensor<T> out;
    switch (n.kind) {
      case OpKind::GaussianNoise:
        out = train ? gaussian_noise(in, spec_.noise_std, mode, *rng) : in;
        break;
      case OpKind::Conv:
        out = conv(in, P(n.weights), P(n.bias), {n.stride}, Padding::Same);
        break;
      case OpKind::SeparableConv:
        out = separable_conv(in, SeparableWeights<T>{P(n.weights), P(n.pointwise)}, P(n.bias), {n.stride},
                             Padding::Same);
        break;
      case OpKind::TransposedConv:
        out = transposed_conv(in, P(n.weights), P(n.bias), {n.stride});
        break;
      case OpKind::BatchNorm:
        if (train) {
          BatchStats bs;
          out = batch_norm_train(in, P(n.gamma), P(n.beta), tape ? &tape->norm[i] : nullptr, &bs);
          if (updates) updates->emplace_back(static_cast<int>(i), std::move(bs));
        } else {
          out = batch_norm_infer(in, P(n.gamma), P(n.beta), stats_[static_cast<std::size_t>(n.running_mean)].value,
                                 stats_[static_cast<std::size_t>(n.running_var)].value);
        }
        break;
      case OpKind::LayerNorm:
        out = layer_norm(in, P(n.gamma), P(n.beta), tape ? &tape->norm[i] : nullptr);
        break;
      case OpKind::Relu:
        out = relu(in);
        break;
      case OpKind::Add:
        out = add(in, values[static_cast<std::size_t>(n.input2)]);
        break;
      case OpKind::Dropout:
        out = train ? dropout(in, spec_.dropout_rate, mode, *rng, tape ? &tape->masks[i] : nullptr) : in;
        break;
      case OpKind::MaxPool:
        out = max_pool(in, n.stride, tape ? &tape->argmax[i] : nullptr);
        break;
      case OpKind::NearestUpsample:
        out = nearest_upsample(in, n.stride);
        break;
      case OpKind::Concat:
        out = concat_channels(in, values[static_cast<std::size_t>(n.input2)]);
        break;
      case OpKind::Softmax:
        out = softmax_channels(in);
        break;
    }
    values[i + 1] = std::move(out);
    if (!tape) {
      // release activations nobody reads anymore
      for (int slot : {n.input, n.input2}) {
        if (slot >= 0 && last_use_[static_cast<std::size_t>(slot)] == static_cast<int>(i)) {
          values[static_cast<std::size_t>(slot)] = Tensor<T>();
        }
      }
    }
  }
  Tensor<T> result = values.back();
  if (tape) tape->values = std::move(values);
  return result;
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, LayerMode mode, Rng& rng, Tape<T>* tape) {
  std::vector<std::pair<int, BatchStats>> updates;
  Tensor<T> y = run(x, mode, &rng, tape, mode == LayerMode::Train ? &updates : nullptr);
  for (const auto& [node_index, bs] : updates) {
    const Node& n = nodes_[static_cast<std::size_t>(node_index)];
    update_running_stats(stats_[static_cast<std::size_t>(n.running_mean)].value,
                         stats_[static_cast<std::size_t>(n.running_var)].value, bs, spec_.batchnorm_momentum);
  }
  return y;
}

template <typename T>
Tensor<T> Model<T>::evaluate(const Tensor<T>& x, LayerMode mode, Rng& rng, Tape<T>* tape) const {
  return run(x, mode, &rng, tape, nullptr);
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& x) const {
  return run(x, LayerMode::Infer, nullptr, nullptr, nullptr);
}

template <typename T>
ModelGrads<T> Model<T>::backward(const Tape<T>& tape, const Tensor<T>& dprobs) const {
  if (tape.values.size() != nodes_.size() + 1) throw std::invalid_argument("backward: tape does not match model");
  if (!dprobs.same_shape(tape.values.back())) throw ShapeError("backward: dprobs shape mismatch");

  ModelGrads<T> out;
  out.params.resize(params_.size());
  for (std::size_t p = 0; p < params_.size(); ++p) out.params[p] = Tensor<T>(params_[p].value.shape());

  std::vector<Tensor<T>> grads(nodes_.size() + 1);
  grads.back() = dprobs;
  const auto P = [&](int i) -> const Tensor<T>& { return params_[static_cast<std::size_t>(i)].value; };
  const auto add_param = [&](int i, const Tensor<T>& g) { accumulate(out.params[static_cast<std::size_t>(i)], g); };

  for (std::size_t ii = nodes_.size(); ii-- > 0;) {
    const Node& n = nodes_[ii];
    Tensor<T> dy = std::move(grads[ii + 1]);
    if (dy.empty()) continue;
    const Tensor<T>& in = tape.values[static_cast<std::size_t>(n.input)];
    auto& gin = grads[static_cast<std::size_t>(n.input)];
    switch (n.kind) {
      case OpKind::GaussianNoise:
        accumulate_into(gin, std::move(dy));
        break;
      case OpKind::Conv: {
        auto g = conv_backward(in, P(n.weights), dy, {n.stride}, Padding::Same, true);
        add_param(n.weights, g.param_grads["weights"]);
        add_param(n.bias, g.param_grads["bias"]);
        accumulate_into(gin, std::move(g.input_grad));
        break;
      }
      case OpKind::SeparableConv: {
        auto g = separable_conv_backward(in, SeparableWeights<T>{P(n.weights), P(n.pointwise)}, dy, {n.stride},
                                         Padding::Same);
        add_param(n.weights, g.param_grads["depthwise"]);
        add_param(n.pointwise, g.param_grads["pointwise"]);
        add_param(n.bias, g.param_grads["bias"]);
        accumulate_into(gin, std::move(g.input_grad));
        break;
      }
      case OpKind::TransposedConv: {
        auto g = transposed_conv_backward(in, P(n.weights), dy, {n.stride}, true);
        add_param(n.weights, g.param_grads["weights"]);
        add_param(n.bias, g.param_grads["bias"]);
        accumulate_into(gin, std::move(g.input_grad));
        break;
      }
      case OpKind::BatchNorm:
      case OpKind::LayerNorm: {
        const auto& cache = tape.norm[ii];
        if (cache.normalized.empty()) throw std::invalid_argument("backward needs a Train-mode tape");
        auto g = n.kind == OpKind::BatchNorm ? batch_norm_backward(dy, P(n.gamma), cache)
                                             : layer_norm_backward(dy, P(n.gamma), cache);
        add_param(n.gamma, g.param_grads["gamma"]);
        add_param(n.beta, g.param_grads["beta"]);
        accumulate_into(gin, std::move(g.input_grad));
        break;
      }
      case OpKind::Relu:
        accumulate_into(gin, relu_backward(in, dy));
        break;
      case OpKind::Add:
        accumulate_into(grads[static_cast<std::size_t>(n.input2)], Tensor<T>(dy));
        accumulate_into(gin, std::move(dy));
        break;
      case OpKind::Dropout:
        if (tape.masks[ii].empty()) throw std::invalid_argument("backward needs a Train-mode tape");
        accumulate_into(gin, dropout_backward(dy, tape.masks[ii]));
        break;
      case OpKind::MaxPool:
        accumulate_into(gin, max_pool_backward(dy, tape.argmax[ii], in.shape()));
        break;
      case OpKind::NearestUpsample:
        accumulate_into(gin, nearest_upsample_backward(dy, n.stride));
        break;
      case OpKind::Concat: {
        auto [da, db] = concat_backward(dy, in.channels());
        accumulate_into(grads[static_cast<std::size_t>(n.input2)], std::move(db));
        accumulate_into(gin, std::move(da));
        break;
      }
      case OpKind::Softmax:
        accumulate_into(gin, softmax_backward(tape.values[ii + 1], dy));
        break;
    }
  }
  out.input = std::move(grads[0]);
  return out;
}

template <typename T>
std::vector<std::uint8_t> predict_labels(const Tensor<T>& probs) {
  const std::size_t c = probs.channels();
  const std::size_t rows = probs.size() / c;
  std::vector<std::uint8_t> labels(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = probs.ptr() + r * c;
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (row[k] > row[best]) best = k;
    labels[r] = static_cast<std::uint8_t>(best);
  }
  return labels;
}

template class Model<float>;
template class Model<double>;
template std::vector<std::uint8_t> predict_labels(const Tensor<float>&);
template std::vector<std::uint8_t> predict_labels(const Tensor<double>&);

}  // namespace modunet
