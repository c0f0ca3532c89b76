#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/rng.hpp"
#include "sploss/tensor.hpp"

namespace sploss {

enum class Activation : std::uint32_t { identity = 0, relu = 1, tanh = 2 };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

/// y = act(W x + b), W stored out x in.
struct DenseLayer {
  Tensor weights;
  Tensor bias;  // out x 1
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Ordered stack of dense layers. The last layer is linear; softmax belongs to the loss.
///
/// Every mutable access bumps generation(), which forward caches record so that
/// backward() can refuse a cache computed against different parameters.
class Network {
 public:
  Network() = default;

  explicit Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

  /// Layer widths {in, h1, ..., K}; hidden layers use `hidden`, the head is identity.
  /// Weights ~ U(-a, a) with a = sqrt(6 / fan_in) for relu and sqrt(3 / fan_in)
  /// otherwise; biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Network random(std::span<const std::size_t> widths, Activation hidden, std::uint64_t seed) {
    if (widths.size() < 2) throw InvalidArgument("network needs at least input and output widths");
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::size_t in = widths[l];
      const std::size_t out = widths[l + 1];
      if (in == 0 || out == 0) throw InvalidArgument("layer widths must be positive");
      const bool last = l + 2 == widths.size();
      const Activation act = last ? Activation::identity : hidden;
      const double fan_in = static_cast<double>(in);
      const double wb = std::sqrt((act == Activation::relu ? 6.0 : 3.0) / fan_in);
      const double bb = 1.0 / std::sqrt(fan_in);
      DenseLayer layer{Tensor(out, in), Tensor(out, 1), act};
      for (double& w : layer.weights.data()) w = rng.uniform(-wb, wb);
      for (double& b : layer.bias.data()) b = rng.uniform(-bb, bb);
      layers.push_back(std::move(layer));
    }
    return Network(std::move(layers));
  }

  static Network random(std::initializer_list<std::size_t> widths, Activation hidden,
                        std::uint64_t seed) {
    const std::vector<std::size_t> w(widths);
    return random(std::span<const std::size_t>(w), hidden, seed);
  }

  std::size_t input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  const DenseLayer& head() const { return layers_.back(); }

  DenseLayer& mutable_layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }

  std::uint64_t generation() const { return generation_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// Parameters compare equal; generation is bookkeeping and ignored.
  friend bool operator==(const Network& a, const Network& b) { return a.layers_ == b.layers_; }

 private:
  void validate() const {
    if (layers_.empty()) throw DimensionError("network has no layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      if (l.weights.empty()) throw DimensionError("layer " + std::to_string(i) + " has no weights");
      if (l.bias.rows() != l.out_dim() || l.bias.cols() != 1) {
        throw DimensionError("layer " + std::to_string(i) + " bias " + l.bias.shape_string() +
                             " does not match weights " + l.weights.shape_string());
      }
      if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
        throw DimensionError("layer " + std::to_string(i) + " expects " +
                             std::to_string(l.in_dim()) + " inputs, previous layer emits " +
                             std::to_string(layers_[i - 1].out_dim()));
      }
    }
    if (layers_.back().activation != Activation::identity) {
      throw InvalidArgument("final layer must be identity (softmax lives in the loss)");
    }
  }

  std::vector<DenseLayer> layers_;
  std::uint64_t generation_ = 0;
};

/// Activations retained by forward() for backward().
struct ForwardCache {
  const Network* net = nullptr;
  std::uint64_t generation = 0;
  std::vector<Tensor> inputs;   // inputs[l] feeds layer l; inputs[0] is the batch
  std::vector<Tensor> outputs;  // post-activation output of layer l
  const Tensor& logits() const { return outputs.back(); }
  /// Input of the last (fully connected) layer, i.e. the learned features u(x).
  const Tensor& features() const { return inputs.back(); }
};

/// One gradient tensor per parameter tensor.
struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> bias;

  static Gradients zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
      g.weights.emplace_back(l.weights.rows(), l.weights.cols());
      g.bias.emplace_back(l.bias.rows(), 1);
    }
    return g;
  }
};

namespace detail {

inline void activate(Tensor& t, Activation a) {
  switch (a) {
    case Activation::identity: return;
    case Activation::relu:
      for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::tanh:
      for (double& v : t.data()) v = std::tanh(v);
      return;
  }
}

/// Multiplies `grad` in place by act'(.) expressed through the activation output.
inline void activation_backward(Tensor& grad, const Tensor& output, Activation a) {
  auto g = grad.data();
  auto y = output.data();
  switch (a) {
    case Activation::identity: return;
    case Activation::relu:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(y[i] > 0.0)) g[i] = 0.0;
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
      return;
  }
}

}  // namespace detail

inline ForwardCache forward(const Network& net, const Tensor& batch) {
  if (batch.cols() != net.input_dim()) {
    throw DimensionError("forward: batch has " + std::to_string(batch.cols()) +
                         " columns, network expects " + std::to_string(net.input_dim()));
  }
  ForwardCache cache;
  cache.net = &net;
  cache.generation = net.generation();
  cache.inputs.reserve(net.depth());
  cache.outputs.reserve(net.depth());
  const Tensor* x = &batch;
  for (const auto& layer : net.layers()) {
    cache.inputs.push_back(*x);
    Tensor z = matmul_bt(*x, layer.weights);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias(c, 0);
    }
    detail::activate(z, layer.activation);
    cache.outputs.push_back(std::move(z));
    x = &cache.outputs.back();
  }
  return cache;
}

inline Tensor logits(const Network& net, const Tensor& batch) {
  return forward(net, batch).outputs.back();
}

inline std::vector<int> predict(const Network& net, const Tensor& batch) {
  const Tensor z = logits(net, batch);
  std::vector<int> out(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace detail {

inline void check_cache(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
  if (cache.net != &net || cache.generation != net.generation() ||
      cache.outputs.size() != net.depth()) {
    throw StaleCacheError("backward: cache does not belong to the current network state");
  }
  if (dlogits.rows() != cache.logits().rows() || dlogits.cols() != net.output_dim()) {
    throw DimensionError("backward: upstream gradient " + dlogits.shape_string() +
                         " vs logits " + cache.logits().shape_string());
  }
}

/// Shared reverse sweep. Parameter gradients are filled when `grads` is non-null;
/// the input gradient is returned when `want_input` is set.
inline Tensor reverse_sweep(const Network& net, const ForwardCache& cache, const Tensor& dlogits,
                            Gradients* grads, bool want_input) {
  check_cache(net, cache, dlogits);
  Tensor delta = dlogits;
  for (std::size_t l = net.depth(); l-- > 0;) {
    const auto& layer = net.layer(l);
    activation_backward(delta, cache.outputs[l], layer.activation);
    if (grads != nullptr) {
      grads->weights[l] = matmul_at(delta, cache.inputs[l]);
      Tensor db(layer.out_dim(), 1);
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        auto row = delta.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) db(c, 0) += row[c];
      }
      grads->bias[l] = std::move(db);
    }
    if (l > 0 || want_input) delta = matmul(delta, layer.weights);
  }
  return want_input ? delta : Tensor();
}

}  // namespace detail

/// Parameter gradients for upstream dL/dlogits.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
  Gradients g = Gradients::zeros_like(net);
  detail::reverse_sweep(net, cache, dlogits, &g, false);
  return g;
}

/// dL/d(batch) for upstream dL/dlogits.
inline Tensor backward_input(const Network& net, const ForwardCache& cache, const Tensor& dlogits) {
  return detail::reverse_sweep(net, cache, dlogits, nullptr, true);
}

/// Multiplies the last layer's weights and bias by c > 0.
inline Network scale_last_layer(Network net, double c) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw InvalidArgument("scale_last_layer: factor must be a finite positive number");
  }
  auto& head = net.mutable_layer(net.depth() - 1);
  head.weights *= c;
  head.bias *= c;
  return net;
}

}  // namespace sploss
