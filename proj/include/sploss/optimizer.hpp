#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sploss/error.hpp"
#include "sploss/network.hpp"

namespace sploss {

enum class OptimizerKind : std::uint32_t { sgd = 0, adam = 1 };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw InvalidArgument("unknown optimizer '" + s + "'");
}

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw InvalidArgument("learning rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidArgument("adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("adam epsilon must be positive");
  }
};

/// SGD or Adam (bias-corrected) with moments shaped like the network's parameters.
class Optimizer {
 public:
  Optimizer() = default;

  Optimizer(OptimizerSettings settings, const Network& net) : settings_(settings) {
    settings_.validate();
    if (settings_.kind == OptimizerKind::adam) {
      m_ = Gradients::zeros_like(net);
      v_ = Gradients::zeros_like(net);
    }
  }

  /// Restores saved state; moment shapes are checked on the next step.
  Optimizer(OptimizerSettings settings, std::uint64_t steps, Gradients m, Gradients v)
      : settings_(settings), steps_(steps), m_(std::move(m)), v_(std::move(v)) {
    settings_.validate();
  }

  void step(Network& net, const Gradients& grads) {
    check_shapes(net, grads);
    ++steps_;
    const double lr = settings_.learning_rate;
    if (settings_.kind == OptimizerKind::sgd) {
      for (std::size_t l = 0; l < net.depth(); ++l) {
        auto& layer = net.mutable_layer(l);
        layer.weights.add_scaled(grads.weights[l], -lr);
        layer.bias.add_scaled(grads.bias[l], -lr);
      }
      return;
    }
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    auto update = [&](Tensor& param, Tensor& m, Tensor& v, const Tensor& g) {
      auto p = param.data();
      auto ms = m.data();
      auto vs = v.data();
      auto gs = g.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        ms[i] = b1 * ms[i] + (1.0 - b1) * gs[i];
        vs[i] = b2 * vs[i] + (1.0 - b2) * gs[i] * gs[i];
        const double mhat = ms[i] / c1;
        const double vhat = vs[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + settings_.epsilon);
      }
    };
    for (std::size_t l = 0; l < net.depth(); ++l) {
      auto& layer = net.mutable_layer(l);
      update(layer.weights, m_.weights[l], v_.weights[l], grads.weights[l]);
      update(layer.bias, m_.bias[l], v_.bias[l], grads.bias[l]);
    }
  }

  const OptimizerSettings& settings() const { return settings_; }
  std::uint64_t steps() const { return steps_; }
  const Gradients& first_moment() const { return m_; }
  const Gradients& second_moment() const { return v_; }

 private:
  void check_shapes(const Network& net, const Gradients& grads) const {
    if (grads.weights.size() != net.depth() || grads.bias.size() != net.depth())
      throw DimensionError("optimizer: gradient layer count does not match network");
    for (std::size_t l = 0; l < net.depth(); ++l) {
      grads.weights[l].require_same_shape(net.layer(l).weights, "optimizer weight gradient");
      grads.bias[l].require_same_shape(net.layer(l).bias, "optimizer bias gradient");
      if (settings_.kind == OptimizerKind::adam) {
        if (m_.weights.size() != net.depth() || v_.weights.size() != net.depth())
          throw DimensionError("optimizer: moment layer count does not match network");
        m_.weights[l].require_same_shape(net.layer(l).weights, "adam first moment");
        v_.weights[l].require_same_shape(net.layer(l).weights, "adam second moment");
        m_.bias[l].require_same_shape(net.layer(l).bias, "adam first moment");
        v_.bias[l].require_same_shape(net.layer(l).bias, "adam second moment");
      }
    }
  }

  OptimizerSettings settings_;
  std::uint64_t steps_ = 0;
  Gradients m_;
  Gradients v_;
};

}  // namespace sploss
