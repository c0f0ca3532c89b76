#pragma once

#include <span>
#include <vector>

#include "sploss/losses.hpp"
#include "sploss/network.hpp"

namespace sploss {

struct LossAndGradients {
  double loss = 0.0;  // mean over the batch
  Gradients grads;
  std::size_t clamp_count = 0;
};

inline LossAndGradients loss_and_gradients(const Network& net, const LossSpec& spec, const Tensor& x,
                                           std::span<const int> labels) {
  const ForwardCache cache = forward(net, x);
  BatchLoss bl = batch_loss(spec, cache.logits(), labels);
  return {bl.mean, backward(net, cache, bl.dlogits), bl.clamp_count};
}

/// Row i holds d loss(x_i, y_i) / d x_i (gradient of the per-sample loss, not the mean).
inline Tensor input_gradient(const Network& net, const LossSpec& spec, const Tensor& x,
                             std::span<const int> labels) {
  const ForwardCache cache = forward(net, x);
  const BatchLoss bl = batch_loss(spec, cache.logits(), labels, /*per_sample=*/true);
  return backward_input(net, cache, bl.dlogits);
}

/// Mean loss over all rows, evaluated in fixed-size chunks.
inline double mean_loss(const Network& net, const LossSpec& spec, const Tensor& x,
                        std::span<const int> labels, std::size_t chunk = 1024) {
  if (labels.size() != x.rows()) throw DimensionError("mean_loss: label count does not match rows");
  if (x.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < x.rows(); start += chunk) {
    const std::size_t n = std::min(chunk, x.rows() - start);
    Tensor part(n, x.cols(),
                std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
                                    x.data().begin() + static_cast<std::ptrdiff_t>((start + n) * x.cols())));
    const BatchLoss bl = batch_loss(spec, logits(net, part), labels.subspan(start, n));
    total += bl.mean * static_cast<double>(n);
  }
  return total / static_cast<double>(x.rows());
}

inline double accuracy(const Network& net, const Tensor& x, std::span<const int> labels) {
  if (labels.size() != x.rows()) throw DimensionError("accuracy: label count does not match rows");
  if (x.rows() == 0) return 0.0;
  const auto pred = predict(net, x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace sploss
