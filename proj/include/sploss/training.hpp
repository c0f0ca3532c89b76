#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "sploss/analysis.hpp"
#include "sploss/datasets.hpp"
#include "sploss/losses.hpp"
#include "sploss/network.hpp"
#include "sploss/objective.hpp"
#include "sploss/optimizer.hpp"
#include "sploss/rng.hpp"

namespace sploss {

struct TrainSettings {
  OptimizerSettings optimizer;
  std::size_t epochs = 50;
  std::size_t batch_size = 128;  // 0 = full batch
  std::uint64_t seed = 0;
  bool shuffle = true;
  bool record_trace = false;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;  // mean minibatch loss seen during the epoch
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  Network final_net;
  Network best_net;
  Optimizer optimizer;
  std::size_t best_epoch = 0;  // 0 = the initial network
  double best_accuracy = 0.0;  // test accuracy, or train accuracy without a test set
  std::vector<EpochLog> log;
  WeightTrace trace;
  std::size_t clamp_count = 0;
};

/// Minibatch training. The best network is the one with the highest test accuracy
/// (train accuracy when `test` is null); ties keep the earlier epoch.
inline TrainResult train(Network net, const LossSpec& loss, const Dataset& data, const Dataset* test,
                         const TrainSettings& settings,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  loss.validate();
  data.validate();
  if (data.dim() != net.input_dim())
    throw DimensionError("train: data has " + std::to_string(data.dim()) + " features, network expects " +
                         std::to_string(net.input_dim()));
  if (static_cast<std::size_t>(data.num_classes) > net.output_dim())
    throw DimensionError("train: network has fewer outputs than the data has classes");
  if (test != nullptr && test->dim() != net.input_dim())
    throw DimensionError("train: test set feature width does not match network");

  TrainResult res;
  res.optimizer = Optimizer(settings.optimizer, net);
  auto score = [&](const Network& n) {
    const Dataset& d = (test != nullptr && test->size() > 0) ? *test : data;
    return accuracy(n, d.features, d.labels);
  };
  res.best_net = net;
  res.best_accuracy = score(net);
  if (settings.record_trace) res.trace.record(0, net);

  const std::size_t n = data.size();
  const std::size_t bs = settings.batch_size == 0 ? n : std::min(settings.batch_size, n);
  std::vector<std::size_t> order(n);
  Tensor xb;
  std::vector<int> yb;
  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (settings.shuffle) {
      Rng rng(derive_seed(settings.seed, epoch));
      rng.shuffle(std::span<std::size_t>(order));
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t m = std::min(bs, n - start);
      xb = Tensor(m, data.dim());
      yb.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t src = order[start + i];
        std::copy(data.features.row(src).begin(), data.features.row(src).end(), xb.row(i).begin());
        yb[i] = data.labels[src];
      }
      const LossAndGradients lg = loss_and_gradients(net, loss, xb, yb);
      res.clamp_count += lg.clamp_count;
      loss_sum += lg.loss;
      ++batches;
      res.optimizer.step(net, lg.grads);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    log.train_accuracy = accuracy(net, data.features, data.labels);
    log.test_accuracy = (test != nullptr && test->size() > 0) ? accuracy(net, test->features, test->labels) : 0.0;
    const double s = (test != nullptr && test->size() > 0) ? log.test_accuracy : log.train_accuracy;
    if (s > res.best_accuracy) {
      res.best_accuracy = s;
      res.best_net = net;
      res.best_epoch = epoch;
    }
    if (settings.record_trace) res.trace.record(epoch, net);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  res.final_net = std::move(net);
  return res;
}

}  // namespace sploss
