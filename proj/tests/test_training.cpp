#include <gtest/gtest.h>

#include <cmath>

#include "sploss/training.hpp"
#include "support/oracles.hpp"

using namespace sploss;

namespace {

Dataset segments(std::uint64_t seed, std::size_t n = 40) {
  return gen_segments(ToySpec{ToyKind::segments, n, 1.8, 0.0, 0.0, 1, seed});
}

TrainSettings quick(std::size_t epochs, std::uint64_t seed = 0) {
  TrainSettings ts;
  ts.epochs = epochs;
  ts.batch_size = 16;
  ts.seed = seed;
  ts.optimizer.learning_rate = 0.01;
  return ts;
}

}  // namespace

TEST(Train, ZeroEpochsKeepsInitAndSingleSnapshot) {
  const Dataset ds = segments(0);
  const Network init = Network::random({2, 8, 2}, Activation::tanh, 1);
  TrainSettings ts = quick(0);
  ts.record_trace = true;
  const auto r = train(init, LossSpec::cross_entropy(), ds, nullptr, ts);
  EXPECT_EQ(r.final_net, init);
  EXPECT_EQ(r.best_net, init);
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_TRUE(r.log.empty());
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace.epochs[0], 0u);
}

TEST(Train, ZeroLearningRateFreezesWeights) {
  const Dataset ds = segments(1);
  const Network init = Network::random({2, 8, 2}, Activation::tanh, 2);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    TrainSettings ts = quick(7);
    ts.optimizer.kind = kind;
    ts.optimizer.learning_rate = 0.0;
    ts.record_trace = true;
    const auto r = train(init, LossSpec::sp_focal_loss(0.25, 2.0, 0.03), ds, nullptr, ts);
    EXPECT_EQ(r.final_net, init);
    ASSERT_EQ(r.trace.size(), 8u);
    for (const auto& s : r.trace.snapshots) EXPECT_EQ(s, r.trace.snapshots.front());
    EXPECT_EQ(r.trace.tail_drift(), 0.0);
    const double acc0 = accuracy(init, ds.features, ds.labels);
    for (const auto& e : r.log) EXPECT_EQ(e.train_accuracy, acc0);
  }
}

TEST(Train, SnapshotCountMatchesEpochs) {
  TrainSettings ts = quick(12);
  ts.record_trace = true;
  const auto r = train(Network::random({2, 4, 2}, Activation::tanh, 0), LossSpec::cross_entropy(), segments(2), nullptr, ts);
  EXPECT_EQ(r.trace.size(), 13u);
  EXPECT_EQ(r.log.size(), 12u);
  for (std::size_t e = 0; e < r.trace.size(); ++e) EXPECT_EQ(r.trace.epochs[e], e);
  EXPECT_EQ(r.trace.snapshots.back()[0], r.final_net.head().weights(0, 0));
}

TEST(Train, TraceOffByDefault) {
  const auto r = train(Network::random({2, 4, 2}, Activation::tanh, 0), LossSpec::cross_entropy(), segments(2),
                       nullptr, quick(3));
  EXPECT_EQ(r.trace.size(), 0u);
}

TEST(Train, DeterministicForSeed) {
  const Dataset ds = gen_two_moons(ToySpec{ToyKind::two_moons, 50, 0.2, 0.1, 0.0, 1, 4});
  const Network init = Network::random({2, 16, 2}, Activation::tanh, 3);
  const auto a = train(init, LossSpec::sp_focal_loss(0.25, 2.0, 0.03), ds, nullptr, quick(20, 9));
  const auto b = train(init, LossSpec::sp_focal_loss(0.25, 2.0, 0.03), ds, nullptr, quick(20, 9));
  const auto c = train(init, LossSpec::sp_focal_loss(0.25, 2.0, 0.03), ds, nullptr, quick(20, 10));
  EXPECT_EQ(a.final_net, b.final_net);
  EXPECT_NE(a.final_net, c.final_net);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) EXPECT_EQ(a.log[e].train_loss, b.log[e].train_loss);
}

TEST(Train, NoShuffleIsSeedIndependent) {
  const Dataset ds = segments(3);
  const Network init = Network::random({2, 4, 2}, Activation::tanh, 3);
  TrainSettings a = quick(5, 1);
  TrainSettings b = quick(5, 2);
  a.shuffle = b.shuffle = false;
  EXPECT_EQ(train(init, LossSpec::cross_entropy(), ds, nullptr, a).final_net,
            train(init, LossSpec::cross_entropy(), ds, nullptr, b).final_net);
}

TEST(Train, FullBatchMatchesManualSteps) {
  const Dataset ds = segments(5, 10);
  const Network init = Network::random({2, 3, 2}, Activation::tanh, 5);
  TrainSettings ts = quick(4);
  ts.batch_size = 0;
  ts.optimizer.kind = OptimizerKind::sgd;
  ts.optimizer.learning_rate = 0.1;
  const auto r = train(init, LossSpec::cross_entropy(), ds, nullptr, ts);
  Network manual = init;
  Optimizer opt(ts.optimizer, manual);
  for (int e = 0; e < 4; ++e) {
    // every sample lands in the single batch; order only permutes the mean
    const auto lg = loss_and_gradients(manual, LossSpec::cross_entropy(), ds.features, ds.labels);
    opt.step(manual, lg.grads);
  }
  for (std::size_t l = 0; l < manual.depth(); ++l) {
    const auto a = r.final_net.layer(l).weights.data();
    const auto b = manual.layer(l).weights.data();
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-13);
  }
}

TEST(Train, LearnsSeparableSegments) {
  const Dataset ds = segments(6);
  const auto r = train(Network::random({2, 8, 2}, Activation::tanh, 6), LossSpec::cross_entropy(), ds, nullptr,
                       quick(60));
  EXPECT_EQ(accuracy(r.final_net, ds.features, ds.labels), 1.0);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Train, BestNetHasHighestTestAccuracy) {
  const Dataset all = gen_two_moons(ToySpec{ToyKind::two_moons, 60, 0.0, 0.15, 0.0, 1, 8});
  const Split sp = train_test_split(all, 0.8, 8);
  std::size_t calls = 0;
  const auto r = train(Network::random({2, 8, 2}, Activation::tanh, 8), LossSpec::cross_entropy(), sp.train, &sp.test,
                       quick(25), [&](const EpochLog& e) { EXPECT_EQ(e.epoch, ++calls); });
  EXPECT_EQ(calls, 25u);
  double best = accuracy(Network::random({2, 8, 2}, Activation::tanh, 8), sp.test.features, sp.test.labels);
  std::size_t best_epoch = 0;
  for (const auto& e : r.log)
    if (e.test_accuracy > best) {
      best = e.test_accuracy;
      best_epoch = e.epoch;
    }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_accuracy, best);
  EXPECT_EQ(accuracy(r.best_net, sp.test.features, sp.test.labels), best);
  for (const auto& e : r.log) {
    EXPECT_GE(e.train_accuracy, 0.0);
    EXPECT_LE(e.test_accuracy, 1.0);
  }
}

TEST(Train, ClampCounterAccumulates) {
  // logits far apart saturate the wrong-class probability below the floor
  const Dataset ds = segments(7, 4);
  Network net = Network::random({2, 2}, Activation::identity, 0);
  auto& head = net.mutable_layer(0);
  head.weights = Tensor::from_rows({{0, -1000}, {0, 1000}});
  head.bias = Tensor(2, 1);
  TrainSettings ts = quick(1);
  ts.optimizer.learning_rate = 0.0;
  // the label flip makes every sample's true-class probability underflow
  Dataset flipped = ds;
  for (int& l : flipped.labels) l = 1 - l;
  const auto r = train(net, LossSpec::cross_entropy(), flipped, nullptr, ts);
  EXPECT_EQ(r.clamp_count, ds.size());
  const auto ok = train(net, LossSpec::cross_entropy(), ds, nullptr, ts);
  EXPECT_EQ(ok.clamp_count, 0u);
}

TEST(Train, Errors) {
  const Dataset ds = segments(0);
  EXPECT_THROW(train(Network::random({3, 2}, Activation::tanh, 0), LossSpec::cross_entropy(), ds, nullptr, quick(1)),
               DimensionError);
  EXPECT_THROW(train(Network::random({2, 1}, Activation::tanh, 0), LossSpec::cross_entropy(), ds, nullptr, quick(1)),
               DimensionError);
  const Dataset wide = gen_segments(ToySpec{});
  Dataset bad_test = wide;
  bad_test.features = Tensor(wide.size(), 3);
  EXPECT_THROW(train(Network::random({2, 2}, Activation::tanh, 0), LossSpec::cross_entropy(), ds, &bad_test, quick(1)),
               DimensionError);
  LossSpec bad = LossSpec::focal_loss(-1.0, 2.0);
  EXPECT_THROW(train(Network::random({2, 2}, Activation::tanh, 0), bad, ds, nullptr, quick(1)), InvalidArgument);
}

TEST(ScaleLastLayer, PerfectClassifierLosesCeWhenScaled) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset ds = segments(seed);
    const auto r = train(Network::random({2, 8, 2}, Activation::tanh, seed), LossSpec::cross_entropy(), ds, nullptr,
                         quick(60, seed));
    ASSERT_EQ(accuracy(r.final_net, ds.features, ds.labels), 1.0) << seed;
    const Network big = scale_last_layer(r.final_net, 2.0);
    EXPECT_EQ(predict(big, ds.features), predict(r.final_net, ds.features));
    const double before = mean_loss(r.final_net, LossSpec::cross_entropy(), ds.features, ds.labels);
    const double after = mean_loss(big, LossSpec::cross_entropy(), ds.features, ds.labels);
    EXPECT_LT(after, before) << seed;
    EXPECT_LT(oracle::reference_mean_loss(big, LossSpec::cross_entropy(), ds.features, ds.labels),
              oracle::reference_mean_loss(r.final_net, LossSpec::cross_entropy(), ds.features, ds.labels));
  }
}
