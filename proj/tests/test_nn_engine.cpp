#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sploss/checkpoint.hpp"
#include "sploss/network.hpp"
#include "sploss/objective.hpp"
#include "sploss/optimizer.hpp"
#include "support/oracles.hpp"

using namespace sploss;
namespace fs = std::filesystem;

namespace {

Network linear(std::initializer_list<std::initializer_list<double>> w, std::initializer_list<double> b) {
  DenseLayer l{Tensor::from_rows(w), Tensor(b.size(), 1, std::vector<double>(b)), Activation::identity};
  return Network({l});
}

Tensor random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(n, d);
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sploss_" + name); }

}  // namespace

TEST(Forward, IdentityLayer) {
  const Network net = linear({{1, 0}, {0, 1}}, {0, 0});
  const Tensor z = logits(net, Tensor::from_rows({{1, 2}}));
  EXPECT_EQ(z, Tensor::from_rows({{1, 2}}));
}

TEST(Forward, ScalarAffine) {
  const Network net = linear({{2}}, {-1});
  EXPECT_EQ(logits(net, Tensor::from_rows({{0.5}}))(0, 0), 0.0);
}

TEST(Forward, MatchesNaiveMatmulOracle) {
  const Network net = Network::random({5, 7, 3}, Activation::tanh, 42);
  const Tensor x = random_batch(4, 5, 7);
  const Tensor z = logits(net, x);
  const auto ref = oracle::reference_logits(net, x);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(z(r, k), ref[r][k], 1e-14);
}

TEST(Forward, RejectsWrongWidth) {
  const Network net = Network::random({3, 2}, Activation::relu, 1);
  EXPECT_THROW(forward(net, Tensor(2, 4)), DimensionError);
}

TEST(Network, RejectsBrokenChains) {
  DenseLayer a{Tensor(4, 3), Tensor(4, 1), Activation::relu};
  DenseLayer b{Tensor(2, 5), Tensor(2, 1), Activation::identity};
  EXPECT_THROW(Network({a, b}), DimensionError);
  DenseLayer bad_bias{Tensor(2, 4), Tensor(3, 1), Activation::identity};
  EXPECT_THROW(Network({a, bad_bias}), DimensionError);
  DenseLayer nonlinear_head{Tensor(2, 4), Tensor(2, 1), Activation::tanh};
  EXPECT_THROW(Network({a, nonlinear_head}), InvalidArgument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const Network net = Network::random({3, 6, 2}, Activation::tanh, 3);
  const auto cache = forward(net, random_batch(5, 3, 1));
  const Gradients g = backward(net, cache, Tensor(5, 2));
  for (std::size_t l = 0; l < net.depth(); ++l) {
    EXPECT_EQ(g.weights[l].max_abs(), 0.0);
    EXPECT_EQ(g.bias[l].max_abs(), 0.0);
  }
}

TEST(Backward, SquaredLogitSurrogate) {
  // L = z^2 with z = w x + b, so dL/dw = 2 z x and dL/db = 2 z.
  const Network net = linear({{1.5}}, {0.25});
  const Tensor x = Tensor::from_rows({{2.0}});
  const auto cache = forward(net, x);
  const double z = cache.logits()(0, 0);
  const Gradients g = backward(net, cache, Tensor(1, 1, {2.0 * z}));
  EXPECT_DOUBLE_EQ(g.weights[0](0, 0), 2.0 * z * 2.0);
  EXPECT_DOUBLE_EQ(g.bias[0](0, 0), 2.0 * z);
}

TEST(Backward, StaleCacheRejected) {
  Network net = Network::random({2, 3, 2}, Activation::tanh, 5);
  const auto cache = forward(net, random_batch(2, 2, 2));
  net.mutable_layer(0).weights(0, 0) += 1.0;
  EXPECT_THROW(backward(net, cache, Tensor(2, 2)), StaleCacheError);
  const Network other = net;
  EXPECT_THROW(backward(other, cache, Tensor(2, 2)), StaleCacheError);
}

TEST(Backward, UpstreamShapeChecked) {
  const Network net = Network::random({2, 3, 2}, Activation::tanh, 5);
  const auto cache = forward(net, random_batch(2, 2, 2));
  EXPECT_THROW(backward(net, cache, Tensor(3, 2)), DimensionError);
}

TEST(Backward, MatchesFiniteDifferences) {
  const LossSpec spec = LossSpec::sp_focal_loss(0.25, 2.0, 0.03);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Network net = Network::random({4, 8, 6, 3}, seed % 2 ? Activation::tanh : Activation::relu, 100 + seed);
    const Tensor x = random_batch(6, 4, 200 + seed);
    const std::vector<int> y = {0, 1, 2, 0, 1, 2};
    const auto lg = loss_and_gradients(net, spec, x, y);
    for (std::size_t l = 0; l < net.depth(); ++l) {
      const auto& w = net.layer(l).weights;
      for (std::size_t k = 0; k < w.size(); ++k) {
        std::vector<double> flat(w.data().begin(), w.data().end());
        auto f = [&](std::span<const double> p) {
          Network probe = net;
          auto dst = probe.mutable_layer(l).weights.data();
          std::copy(p.begin(), p.end(), dst.begin());
          return oracle::reference_mean_loss(probe, spec, x, y);
        };
        const double fd = oracle::central_diff(f, flat, k, 1e-5);
        const double an = lg.grads.weights[l].data()[k];
        if (std::abs(an) > 1e-6) { EXPECT_LT(oracle::rel_err(an, fd), 1e-4) << "layer " << l << " k " << k; }
      }
    }
  }
}

TEST(InputGradient, ZeroWeightsGiveZero) {
  DenseLayer l{Tensor(2, 3), Tensor(2, 1, {0.3, -0.2}), Activation::identity};
  const Network net({l});
  const std::vector<int> y = {1};
  const Tensor g = input_gradient(net, LossSpec::cross_entropy(), Tensor(1, 3, {1, 2, 3}), y);
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(InputGradient, LinearCeChainRule) {
  // z = [w x, 0]: dL/dx = w (xi_y - 1) for label 0.
  const double w = 1.7;
  const Network net = linear({{w}, {0.0}}, {0.0, 0.0});
  const double x = 0.4;
  const std::vector<int> y = {0};
  const Tensor g = input_gradient(net, LossSpec::cross_entropy(), Tensor(1, 1, {x}), y);
  const double xi = 1.0 / (1.0 + std::exp(-w * x));
  EXPECT_NEAR(g(0, 0), w * (xi - 1.0), 1e-15);
}

TEST(InputGradient, MatchesFiniteDifferences) {
  const LossSpec spec = LossSpec::sp_ce_loss(1.0, SpCeVariant::with_complement);
  const Network net = Network::random({5, 9, 4}, Activation::tanh, 9);
  const Tensor x = random_batch(3, 5, 10);
  const std::vector<int> y = {3, 0, 2};
  const Tensor g = input_gradient(net, spec, x, y);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      std::vector<double> row(x.row(r).begin(), x.row(r).end());
      auto f = [&](std::span<const double> p) {
        Tensor one(1, 5, std::vector<double>(p.begin(), p.end()));
        const std::vector<int> yy = {y[r]};
        return oracle::reference_mean_loss(net, spec, one, yy);
      };
      const double fd = oracle::central_diff(f, row, c, 1e-5);
      if (std::abs(g(r, c)) > 1e-6) { EXPECT_LT(oracle::rel_err(g(r, c), fd), 1e-4); }
    }
}

TEST(Optimizer, SgdStep) {
  Network net = linear({{1.0}}, {0.0});
  Optimizer opt({OptimizerKind::sgd, 0.1}, net);
  Gradients g = Gradients::zeros_like(net);
  g.weights[0](0, 0) = 2.0;
  opt.step(net, g);
  EXPECT_DOUBLE_EQ(net.layer(0).weights(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(net.layer(0).bias(0, 0), 0.0);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  Network net = Network::random({3, 4, 2}, Activation::tanh, 4);
  const Network before = net;
  const double lr = 0.01;
  Optimizer opt({OptimizerKind::adam, lr}, net);
  Gradients g = Gradients::zeros_like(net);
  for (auto& t : g.weights) t.fill(1.0);
  for (auto& t : g.bias) t.fill(1.0);
  opt.step(net, g);
  // m_hat = v_hat = 1 after bias correction: delta = -lr / (1 + 1e-8)
  for (std::size_t l = 0; l < net.depth(); ++l)
    for (std::size_t k = 0; k < net.layer(l).weights.size(); ++k)
      EXPECT_NEAR(net.layer(l).weights.data()[k] - before.layer(l).weights.data()[k], -lr / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(net.layer(0).weights(0, 0) - before.layer(0).weights(0, 0), -lr, 1e-9);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    Network net = Network::random({3, 4, 2}, Activation::tanh, 4);
    const Network before = net;
    Optimizer opt({kind, 0.1}, net);
    for (int i = 0; i < 3; ++i) opt.step(net, Gradients::zeros_like(net));
    EXPECT_EQ(net, before);
  }
}

TEST(Optimizer, ShapeMismatchRejected) {
  Network net = Network::random({3, 4, 2}, Activation::tanh, 4);
  const Network other = Network::random({3, 5, 2}, Activation::tanh, 4);
  Optimizer opt({OptimizerKind::adam, 0.1}, net);
  EXPECT_THROW(opt.step(net, Gradients::zeros_like(other)), DimensionError);
}

TEST(ScaleLastLayer, Examples) {
  DenseLayer hidden{Tensor(2, 1, {0.5, -0.5}), Tensor(2, 1, {0.1, 0.2}), Activation::tanh};
  DenseLayer head{Tensor(1, 2, {1.0, -1.0}), Tensor(1, 1, {0.5}), Activation::identity};
  const Network net({hidden, head});
  EXPECT_EQ(scale_last_layer(net, 1.0), net);
  const Network s = scale_last_layer(net, 2.0);
  EXPECT_EQ(s.layer(1).weights, Tensor(1, 2, {2.0, -2.0}));
  EXPECT_EQ(s.layer(1).bias, Tensor(1, 1, {1.0}));
  EXPECT_EQ(s.layer(0), net.layer(0));
  EXPECT_THROW(scale_last_layer(net, 0.0), InvalidArgument);
  EXPECT_THROW(scale_last_layer(net, -1.0), InvalidArgument);
}

TEST(ScaleLastLayer, PreservesPredictions) {
  const Network net = Network::random({2, 8, 3}, Activation::tanh, 11);
  const Tensor x = random_batch(50, 2, 12);
  const auto before = predict(net, x);
  for (double c : {1.5, 2.0, 10.0}) EXPECT_EQ(predict(scale_last_layer(net, c), x), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Network net = Network::random({4, 6, 3}, Activation::relu, 21);
  Optimizer opt({OptimizerKind::adam, 0.003}, net);
  const auto lg = loss_and_gradients(net, LossSpec::cross_entropy(), random_batch(5, 4, 1), std::vector<int>{0, 1, 2, 0, 1});
  opt.step(net, lg.grads);
  const auto path = temp_path("roundtrip.spnet");
  save_checkpoint(net, path, &opt);
  const Checkpoint cp = load_checkpoint_full(path);
  EXPECT_EQ(cp.net, net);
  ASSERT_TRUE(cp.optimizer.has_value());
  EXPECT_EQ(cp.optimizer->steps(), 1u);
  EXPECT_EQ(cp.optimizer->first_moment().weights[0], opt.first_moment().weights[0]);
  EXPECT_EQ(cp.optimizer->second_moment().bias[1], opt.second_moment().bias[1]);
  save_checkpoint(net, path);
  EXPECT_EQ(load_checkpoint(path), net);
  fs::remove(path);
}

TEST(Checkpoint, TruncatedFileRejected) {
  const Network net = Network::random({4, 6, 3}, Activation::relu, 21);
  const auto path = temp_path("trunc.spnet");
  save_checkpoint(net, path);
  const auto full = fs::file_size(path);
  for (auto cut : {std::uintmax_t{3}, std::uintmax_t{12}, full / 2, full - 1}) {
    fs::resize_file(path, cut);
    EXPECT_THROW(load_checkpoint(path), ParseError) << "cut at " << cut;
    save_checkpoint(net, path);
  }
  fs::remove(path);
}

TEST(Checkpoint, BadMagicAndVersion) {
  const Network net = Network::random({2, 2}, Activation::relu, 1);
  const auto path = temp_path("version.spnet");
  save_checkpoint(net, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(6);
    const char v[4] = {2, 0, 0, 0};
    f.write(v, 4);
  }
  EXPECT_THROW(load_checkpoint(path), UnsupportedVersionError);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXNET1", 6);
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected ParseError";
  } catch (const UnsupportedVersionError&) {
    FAIL() << "bad magic misreported as version error";
  } catch (const ParseError&) {
  }
  fs::remove(path);
}
