#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "affnet/layers.hpp"
#include "affnet/rng.hpp"
#include "support/conv_reference.hpp"
#include "support/gradcheck.hpp"

using affnet::Rng;
using affnet::Tensor;
namespace nn = affnet::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng,
                        double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Scalar loss sum(weights * out) so dL/dout is a fixed random tensor.
template <typename T>
T weighted_sum(const Tensor<T>& out, const Tensor<T>& weights) {
  T acc = T(0);
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * weights[i];
  return acc;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d forward
// ---------------------------------------------------------------------------

TEST(Conv2d, IdentityKernelPassesInputThrough) {
  Rng rng(1);
  nn::ConvLayer<double> layer = nn::make_conv<double>(1, 1, 1, 1, rng);
  layer.kernel[0] = 1.0;
  layer.bias[0] = 0.0;
  Tensor<double> input = random_tensor<double>({2, 4, 5, 1}, rng);
  Tensor<double> output = nn::conv2d(input, layer);
  EXPECT_EQ(output, input);
}

TEST(Conv2d, ZeroInputYieldsBias) {
  Rng rng(2);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 1, 2, 3, rng);
  layer.bias[0] = 0.25;
  layer.bias[1] = -1.5;
  layer.bias[2] = 3.0;
  Tensor<double> input({1, 4, 4, 2});
  Tensor<double> output = nn::conv2d(input, layer);
  for (std::size_t i = 0; i < output.size(); i += 3) {
    EXPECT_DOUBLE_EQ(output[i], 0.25);
    EXPECT_DOUBLE_EQ(output[i + 1], -1.5);
    EXPECT_DOUBLE_EQ(output[i + 2], 3.0);
  }
}

TEST(Conv2d, MatchesBruteForceReference) {
  Rng rng(3);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 2, 1, 1, rng);
  for (std::size_t i = 0; i < layer.bias.size(); ++i)
    layer.bias[i] = rng.uniform(-0.5, 0.5);
  Tensor<double> input = random_tensor<double>({1, 5, 5, 1}, rng);
  Tensor<double> fast = nn::conv2d(input, layer);
  Tensor<double> reference = oracle::conv2d_reference(input, layer);
  ASSERT_EQ(fast.shape(), reference.shape());
  for (std::size_t i = 0; i < fast.size(); ++i)
    EXPECT_NEAR(fast[i], reference[i], 1e-12);
}

TEST(Conv2d, MatchesReferenceAcrossShapesAndStrides) {
  Rng rng(4);
  for (int size : {1, 3, 6, 7, 13}) {
    for (int ks : {1, 3, 5, 7, 11}) {
      for (int stride : {1, 2, 3}) {
        nn::ConvLayer<double> layer = nn::make_conv<double>(ks, stride, 2, 3, rng);
        for (std::size_t i = 0; i < layer.bias.size(); ++i)
          layer.bias[i] = rng.uniform(-0.5, 0.5);
        Tensor<double> input = random_tensor<double>(
            {2, static_cast<std::size_t>(size), static_cast<std::size_t>(size), 2},
            rng);
        Tensor<double> fast = nn::conv2d(input, layer);
        // ceil(in / stride) spatial law
        EXPECT_EQ(fast.dim(1), static_cast<std::size_t>((size + stride - 1) / stride));
        EXPECT_EQ(fast.dim(2), fast.dim(1));
        Tensor<double> reference = oracle::conv2d_reference(input, layer);
        for (std::size_t i = 0; i < fast.size(); ++i)
          ASSERT_NEAR(fast[i], reference[i], 1e-12)
              << "size=" << size << " ks=" << ks << " stride=" << stride;
      }
    }
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  Rng rng(5);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 1, 4, 2, rng);
  Tensor<double> input({1, 3, 3, 2});
  EXPECT_THROW(nn::conv2d(input, layer), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// conv2d backward
// ---------------------------------------------------------------------------

TEST(Conv2dBackward, ZeroUpstreamGradientGivesZeroGradients) {
  Rng rng(6);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 2, 2, 3, rng);
  Tensor<double> input = random_tensor<double>({1, 4, 4, 2}, rng);
  Tensor<double> gout({1, 2, 2, 3});
  auto grads = nn::conv2d_backward(gout, input, layer);
  for (std::size_t i = 0; i < grads.kernel.size(); ++i)
    EXPECT_DOUBLE_EQ(grads.kernel[i], 0.0);
  for (std::size_t i = 0; i < grads.bias.size(); ++i)
    EXPECT_DOUBLE_EQ(grads.bias[i], 0.0);
  for (std::size_t i = 0; i < grads.input.size(); ++i)
    EXPECT_DOUBLE_EQ(grads.input[i], 0.0);
}

TEST(Conv2dBackward, BiasGradientIsPerChannelSum) {
  Rng rng(7);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 1, 1, 2, rng);
  Tensor<double> input = random_tensor<double>({2, 3, 3, 1}, rng);
  Tensor<double> gout = random_tensor<double>({2, 3, 3, 2}, rng);
  auto grads = nn::conv2d_backward(gout, input, layer);
  double sum0 = 0.0, sum1 = 0.0;
  for (std::size_t i = 0; i < gout.size(); i += 2) {
    sum0 += gout[i];
    sum1 += gout[i + 1];
  }
  EXPECT_NEAR(grads.bias[0], sum0, 1e-12);
  EXPECT_NEAR(grads.bias[1], sum1, 1e-12);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  Rng rng(8);
  nn::ConvLayer<double> layer = nn::make_conv<double>(3, 2, 2, 3, rng);
  for (std::size_t i = 0; i < layer.bias.size(); ++i)
    layer.bias[i] = rng.uniform(-0.2, 0.2);
  Tensor<double> input = random_tensor<double>({2, 6, 6, 2}, rng);
  Tensor<double> weights = random_tensor<double>({2, 3, 3, 3}, rng);

  Tensor<double> out = nn::conv2d(input, layer);
  ASSERT_EQ(out.shape(), weights.shape());
  auto grads = nn::conv2d_backward(weights, input, layer);

  gradcheck::Stats stats;
  auto loss = [&]() { return weighted_sum(nn::conv2d(input, layer), weights); };
  gradcheck::check_tensor(layer.kernel, grads.kernel, loss, "kernel", stats);
  gradcheck::check_tensor(layer.bias, grads.bias, loss, "bias", stats);
  gradcheck::check_tensor(input, grads.input, loss, "input", stats);
  EXPECT_LE(stats.max_rel_err, 1e-4) << "worst entry: " << stats.worst;
  EXPECT_GT(stats.checked, 0);
}

// ---------------------------------------------------------------------------
// fully connected
// ---------------------------------------------------------------------------

TEST(FullyConnected, IdentityWeightsReproduceInput) {
  Rng rng(9);
  nn::FCLayer<double> layer = nn::make_fc<double>(4, 4, rng);
  layer.weights.fill(0.0);
  for (int i = 0; i < 4; ++i)
    layer.weights[static_cast<std::size_t>(i) * 4 + i] = 1.0;
  layer.bias.fill(0.0);
  Tensor<double> input = random_tensor<double>({2, 4}, rng);
  Tensor<double> out = nn::fc(input, layer);
  EXPECT_EQ(out, input);
}

TEST(FullyConnected, ZeroInputYieldsBias) {
  Rng rng(10);
  nn::FCLayer<double> layer = nn::make_fc<double>(6, 3, rng);
  layer.bias[0] = 1.0;
  layer.bias[1] = -2.0;
  layer.bias[2] = 0.5;
  Tensor<double> input({6});
  Tensor<double> out = nn::fc(input, layer);
  ASSERT_EQ(out.shape(), (std::vector<std::size_t>{3}));
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], -2.0);
  EXPECT_DOUBLE_EQ(out[2], 0.5);
}

TEST(FullyConnected, FlattensSpatialInput) {
  Rng rng(11);
  nn::FCLayer<double> layer = nn::make_fc<double>(12, 2, rng);
  Tensor<double> spatial = random_tensor<double>({2, 2, 3, 2}, rng);
  Tensor<double> flat({2, 12});
  for (std::size_t i = 0; i < spatial.size(); ++i) flat[i] = spatial[i];
  EXPECT_EQ(nn::fc(spatial, layer), nn::fc(flat, layer));
}

TEST(FullyConnected, RejectsSizeMismatch) {
  Rng rng(12);
  nn::FCLayer<double> layer = nn::make_fc<double>(5, 2, rng);
  Tensor<double> input({2, 4});
  EXPECT_THROW(nn::fc(input, layer), std::invalid_argument);
}

TEST(FullyConnected, MatchesFiniteDifferences) {
  Rng rng(13);
  nn::FCLayer<double> layer = nn::make_fc<double>(7, 4, rng);
  for (std::size_t i = 0; i < layer.bias.size(); ++i)
    layer.bias[i] = rng.uniform(-0.2, 0.2);
  Tensor<double> input = random_tensor<double>({3, 7}, rng);
  Tensor<double> weights = random_tensor<double>({3, 4}, rng);
  auto grads = nn::fc_backward(weights, input, layer);

  gradcheck::Stats stats;
  auto loss = [&]() { return weighted_sum(nn::fc(input, layer), weights); };
  gradcheck::check_tensor(layer.weights, grads.weights, loss, "weights", stats);
  gradcheck::check_tensor(layer.bias, grads.bias, loss, "bias", stats);
  gradcheck::check_tensor(input, grads.input, loss, "input", stats);
  EXPECT_LE(stats.max_rel_err, 1e-4) << "worst entry: " << stats.worst;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

TEST(BatchNorm, ConstantBatchNormalizesToZero) {
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(3);
  Tensor<double> input({4, 3});
  input.fill(2.5);
  Tensor<double> out = nn::batchnorm(input, bn, nn::Mode::kTrain);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 0.0, 1e-6);
}

TEST(BatchNorm, TwoPointBatchHasClosedForm) {
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(1);
  Tensor<double> input({2, 1});
  input[0] = -1.0;
  input[1] = 1.0;
  Tensor<double> out = nn::batchnorm(input, bn, nn::Mode::kTrain);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(out[0], -expected, 1e-12);
  EXPECT_NEAR(out[1], expected, 1e-12);
}

TEST(BatchNorm, ZeroScaleYieldsShift) {
  Rng rng(14);
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(2);
  bn.scale.fill(0.0);
  bn.shift[0] = 0.7;
  bn.shift[1] = -0.3;
  Tensor<double> input = random_tensor<double>({5, 2}, rng);
  Tensor<double> out = nn::batchnorm(input, bn, nn::Mode::kTrain);
  for (std::size_t n = 0; n < 5; ++n) {
    EXPECT_DOUBLE_EQ(out.at2(n, 0), 0.7);
    EXPECT_DOUBLE_EQ(out.at2(n, 1), -0.3);
  }
}

TEST(BatchNorm, TrainModeRejectsSingletonBatch) {
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(2);
  Tensor<double> input({1, 2});
  EXPECT_THROW(nn::batchnorm(input, bn, nn::Mode::kTrain),
               std::invalid_argument);
}

TEST(BatchNorm, PreAffineBatchStatisticsAreStandardized) {
  Rng rng(15);
  for (std::size_t batch : {8u, 16u, 33u, 64u}) {
    nn::BatchNorm<double> bn = nn::make_batchnorm<double>(3);
    Tensor<double> input({batch, 2, 2, 3});
    for (std::size_t i = 0; i < input.size(); ++i) input[i] = rng.normal();
    Tensor<double> out = nn::batchnorm(input, bn, nn::Mode::kTrain);
    const std::size_t group = out.size() / 3;
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = c; i < out.size(); i += 3) mean += out[i];
      mean /= static_cast<double>(group);
      for (std::size_t i = c; i < out.size(); i += 3)
        var += (out[i] - mean) * (out[i] - mean);
      var /= static_cast<double>(group);
      EXPECT_LT(std::abs(mean), 1e-5) << "batch=" << batch;
      EXPECT_LT(std::abs(var - 1.0), 1e-4) << "batch=" << batch;
    }
  }
}

TEST(BatchNorm, RunningStatisticsFollowEma) {
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(1);
  Tensor<double> input({2, 1});
  input[0] = 1.0;
  input[1] = 3.0;  // batch mean 2, biased var 1
  nn::batchnorm(input, bn, nn::Mode::kTrain);
  EXPECT_NEAR(bn.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-12);
  EXPECT_GE(bn.running_var[0], 0.0);
}

TEST(BatchNorm, InferModeUsesRunningStatistics) {
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(1);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0;
  Tensor<double> input({1, 1});
  input[0] = 4.0;
  Tensor<double> out = nn::batchnorm(input, bn, nn::Mode::kInfer);
  EXPECT_NEAR(out[0], (4.0 - 2.0) / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(16);
  nn::BatchNorm<double> bn = nn::make_batchnorm<double>(2);
  for (int c = 0; c < 2; ++c) {
    bn.scale[c] = rng.uniform(0.5, 1.5);
    bn.shift[c] = rng.uniform(-0.5, 0.5);
  }
  Tensor<double> input = random_tensor<double>({3, 2, 2, 2}, rng);
  Tensor<double> weights = random_tensor<double>(input.shape(), rng);

  nn::BatchNormCache<double> cache;
  nn::BatchNorm<double> bn_run = bn;  // running stats drift is irrelevant here
  nn::batchnorm_train(input, bn_run, &cache);
  auto grads = nn::batchnorm_backward(weights, bn, cache);

  gradcheck::Stats stats;
  auto loss = [&]() {
    nn::BatchNorm<double> fresh = bn;
    return weighted_sum(nn::batchnorm_train(input, fresh), weights);
  };
  gradcheck::check_tensor(input, grads.input, loss, "input", stats);
  gradcheck::check_tensor(bn.scale, grads.scale, loss, "scale", stats);
  gradcheck::check_tensor(bn.shift, grads.shift, loss, "shift", stats);
  EXPECT_LE(stats.max_rel_err, 1e-4) << "worst entry: " << stats.worst;
}

// ---------------------------------------------------------------------------
// relu, softmax loss, sgd
// ---------------------------------------------------------------------------

TEST(Relu, ClampsNegativeValues) {
  Tensor<double> input({3});
  input[0] = -1.0;
  input[1] = 0.0;
  input[2] = 2.0;
  Tensor<double> out = nn::relu(input);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 2.0);
}

TEST(Relu, IdentityOnPositiveInput) {
  Rng rng(17);
  Tensor<double> input = random_tensor<double>({4, 4}, rng, 0.1, 2.0);
  EXPECT_EQ(nn::relu(input), input);
}

TEST(Relu, GradientMatchesFiniteDifferencesAwayFromKink) {
  Rng rng(18);
  Tensor<double> input({64});
  for (std::size_t i = 0; i < input.size(); ++i) {
    double v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) <= 1e-3) v = 0.1;  // keep clear of the kink
    input[i] = v;
  }
  Tensor<double> weights = random_tensor<double>({64}, rng);
  Tensor<double> grads = nn::relu_backward(weights, input);
  gradcheck::Stats stats;
  auto loss = [&]() { return weighted_sum(nn::relu(input), weights); };
  gradcheck::check_tensor(input, grads, loss, "input", stats);
  EXPECT_LE(stats.max_rel_err, 1e-4) << "worst entry: " << stats.worst;
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogC) {
  Tensor<double> logits({2, 4});
  logits.fill(0.3);
  auto result = nn::softmax_cross_entropy(logits, {0, 3});
  EXPECT_NEAR(result.loss, std::log(4.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientRowsSumToZero) {
  Rng rng(19);
  Tensor<double> logits = random_tensor<double>({3, 5}, rng, -2.0, 2.0);
  auto result = nn::softmax_cross_entropy(logits, {1, 4, 0});
  for (std::size_t n = 0; n < 3; ++n) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += result.grad_logits.at2(n, c);
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectLogitHasTinyLoss) {
  Tensor<double> logits({1, 4});
  logits.fill(0.0);
  logits[2] = 20.0;
  auto result = nn::softmax_cross_entropy(logits, {2});
  EXPECT_LT(result.loss, 1e-8);
  EXPECT_GE(result.loss, 0.0);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeLabel) {
  Tensor<double> logits({1, 3});
  EXPECT_THROW(nn::softmax_cross_entropy(logits, {3}), std::invalid_argument);
  EXPECT_THROW(nn::softmax_cross_entropy(logits, {-1}), std::invalid_argument);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(20);
  Tensor<double> logits = random_tensor<double>({4, 3}, rng, -1.5, 1.5);
  std::vector<int> labels = {2, 0, 1, 1};
  auto result = nn::softmax_cross_entropy(logits, labels);
  gradcheck::Stats stats;
  auto loss = [&]() { return nn::softmax_cross_entropy(logits, labels).loss; };
  gradcheck::check_tensor(logits, result.grad_logits, loss, "logits", stats);
  EXPECT_LE(stats.max_rel_err, 1e-4) << "worst entry: " << stats.worst;
}

TEST(Softmax, RowsSumToOneAndLossNonNegative) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> logits = random_tensor<double>({4, 6}, rng, -30.0, 30.0);
    Tensor<double> probs = nn::softmax(logits);
    for (std::size_t n = 0; n < 4; ++n) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) sum += probs.at2(n, c);
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    auto result = nn::softmax_cross_entropy(logits, {0, 1, 2, 3});
    EXPECT_GE(result.loss, 0.0);
  }
}

TEST(SgdStep, ZeroGradientLeavesParamsUnchanged) {
  Tensor<double> param({3});
  param[0] = 1.0;
  param[1] = -2.0;
  param[2] = 0.5;
  Tensor<double> before = param;
  Tensor<double> grad({3});
  nn::sgd_step(param, grad, 0.1);
  EXPECT_EQ(param, before);
}

TEST(SgdStep, PlainArithmetic) {
  Tensor<double> param({1});
  param[0] = 1.0;
  Tensor<double> grad({1});
  grad[0] = 1.0;
  nn::sgd_step(param, grad, 1e-3);
  EXPECT_DOUBLE_EQ(param[0], 0.999);
}

TEST(SgdStep, TwoHalfStepsEqualOneFullStep) {
  Tensor<double> a({4}), b({4}), grad({4});
  for (int i = 0; i < 4; ++i) {
    a[i] = b[i] = 0.3 * i;
    grad[i] = 0.5 - 0.2 * i;
  }
  nn::sgd_step(a, grad, 0.01);
  nn::sgd_step(b, grad, 0.005);
  nn::sgd_step(b, grad, 0.005);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(SgdStep, RejectsShapeMismatch) {
  Tensor<double> param({3});
  Tensor<double> grad({4});
  EXPECT_THROW(nn::sgd_step(param, grad, 0.1), std::invalid_argument);
}

TEST(LayerInit, SeededInitIsBitIdentical) {
  Rng a(42), b(42);
  auto la = nn::make_conv<float>(3, 1, 3, 8, a);
  auto lb = nn::make_conv<float>(3, 1, 3, 8, b);
  EXPECT_EQ(la.kernel, lb.kernel);
  EXPECT_EQ(la.bias, lb.bias);
}
