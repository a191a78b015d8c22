#include <doctest.h>

#include <memory>

#include "dfex/layers.hpp"
#include "dfex/losses.hpp"
#include "dfex/network.hpp"
#include "gradcheck.hpp"

using namespace dfex::nn;

namespace {

Sequential<double> single(std::unique_ptr<Layer<double>> layer, std::uint64_t seed) {
  Sequential<double> seq;
  seq.add(std::move(layer));
  Rng rng(seed);
  seq.init(rng);
  return seq;
}

}  // namespace

TEST_CASE("dense layer gradients") {
  auto seq = single(std::make_unique<Dense<double>>(7, 5), 1);
  auto rep = gradcheck::check(seq, gradcheck::random_tensor({3, 7}, 2), Mode::kTrain, 3);
  CHECK(rep.max_param_err < 1e-6);
  CHECK(rep.max_input_err < 1e-6);
}

TEST_CASE("conv2d gradients, stride and padding") {
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{5, 1, 0}, std::tuple{3, 2, 1}}) {
    auto seq = single(std::make_unique<Conv2d<double>>(2, 3, k, stride, pad), 4);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 2, 8, 8}, 5), Mode::kTrain, 6);
    CHECK(rep.max_param_err < 1e-6);
    CHECK(rep.max_input_err < 1e-6);
  }
}

TEST_CASE("batchnorm gradients in train and eval mode") {
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    auto seq = single(std::make_unique<BatchNorm<double>>(3), 7);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({4, 3, 5, 5}, 8), mode, 9);
    CHECK(rep.max_param_err < 1e-5);
    CHECK(rep.max_input_err < 1e-5);
  }
}

TEST_CASE("batchnorm normalizes batch statistics in train mode") {
  BatchNorm<double> bn(2);
  Tensor<double> x = gradcheck::random_tensor({8, 2, 4, 4}, 10);
  for (auto& v : x.data) v = 3.0 * v + 1.5;
  Tensor<double> y;
  bn.forward(x, y, Mode::kTrain);
  const int hw = 16;
  for (int c = 0; c < 2; ++c) {
    double s1 = 0, s2 = 0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < hw; ++i) {
        const double v = y.data[(static_cast<std::size_t>(n) * 2 + c) * hw + i];
        s1 += v;
        s2 += v * v;
      }
    const double mean = s1 / (8 * hw);
    const double var = s2 / (8 * hw) - mean * mean;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-3);  // eps shrinks variance slightly
  }
}

TEST_CASE("activation and pooling gradients") {
  {
    auto seq = single(std::make_unique<ReLU<double>>(), 11);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({4, 6}, 12), Mode::kTrain, 13);
    CHECK(rep.max_input_err < 1e-6);
  }
  {
    auto seq = single(std::make_unique<LeakyReLU<double>>(0.2), 14);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({4, 6}, 15), Mode::kTrain, 16);
    CHECK(rep.max_input_err < 1e-6);
  }
  {
    auto seq = single(std::make_unique<Tanh<double>>(), 17);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({4, 6}, 18), Mode::kTrain, 19);
    CHECK(rep.max_input_err < 1e-6);
  }
  {
    auto seq = single(std::make_unique<MaxPool2d<double>>(2), 20);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 3, 6, 6}, 21), Mode::kTrain, 22);
    CHECK(rep.max_input_err < 1e-6);
  }
  {
    auto seq = single(std::make_unique<GlobalAvgPool<double>>(), 23);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 3, 4, 4}, 24), Mode::kTrain, 25);
    CHECK(rep.max_input_err < 1e-6);
  }
  {
    auto seq = single(std::make_unique<Upsample2x<double>>(), 26);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 2, 3, 3}, 27), Mode::kTrain, 28);
    CHECK(rep.max_input_err < 1e-6);
  }
}

TEST_CASE("residual block gradients (identity and projection)") {
  {
    auto seq = single(std::make_unique<ResidualBlock<double>>(3, 3, 1), 29);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 3, 6, 6}, 30), Mode::kTrain, 31);
    CHECK(rep.max_param_err < 1e-5);
    CHECK(rep.max_input_err < 1e-5);
  }
  {
    auto seq = single(std::make_unique<ResidualBlock<double>>(2, 4, 2), 32);
    auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 2, 6, 6}, 33), Mode::kTrain, 34);
    CHECK(rep.max_param_err < 1e-5);
    CHECK(rep.max_input_err < 1e-5);
  }
}

TEST_CASE("composite convolutional net gradients") {
  Sequential<double> seq;
  seq.add(std::make_unique<Conv2d<double>>(1, 4, 3, 1, 1, false));
  seq.add(std::make_unique<BatchNorm<double>>(4));
  seq.add(std::make_unique<LeakyReLU<double>>(0.2));
  seq.add(std::make_unique<Upsample2x<double>>());
  seq.add(std::make_unique<Conv2d<double>>(4, 2, 3, 1, 1, false));
  seq.add(std::make_unique<BatchNorm<double>>(2));
  seq.add(std::make_unique<Tanh<double>>());
  Rng rng(35);
  seq.init(rng);
  auto rep = gradcheck::check(seq, gradcheck::random_tensor({2, 1, 4, 4}, 36), Mode::kTrain, 37);
  CHECK(rep.max_param_err < 1e-5);
  CHECK(rep.max_input_err < 1e-5);
}

TEST_CASE("cross entropy matches independent one-hot oracle and grads check out") {
  Rng rng(38);
  Tensor<double> logits({5, 4});
  for (auto& v : logits.data) v = rng.normal();
  std::vector<int> labels{0, 3, 1, 2, 2};

  // One-hot oracle: -sum_c onehot_c * log softmax_c, averaged over the batch.
  Tensor<double> probs;
  softmax_rows(logits, probs);
  double expect = 0.0;
  for (int i = 0; i < 5; ++i)
    expect -= std::log(probs.data[static_cast<std::size_t>(i) * 4 + labels[static_cast<std::size_t>(i)]]);
  expect /= 5;

  Tensor<double> dlogits;
  const double loss = cross_entropy_hard(logits, labels, &dlogits);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));

  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + h;
    const double lp = cross_entropy_hard<double>(logits, labels);
    logits[i] = keep - h;
    const double lm = cross_entropy_hard<double>(logits, labels);
    logits[i] = keep;
    CHECK(gradcheck::rel_err((lp - lm) / (2 * h), dlogits[i]) < 1e-5);
  }
}

TEST_CASE("cross entropy textbook values") {
  // Uniform logits over C=10 -> ln 10.
  Tensor<double> logits({1, 10}, 0.0);
  CHECK(cross_entropy_hard<double>(logits, {7}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  // Row (2,0,0), label 0 -> ln(e^2+2) - 2.
  Tensor<double> l2({1, 3});
  l2.data = {2.0, 0.0, 0.0};
  CHECK(cross_entropy_hard<double>(l2, {0}) ==
        doctest::Approx(std::log(std::exp(2.0) + 2.0) - 2.0).epsilon(1e-12));
  CHECK_THROWS(cross_entropy_hard<double>(l2, {3}));
}

TEST_CASE("argmax tie breaks toward lowest index") {
  Tensor<double> s({2, 3});
  s.data = {0.5, 0.5, 0.1, 0.1, 2.0, -1.0};
  const auto labels = argmax_rows(s);
  CHECK(labels[0] == 0);
  CHECK(labels[1] == 1);
}

TEST_CASE("forward determinism in eval mode") {
  Sequential<double> seq;
  seq.add(std::make_unique<Conv2d<double>>(1, 3, 3, 1, 1));
  seq.add(std::make_unique<BatchNorm<double>>(3));
  seq.add(std::make_unique<ReLU<double>>());
  seq.add(std::make_unique<Flatten<double>>());
  seq.add(std::make_unique<Dense<double>>(3 * 16, 4));
  Rng rng(39);
  seq.init(rng);
  auto x = gradcheck::random_tensor({2, 1, 4, 4}, 40);
  Tensor<double> y1 = seq.forward(x, Mode::kEval);
  Tensor<double> y2 = seq.forward(x, Mode::kEval);
  CHECK(y1.data == y2.data);
}

TEST_CASE("param vector round trip and arithmetic") {
  Sequential<double> seq;
  seq.add(std::make_unique<Dense<double>>(3, 2));
  Rng rng(41);
  seq.init(rng);
  auto pv = seq.get_params();
  CHECK(pv.size() == 3 * 2 + 2);
  auto pv2 = pv;
  pv2 *= 2.0;
  seq.set_params(pv2);
  CHECK(seq.get_params().values[0] == doctest::Approx(2 * pv.values[0]));
  ParamVector<double> a{{1, 2}}, b{{3, 4}};
  CHECK((a + b).values == std::vector<double>{4, 6});
  CHECK_THROWS(a.check(ParamVector<double>{{1, 2, 3}}));
}
