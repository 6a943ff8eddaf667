#include <doctest.h>

#include <cmath>

#include "fslt/nn.hpp"
#include "oracles.hpp"

using namespace fslt;

namespace {

ArchSpec stack(std::vector<LayerSpec> layers, Shape input, std::size_t classes) {
  ArchSpec a;
  a.name = "probe";
  a.layers = std::move(layers);
  a.input_shape = std::move(input);
  a.num_classes = classes;
  a.validate();
  return a;
}

}  // namespace

TEST_CASE("architecture shapes and parameter counts") {
  const auto conv6 = make_convnet(6, {3, 32, 32}, 10, 1.0, false);
  CHECK(conv6.total_params() == 2261184);
  CHECK(conv6.param_layers().size() == 9);
  CHECK(conv6.output_shapes().back() == Shape{10});
  const auto conv2 = make_convnet(2, {1, 28, 28}, 10, 0.125, true);
  CHECK(conv2.batchnorm_count() == 4);
  CHECK(conv2.layers[0].out_features == 8);
  CHECK_THROWS_AS(make_convnet(3, {3, 32, 32}, 10, 1.0, false), ShapeError);
  CHECK(LayerSpec::conv(3, 8, 3, 5).fan_in() == 45);
  CHECK(LayerSpec::conv(3, 8, 3, 5).weight_shape() == Shape{8, 3, 3, 5});
}

TEST_CASE("dense forward matches a hand computation") {
  const auto arch = stack({LayerSpec::dense(3, 2)}, {3}, 2);
  TensorList w{Tensor({2, 3}, {1, 2, 3, -1, 0, 1})};
  auto norm = NormState::init(arch);
  const Tensor x({1, 3}, {1, 1, 2});
  const auto out = forward(arch, w, {}, x, Mode::eval, norm).logits;
  CHECK(out.data == std::vector<float>{9, 1});
  TensorList m{Tensor({2, 3}, {1, 0, 1, 0, 0, 1})};
  CHECK(forward(arch, w, m, x, Mode::eval, norm).logits.data == std::vector<float>{7, 2});
}

TEST_CASE("conv uses same padding") {
  const auto arch = stack({LayerSpec::conv(1, 1, 3, 3), LayerSpec::avgpool(), LayerSpec::dense(1, 1)}, {1, 3, 3}, 1);
  TensorList w{Tensor({1, 1, 3, 3}, 1.0f), Tensor({1, 1}, 1.0f)};
  auto norm = NormState::init(arch);
  const Tensor x({1, 1, 3, 3}, 1.0f);
  // neighbourhood sums of a 3x3 block of ones: corners 4, edges 6, center 9
  const float expected = (4 * 4 + 4 * 6 + 9) / 9.0f;
  CHECK(forward(arch, w, {}, x, Mode::eval, norm).logits.data[0] == doctest::Approx(expected));
}

TEST_CASE("maxpool picks the window maximum") {
  const auto arch = stack({LayerSpec::maxpool(), LayerSpec::dense(1, 1)}, {1, 2, 2}, 1);
  TensorList w{Tensor({1, 1}, 1.0f)};
  auto norm = NormState::init(arch);
  const Tensor x({1, 1, 2, 2}, {0.5f, -2.0f, 3.0f, 1.0f});
  const auto fwd = forward(arch, w, {}, x, Mode::train, norm);
  CHECK(fwd.logits.data[0] == 3.0f);
  const auto bwd = backward(fwd.cache, Tensor({1, 1}, 1.0f));
  CHECK(bwd.grad_input.data == std::vector<float>{0, 0, 1, 0});
}

TEST_CASE("batchnorm running statistics keep 0.9 of the old value") {
  const auto arch = stack({LayerSpec::batchnorm(2), LayerSpec::dense(2, 1)}, {2}, 1);
  TensorList w{Tensor({1, 2}, 1.0f)};
  auto norm = NormState::init(arch);
  const Tensor x({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  forward(arch, w, {}, x, Mode::train, norm);
  // channel 0: mean 2.5, unbiased var 5/3
  CHECK(norm.layers[0].mean[0] == doctest::Approx(0.25));
  CHECK(norm.layers[0].var[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
  CHECK(norm.layers[0].mean[1] == doctest::Approx(2.5));
  const auto before = norm;
  forward(arch, w, {}, x, Mode::eval, norm);
  CHECK(norm == before);
}

TEST_CASE("cross entropy matches a direct log-softmax") {
  const Tensor logits({2, 3}, {1.0f, 2.0f, 3.0f, -1.0f, 0.0f, 5.0f});
  const std::vector<int> labels{2, 0};
  const auto r = cross_entropy(logits, labels);
  auto lse = [](double a, double b, double c) { return std::log(std::exp(a) + std::exp(b) + std::exp(c)); };
  const double expected = ((lse(1, 2, 3) - 3) + (lse(-1, 0, 5) + 1)) / 2.0;
  CHECK(r.loss == doctest::Approx(expected).epsilon(1e-6));
  double row_sum = 0;
  for (int j = 0; j < 3; ++j) row_sum += r.grad_logits.data[j];
  CHECK(std::fabs(row_sum) < 1e-6);
  CHECK(r.grad_logits.data[2] == doctest::Approx((std::exp(3.0 - lse(1, 2, 3)) - 1.0) / 2.0).epsilon(1e-5));
  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{3, 0}), std::out_of_range);
  CHECK(accuracy(logits, labels) == 0.5);
}

TEST_CASE("non-finite activations are reported with the layer") {
  const auto arch = stack({LayerSpec::dense(2, 2), LayerSpec::relu(), LayerSpec::dense(2, 2)}, {2}, 2);
  TensorList w{Tensor({2, 2}, 1e30f), Tensor({2, 2}, 1e30f)};
  auto norm = NormState::init(arch);
  CHECK_THROWS_AS(forward(arch, w, {}, Tensor({1, 2}, 1e30f), Mode::eval, norm), NumericError);
}

TEST_CASE("shape mismatches are rejected") {
  const auto arch = stack({LayerSpec::dense(3, 2)}, {3}, 2);
  auto norm = NormState::init(arch);
  CHECK_THROWS_AS(forward(arch, TensorList{Tensor({2, 2})}, {}, Tensor({1, 3}), Mode::eval, norm), ShapeError);
  CHECK_THROWS_AS(forward(arch, TensorList{Tensor({2, 3})}, {}, Tensor({1, 4}), Mode::eval, norm), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
}

TEST_CASE("gradients agree with central differences") {
  struct Case {
    std::string name;
    ArchSpec arch;
    Mode mode;
  };
  const std::vector<Case> cases{
      {"dense", stack({LayerSpec::dense(5, 4), LayerSpec::dense(4, 3)}, {5}, 3), Mode::train},
      {"conv", stack({LayerSpec::conv(2, 3, 3, 3), LayerSpec::dense(3 * 5 * 5, 3)}, {2, 5, 5}, 3), Mode::train},
      {"relu", stack({LayerSpec::dense(5, 6), LayerSpec::relu(), LayerSpec::dense(6, 3)}, {5}, 3), Mode::train},
      {"maxpool", stack({LayerSpec::conv(1, 2, 3, 3), LayerSpec::maxpool(), LayerSpec::dense(2 * 3 * 3, 3)}, {1, 6, 6}, 3), Mode::train},
      {"avgpool", stack({LayerSpec::conv(2, 4, 3, 3), LayerSpec::avgpool(), LayerSpec::dense(4, 3)}, {2, 4, 4}, 3), Mode::train},
      {"batchnorm-train", stack({LayerSpec::dense(5, 4), LayerSpec::batchnorm(4), LayerSpec::dense(4, 3)}, {5}, 3), Mode::train},
      {"conv-batchnorm-train", stack({LayerSpec::conv(2, 3, 3, 3), LayerSpec::batchnorm(3), LayerSpec::dense(3 * 4 * 4, 3)}, {2, 4, 4}, 3), Mode::train},
      {"batchnorm-eval", stack({LayerSpec::conv(2, 3, 3, 3), LayerSpec::batchnorm(3), LayerSpec::avgpool(), LayerSpec::dense(3, 3)}, {2, 4, 4}, 3), Mode::eval},
  };
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto res = oracle::check_gradients(c.arch, 100 + seed, 4, c.mode);
      INFO(c.name << " seed " << seed);
      CHECK(res.weight_rel_error <= 1e-2);
      CHECK(res.input_rel_error <= 1e-2);
      CHECK(res.skipped * 10 <= res.checked);
    }
  }
}

TEST_CASE("masked weights get the gradient of the effective weight") {
  const auto arch = stack({LayerSpec::dense(2, 1)}, {2}, 1);
  TensorList w{Tensor({1, 2}, {2.0f, 3.0f})};
  TensorList m{Tensor({1, 2}, {1.0f, 0.0f})};
  auto norm = NormState::init(arch);
  const auto fwd = forward(arch, w, m, Tensor({1, 2}, {5.0f, 7.0f}), Mode::train, norm);
  const auto bwd = backward(fwd.cache, Tensor({1, 1}, 1.0f));
  // d out / d(w*m) is the input at every position, masked or not.
  CHECK(bwd.grad_weights[0].data == std::vector<float>{5.0f, 7.0f});
  CHECK(bwd.grad_input.data == std::vector<float>{2.0f, 0.0f});
}
