#include <doctest.h>

#include <cmath>

#include "che/checkpoint.hpp"
#include "che/error.hpp"
#include "che/optim.hpp"
#include "che/rng.hpp"
#include "che/tensor.hpp"
#include "helpers.hpp"

using namespace che;

TEST_CASE("elementwise add matches componentwise definition") {
  auto x = constant(Tensor::from_vector({1, 2}));
  auto y = constant(Tensor::from_vector({3, 4}));
  auto z = add(x, y);
  CHECK(z->value[0] == 4.0);
  CHECK(z->value[1] == 6.0);
}

TEST_CASE("matmul by identity returns the operand") {
  auto identity = constant(Tensor::from_matrix(2, 2, {1, 0, 0, 1}));
  auto a = constant(Tensor::from_matrix(2, 2, {5, 6, 7, 8}));
  auto out = matmul(identity, a);
  CHECK(out->value.data() == a->value.data());
}

TEST_CASE("trace of [[1,2],[3,4]] is 5") {
  auto a = constant(Tensor::from_matrix(2, 2, {1, 2, 3, 4}));
  CHECK(trace(a)->value.item() == 5.0);
}

TEST_CASE("shape mismatch raises a structured error naming the op") {
  auto x = constant(Tensor::from_vector({1, 2}));
  auto y = constant(Tensor::from_vector({1, 2, 3}));
  CHECK_THROWS_WITH_AS(add(x, y), doctest::Contains("add"), ShapeError);
  auto a = constant(Tensor::from_matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("non-finite output raises a numeric error") {
  auto zero = constant(Tensor::from_vector({0.0, 1.0}));
  auto one = constant(Tensor::from_vector({1.0, 1.0}));
  CHECK_THROWS_AS(divide(one, zero), NumericError);
  CHECK_THROWS_AS(che::log(zero), NumericError);
}

TEST_CASE("backward of sum(x*x) gives 2x") {
  auto x = make_leaf(Tensor::from_vector({3.0}), true);
  auto root = sum(mul(x, x));
  backward(root);
  CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward of sum is all-ones") {
  auto x = make_leaf(Tensor::from_matrix(2, 3, {1, 2, 3, 4, 5, 6}), true);
  backward(sum(x));
  for (std::size_t i = 0; i < 6; ++i) CHECK(x->grad[i] == 1.0);
}

TEST_CASE("gradient of trace(A*B) with respect to A is B transposed") {
  auto a = make_leaf(Tensor::from_matrix(2, 2, {1, 2, 3, 4}), true);
  auto b = constant(Tensor::from_matrix(2, 2, {5, 6, 7, 8}));
  backward(trace(matmul(a, b)));
  CHECK(a->grad[0] == 5.0);
  CHECK(a->grad[1] == 7.0);
  CHECK(a->grad[2] == 6.0);
  CHECK(a->grad[3] == 8.0);
}

TEST_CASE("backward requires a scalar root") {
  auto x = make_leaf(Tensor::from_vector({1, 2}), true);
  CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
}

TEST_CASE("parameters off the path to the root keep empty gradients") {
  auto used = make_leaf(Tensor::from_vector({1.0, 2.0}), true);
  auto unused = make_leaf(Tensor::from_vector({5.0, 5.0}), true);
  backward(sum(used));
  CHECK(!used->grad.empty());
  CHECK(unused->grad.empty());
}

TEST_CASE("grad_check on a quadratic is exact up to rounding") {
  auto f = [](const NodePtr& x) { return sum(mul(x, x)); };
  CHECK(grad_check(f, Tensor::from_vector({3.0}), 1e-5) < 1e-6);
}

TEST_CASE("grad_check across every op kind") {
  Rng rng(2024);
  for (int round = 0; round < 8; ++round) {
    for (auto& check : testutil::make_op_checks(rng)) {
      INFO("op ", check.name);
      CHECK(grad_check(check.fn, check.point, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("backward is additive over scalar roots (linearity)") {
  Rng rng(77);
  for (int round = 0; round < 20; ++round) {
    Tensor point = testutil::random_tensor({5}, rng);
    auto c = constant(testutil::random_tensor({5}, rng));

    auto f = [&](const NodePtr& x) { return sum(mul(x, c)); };
    auto g = [&](const NodePtr& x) { return sum(che::tanh(x)); };

    auto x_joint = make_leaf(point, true);
    backward(add(f(x_joint), g(x_joint)));

    auto x_f = make_leaf(point, true);
    backward(f(x_f));
    auto x_g = make_leaf(point, true);
    backward(g(x_g));

    for (std::size_t i = 0; i < point.numel(); ++i) {
      CHECK(x_joint->grad[i] ==
            doctest::Approx(x_f->grad[i] + x_g->grad[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradients accumulate across repeated backward calls") {
  auto x = make_leaf(Tensor::from_vector({2.0}), true);
  auto root1 = sum(mul(x, x));
  backward(root1);
  const double first = x->grad[0];
  auto root2 = sum(mul(x, x));
  backward(root2);
  CHECK(x->grad[0] == doctest::Approx(2.0 * first));
  clear_grad(x);
  CHECK(x->grad.empty());
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = make_leaf(Tensor::from_vector({1.0, 2.0}), true);
  NoGradGuard guard;
  auto out = sum(mul(x, x));
  CHECK(out->inputs.empty());
  CHECK(!out->requires_grad);
}

TEST_CASE("sgd_step applies the textbook update") {
  Tensor p = Tensor::scalar(1.0);
  sgd_step(p, Tensor::scalar(2.0), 0.1);
  CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

  Tensor q = Tensor::scalar(1.5);
  sgd_step(q, Tensor::scalar(0.0), 0.1);
  CHECK(q[0] == 1.5);
}

TEST_CASE("adam first step moves by about the learning rate") {
  Tensor p = Tensor::scalar(1.0);
  AdamState state;
  adam_step(p, Tensor::scalar(1.0), state, 0.001);
  // Bias-corrected first step: lr * 1 / (1 + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-6));
  CHECK(state.step_count == 1);
}

TEST_CASE("optimizer rejects non-finite gradients without mutating") {
  Tensor p = Tensor::scalar(1.0);
  Tensor bad({1});
  bad[0] = 0.0;
  AdamState state;
  // Build a non-finite gradient bypassing op checks.
  bad.data()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1), NumericError);
  CHECK_THROWS_AS(adam_step(p, bad, state, 0.1), NumericError);
  CHECK(p[0] == 1.0);
}

TEST_CASE("checkpoint canonical JSON round-trips byte-exactly") {
  Rng rng(5);
  Checkpoint ckpt;
  ckpt.model_kind = "lstm";
  ckpt.dim_m = 4;
  ckpt.dim_n = 3;
  ckpt.dim_r = 2;
  ckpt.seed = 99;
  ckpt.params.emplace("embed.dx", testutil::random_tensor({4, 2}, rng));
  ckpt.params.emplace("prd.bias", testutil::random_tensor({4}, rng, -1e-3, 1e-3));
  ckpt.params.emplace("odd/value", Tensor::from_vector({1.0 / 3.0, 1e-300, 17.0}));

  const std::string once = checkpoint_to_json(ckpt);
  const Checkpoint reloaded = checkpoint_from_json(once);
  const std::string twice = checkpoint_to_json(reloaded);
  CHECK(once == twice);
  CHECK(reloaded == ckpt);
}

TEST_CASE("checkpoint loader reports malformed input") {
  CHECK_THROWS_AS(checkpoint_from_json("{not json"), IoError);
  CHECK_THROWS_AS(checkpoint_from_json("{\"format_version\":2}"), IoError);
}
