#pragma once

#include <functional>
#include <string>
#include <vector>

#include "che/rng.hpp"
#include "che/tensor.hpp"

namespace che::testutil {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0,
                            double hi = 2.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// A scalar-valued composition that exercises one op kind, together with a
// point sampled from a range where central differences are well-behaved.
struct OpCheck {
  std::string name;
  Tensor point;
  std::function<NodePtr(const NodePtr&)> fn;
};

// One checker per op kind (both argument positions for the asymmetric ops),
// freshly sampled from `rng`. Dimensions stay <= dim_cap.
inline std::vector<OpCheck> make_op_checks(Rng& rng, std::size_t dim_cap = 8) {
  std::vector<OpCheck> checks;
  const std::size_t n = 2 + rng.uniform_int(dim_cap - 1);  // [2, dim_cap+1)
  const std::size_t m = 2 + rng.uniform_int(dim_cap - 1);

  auto vec_const = [&](std::size_t len) { return constant(random_tensor({len}, rng)); };

  {
    auto c = vec_const(n);
    checks.push_back({"add", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(add(x, c)); }});
    checks.push_back({"add_rhs", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(add(c, x)); }});
    checks.push_back({"sub", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(sub(x, c)); }});
    checks.push_back({"sub_rhs", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(sub(c, x)); }});
    checks.push_back({"mul", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(mul(x, c)); }});
  }
  {
    auto denom = constant(random_tensor({n}, rng, 0.7, 2.0));
    checks.push_back({"div", random_tensor({n}, rng),
                      [denom](const NodePtr& x) { return sum(divide(x, denom)); }});
    auto numer = constant(random_tensor({n}, rng));
    checks.push_back({"div_rhs", random_tensor({n}, rng, 0.7, 2.0),
                      [numer](const NodePtr& x) { return sum(divide(numer, x)); }});
  }
  checks.push_back({"scale", random_tensor({n}, rng),
                    [](const NodePtr& x) { return sum(scale(x, 1.7)); }});
  {
    auto c = vec_const(n);
    checks.push_back({"scalar_mul_scalar", random_tensor({1}, rng),
                      [c](const NodePtr& x) { return sum(scalar_mul(x, c)); }});
    auto s = constant(Tensor::scalar(rng.uniform(0.5, 2.0)));
    checks.push_back({"scalar_mul_tensor", random_tensor({n}, rng),
                      [s](const NodePtr& x) { return sum(scalar_mul(s, x)); }});
  }
  checks.push_back({"exp", random_tensor({n}, rng, -1.5, 1.5),
                    [](const NodePtr& x) { return sum(che::exp(x)); }});
  checks.push_back({"log", random_tensor({n}, rng, 0.4, 3.0),
                    [](const NodePtr& x) { return sum(che::log(x)); }});
  checks.push_back({"tanh", random_tensor({n}, rng),
                    [](const NodePtr& x) { return sum(che::tanh(x)); }});
  checks.push_back({"sigmoid", random_tensor({n}, rng),
                    [](const NodePtr& x) { return sum(che::sigmoid(x)); }});
  {
    // Keep samples clear of the clamp edges so the subgradient is unambiguous.
    Tensor point = random_tensor({n}, rng);
    for (auto& v : point.data()) {
      if (std::fabs(std::fabs(v) - 0.8) < 1e-3) v += 0.01;
    }
    checks.push_back({"clamp", std::move(point),
                      [](const NodePtr& x) { return sum(clamp(x, -0.8, 0.8)); }});
  }
  {
    auto c = vec_const(n);
    checks.push_back({"softmax_last_vec", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(mul(softmax_last(x), c)); }});
    auto cm = constant(random_tensor({m, n}, rng));
    checks.push_back({"softmax_last_mat", random_tensor({m, n}, rng),
                      [cm](const NodePtr& x) { return sum(mul(softmax_last(x), cm)); }});
  }
  {
    auto b = constant(random_tensor({n, m}, rng));
    checks.push_back({"matmul_lhs", random_tensor({m, n}, rng),
                      [b](const NodePtr& x) { return sum(matmul(x, b)); }});
    auto a = constant(random_tensor({m, n}, rng));
    checks.push_back({"matmul_rhs", random_tensor({n, m}, rng),
                      [a](const NodePtr& x) { return sum(matmul(a, x)); }});
    auto v = constant(random_tensor({n}, rng));
    checks.push_back({"matmul_vec_rhs", random_tensor({m, n}, rng),
                      [v](const NodePtr& x) { return sum(matmul(x, v)); }});
    auto a2 = constant(random_tensor({m, n}, rng));
    checks.push_back({"matmul_vec_lhs", random_tensor({n}, rng),
                      [a2](const NodePtr& x) { return sum(matmul(a2, x)); }});
  }
  {
    auto c = constant(random_tensor({n, m}, rng));
    checks.push_back({"transpose", random_tensor({m, n}, rng),
                      [c](const NodePtr& x) { return sum(mul(transpose(x), c)); }});
  }
  {
    auto tail = vec_const(m);
    auto mixer = constant(random_tensor({n + m}, rng));
    checks.push_back({"concat_lhs", random_tensor({n}, rng), [tail, mixer](const NodePtr& x) {
                        return sum(mul(concat(x, tail), mixer));
                      }});
    auto head = vec_const(m);
    auto mixer2 = constant(random_tensor({m + n}, rng));
    checks.push_back({"concat_rhs", random_tensor({n}, rng), [head, mixer2](const NodePtr& x) {
                        return sum(mul(concat(head, x), mixer2));
                      }});
  }
  checks.push_back({"slice", random_tensor({n}, rng), [n](const NodePtr& x) {
                      return sum(slice(x, 1, std::max<std::size_t>(2, n / 2 + 1)));
                    }});
  checks.push_back({"sum", random_tensor({n}, rng),
                    [](const NodePtr& x) { return scale(sum(x), 1.3); }});
  checks.push_back({"mean", random_tensor({m, n}, rng),
                    [](const NodePtr& x) { return scale(mean(x), 1.3); }});
  checks.push_back({"trace", random_tensor({n, n}, rng),
                    [](const NodePtr& x) { return trace(x); }});
  {
    auto c = constant(random_tensor({n, n}, rng));
    checks.push_back({"pairwise_sqdist_vec", random_tensor({n}, rng),
                      [c](const NodePtr& x) { return sum(mul(pairwise_sqdist(x), c)); }});
    auto c2 = constant(random_tensor({m, m}, rng));
    checks.push_back({"pairwise_sqdist_mat", random_tensor({m, 3}, rng),
                      [c2](const NodePtr& x) { return sum(mul(pairwise_sqdist(x), c2)); }});
  }
  {
    std::vector<std::size_t> rows = {0, m - 1, m / 2};
    auto c = vec_const(n);
    checks.push_back({"gather_rows_mean", random_tensor({m, n}, rng),
                      [rows, c](const NodePtr& x) {
                        return sum(mul(gather_rows_mean(x, rows), c));
                      }});
  }
  return checks;
}

}  // namespace che::testutil
