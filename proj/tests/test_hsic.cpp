#include <doctest.h>

#include <cmath>
#include <vector>

#include "che/error.hpp"
#include "che/hsic.hpp"
#include "che/rng.hpp"
#include "helpers.hpp"

using namespace che;

namespace {

// Independent oracle: quadruple loop over Tr(K_d J K_p J) / (r-1)^2 without
// any shared matrix code.
double naive_hsic(const std::vector<double>& a, const std::vector<double>& b, double sigma_a,
                  double sigma_b) {
  const std::size_t r = a.size();
  std::vector<std::vector<double>> kd(r, std::vector<double>(r));
  std::vector<std::vector<double>> kp(r, std::vector<double>(r));
  std::vector<std::vector<double>> j(r, std::vector<double>(r, -1.0 / static_cast<double>(r)));
  for (std::size_t i = 0; i < r; ++i) j[i][i] += 1.0;
  for (std::size_t p = 0; p < r; ++p) {
    for (std::size_t q = 0; q < r; ++q) {
      kd[p][q] = std::exp(-(a[p] - a[q]) * (a[p] - a[q]) / (sigma_a * sigma_a));
      kp[p][q] = std::exp(-(b[p] - b[q]) * (b[p] - b[q]) / (sigma_b * sigma_b));
    }
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t m = 0; m < r; ++m) {
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t l = 0; l < r; ++l) {
          acc += kd[i][m] * j[m][k] * kp[k][l] * j[l][i];
        }
      }
    }
  }
  const double norm = static_cast<double>(r - 1) * static_cast<double>(r - 1);
  return acc / norm;
}

std::vector<double> random_vec(std::size_t r, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(r);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("rbf kernel matrix basics") {
  const std::vector<double> constant_vec = {0.7, 0.7, 0.7};
  Tensor k = rbf_kernel_matrix(constant_vec, 1.0);
  for (double v : k.data()) CHECK(v == 1.0);

  const std::vector<double> pair = {0.0, 1.0};
  Tensor k2 = rbf_kernel_matrix(pair, 1.0);
  CHECK(k2.at(0, 0) == 1.0);
  CHECK(k2.at(1, 1) == 1.0);
  CHECK(k2.at(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(k2.at(1, 0) == k2.at(0, 1));

  Rng rng(3);
  const auto v = random_vec(9, rng);
  Tensor k3 = rbf_kernel_matrix(v, 0.7);
  for (std::size_t i = 0; i < 9; ++i) CHECK(k3.at(i, i) == 1.0);

  CHECK_THROWS_AS(rbf_kernel_matrix(pair, 0.0), ConfigError);
  CHECK_THROWS_AS(rbf_kernel_matrix(pair, -1.0), ConfigError);
}

TEST_CASE("centering matrix is symmetric, idempotent, annihilates constants") {
  Tensor j2 = centering_matrix(2);
  CHECK(j2.at(0, 0) == doctest::Approx(0.5));
  CHECK(j2.at(0, 1) == doctest::Approx(-0.5));
  CHECK(j2.at(1, 0) == doctest::Approx(-0.5));
  CHECK(j2.at(1, 1) == doctest::Approx(0.5));

  for (std::size_t r : {std::size_t(2), std::size_t(5), std::size_t(9)}) {
    Tensor j = centering_matrix(r);
    for (std::size_t i = 0; i < r; ++i) {
      double row_sum = 0.0;
      for (std::size_t c = 0; c < r; ++c) {
        row_sum += j.at(i, c);
        CHECK(j.at(i, c) == j.at(c, i));
      }
      CHECK(std::fabs(row_sum) < 1e-12);  // J * ones = 0
    }
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t c = 0; c < r; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += j.at(i, k) * j.at(k, c);
        CHECK(std::fabs(acc - j.at(i, c)) < 1e-12);  // J * J == J
      }
    }
  }
  CHECK_THROWS_AS(centering_matrix(1), ShapeError);
}

TEST_CASE("hsic_local on the r=2 worked example") {
  const auto cfg = HsicConfig::fixed(1.0);
  const std::vector<double> e_d = {0.0, 1.0};
  const std::vector<double> e_p = {0.0, 2.0};
  const double expected = (1.0 - std::exp(-1.0)) * (1.0 - std::exp(-4.0));
  CHECK(hsic_local(e_d, e_p, cfg) == doctest::Approx(0.6205428669389089).epsilon(1e-12));
  CHECK(hsic_local(e_d, e_p, cfg) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hsic_local is zero for constant vectors and positive on self") {
  const auto cfg = HsicConfig::fixed(1.0);
  const std::vector<double> const_vec = {0.5, 0.5, 0.5, 0.5};
  Rng rng(11);
  const auto other = random_vec(4, rng);
  CHECK(std::fabs(hsic_local(const_vec, other, cfg)) < 1e-12);
  CHECK(std::fabs(hsic_local(other, const_vec, cfg)) < 1e-12);
  CHECK(hsic_local(other, other, cfg) > 0.0);
}

TEST_CASE("hsic_local matches the naive quadruple-loop oracle") {
  Rng rng(21);
  for (int round = 0; round < 300; ++round) {
    const std::size_t r = 2 + rng.uniform_int(15);
    const auto a = random_vec(r, rng);
    const auto b = random_vec(r, rng);
    const double sigma = rng.uniform(0.4, 2.0);
    CHECK(hsic_local(a, b, HsicConfig::fixed(sigma)) ==
          doctest::Approx(naive_hsic(a, b, sigma, sigma)).epsilon(1e-10));
    if (r == 2) {
      const Tensor kd = rbf_kernel_matrix(a, sigma);
      const Tensor kp = rbf_kernel_matrix(b, sigma);
      CHECK(hsic_local(a, b, HsicConfig::fixed(sigma)) ==
            doctest::Approx((1.0 - kd.at(0, 1)) * (1.0 - kp.at(0, 1))).epsilon(1e-12));
    }
  }
}

TEST_CASE("hsic_local symmetry, non-negativity, permutation behavior") {
  Rng rng(31);
  const auto cfg = HsicConfig::median();
  for (int round = 0; round < 100; ++round) {
    const std::size_t r = 3 + rng.uniform_int(10);
    auto a = random_vec(r, rng);
    auto b = random_vec(r, rng);
    const double h = hsic_local(a, b, cfg);
    CHECK(h >= -1e-12);
    CHECK(hsic_local(b, a, cfg) == doctest::Approx(h).epsilon(1e-12));

    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<double> ap(r), bp(r);
    for (std::size_t i = 0; i < r; ++i) {
      ap[i] = a[perm[i]];
      bp[i] = b[perm[i]];
    }
    CHECK(hsic_local(ap, bp, cfg) == doctest::Approx(h).epsilon(1e-9));
  }
  const auto a = random_vec(8, rng);
  const auto b = random_vec(8, rng);
  auto b_swapped = b;
  std::swap(b_swapped[0], b_swapped[7]);
  CHECK(hsic_local(a, b, cfg) != hsic_local(a, b_swapped, cfg));
}

TEST_CASE("median_sigma worked examples") {
  CHECK(median_sigma(std::vector<double>{0.0, 1.0}) == doctest::Approx(1.0));
  CHECK(median_sigma(std::vector<double>{0.3, 0.3, 0.3}) == 1.0);  // degenerate fallback
  // Pairwise squared distances of (0,1,3) are {1, 9, 4}; median 4.
  CHECK(median_sigma(std::vector<double>{0.0, 1.0, 3.0}) == doctest::Approx(2.0));
}

TEST_CASE("hsic_aggregate mean and weighting semantics") {
  const auto cfg = HsicConfig::fixed(1.0);
  Rng rng(41);
  const auto a = random_vec(6, rng);
  const auto b = random_vec(6, rng);
  const auto c = random_vec(6, rng);
  const auto d = random_vec(6, rng);

  const double single = hsic_aggregate({{a, b, 1.0}}, cfg);
  CHECK(single == doctest::Approx(hsic_local(a, b, cfg)).epsilon(1e-12));

  const double two = hsic_aggregate({{a, b, 1.0}, {c, d, 1.0}}, cfg);
  CHECK(two ==
        doctest::Approx(0.5 * (hsic_local(a, b, cfg) + hsic_local(c, d, cfg))).epsilon(1e-12));

  // Scaling a pair toward zero drives its term toward zero.
  const double small_weight = hsic_local_weighted(a, b, 1e-4, cfg);
  CHECK(small_weight < 1e-6);
  CHECK(small_weight >= -1e-12);

  CHECK_THROWS_AS(hsic_aggregate({}, cfg), ConfigError);
  CHECK_THROWS_AS(hsic_aggregate({{a, b, 0.0}}, cfg), ConfigError);
  CHECK_THROWS_AS(hsic_aggregate({{a, b, -1.0}}, cfg), ConfigError);
}

TEST_CASE("median bandwidth comes from the unweighted vectors") {
  // If the bandwidth were re-estimated on the scaled vectors the statistic
  // would be exactly scale-invariant; resolving it on the unweighted
  // vectors keeps the dependence on the weight.
  Rng rng(51);
  const auto a = random_vec(8, rng);
  const auto b = random_vec(8, rng);
  const auto cfg = HsicConfig::median();
  const double at_one = hsic_local_weighted(a, b, 1.0, cfg);
  const double at_tiny = hsic_local_weighted(a, b, 0.05, cfg);
  CHECK(at_one == doctest::Approx(hsic_local(a, b, cfg)).epsilon(1e-12));
  CHECK(at_tiny < at_one);
}

TEST_CASE("graph hsic agrees with the plain evaluation") {
  Rng rng(61);
  for (int round = 0; round < 20; ++round) {
    const std::size_t r = 2 + rng.uniform_int(13);
    const auto a = random_vec(r, rng);
    const auto b = random_vec(r, rng);
    const auto cfg = HsicConfig::median();
    auto node = hsic_local_node(constant(Tensor::from_vector(a)),
                                constant(Tensor::from_vector(b)), cfg);
    CHECK(node->value.item() == doctest::Approx(hsic_local(a, b, cfg)).epsilon(1e-12));

    auto w = constant(Tensor::scalar(0.37));
    auto weighted = weighted_hsic_node(w, Tensor::from_vector(a), Tensor::from_vector(b), cfg);
    CHECK(weighted->value.item() ==
          doctest::Approx(hsic_local_weighted(a, b, 0.37, cfg)).epsilon(1e-12));
  }
}

TEST_CASE("gradient through hsic_local matches finite differences") {
  Rng rng(71);
  const auto cfg = HsicConfig::fixed(1.0);
  for (int round = 0; round < 25; ++round) {
    const std::size_t r = 8;
    const auto fixed_side = constant(Tensor::from_vector(random_vec(r, rng)));
    auto f = [&](const NodePtr& x) { return hsic_local_node(x, fixed_side, cfg); };
    CHECK(grad_check(f, Tensor::from_vector(random_vec(r, rng)), 1e-5) < 1e-4);
  }
}

TEST_CASE("gradient of the weighted statistic in the weight matches finite differences") {
  Rng rng(81);
  const auto cfg = HsicConfig::median();
  for (int round = 0; round < 25; ++round) {
    const std::size_t r = 2 + rng.uniform_int(13);
    const Tensor a = Tensor::from_vector(random_vec(r, rng));
    const Tensor b = Tensor::from_vector(random_vec(r, rng));
    auto f = [&](const NodePtr& w) { return weighted_hsic_node(w, a, b, cfg); };
    const Tensor w0 = Tensor::scalar(rng.uniform(0.2, 3.0));
    CHECK(grad_check(f, w0, 1e-5) < 1e-4);
  }
}

TEST_CASE("decorrelation is statistically detectable at r=32") {
  Rng rng(91);
  const auto cfg = HsicConfig::median();
  double mean_independent = 0.0;
  double mean_coupled = 0.0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    std::vector<double> e_d(32), e_p_ind(32), e_p_coupled(32);
    for (std::size_t q = 0; q < 32; ++q) {
      e_d[q] = rng.normal();
      e_p_ind[q] = rng.normal();
      e_p_coupled[q] = e_d[q] + 0.1 * rng.normal();
    }
    mean_independent += hsic_local(e_d, e_p_ind, cfg);
    mean_coupled += hsic_local(e_d, e_p_coupled, cfg);
  }
  mean_independent /= draws;
  mean_coupled /= draws;
  CHECK(mean_independent < mean_coupled);
}
