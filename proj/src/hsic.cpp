#include "che/hsic.hpp"

#include <algorithm>
#include <cmath>

#include "che/error.hpp"

namespace che {

namespace {

void check_pair(std::span<const double> e_d, std::span<const double> e_p) {
  if (e_d.size() != e_p.size()) {
    throw ShapeError("hsic_local: dimension mismatch " + std::to_string(e_d.size()) + " vs " +
                     std::to_string(e_p.size()));
  }
  if (e_d.size() < 2) {
    throw ShapeError("hsic_local: embedding dimensionality must be >= 2, got " +
                     std::to_string(e_d.size()));
  }
}

// Tr(A B) for square matrices without forming the product.
double trace_of_product(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) acc += a[i * n + k] * b[k * n + i];
  }
  return acc;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aik * b[k * n + j];
    }
  }
  return out;
}

double hsic_from_kernels(const Tensor& k_d, const Tensor& k_p) {
  const std::size_t r = k_d.rows();
  const Tensor j = centering_matrix(r);
  const Tensor kdj = matmul_plain(k_d, j);
  const Tensor kpj = matmul_plain(k_p, j);
  const double norm = static_cast<double>(r - 1) * static_cast<double>(r - 1);
  return trace_of_product(kdj, kpj) / norm;
}

Tensor scaled_vector(std::span<const double> v, double w) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = w * v[i];
  return t;
}

}  // namespace

HsicConfig HsicConfig::fixed(double sigma) {
  if (sigma <= 0.0) throw ConfigError("HsicConfig: fixed sigma must be positive");
  HsicConfig cfg;
  cfg.policy = SigmaPolicy::fixed;
  cfg.fixed_sigma = sigma;
  return cfg;
}

double median_sigma(std::span<const double> v) {
  if (v.size() < 2) throw ShapeError("median_sigma: need at least 2 entries");
  std::vector<double> dists;
  dists.reserve(v.size() * (v.size() - 1) / 2);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      const double d = v[i] - v[j];
      dists.push_back(d * d);
    }
  }
  std::sort(dists.begin(), dists.end());
  const std::size_t n = dists.size();
  const double med =
      (n % 2 == 1) ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  if (med <= 0.0) return 1.0;
  return std::sqrt(med);
}

double resolve_sigma(std::span<const double> v, const HsicConfig& config) {
  if (config.policy == HsicConfig::SigmaPolicy::fixed) {
    if (config.fixed_sigma <= 0.0) throw ConfigError("hsic: sigma must be positive");
    return config.fixed_sigma;
  }
  return median_sigma(v);
}

Tensor rbf_kernel_matrix(std::span<const double> v, double sigma) {
  if (sigma <= 0.0) throw ConfigError("rbf_kernel_matrix: sigma must be positive");
  const std::size_t r = v.size();
  const double inv = 1.0 / (sigma * sigma);
  Tensor k({r, r});
  for (std::size_t i = 0; i < r; ++i) {
    k[i * r + i] = 1.0;
    for (std::size_t j = i + 1; j < r; ++j) {
      const double d = v[i] - v[j];
      const double val = std::exp(-d * d * inv);
      k[i * r + j] = val;
      k[j * r + i] = val;
    }
  }
  return k;
}

Tensor centering_matrix(std::size_t r) {
  if (r < 2) throw ShapeError("centering_matrix: r must be >= 2, got " + std::to_string(r));
  const double off = -1.0 / static_cast<double>(r);
  Tensor j = Tensor::full({r, r}, off);
  for (std::size_t i = 0; i < r; ++i) j[i * r + i] += 1.0;
  return j;
}

double hsic_local(std::span<const double> e_d, std::span<const double> e_p,
                  const HsicConfig& config) {
  check_pair(e_d, e_p);
  const Tensor k_d = rbf_kernel_matrix(e_d, resolve_sigma(e_d, config));
  const Tensor k_p = rbf_kernel_matrix(e_p, resolve_sigma(e_p, config));
  return hsic_from_kernels(k_d, k_p);
}

double hsic_local_weighted(std::span<const double> e_d, std::span<const double> e_p, double w,
                           const HsicConfig& config) {
  check_pair(e_d, e_p);
  if (w <= 0.0) throw ConfigError("hsic_local_weighted: weight must be positive");
  const double sigma_d = resolve_sigma(e_d, config);
  const double sigma_p = resolve_sigma(e_p, config);
  const Tensor sd = scaled_vector(e_d, w);
  const Tensor sp = scaled_vector(e_p, w);
  const Tensor k_d = rbf_kernel_matrix(std::span<const double>(sd.data()), sigma_d);
  const Tensor k_p = rbf_kernel_matrix(std::span<const double>(sp.data()), sigma_p);
  return hsic_from_kernels(k_d, k_p);
}

double hsic_aggregate(const std::vector<WeightedPair>& pairs, const HsicConfig& config) {
  if (pairs.empty()) throw ConfigError("hsic_aggregate: empty pair list");
  double acc = 0.0;
  for (const auto& pair : pairs) {
    acc += hsic_local_weighted(pair.e_d, pair.e_p, pair.weight, config);
  }
  return acc / static_cast<double>(pairs.size());
}

namespace {

NodePtr kernel_node(const NodePtr& v, double sigma) {
  auto dist = pairwise_sqdist(v);
  return che::exp(scale(dist, -1.0 / (sigma * sigma)));
}

NodePtr hsic_node_from(const NodePtr& e_d, const NodePtr& e_p, double sigma_d, double sigma_p) {
  const std::size_t r = e_d->value.numel();
  auto j = constant(centering_matrix(r));
  auto k_d = kernel_node(e_d, sigma_d);
  auto k_p = kernel_node(e_p, sigma_p);
  auto product = matmul(matmul(matmul(k_d, j), k_p), j);
  const double norm = static_cast<double>(r - 1) * static_cast<double>(r - 1);
  return scale(trace(product), 1.0 / norm);
}

}  // namespace

NodePtr hsic_local_node(const NodePtr& e_d, const NodePtr& e_p, const HsicConfig& config) {
  check_pair(e_d->value.data(), e_p->value.data());
  const double sigma_d = resolve_sigma(e_d->value.data(), config);
  const double sigma_p = resolve_sigma(e_p->value.data(), config);
  return hsic_node_from(e_d, e_p, sigma_d, sigma_p);
}

NodePtr weighted_hsic_node(const NodePtr& weight, const Tensor& e_d, const Tensor& e_p,
                           const HsicConfig& config) {
  check_pair(e_d.data(), e_p.data());
  if (weight->value.numel() != 1) {
    throw ShapeError("weighted_hsic_node: weight must be scalar, got " +
                     weight->value.shape_string());
  }
  const double sigma_d = resolve_sigma(e_d.data(), config);
  const double sigma_p = resolve_sigma(e_p.data(), config);
  auto scaled_d = scalar_mul(weight, constant(e_d));
  auto scaled_p = scalar_mul(weight, constant(e_p));
  return hsic_node_from(scaled_d, scaled_p, sigma_d, sigma_p);
}

}  // namespace che
