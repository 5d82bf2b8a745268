#pragma once

#include <span>
#include <vector>

#include "che/tensor.hpp"

namespace che {

// Bandwidth selection for the RBF kernels over embedding dimensions.
struct HsicConfig {
  enum class SigmaPolicy { fixed, median_heuristic };

  SigmaPolicy policy = SigmaPolicy::median_heuristic;
  double fixed_sigma = 1.0;

  static HsicConfig fixed(double sigma);
  static HsicConfig median() { return HsicConfig{}; }
};

// sigma such that sigma^2 is the median pairwise squared distance between
// the vector's entries; falls back to 1 when the median is 0.
double median_sigma(std::span<const double> v);

double resolve_sigma(std::span<const double> v, const HsicConfig& config);

// K[i][j] = exp(-(v_i - v_j)^2 / sigma^2). Symmetric, unit diagonal.
Tensor rbf_kernel_matrix(std::span<const double> v, double sigma);

// J = I - (1/r) * ones. Symmetric, idempotent, annihilates constants.
Tensor centering_matrix(std::size_t r);

// Tr(K_d J K_p J) / (r-1)^2 with per-vector bandwidths from `config`.
double hsic_local(std::span<const double> e_d, std::span<const double> e_p,
                  const HsicConfig& config);

// Same statistic on the weight-scaled pair (w*e_d, w*e_p). Bandwidths are
// resolved on the unweighted vectors; otherwise the median heuristic would
// cancel the scaling exactly and the statistic would not depend on w.
double hsic_local_weighted(std::span<const double> e_d, std::span<const double> e_p, double w,
                           const HsicConfig& config);

struct WeightedPair {
  std::vector<double> e_d;
  std::vector<double> e_p;
  double weight = 1.0;
};

// Mean of hsic_local_weighted over all pairs.
double hsic_aggregate(const std::vector<WeightedPair>& pairs, const HsicConfig& config);

// Differentiable graph of hsic_local. Bandwidths are resolved from the
// current node values and treated as constants during differentiation.
NodePtr hsic_local_node(const NodePtr& e_d, const NodePtr& e_p, const HsicConfig& config);

// Differentiable graph of hsic_local_weighted as a function of the scalar
// weight node; the embeddings enter as constants.
NodePtr weighted_hsic_node(const NodePtr& weight, const Tensor& e_d, const Tensor& e_p,
                           const HsicConfig& config);

}  // namespace che
