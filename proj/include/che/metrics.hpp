#pragma once

#include <span>
#include <vector>

#include "che/encoders.hpp"
#include "che/synth.hpp"

namespace che {

// |top-k(scores) /\ truth| / min(k, |truth|). Score ties break by ascending
// code index so results are exactly reproducible.
double acc_at_k(std::span<const double> scores, const std::vector<int>& truth, std::size_t k);

// Binary-relevance NDCG: DCG over truth codes in the top k with discount
// 1/log2(position+1), normalized by the ideal DCG over min(k, |truth|) hits.
double ndcg_at_k(std::span<const double> scores, const std::vector<int>& truth, std::size_t k);

struct MetricValues {
  double ndcg10 = 0.0;
  double ndcg20 = 0.0;
  double acc10 = 0.0;
  double acc20 = 0.0;

  double average() const { return 0.25 * (ndcg10 + ndcg20 + acc10 + acc20); }
};

// Unweighted mean metrics over all prediction points of the split.
MetricValues evaluate(const Model& model, const std::vector<PatientRecord>& records,
                      const std::vector<PredictionPoint>& points);

// Two-sided Welch's t-test p-value (unequal variances,
// Welch-Satterthwaite degrees of freedom).
double welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct CrossPredictability {
  double r_squared = 0.0;
  bool degenerate = false;
};

// Ridge regression (lambda = 1e-3) from the weight-scaled e_p vectors to the
// weight-scaled e_d vectors; returns 1 - RSS/TSS clamped to [-1, 1].
CrossPredictability cross_predictability(const std::vector<std::vector<double>>& e_d,
                                         const std::vector<std::vector<double>>& e_p,
                                         const std::vector<double>& weights);

}  // namespace che
