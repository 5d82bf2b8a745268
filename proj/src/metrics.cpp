#include "che/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "che/error.hpp"
#include "che/stats.hpp"

namespace che {

namespace {

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t count = std::min(k, scores.size());
  std::partial_sort(order.begin(), order.begin() + count, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;  // ascending index on ties
                    });
  order.resize(count);
  return order;
}

void check_ranking_args(std::span<const double> scores, const std::vector<int>& truth,
                        std::size_t k) {
  if (truth.empty()) throw ConfigError("ranking metric: empty truth set");
  if (k < 1) throw ConfigError("ranking metric: k must be >= 1");
  for (int code : truth) {
    if (code < 0 || static_cast<std::size_t>(code) >= scores.size()) {
      throw ConfigError("ranking metric: truth code " + std::to_string(code) +
                        " outside score vector of length " + std::to_string(scores.size()));
    }
  }
}

// Solve (A + lambda I) X = B for symmetric positive definite A via Cholesky.
// A is n x n, B is n x m, both row-major; returns X (n x m).
std::vector<double> ridge_solve(std::vector<double> a, std::vector<double> b, std::size_t n,
                                std::size_t m, double lambda) {
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += lambda;
  // Cholesky A = L L^T.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (sum <= 0.0) throw NumericError("ridge_solve: matrix not positive definite");
        a[i * n + i] = std::sqrt(sum);
      } else {
        a[i * n + j] = sum / a[j * n + j];
      }
    }
  }
  // Forward/backward substitution per column of B.
  for (std::size_t col = 0; col < m; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = b[i * m + col];
      for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * b[k * m + col];
      b[i * m + col] = sum / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double sum = b[i * m + col];
      for (std::size_t k = i + 1; k < n; ++k) sum -= a[k * n + i] * b[k * m + col];
      b[i * m + col] = sum / a[i * n + i];
    }
  }
  return b;
}

}  // namespace

double acc_at_k(std::span<const double> scores, const std::vector<int>& truth, std::size_t k) {
  check_ranking_args(scores, truth, k);
  const auto top = top_k_indices(scores, k);
  const std::set<int> truth_set(truth.begin(), truth.end());
  std::size_t hits = 0;
  for (std::size_t idx : top) {
    if (truth_set.count(static_cast<int>(idx))) ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(std::min(k, truth_set.size()));
}

double ndcg_at_k(std::span<const double> scores, const std::vector<int>& truth, std::size_t k) {
  check_ranking_args(scores, truth, k);
  const auto top = top_k_indices(scores, k);
  const std::set<int> truth_set(truth.begin(), truth.end());
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < top.size(); ++pos) {
    if (truth_set.count(static_cast<int>(top[pos]))) {
      dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
    }
  }
  double idcg = 0.0;
  const std::size_t ideal_hits = std::min(k, truth_set.size());
  for (std::size_t pos = 0; pos < ideal_hits; ++pos) {
    idcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  return dcg / idcg;
}

MetricValues evaluate(const Model& model, const std::vector<PatientRecord>& records,
                      const std::vector<PredictionPoint>& points) {
  if (points.empty()) throw ConfigError("evaluate: empty split");
  NoGradGuard guard;
  MetricValues totals;
  for (const auto& point : points) {
    const auto& record = records.at(point.patient);
    auto embeds = encode_point(model, record, point.prefix_len);
    auto probs = predict_next(model, embeds.e_d, embeds.e_p);
    const auto& scores = probs->value.data();
    const auto& truth = record.visits[point.prefix_len].dx;
    totals.ndcg10 += ndcg_at_k(scores, truth, 10);
    totals.ndcg20 += ndcg_at_k(scores, truth, 20);
    totals.acc10 += acc_at_k(scores, truth, 10);
    totals.acc20 += acc_at_k(scores, truth, 20);
  }
  const double inv = 1.0 / static_cast<double>(points.size());
  totals.ndcg10 *= inv;
  totals.ndcg20 *= inv;
  totals.acc10 *= inv;
  totals.acc20 *= inv;
  return totals;
}

double welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw ConfigError("welch_t_test: each sample needs at least 2 values");
  }
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto var_of = [](const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
  };
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  const double va = var_of(a, ma);
  const double vb = var_of(b, mb);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double pooled = va / na + vb / nb;
  if (pooled == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(pooled);
  const double df = pooled * pooled /
                    ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
  return stats::student_t_two_sided_p(t, df);
}

CrossPredictability cross_predictability(const std::vector<std::vector<double>>& e_d,
                                         const std::vector<std::vector<double>>& e_p,
                                         const std::vector<double>& weights) {
  constexpr double kLambda = 1e-3;
  if (e_d.size() != e_p.size() || e_d.size() != weights.size()) {
    throw ShapeError("cross_predictability: list length mismatch");
  }
  const std::size_t n = e_d.size();
  if (n < 10) throw ConfigError("cross_predictability: need at least 10 pairs");
  const std::size_t r = e_d[0].size();

  // Scale pairs by their weights, then center.
  std::vector<double> x(n * r), y(n * r);
  for (std::size_t i = 0; i < n; ++i) {
    if (e_d[i].size() != r || e_p[i].size() != r) {
      throw ShapeError("cross_predictability: inconsistent embedding dimension");
    }
    for (std::size_t c = 0; c < r; ++c) {
      x[i * r + c] = weights[i] * e_p[i][c];
      y[i * r + c] = weights[i] * e_d[i][c];
    }
  }
  std::vector<double> mean_x(r, 0.0), mean_y(r, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      mean_x[c] += x[i * r + c];
      mean_y[c] += y[i * r + c];
    }
  }
  for (std::size_t c = 0; c < r; ++c) {
    mean_x[c] /= static_cast<double>(n);
    mean_y[c] /= static_cast<double>(n);
  }
  double x_variance = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      x[i * r + c] -= mean_x[c];
      y[i * r + c] -= mean_y[c];
      x_variance += x[i * r + c] * x[i * r + c];
    }
  }
  if (x_variance < 1e-12) return {0.0, true};

  // Normal equations: (X^T X + lambda I) B = X^T Y.
  std::vector<double> xtx(r * r, 0.0), xty(r * r, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c1 = 0; c1 < r; ++c1) {
      const double xi = x[i * r + c1];
      if (xi == 0.0) continue;
      for (std::size_t c2 = 0; c2 < r; ++c2) {
        xtx[c1 * r + c2] += xi * x[i * r + c2];
        xty[c1 * r + c2] += xi * y[i * r + c2];
      }
    }
  }
  const std::vector<double> beta = ridge_solve(std::move(xtx), std::move(xty), r, r, kLambda);

  double rss = 0.0, tss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      double pred = 0.0;
      for (std::size_t k = 0; k < r; ++k) pred += x[i * r + k] * beta[k * r + c];
      const double resid = y[i * r + c] - pred;
      rss += resid * resid;
      tss += y[i * r + c] * y[i * r + c];
    }
  }
  if (tss == 0.0) return {0.0, true};
  const double r2 = 1.0 - rss / tss;
  return {std::clamp(r2, -1.0, 1.0), false};
}

}  // namespace che
