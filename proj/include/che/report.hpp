#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "che/metrics.hpp"

namespace che {

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  MetricValues test_metrics;
  double best_val_ndcg10 = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double hsic_epoch0 = 0.0;
  double hsic_best = 0.0;
  std::optional<double> propensity_auc;
};

struct MethodAggregate {
  std::string method;
  std::vector<RunResult> runs;

  MetricValues mean() const;
  MetricValues stddev() const;
  std::vector<double> values_of(const std::string& metric) const;
};

struct SweepReport {
  std::vector<MethodAggregate> methods;
  std::vector<std::string> warnings;

  const MethodAggregate* find(const std::string& method) const;
};

// Four significant figures, the precision used in emitted tables.
std::string format_sig4(double v);

// Relative increase "(improved - base) / base" as a percentage with four
// significant figures, e.g. 0.2648 -> 0.2756 gives "4.079%".
std::string improv_percent(double base_value, double improved_value);

// Rows per approach (4-sig-figure means), then Improv rows against "base",
// then pairwise Welch p-value rows when at least two seeds are present.
std::string sweep_report_csv(const SweepReport& report);

// Full-precision per-seed values plus aggregates.
std::string sweep_report_json(const SweepReport& report);

}  // namespace che
