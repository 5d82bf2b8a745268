#include "che/report.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "che/error.hpp"

namespace che {

namespace {

const char* kMetricNames[] = {"ndcg@10", "ndcg@20", "acc@10", "acc@20", "average"};

double metric_of(const MetricValues& m, const std::string& name) {
  if (name == "ndcg@10") return m.ndcg10;
  if (name == "ndcg@20") return m.ndcg20;
  if (name == "acc@10") return m.acc10;
  if (name == "acc@20") return m.acc20;
  if (name == "average") return m.average();
  throw ConfigError("unknown metric: " + name);
}

}  // namespace

MetricValues MethodAggregate::mean() const {
  if (runs.empty()) throw ConfigError("MethodAggregate: no runs for " + method);
  MetricValues acc;
  for (const auto& run : runs) {
    acc.ndcg10 += run.test_metrics.ndcg10;
    acc.ndcg20 += run.test_metrics.ndcg20;
    acc.acc10 += run.test_metrics.acc10;
    acc.acc20 += run.test_metrics.acc20;
  }
  const double inv = 1.0 / static_cast<double>(runs.size());
  acc.ndcg10 *= inv;
  acc.ndcg20 *= inv;
  acc.acc10 *= inv;
  acc.acc20 *= inv;
  return acc;
}

MetricValues MethodAggregate::stddev() const {
  if (runs.size() < 2) throw ConfigError("MethodAggregate: stddev needs >= 2 runs");
  const MetricValues m = mean();
  MetricValues acc;
  for (const auto& run : runs) {
    acc.ndcg10 += (run.test_metrics.ndcg10 - m.ndcg10) * (run.test_metrics.ndcg10 - m.ndcg10);
    acc.ndcg20 += (run.test_metrics.ndcg20 - m.ndcg20) * (run.test_metrics.ndcg20 - m.ndcg20);
    acc.acc10 += (run.test_metrics.acc10 - m.acc10) * (run.test_metrics.acc10 - m.acc10);
    acc.acc20 += (run.test_metrics.acc20 - m.acc20) * (run.test_metrics.acc20 - m.acc20);
  }
  const double inv = 1.0 / static_cast<double>(runs.size() - 1);
  acc.ndcg10 = std::sqrt(acc.ndcg10 * inv);
  acc.ndcg20 = std::sqrt(acc.ndcg20 * inv);
  acc.acc10 = std::sqrt(acc.acc10 * inv);
  acc.acc20 = std::sqrt(acc.acc20 * inv);
  return acc;
}

std::vector<double> MethodAggregate::values_of(const std::string& metric) const {
  std::vector<double> out;
  out.reserve(runs.size());
  for (const auto& run : runs) out.push_back(metric_of(run.test_metrics, metric));
  return out;
}

const MethodAggregate* SweepReport::find(const std::string& method) const {
  for (const auto& agg : methods) {
    if (agg.method == method) return &agg;
  }
  return nullptr;
}

std::string format_sig4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string improv_percent(double base_value, double improved_value) {
  if (base_value == 0.0) throw ConfigError("improv_percent: base value is zero");
  return format_sig4((improved_value - base_value) / base_value * 100.0) + "%";
}

std::string sweep_report_csv(const SweepReport& report) {
  std::string out = "approach";
  for (const char* name : kMetricNames) out += std::string(",") + name;
  out += "\n";

  for (const auto& agg : report.methods) {
    const MetricValues m = agg.mean();
    out += agg.method;
    for (const char* name : kMetricNames) out += "," + format_sig4(metric_of(m, name));
    out += "\n";
  }

  const MethodAggregate* base = report.find("base");
  if (base) {
    const MetricValues base_mean = base->mean();
    for (const auto& agg : report.methods) {
      if (agg.method == "base") continue;
      const MetricValues m = agg.mean();
      out += "improv(" + agg.method + "/base)";
      for (const char* name : kMetricNames) {
        out += "," + improv_percent(metric_of(base_mean, name), metric_of(m, name));
      }
      out += "\n";
    }
  }

  bool enough_seeds = true;
  for (const auto& agg : report.methods) {
    if (agg.runs.size() < 2) enough_seeds = false;
  }
  if (enough_seeds) {
    for (std::size_t a = 0; a < report.methods.size(); ++a) {
      for (std::size_t b = a + 1; b < report.methods.size(); ++b) {
        out += "p(" + report.methods[a].method + " vs " + report.methods[b].method + ")";
        for (const char* name : kMetricNames) {
          const double p = welch_t_test(report.methods[a].values_of(name),
                                        report.methods[b].values_of(name));
          out += "," + format_sig4(p);
        }
        out += "\n";
      }
    }
  }
  return out;
}

std::string sweep_report_json(const SweepReport& report) {
  nlohmann::json doc;
  doc["warnings"] = report.warnings;
  doc["methods"] = nlohmann::json::array();

  bool enough_seeds = !report.methods.empty();
  for (const auto& agg : report.methods) {
    nlohmann::json entry;
    entry["method"] = agg.method;
    entry["runs"] = nlohmann::json::array();
    for (const auto& run : agg.runs) {
      nlohmann::json r;
      r["seed"] = run.seed;
      r["ndcg10"] = run.test_metrics.ndcg10;
      r["ndcg20"] = run.test_metrics.ndcg20;
      r["acc10"] = run.test_metrics.acc10;
      r["acc20"] = run.test_metrics.acc20;
      r["average"] = run.test_metrics.average();
      r["best_val_ndcg10"] = run.best_val_ndcg10;
      r["best_epoch"] = run.best_epoch;
      r["epochs_run"] = run.epochs_run;
      r["hsic_epoch0"] = run.hsic_epoch0;
      r["hsic_best"] = run.hsic_best;
      if (run.propensity_auc) r["propensity_auc"] = *run.propensity_auc;
      entry["runs"].push_back(std::move(r));
    }
    const MetricValues m = agg.mean();
    entry["mean"] = {{"ndcg10", m.ndcg10},
                     {"ndcg20", m.ndcg20},
                     {"acc10", m.acc10},
                     {"acc20", m.acc20},
                     {"average", m.average()}};
    if (agg.runs.size() >= 2) {
      const MetricValues s = agg.stddev();
      entry["std"] = {{"ndcg10", s.ndcg10},
                      {"ndcg20", s.ndcg20},
                      {"acc10", s.acc10},
                      {"acc20", s.acc20}};
    } else {
      enough_seeds = false;
    }
    doc["methods"].push_back(std::move(entry));
  }

  const MethodAggregate* base = report.find("base");
  if (base) {
    nlohmann::json improv = nlohmann::json::object();
    const MetricValues base_mean = base->mean();
    for (const auto& agg : report.methods) {
      if (agg.method == "base") continue;
      const MetricValues m = agg.mean();
      nlohmann::json row;
      for (const char* name : kMetricNames) {
        row[name] = improv_percent(metric_of(base_mean, name), metric_of(m, name));
      }
      improv[agg.method] = std::move(row);
    }
    doc["improv_vs_base"] = std::move(improv);
  }

  if (enough_seeds) {
    nlohmann::json tests = nlohmann::json::array();
    for (std::size_t a = 0; a < report.methods.size(); ++a) {
      for (std::size_t b = a + 1; b < report.methods.size(); ++b) {
        nlohmann::json t;
        t["a"] = report.methods[a].method;
        t["b"] = report.methods[b].method;
        for (const char* name : kMetricNames) {
          t[std::string("p_") + name] = welch_t_test(report.methods[a].values_of(name),
                                                     report.methods[b].values_of(name));
        }
        tests.push_back(std::move(t));
      }
    }
    doc["welch_t_tests"] = std::move(tests);
  }
  return doc.dump(2);
}

}  // namespace che
