#include "che/attribution.hpp"

#include <cmath>

#include "che/error.hpp"

namespace che {

namespace {

double contribution_of(const NodePtr& visit_embedding) {
  if (visit_embedding->grad.empty()) return 0.0;
  double acc = 0.0;
  const auto& g = visit_embedding->grad;
  const auto& v = visit_embedding->value;
  for (std::size_t i = 0; i < v.numel(); ++i) acc += g[i] * v[i];
  return acc;
}

}  // namespace

AttributionReport feature_contribution(const Model& model, const PatientRecord& record,
                                       std::size_t prefix_len, int target_code) {
  if (prefix_len < 1 || prefix_len >= record.num_visits()) {
    throw InvalidRecordError("feature_contribution: prefix length " +
                             std::to_string(prefix_len) + " invalid for patient with " +
                             std::to_string(record.num_visits()) + " visits");
  }
  if (target_code < 0 || static_cast<std::size_t>(target_code) >= model.num_dx()) {
    throw ConfigError("feature_contribution: target code " + std::to_string(target_code) +
                      " outside vocabulary of " + std::to_string(model.num_dx()));
  }

  auto embeds = encode_point(model, record, prefix_len);
  auto logits = predict_logits(model, embeds.e_d, embeds.e_p);
  auto target = slice(logits, static_cast<std::size_t>(target_code),
                      static_cast<std::size_t>(target_code) + 1);
  backward(target);

  AttributionReport report;
  report.target_code = target_code;
  report.patient_id = record.id;
  report.prefix_len = prefix_len;
  report.visits.resize(prefix_len);
  for (std::size_t v = 0; v < prefix_len; ++v) {
    report.visits[v].dx = contribution_of(embeds.dx_visits[v]);
    report.visits[v].px = contribution_of(embeds.px_visits[v]);
  }

  // The model is only read; drop the transient grad buffers it accumulated.
  clear_graph_grads(target);
  return report;
}

double attribution_summary(const Model& model, const std::vector<PatientRecord>& records,
                           const std::vector<PredictionPoint>& points) {
  if (points.empty()) throw ConfigError("attribution_summary: empty split");
  double share_acc = 0.0;
  for (const auto& point : points) {
    const auto& record = records.at(point.patient);
    auto embeds = encode_point(model, record, point.prefix_len);
    auto logits = predict_logits(model, embeds.e_d, embeds.e_p);

    double dx_mass = 0.0;
    double px_mass = 0.0;
    for (int code : record.visits[point.prefix_len].dx) {
      auto target = slice(logits, static_cast<std::size_t>(code),
                          static_cast<std::size_t>(code) + 1);
      backward(target);
      for (std::size_t v = 0; v < point.prefix_len; ++v) {
        dx_mass += std::fabs(contribution_of(embeds.dx_visits[v]));
        px_mass += std::fabs(contribution_of(embeds.px_visits[v]));
      }
      clear_graph_grads(target);
    }
    const double total = dx_mass + px_mass;
    share_acc += total < 1e-12 ? 0.5 : dx_mass / total;
  }
  return share_acc / static_cast<double>(points.size());
}

}  // namespace che
