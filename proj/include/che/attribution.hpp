#pragma once

#include <vector>

#include "che/encoders.hpp"
#include "che/synth.hpp"

namespace che {

// Per-visit contribution of each input stream toward one predicted code:
// the inner product of the target logit's gradient with respect to the
// visit's stream embedding and the embedding itself.
struct AttributionReport {
  int target_code = 0;
  std::string patient_id;
  std::size_t prefix_len = 0;

  struct VisitScores {
    double dx = 0.0;
    double px = 0.0;
  };
  std::vector<VisitScores> visits;  // one entry per visit in the prefix
};

AttributionReport feature_contribution(const Model& model, const PatientRecord& record,
                                       std::size_t prefix_len, int target_code);

// Share of total |contribution| mass carried by the diagnosis stream,
// averaged over prediction points; targets are the true next-visit codes.
// Points with zero total mass count as a neutral 0.5.
double attribution_summary(const Model& model, const std::vector<PatientRecord>& records,
                           const std::vector<PredictionPoint>& points);

}  // namespace che
