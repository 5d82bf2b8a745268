#pragma once

#include <cstdint>
#include <vector>

#include "che/encoders.hpp"
#include "che/synth.hpp"
#include "che/trainer.hpp"

namespace che {

// One constructed negative: the diagnosis prefix of one prediction point
// paired with the procedure prefix of another point of equal length. The
// fallback form instead permutes the visit order of the point's own
// procedure stream.
struct NegativeSample {
  std::size_t dx_point;  // index into the positive point list
  std::size_t px_point;
  bool collision = false;  // kept despite matching an observed pair
  bool fallback = false;
  std::vector<std::size_t> px_visit_order;  // fallback permutation of the px prefix
};

struct NegativeSet {
  std::vector<NegativeSample> samples;
  std::size_t collisions = 0;
  bool used_fallback = false;
};

NegativeSet generate_negatives(const std::vector<PatientRecord>& records,
                               const std::vector<PredictionPoint>& points,
                               std::size_t multiplier, std::uint64_t seed);

// Propensity classifier: the base encoder architecture with a scalar
// logistic head over [e_d, e_p, e_d * e_p]. The elementwise product term is
// required: an additive function of the two streams has equal expectation
// under the joint and the permuted product distribution, so without an
// interaction feature no discriminator of this form can separate them.
struct PropensityClassifier {
  Model encoder;
  NodePtr head_weight;  // {4r}
  NodePtr head_bias;    // {1}

  PropensityClassifier(ModelKind kind, std::size_t num_dx, std::size_t num_px,
                       std::size_t embed_dim, std::uint64_t seed);

  // P(observed | dx prefix, px prefix) for a positive or negative pairing.
  double score(const std::vector<PatientRecord>& records,
               const std::vector<PredictionPoint>& points, const NegativeSample& pairing) const;
};

struct PropensityOutcome {
  SampleWeightTable weights;  // over the positive points, mean 1
  double holdout_auc = 0.5;
  bool low_auc_warning = false;
  std::size_t negatives = 0;
  std::size_t collisions = 0;
  bool used_fallback = false;
};

// Trains the discriminator between observed pairs and negatives with early
// stopping on a held-out 10% of the pool, then converts p/(1-p) odds into a
// clipped, mean-1 weight table over the positive points.
PropensityOutcome fit_propensity(const std::vector<PatientRecord>& records,
                                 const std::vector<PredictionPoint>& train_points,
                                 ModelKind kind, std::size_t num_dx, std::size_t num_px,
                                 std::size_t multiplier, const TrainConfig& config);

// Full comparator pipeline: propensity weights, then base-model training
// with those fixed weights.
TrainState fit_pw(Model& model, const std::vector<PatientRecord>& records,
                  const std::vector<PredictionPoint>& train_points,
                  const std::vector<PredictionPoint>& val_points, const TrainConfig& config,
                  PropensityOutcome* outcome_out = nullptr);

}  // namespace che
