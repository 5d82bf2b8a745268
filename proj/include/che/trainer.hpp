#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "che/encoders.hpp"
#include "che/hsic.hpp"
#include "che/metrics.hpp"
#include "che/synth.hpp"

namespace che {

struct TrainConfig {
  double epsilon = 1.0;     // coefficient on the HSIC objective for weight steps
  double model_lr = 3e-3;   // Adam learning rate for encoder + predictor
  double weight_lr = 5.0;   // plain gradient descent rate for sample weights
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  std::size_t patience = 20;  // epochs without validation improvement
  std::size_t embed_dim = 16;
  double dropout = 0.1;
  std::uint64_t seed = 1;
  HsicConfig hsic;

  void validate() const;
};

enum class TrainMethod { base, che, pw };

std::string train_method_name(TrainMethod method);
TrainMethod train_method_from_name(const std::string& name);

// One positive weight per training prediction point. Weights are clipped to
// [0.05, 20] and kept at mean 1; both constraints hold simultaneously after
// every update epoch.
class SampleWeightTable {
 public:
  static constexpr double kMinWeight = 0.05;
  static constexpr double kMaxWeight = 20.0;

  SampleWeightTable() = default;
  explicit SampleWeightTable(const std::vector<PredictionPoint>& points);

  std::size_t size() const { return values_.size(); }
  const std::vector<PredictionPoint>& points() const { return points_; }

  double at(std::size_t patient, std::size_t prefix_len) const;
  double value(std::size_t index) const { return values_[index]; }
  void set_value(std::size_t index, double w) { values_[index] = w; }
  const std::vector<double>& values() const { return values_; }

  double mean() const;
  double min() const;
  double max() const;

  // Clip into the box, then renormalize multiplicatively to mean 1,
  // iterating to a joint fixed point.
  void clip_and_renormalize();

  std::string to_json() const;
  static SampleWeightTable from_json(const std::string& text,
                                     const std::vector<PredictionPoint>& points);

 private:
  std::vector<PredictionPoint> points_;
  std::vector<double> values_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

struct EpochStats {
  double mean_weighted_loss = 0.0;
  double mean_hsic = 0.0;
  double val_ndcg10 = 0.0;
};

struct TrainState {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // index into `curve`; 0 until a trained epoch wins
  double best_val_ndcg10 = 0.0;
  Checkpoint best_checkpoint;
  // curve[0] is the pre-training baseline; curve[e] is after epoch e.
  std::vector<EpochStats> curve;

  std::string curve_csv() const;
};

// One pass of weighted cross-entropy updates over shuffled minibatches.
// Weights are read, never written. Returns the mean weighted loss.
double weighted_loss_epoch(Model& model, const std::vector<PatientRecord>& records,
                           const std::vector<PredictionPoint>& points,
                           const SampleWeightTable& weights, const TrainConfig& config,
                           class AdamOptimizer& optimizer, Rng& shuffle_rng, Rng& dropout_rng);

struct WeightUpdateStats {
  double hsic_before = 0.0;  // mean weighted HSIC entering the epoch
  double hsic_after = 0.0;   // after the gradient step + projection
  std::size_t skipped = 0;   // entries with non-finite gradients
};

// One separable gradient-descent step on every sample weight against
// epsilon * HSIC(w e_d, w e_p), with the encoder frozen, followed by
// clipping and mean-1 renormalization.
WeightUpdateStats weight_update_epoch(const Model& model,
                                      const std::vector<PatientRecord>& records,
                                      const std::vector<PredictionPoint>& points,
                                      SampleWeightTable& weights, double epsilon,
                                      double weight_lr, const HsicConfig& hsic_config);

// Mean weighted HSIC of the current model over the given points.
double mean_weighted_hsic(const Model& model, const std::vector<PatientRecord>& records,
                          const std::vector<PredictionPoint>& points,
                          const SampleWeightTable& weights, const HsicConfig& hsic_config);

// Alternating training with early stopping on validation NDCG@10
// (validation is never weighted). method == base keeps weights pinned at 1;
// method == pw uses `fixed_weights` untouched; method == che alternates a
// model epoch with a weight epoch.
TrainState fit(Model& model, const std::vector<PatientRecord>& records,
               const std::vector<PredictionPoint>& train_points,
               const std::vector<PredictionPoint>& val_points, const TrainConfig& config,
               TrainMethod method, const SampleWeightTable* fixed_weights = nullptr,
               SampleWeightTable* final_weights = nullptr);

}  // namespace che
