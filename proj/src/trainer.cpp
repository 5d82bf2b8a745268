#include "che/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "che/error.hpp"
#include "che/log.hpp"
#include "che/optim.hpp"

namespace che {

namespace {

std::uint64_t point_key(std::size_t patient, std::size_t prefix_len) {
  return (static_cast<std::uint64_t>(patient) << 20) | static_cast<std::uint64_t>(prefix_len);
}

struct CachedEmbeddings {
  std::vector<Tensor> e_d;
  std::vector<Tensor> e_p;
};

// Frozen-encoder embeddings for every prediction point, computed outside the
// differentiation graph.
CachedEmbeddings compute_embeddings(const Model& model,
                                    const std::vector<PatientRecord>& records,
                                    const std::vector<PredictionPoint>& points) {
  NoGradGuard guard;
  CachedEmbeddings cache;
  cache.e_d.reserve(points.size());
  cache.e_p.reserve(points.size());
  for (const auto& point : points) {
    auto embeds = encode_point(model, records.at(point.patient), point.prefix_len);
    cache.e_d.push_back(embeds.e_d->value);
    cache.e_p.push_back(embeds.e_p->value);
  }
  return cache;
}

double mean_hsic_from_cache(const CachedEmbeddings& cache, const SampleWeightTable& weights,
                            const HsicConfig& config) {
  double acc = 0.0;
  for (std::size_t i = 0; i < cache.e_d.size(); ++i) {
    acc += hsic_local_weighted(cache.e_d[i].data(), cache.e_p[i].data(), weights.value(i),
                               config);
  }
  return acc / static_cast<double>(cache.e_d.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (epsilon < 0.0) throw ConfigError("TrainConfig: epsilon must be >= 0");
  if (model_lr <= 0.0 || weight_lr < 0.0) throw ConfigError("TrainConfig: invalid learning rate");
  if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("TrainConfig: max_epochs must be positive");
  if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
  if (embed_dim < 2) throw ConfigError("TrainConfig: embed_dim must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("TrainConfig: dropout must be in [0,1)");
}

std::string train_method_name(TrainMethod method) {
  switch (method) {
    case TrainMethod::base: return "base";
    case TrainMethod::che: return "che";
    case TrainMethod::pw: return "pw";
  }
  return "unknown";
}

TrainMethod train_method_from_name(const std::string& name) {
  if (name == "base") return TrainMethod::base;
  if (name == "che") return TrainMethod::che;
  if (name == "pw") return TrainMethod::pw;
  throw ConfigError("unknown training method: " + name);
}

SampleWeightTable::SampleWeightTable(const std::vector<PredictionPoint>& points)
    : points_(points), values_(points.size(), 1.0) {
  index_.reserve(points.size());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto key = point_key(points_[i].patient, points_[i].prefix_len);
    if (!index_.emplace(key, i).second) {
      throw ConfigError("SampleWeightTable: duplicate prediction point");
    }
  }
}

double SampleWeightTable::at(std::size_t patient, std::size_t prefix_len) const {
  auto it = index_.find(point_key(patient, prefix_len));
  if (it == index_.end()) {
    throw ConfigError("SampleWeightTable: no entry for patient " + std::to_string(patient) +
                      " prefix " + std::to_string(prefix_len));
  }
  return values_[it->second];
}

double SampleWeightTable::mean() const {
  double acc = 0.0;
  for (double w : values_) acc += w;
  return acc / static_cast<double>(values_.size());
}

double SampleWeightTable::min() const {
  return *std::min_element(values_.begin(), values_.end());
}

double SampleWeightTable::max() const {
  return *std::max_element(values_.begin(), values_.end());
}

void SampleWeightTable::clip_and_renormalize() {
  for (int iteration = 0; iteration < 10000; ++iteration) {
    for (auto& w : values_) w = std::clamp(w, kMinWeight, kMaxWeight);
    const double m = mean();
    if (std::fabs(m - 1.0) <= 1e-12) return;
    for (auto& w : values_) w /= m;
    bool inside = true;
    for (double w : values_) {
      if (w < kMinWeight || w > kMaxWeight) {
        inside = false;
        break;
      }
    }
    if (inside) return;
  }
  throw NumericError("SampleWeightTable: clip/renormalize did not converge");
}

std::string SampleWeightTable::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const std::string key =
        "(" + std::to_string(points_[i].patient) + "," + std::to_string(points_[i].prefix_len) + ")";
    doc[key] = values_[i];
  }
  return doc.dump(2);
}

SampleWeightTable SampleWeightTable::from_json(const std::string& text,
                                               const std::vector<PredictionPoint>& points) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("SampleWeightTable: malformed JSON: ") + e.what());
  }
  SampleWeightTable table(points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string key =
        "(" + std::to_string(points[i].patient) + "," + std::to_string(points[i].prefix_len) + ")";
    if (!doc.contains(key)) throw IoError("SampleWeightTable: missing entry " + key);
    const double w = doc.at(key).get<double>();
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw IoError("SampleWeightTable: non-positive weight at " + key);
    }
    table.values_[i] = w;
  }
  return table;
}

std::string TrainState::curve_csv() const {
  std::string out = "epoch,mean_weighted_loss,mean_hsic,val_ndcg10\n";
  char buf[128];
  for (std::size_t e = 0; e < curve.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e, curve[e].mean_weighted_loss,
                  curve[e].mean_hsic, curve[e].val_ndcg10);
    out += buf;
  }
  return out;
}

double weighted_loss_epoch(Model& model, const std::vector<PatientRecord>& records,
                           const std::vector<PredictionPoint>& points,
                           const SampleWeightTable& weights, const TrainConfig& config,
                           AdamOptimizer& optimizer, Rng& shuffle_rng, Rng& dropout_rng) {
  if (points.empty()) throw ConfigError("weighted_loss_epoch: empty training split");

  std::vector<std::size_t> order(points.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);

  const std::size_t num_dx = model.num_dx();
  double total_weighted_loss = 0.0;

  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t stop = std::min(order.size(), start + config.batch_size);
    model.zero_grad();
    NodePtr batch_loss;
    for (std::size_t b = start; b < stop; ++b) {
      const auto& point = points[order[b]];
      const auto& record = records.at(point.patient);
      const double w = weights.at(point.patient, point.prefix_len);
      try {
        auto embeds =
            encode_point(model, record, point.prefix_len, config.dropout, &dropout_rng);
        auto probs = predict_next(model, embeds.e_d, embeds.e_p);
        auto loss = prediction_loss(probs, record.visits[point.prefix_len].dx, num_dx);
        auto weighted = scale(loss, w);
        total_weighted_loss += weighted->value.item();
        batch_loss = batch_loss ? add(batch_loss, weighted) : weighted;
      } catch (const NumericError& e) {
        throw NumericError("weighted_loss_epoch: non-finite loss at patient=" + record.id +
                           " prefix=" + std::to_string(point.prefix_len) + ": " + e.what());
      }
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
    backward(batch_loss);
    optimizer.step(model.params());
  }
  return total_weighted_loss / static_cast<double>(points.size());
}

WeightUpdateStats weight_update_epoch(const Model& model,
                                      const std::vector<PatientRecord>& records,
                                      const std::vector<PredictionPoint>& points,
                                      SampleWeightTable& weights, double epsilon,
                                      double weight_lr, const HsicConfig& hsic_config) {
  if (points.size() != weights.size()) {
    throw ConfigError("weight_update_epoch: weight table does not cover the training split");
  }
  const CachedEmbeddings cache = compute_embeddings(model, records, points);

  WeightUpdateStats stats;
  stats.hsic_before = mean_hsic_from_cache(cache, weights, hsic_config);

  const double step_scale = epsilon * weight_lr;
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto weight_node = make_leaf(Tensor::scalar(weights.value(i)), /*requires_grad=*/true);
    auto objective = weighted_hsic_node(weight_node, cache.e_d[i], cache.e_p[i], hsic_config);
    backward(objective);
    const double grad = weight_node->grad.empty() ? 0.0 : weight_node->grad[0];
    if (!std::isfinite(grad)) {
      ++stats.skipped;
      logging::warn("weight_update_epoch: non-finite HSIC gradient at patient=" +
                std::to_string(points[i].patient) +
                " prefix=" + std::to_string(points[i].prefix_len) + ", entry skipped");
      continue;
    }
    weights.set_value(i, weights.value(i) - step_scale * grad);
  }
  weights.clip_and_renormalize();

  stats.hsic_after = mean_hsic_from_cache(cache, weights, hsic_config);
  return stats;
}

double mean_weighted_hsic(const Model& model, const std::vector<PatientRecord>& records,
                          const std::vector<PredictionPoint>& points,
                          const SampleWeightTable& weights, const HsicConfig& hsic_config) {
  if (points.empty()) throw ConfigError("mean_weighted_hsic: empty point list");
  const CachedEmbeddings cache = compute_embeddings(model, records, points);
  return mean_hsic_from_cache(cache, weights, hsic_config);
}

TrainState fit(Model& model, const std::vector<PatientRecord>& records,
               const std::vector<PredictionPoint>& train_points,
               const std::vector<PredictionPoint>& val_points, const TrainConfig& config,
               TrainMethod method, const SampleWeightTable* fixed_weights,
               SampleWeightTable* final_weights) {
  config.validate();
  if (train_points.empty() || val_points.empty()) {
    throw ConfigError("fit: train and validation splits must be non-empty");
  }
  if (method == TrainMethod::pw && fixed_weights == nullptr) {
    throw ConfigError("fit: pw method requires precomputed weights");
  }

  SampleWeightTable weights =
      fixed_weights ? *fixed_weights : SampleWeightTable(train_points);
  AdamOptimizer optimizer(config.model_lr);
  Rng shuffle_rng(derive_seed(config.seed, 0x7368756646ULL));
  Rng dropout_rng(derive_seed(config.seed, 0x64726f70ULL));

  TrainState state;
  {
    // Pre-training baseline row.
    EpochStats init;
    init.mean_hsic =
        mean_weighted_hsic(model, records, train_points, weights, config.hsic);
    double loss_acc = 0.0;
    {
      NoGradGuard guard;
      for (const auto& point : train_points) {
        const auto& record = records.at(point.patient);
        auto embeds = encode_point(model, record, point.prefix_len);
        auto probs = predict_next(model, embeds.e_d, embeds.e_p);
        auto loss = prediction_loss(probs, record.visits[point.prefix_len].dx, model.num_dx());
        loss_acc += weights.at(point.patient, point.prefix_len) * loss->value.item();
      }
    }
    init.mean_weighted_loss = loss_acc / static_cast<double>(train_points.size());
    init.val_ndcg10 = evaluate(model, records, val_points).ndcg10;
    state.curve.push_back(init);
  }

  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochStats row;
    row.mean_weighted_loss = weighted_loss_epoch(model, records, train_points, weights, config,
                                                 optimizer, shuffle_rng, dropout_rng);
    if (method == TrainMethod::che) {
      const auto update = weight_update_epoch(model, records, train_points, weights,
                                              config.epsilon, config.weight_lr, config.hsic);
      row.mean_hsic = update.hsic_after;
    } else {
      row.mean_hsic = mean_weighted_hsic(model, records, train_points, weights, config.hsic);
    }
    row.val_ndcg10 = evaluate(model, records, val_points).ndcg10;
    state.curve.push_back(row);
    state.epochs_run = epoch;

    if (row.val_ndcg10 > best_val) {
      best_val = row.val_ndcg10;
      state.best_epoch = epoch;
      state.best_val_ndcg10 = row.val_ndcg10;
      state.best_checkpoint = model.to_checkpoint();
    } else if (epoch - state.best_epoch >= config.patience) {
      logging::info("fit: early stop at epoch " + std::to_string(epoch) + ", best epoch " +
                std::to_string(state.best_epoch));
      break;
    }
  }

  if (final_weights) *final_weights = weights;
  return state;
}

}  // namespace che
