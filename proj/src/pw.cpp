#include "che/pw.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "che/error.hpp"
#include "che/log.hpp"
#include "che/optim.hpp"

namespace che {

namespace {

std::string prefix_fingerprint(const PatientRecord& dx_record, const PatientRecord& px_record,
                               std::size_t prefix_len,
                               const std::vector<std::size_t>* px_order) {
  std::string key = "d";
  for (std::size_t v = 0; v < prefix_len; ++v) {
    for (int code : dx_record.visits[v].dx) key += std::to_string(code) + ",";
    key += ";";
  }
  key += "|p";
  for (std::size_t v = 0; v < prefix_len; ++v) {
    const std::size_t src = px_order ? (*px_order)[v] : v;
    for (int code : px_record.visits[src].px) key += std::to_string(code) + ",";
    key += ";";
  }
  return key;
}

struct LabeledPairing {
  NegativeSample pairing;
  double label;  // 1 observed, 0 constructed
};

NodePtr pairing_probability(const PropensityClassifier& clf,
                            const std::vector<PatientRecord>& records,
                            const std::vector<PredictionPoint>& points,
                            const NegativeSample& pairing) {
  const auto& dx_point = points.at(pairing.dx_point);
  const auto& px_point = points.at(pairing.px_point);
  const auto& dx_record = records.at(dx_point.patient);
  const auto& px_record = records.at(px_point.patient);
  const std::size_t prefix_len = dx_point.prefix_len;

  std::vector<NodePtr> dx_embeds, px_embeds;
  dx_embeds.reserve(prefix_len);
  px_embeds.reserve(prefix_len);
  for (std::size_t v = 0; v < prefix_len; ++v) {
    dx_embeds.push_back(embed_visit(clf.encoder.embedding(Stream::dx), dx_record.visits[v].dx));
    const std::size_t src = pairing.fallback ? pairing.px_visit_order[v] : v;
    px_embeds.push_back(embed_visit(clf.encoder.embedding(Stream::px), px_record.visits[src].px));
  }
  auto e_d = encode_prefix(clf.encoder, Stream::dx, dx_embeds);
  auto e_p = encode_prefix(clf.encoder, Stream::px, px_embeds);
  auto diff = sub(e_d, e_p);
  auto features = concat(concat(concat(e_d, e_p), mul(e_d, e_p)), mul(diff, diff));
  auto logit = add(sum(mul(clf.head_weight, features)), clf.head_bias);
  return sigmoid(logit);
}

// Mann-Whitney AUC with average ranks on ties.
double rank_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> ranks(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
    i = j + 1;
  }
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (labels[k] > 0.5) {
      positive_rank_sum += ranks[k];
      ++positives;
    }
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return 0.5;
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace

NegativeSet generate_negatives(const std::vector<PatientRecord>& records,
                               const std::vector<PredictionPoint>& points,
                               std::size_t multiplier, std::uint64_t seed) {
  if (points.empty()) throw ConfigError("generate_negatives: empty dataset");

  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < points.size(); ++i) {
    by_length[points[i].prefix_len].push_back(i);
  }
  std::unordered_set<std::string> observed;
  observed.reserve(points.size());
  for (const auto& point : points) {
    const auto& record = records.at(point.patient);
    observed.insert(prefix_fingerprint(record, record, point.prefix_len, nullptr));
  }

  Rng rng(derive_seed(seed, 0x6e6567ULL));
  NegativeSet out;
  out.samples.reserve(points.size() * multiplier);

  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& group = by_length[points[i].prefix_len];
    const auto& dx_record = records.at(points[i].patient);
    for (std::size_t m = 0; m < multiplier; ++m) {
      NegativeSample sample;
      sample.dx_point = i;
      if (group.size() < 2) {
        // No partner of equal length: permute this point's own px stream.
        sample.px_point = i;
        sample.fallback = true;
        out.used_fallback = true;
        sample.px_visit_order.resize(points[i].prefix_len);
        for (std::size_t v = 0; v < sample.px_visit_order.size(); ++v) {
          sample.px_visit_order[v] = v;
        }
        rng.shuffle(sample.px_visit_order);
        out.samples.push_back(std::move(sample));
        continue;
      }
      for (int attempt = 0; attempt < 20; ++attempt) {
        std::size_t partner = i;
        while (partner == i) {
          partner = group[rng.uniform_int(group.size())];
        }
        sample.px_point = partner;
        const auto& px_record = records.at(points[partner].patient);
        const std::string key =
            prefix_fingerprint(dx_record, px_record, points[i].prefix_len, nullptr);
        sample.collision = observed.count(key) > 0;
        if (!sample.collision) break;
      }
      if (sample.collision) ++out.collisions;
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

PropensityClassifier::PropensityClassifier(ModelKind kind, std::size_t num_dx,
                                           std::size_t num_px, std::size_t embed_dim,
                                           std::uint64_t seed)
    : encoder(kind, num_dx, num_px, embed_dim, seed) {
  Rng rng(derive_seed(seed, 0x68656164ULL));
  const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  Tensor w({4 * embed_dim});
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  head_weight = make_leaf(std::move(w), /*requires_grad=*/true);
  head_bias = make_leaf(Tensor::zeros({1}), /*requires_grad=*/true);
}

double PropensityClassifier::score(const std::vector<PatientRecord>& records,
                                   const std::vector<PredictionPoint>& points,
                                   const NegativeSample& pairing) const {
  NoGradGuard guard;
  return pairing_probability(*this, records, points, pairing)->value.item();
}

PropensityOutcome fit_propensity(const std::vector<PatientRecord>& records,
                                 const std::vector<PredictionPoint>& train_points,
                                 ModelKind kind, std::size_t num_dx, std::size_t num_px,
                                 std::size_t multiplier, const TrainConfig& config) {
  if (train_points.empty()) throw ConfigError("fit_propensity: empty training split");
  const NegativeSet negatives =
      generate_negatives(records, train_points, multiplier, derive_seed(config.seed, 0x7077ULL));

  // Hold out ~10% of the pool grouped by positive point: a held-out point
  // leaves together with all of its negatives. An element-wise split would
  // let the model memorize held-out patients' codes purely from negative
  // examples and invert the holdout ranking.
  Rng rng(derive_seed(config.seed, 0x70776669ULL));
  std::vector<std::size_t> point_order(train_points.size());
  for (std::size_t i = 0; i < point_order.size(); ++i) point_order[i] = i;
  rng.shuffle(point_order);
  const std::size_t holdout_points =
      std::max<std::size_t>(1, train_points.size() / 10);
  std::vector<bool> in_holdout(train_points.size(), false);
  for (std::size_t i = 0; i < holdout_points; ++i) in_holdout[point_order[i]] = true;

  std::vector<LabeledPairing> holdout, training;
  for (std::size_t i = 0; i < train_points.size(); ++i) {
    (in_holdout[i] ? holdout : training)
        .push_back({NegativeSample{i, i, false, false, {}}, 1.0});
  }
  for (const auto& sample : negatives.samples) {
    (in_holdout[sample.dx_point] ? holdout : training).push_back({sample, 0.0});
  }
  if (training.size() < 2 || holdout.empty()) {
    throw ConfigError("fit_propensity: pool too small");
  }
  rng.shuffle(training);

  PropensityClassifier clf(kind, num_dx, num_px, config.embed_dim,
                           derive_seed(config.seed, 0x70726f70ULL));

  std::map<std::string, NodePtr> params = clf.encoder.params();
  params.emplace("pw.head_weight", clf.head_weight);
  params.emplace("pw.head_bias", clf.head_bias);
  AdamOptimizer optimizer(config.model_lr);

  auto holdout_loss = [&]() {
    NoGradGuard guard;
    double acc = 0.0;
    for (const auto& entry : holdout) {
      auto prob = pairing_probability(clf, records, train_points, entry.pairing);
      auto loss = prediction_loss(prob, Tensor({1}, {entry.label}));
      acc += loss->value.item();
    }
    return acc / static_cast<double>(holdout.size());
  };

  double best_holdout = holdout_loss();
  std::size_t best_epoch = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(training);
    for (std::size_t start = 0; start < training.size(); start += config.batch_size) {
      const std::size_t stop = std::min(training.size(), start + config.batch_size);
      for (auto& [name, node] : params) node->grad = Tensor();
      NodePtr batch_loss;
      for (std::size_t b = start; b < stop; ++b) {
        auto prob = pairing_probability(clf, records, train_points, training[b].pairing);
        auto loss = prediction_loss(prob, Tensor({1}, {training[b].label}));
        batch_loss = batch_loss ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
      backward(batch_loss);
      optimizer.step(params);
    }
    const double current = holdout_loss();
    if (current < best_holdout) {
      best_holdout = current;
      best_epoch = epoch;
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }

  // Holdout AUC for the report.
  std::vector<double> scores, labels;
  scores.reserve(holdout.size());
  for (const auto& entry : holdout) {
    scores.push_back(clf.score(records, train_points, entry.pairing));
    labels.push_back(entry.label);
  }
  PropensityOutcome outcome{SampleWeightTable(train_points)};
  outcome.holdout_auc = rank_auc(scores, labels);
  outcome.negatives = negatives.samples.size();
  outcome.collisions = negatives.collisions;
  outcome.used_fallback = negatives.used_fallback;
  if (outcome.holdout_auc < 0.5) {
    outcome.low_auc_warning = true;
    logging::warn("fit_propensity: holdout AUC " + std::to_string(outcome.holdout_auc) +
              " < 0.5; weights will be near-uniform");
  }

  for (std::size_t i = 0; i < train_points.size(); ++i) {
    double p = clf.score(records, train_points, NegativeSample{i, i, false, false, {}});
    p = std::clamp(p, 1e-9, 1.0 - 1e-9);
    outcome.weights.set_value(i, p / (1.0 - p));
  }
  outcome.weights.clip_and_renormalize();
  return outcome;
}

TrainState fit_pw(Model& model, const std::vector<PatientRecord>& records,
                  const std::vector<PredictionPoint>& train_points,
                  const std::vector<PredictionPoint>& val_points, const TrainConfig& config,
                  PropensityOutcome* outcome_out) {
  PropensityOutcome outcome = fit_propensity(records, train_points, model.kind(),
                                             model.num_dx(), model.num_px(), 10, config);
  TrainState state = fit(model, records, train_points, val_points, config, TrainMethod::pw,
                         &outcome.weights);
  if (outcome_out) *outcome_out = std::move(outcome);
  return state;
}

}  // namespace che
