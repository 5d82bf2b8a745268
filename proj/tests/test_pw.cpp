#include <doctest.h>

#include <set>

#include "che/error.hpp"
#include "che/pw.hpp"

using namespace che;

namespace {

struct Bench {
  Cohort cohort;
  std::vector<PredictionPoint> train_points;
  std::vector<PredictionPoint> val_points;
};

Bench pw_bench(std::uint64_t seed, std::size_t patients = 40, std::size_t num_px = 8,
               double rho = 1.0) {
  GeneratorConfig cfg;
  cfg.patients = patients;
  cfg.num_dx = 20;
  cfg.num_px = num_px;
  cfg.num_states = 4;
  cfg.rho = rho;
  cfg.seed = seed;
  Bench bench;
  bench.cohort = generate_cohort(cfg, make_causal_spec(20, num_px, 4, 0.0, seed));
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < patients; ++i) {
    (i < patients - patients / 4 ? train_idx : val_idx).push_back(i);
  }
  bench.train_points = enumerate_prediction_points(bench.cohort.records, train_idx);
  bench.val_points = enumerate_prediction_points(bench.cohort.records, val_idx);
  return bench;
}

}  // namespace

TEST_CASE("generate_negatives emits multiplier negatives per positive") {
  Bench bench = pw_bench(1);
  const auto negatives =
      generate_negatives(bench.cohort.records, bench.train_points, 10, 7);
  CHECK(negatives.samples.size() == bench.train_points.size() * 10);

  const auto none = generate_negatives(bench.cohort.records, bench.train_points, 0, 7);
  CHECK(none.samples.empty());

  // Three prediction points, multiplier 10 -> 30 negatives.
  std::vector<PredictionPoint> three(bench.train_points.begin(),
                                     bench.train_points.begin() + 3);
  const auto thirty = generate_negatives(bench.cohort.records, three, 10, 7);
  CHECK(thirty.samples.size() == 30);
}

TEST_CASE("generate_negatives is reproducible and pairs equal prefix lengths") {
  Bench bench = pw_bench(2);
  const auto a = generate_negatives(bench.cohort.records, bench.train_points, 5, 11);
  const auto b = generate_negatives(bench.cohort.records, bench.train_points, 5, 11);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].dx_point == b.samples[i].dx_point);
    CHECK(a.samples[i].px_point == b.samples[i].px_point);
    CHECK(a.samples[i].collision == b.samples[i].collision);
    CHECK(a.samples[i].fallback == b.samples[i].fallback);
    CHECK(a.samples[i].px_visit_order == b.samples[i].px_visit_order);
  }
  const auto c = generate_negatives(bench.cohort.records, bench.train_points, 5, 12);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (a.samples[i].px_point != c.samples[i].px_point) any_diff = true;
  }
  CHECK(any_diff);

  for (const auto& sample : a.samples) {
    if (!sample.fallback) {
      CHECK(bench.train_points[sample.dx_point].prefix_len ==
            bench.train_points[sample.px_point].prefix_len);
      CHECK(sample.dx_point != sample.px_point);
    }
  }
}

TEST_CASE("negatives avoid observed pairs except through the flagged collision path") {
  Bench bench = pw_bench(3);
  const auto negatives =
      generate_negatives(bench.cohort.records, bench.train_points, 10, 13);

  auto px_fingerprint = [&](std::size_t point_idx) {
    const auto& point = bench.train_points[point_idx];
    const auto& record = bench.cohort.records[point.patient];
    std::string key;
    for (std::size_t v = 0; v < point.prefix_len; ++v) {
      for (int code : record.visits[v].px) key += std::to_string(code) + ",";
      key += ";";
    }
    return key;
  };

  for (const auto& sample : negatives.samples) {
    if (sample.fallback || sample.collision) continue;
    // A clean negative's px prefix must differ from the positive's own.
    CHECK(px_fingerprint(sample.dx_point) != px_fingerprint(sample.px_point));
  }
}

TEST_CASE("single patient forces the within-stream permutation fallback") {
  GeneratorConfig cfg;
  cfg.patients = 1;
  cfg.num_dx = 20;
  cfg.num_px = 8;
  cfg.num_states = 4;
  cfg.seed = 5;
  const auto cohort = generate_cohort(cfg, make_causal_spec(20, 8, 4, 0.0, 5));
  const auto points = enumerate_prediction_points(cohort.records, {0});
  // One prediction point per prefix length: no equal-length partner exists.
  const auto negatives = generate_negatives(cohort.records, points, 3, 17);
  CHECK(negatives.used_fallback);
  for (const auto& sample : negatives.samples) {
    CHECK(sample.fallback);
    CHECK(sample.px_visit_order.size() == points[sample.dx_point].prefix_len);
  }
}

TEST_CASE("indistinguishable negatives give near-uniform weights and chance AUC") {
  // A single-procedure vocabulary makes every px prefix identical, so a
  // negative has exactly the content of its positive and the discriminator
  // cannot beat the class prior. (A perfectly constant score maps to
  // exactly-1 weights; that implication is covered by the scale-invariance
  // case below. Finite training only approaches the constant optimum, so
  // the bound here is a band around uniform.)
  Bench bench = pw_bench(6, 30, 1);
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.batch_size = 16;
  cfg.max_epochs = 10;
  cfg.patience = 3;
  cfg.seed = 21;
  const auto outcome = fit_propensity(bench.cohort.records, bench.train_points,
                                      ModelKind::lstm, 20, 1, 5, cfg);
  CHECK(outcome.holdout_auc > 0.3);
  CHECK(outcome.holdout_auc < 0.7);
  for (std::size_t i = 0; i < outcome.weights.size(); ++i) {
    CHECK(outcome.weights.value(i) > 0.4);
    CHECK(outcome.weights.value(i) < 2.5);
  }
  CHECK(std::fabs(outcome.weights.mean() - 1.0) < 1e-9);
}

TEST_CASE("separable streams give a high holdout AUC") {
  // M == N makes the canonical policy the identity, and rho=1 ties px to dx
  // exactly, so cross-patient pairings are detectably inconsistent while the
  // shared vocabulary lets the matching geometry generalize to held-out
  // points.
  GeneratorConfig gcfg;
  gcfg.patients = 60;
  gcfg.num_dx = 24;
  gcfg.num_px = 24;
  gcfg.num_states = 12;
  gcfg.rho = 1.0;
  gcfg.seed = 7;
  const auto cohort = generate_cohort(gcfg, make_causal_spec(24, 24, 12, 0.0, 7));
  std::vector<std::size_t> idx(cohort.records.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto points = enumerate_prediction_points(cohort.records, idx);

  TrainConfig cfg;
  cfg.embed_dim = 8;
  cfg.batch_size = 32;
  cfg.max_epochs = 80;
  cfg.patience = 80;
  cfg.model_lr = 0.01;
  cfg.seed = 22;
  const auto outcome =
      fit_propensity(cohort.records, points, ModelKind::lstm, 24, 24, 10, cfg);
  CHECK(outcome.holdout_auc > 0.95);
  CHECK(outcome.negatives == points.size() * 10);
  CHECK(std::fabs(outcome.weights.mean() - 1.0) < 1e-9);
  CHECK(outcome.weights.min() >= SampleWeightTable::kMinWeight - 1e-12);
  CHECK(outcome.weights.max() <= SampleWeightTable::kMaxWeight + 1e-12);
}

TEST_CASE("odds scale invariance under the mean-1 normalization") {
  std::vector<PredictionPoint> points;
  for (std::size_t i = 0; i < 12; ++i) points.push_back({i, 1});
  SampleWeightTable a(points), b(points);
  Rng rng(23);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double odds = rng.uniform(0.1, 5.0);
    a.set_value(i, odds);
    b.set_value(i, 2.0 * odds);
  }
  a.clip_and_renormalize();
  b.clip_and_renormalize();
  for (std::size_t i = 0; i < points.size(); ++i) {
    CHECK(a.value(i) == doctest::Approx(b.value(i)).epsilon(1e-12));
  }
}

TEST_CASE("fit_pw with uniform weights matches base training bit-for-bit") {
  Bench bench = pw_bench(8, 30);
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.batch_size = 8;
  cfg.max_epochs = 3;
  cfg.patience = 5;
  cfg.seed = 31;

  Model base_model(ModelKind::lstm, 20, 8, 4, cfg.seed);
  const TrainState base_state = fit(base_model, bench.cohort.records, bench.train_points,
                                    bench.val_points, cfg, TrainMethod::base);

  SampleWeightTable uniform(bench.train_points);
  Model pw_model(ModelKind::lstm, 20, 8, 4, cfg.seed);
  const TrainState pw_state = fit(pw_model, bench.cohort.records, bench.train_points,
                                  bench.val_points, cfg, TrainMethod::pw, &uniform);
  CHECK(checkpoint_to_json(base_state.best_checkpoint) ==
        checkpoint_to_json(pw_state.best_checkpoint));
}

TEST_CASE("full pw pipeline emits finite mean-1 weights and an AUC") {
  Bench bench = pw_bench(9, 30);
  TrainConfig cfg;
  cfg.embed_dim = 4;
  cfg.batch_size = 16;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  cfg.seed = 41;

  Model model(ModelKind::lstm, 20, 8, 4, cfg.seed);
  PropensityOutcome outcome;
  const TrainState state = fit_pw(model, bench.cohort.records, bench.train_points,
                                  bench.val_points, cfg, &outcome);
  CHECK(state.epochs_run >= 1);
  CHECK(outcome.holdout_auc >= 0.0);
  CHECK(outcome.holdout_auc <= 1.0);
  CHECK(std::fabs(outcome.weights.mean() - 1.0) < 1e-9);
  for (std::size_t i = 0; i < outcome.weights.size(); ++i) {
    CHECK(std::isfinite(outcome.weights.value(i)));
    CHECK(outcome.weights.value(i) > 0.0);
  }
}
