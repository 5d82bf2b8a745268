#include "che/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "che/error.hpp"
#include "che/rng.hpp"

namespace che {

namespace {

std::vector<double> normalized(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  for (auto& w : weights) w /= total;
  return weights;
}

// Sample k distinct codes from a categorical distribution by rejection.
std::vector<int> sample_distinct(const std::vector<double>& probs, std::size_t k, Rng& rng) {
  std::set<int> chosen;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 60 * k + 100;
  while (chosen.size() < k && attempts < max_attempts) {
    chosen.insert(static_cast<int>(rng.categorical(probs)));
    ++attempts;
  }
  return {chosen.begin(), chosen.end()};
}

nlohmann::json spec_to_json(const CausalSpec& spec) {
  nlohmann::json j;
  j["num_states"] = spec.num_states;
  j["transition"] = spec.transition;
  j["dx_emission"] = spec.dx_emission;
  j["canonical_policy"] = spec.canonical_policy;
  j["treatment_effects"] = spec.treatment_effects;
  j["rho_env"] = spec.rho_env;
  return j;
}

CausalSpec spec_from_json(const nlohmann::json& j) {
  CausalSpec spec;
  spec.num_states = j.at("num_states").get<std::size_t>();
  spec.transition = j.at("transition").get<std::vector<std::vector<double>>>();
  spec.dx_emission = j.at("dx_emission").get<std::vector<std::vector<double>>>();
  spec.canonical_policy = j.at("canonical_policy").get<std::vector<int>>();
  spec.treatment_effects = j.at("treatment_effects").get<std::vector<std::vector<double>>>();
  spec.rho_env = j.at("rho_env").get<std::map<std::string, double>>();
  return spec;
}

}  // namespace

void GeneratorConfig::validate() const {
  if (patients == 0 || num_dx == 0 || num_px == 0 || num_states == 0) {
    throw ConfigError("GeneratorConfig: all counts must be positive");
  }
  if (num_dx < num_states) {
    throw ConfigError("GeneratorConfig: need at least as many dx codes as latent states");
  }
  if (mean_visits < 3.0) throw ConfigError("GeneratorConfig: mean_visits must be >= 3");
  if (mean_codes < 1.0) throw ConfigError("GeneratorConfig: mean_codes must be >= 1");
  if (rho < 0.0 || rho > 1.0) throw ConfigError("GeneratorConfig: rho must be in [0,1]");
}

CausalSpec make_causal_spec(std::size_t num_dx, std::size_t num_px, std::size_t num_states,
                            double effect_scale, std::uint64_t seed) {
  if (num_dx < num_states) throw ConfigError("make_causal_spec: need num_dx >= num_states");
  CausalSpec spec;
  spec.num_states = num_states;
  Rng rng(derive_seed(seed, 0x636175736cULL));

  // Sticky chain with a drift to the next state and some random spread.
  spec.transition.resize(num_states);
  for (std::size_t s = 0; s < num_states; ++s) {
    std::vector<double> row(num_states, 0.0);
    row[s] += 0.45;
    row[(s + 1) % num_states] += 0.35;
    for (std::size_t k = 0; k < num_states; ++k) row[k] += 0.2 * rng.uniform() / num_states * 4.0;
    spec.transition[s] = normalized(std::move(row));
  }

  // Each state emits mostly from its own block of codes, decaying into
  // neighboring blocks, with per-code jitter so states are asymmetric.
  spec.dx_emission.resize(num_states);
  const double block = static_cast<double>(num_dx) / static_cast<double>(num_states);
  for (std::size_t s = 0; s < num_states; ++s) {
    std::vector<double> row(num_dx, 0.0);
    for (std::size_t m = 0; m < num_dx; ++m) {
      const double owner = std::floor(static_cast<double>(m) / block);
      double dist = std::fabs(owner - static_cast<double>(s));
      dist = std::min(dist, static_cast<double>(num_states) - dist);  // circular
      row[m] = std::pow(0.35, dist) * rng.uniform(0.5, 1.5) + 0.02 / num_dx;
    }
    spec.dx_emission[s] = normalized(std::move(row));
  }

  spec.canonical_policy.resize(num_dx);
  for (std::size_t m = 0; m < num_dx; ++m) {
    spec.canonical_policy[m] = static_cast<int>(m * num_px / num_dx);
  }

  if (effect_scale > 0.0) {
    spec.treatment_effects.assign(num_px, std::vector<double>(num_dx, 0.0));
    for (std::size_t p = 0; p < num_px; ++p) {
      for (int hit = 0; hit < 3; ++hit) {
        spec.treatment_effects[p][rng.uniform_int(num_dx)] += effect_scale;
      }
      for (int hit = 0; hit < 3; ++hit) {
        spec.treatment_effects[p][rng.uniform_int(num_dx)] -= 0.5 * effect_scale;
      }
    }
  }
  return spec;
}

Cohort generate_cohort(const GeneratorConfig& config, const CausalSpec& spec) {
  config.validate();
  if (spec.num_states == 0 || spec.dx_emission.size() != spec.num_states) {
    throw ConfigError("generate_cohort: causal spec does not match config");
  }

  Cohort cohort;
  cohort.config = config;
  cohort.causal = spec;
  cohort.causal.rho_env[config.env] = config.rho;
  cohort.records.reserve(config.patients);
  cohort.latent_paths.reserve(config.patients);

  const std::size_t num_px = config.num_px;
  for (std::size_t i = 0; i < config.patients; ++i) {
    Rng rng(derive_seed(config.seed, 0x706174ULL * (i + 1)));
    PatientRecord record;
    record.id = config.env + "-" + std::to_string(i);
    record.env = config.env;

    const std::size_t visits = 3 + rng.poisson(config.mean_visits - 3.0);
    std::vector<int> path;
    int state = static_cast<int>(rng.uniform_int(spec.num_states));
    std::vector<int> prev_px;

    for (std::size_t v = 0; v < visits; ++v) {
      path.push_back(state);
      std::size_t k = 1 + rng.poisson(config.mean_codes - 1.0);
      k = std::min(k, config.num_dx);

      // Procedures administered last visit shift this visit's dx odds.
      std::vector<int> dx;
      if (!spec.treatment_effects.empty() && !prev_px.empty()) {
        std::vector<double> probs = spec.dx_emission[state];
        for (auto& p : probs) p = std::log(p);
        for (int px : prev_px) {
          for (std::size_t m = 0; m < probs.size(); ++m) {
            probs[m] += spec.treatment_effects[px][m];
          }
        }
        double mx = probs[0];
        for (double p : probs) mx = std::max(mx, p);
        for (auto& p : probs) p = std::exp(p - mx);
        dx = sample_distinct(normalized(std::move(probs)), k, rng);
      } else {
        dx = sample_distinct(spec.dx_emission[state], k, rng);
      }

      std::set<int> px_set;
      for (int code : dx) {
        if (rng.bernoulli(config.rho)) {
          px_set.insert(spec.canonical_policy[code]);
        } else {
          px_set.insert(static_cast<int>(rng.uniform_int(num_px)));
        }
      }
      Visit visit;
      visit.dx = std::move(dx);
      visit.px.assign(px_set.begin(), px_set.end());
      prev_px = visit.px;
      record.visits.push_back(std::move(visit));

      state = static_cast<int>(rng.categorical(spec.transition[state]));
    }
    cohort.records.push_back(std::move(record));
    cohort.latent_paths.push_back(std::move(path));
  }
  return cohort;
}

SplitIndices split_random(std::size_t cohort_size, std::uint64_t seed) {
  if (cohort_size < 20) {
    throw ConfigError("split_random: cohort too small (" + std::to_string(cohort_size) +
                      " < 20 patients)");
  }
  std::vector<std::size_t> order(cohort_size);
  for (std::size_t i = 0; i < cohort_size; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  rng.shuffle(order);

  const std::size_t n_val = cohort_size / 10;
  const std::size_t n_test = cohort_size * 15 / 100;
  SplitIndices split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.test.assign(order.begin() + n_val, order.begin() + n_val + n_test);
  split.train.assign(order.begin() + n_val + n_test, order.end());
  return split;
}

SplitIndices split_by_environment(std::size_t train_env_count, std::size_t test_env_count,
                                  std::uint64_t seed) {
  if (train_env_count == 0 || test_env_count == 0) {
    throw ConfigError("split_by_environment: both cohorts must be non-empty");
  }
  std::vector<std::size_t> order(train_env_count);
  for (std::size_t i = 0; i < train_env_count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x656e76ULL));
  rng.shuffle(order);

  const std::size_t n_val = train_env_count * 3 / 10;
  SplitIndices split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());
  split.test.resize(test_env_count);
  for (std::size_t i = 0; i < test_env_count; ++i) split.test[i] = train_env_count + i;
  return split;
}

std::vector<PredictionPoint> enumerate_prediction_points(
    const std::vector<PatientRecord>& records, const std::vector<std::size_t>& patient_indices) {
  std::vector<PredictionPoint> points;
  for (std::size_t idx : patient_indices) {
    const auto& record = records.at(idx);
    for (std::size_t j = 1; j + 1 <= record.num_visits(); ++j) {
      points.push_back({idx, j});
    }
  }
  return points;
}

void save_cohort(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_cohort: cannot open " + path);
  for (const auto& record : cohort.records) {
    nlohmann::json line;
    line["id"] = record.id;
    line["env"] = record.env;
    line["visits"] = nlohmann::json::array();
    for (const auto& visit : record.visits) {
      line["visits"].push_back({{"dx", visit.dx}, {"px", visit.px}});
    }
    out << line.dump() << "\n";
  }
  if (!out) throw IoError("save_cohort: write failed for " + path);

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["M"] = cohort.config.num_dx;
  meta["N"] = cohort.config.num_px;
  meta["config"] = {{"patients", cohort.config.patients},
                    {"num_dx", cohort.config.num_dx},
                    {"num_px", cohort.config.num_px},
                    {"num_states", cohort.config.num_states},
                    {"mean_visits", cohort.config.mean_visits},
                    {"mean_codes", cohort.config.mean_codes},
                    {"rho", cohort.config.rho},
                    {"env", cohort.config.env},
                    {"seed", cohort.config.seed}};
  meta["causal_spec"] = spec_to_json(cohort.causal);
  std::ofstream meta_out(path + ".meta.json", std::ios::binary);
  if (!meta_out) throw IoError("save_cohort: cannot open " + path + ".meta.json");
  meta_out << meta.dump(2) << "\n";
}

Cohort load_cohort(const std::string& path) {
  std::ifstream meta_in(path + ".meta.json", std::ios::binary);
  if (!meta_in) throw IoError("load_cohort: missing sidecar " + path + ".meta.json");
  nlohmann::json meta;
  try {
    meta_in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_cohort: malformed sidecar: " + std::string(e.what()));
  }

  Cohort cohort;
  try {
    const auto& cfg = meta.at("config");
    cohort.config.patients = cfg.at("patients").get<std::size_t>();
    cohort.config.num_dx = cfg.at("num_dx").get<std::size_t>();
    cohort.config.num_px = cfg.at("num_px").get<std::size_t>();
    cohort.config.num_states = cfg.at("num_states").get<std::size_t>();
    cohort.config.mean_visits = cfg.at("mean_visits").get<double>();
    cohort.config.mean_codes = cfg.at("mean_codes").get<double>();
    cohort.config.rho = cfg.at("rho").get<double>();
    cohort.config.env = cfg.at("env").get<std::string>();
    cohort.config.seed = cfg.at("seed").get<std::uint64_t>();
    cohort.causal = spec_from_json(meta.at("causal_spec"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_cohort: invalid sidecar field: " + std::string(e.what()));
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_cohort: cannot open " + path);
  std::string line;
  std::size_t line_number = 0;
  const int max_dx = static_cast<int>(cohort.config.num_dx);
  const int max_px = static_cast<int>(cohort.config.num_px);
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
      PatientRecord record;
      record.id = doc.at("id").get<std::string>();
      record.env = doc.at("env").get<std::string>();
      for (const auto& visit_json : doc.at("visits")) {
        Visit visit;
        visit.dx = visit_json.at("dx").get<std::vector<int>>();
        visit.px = visit_json.at("px").get<std::vector<int>>();
        if (visit.dx.empty() || visit.px.empty()) {
          throw InvalidRecordError("empty visit code set");
        }
        for (int code : visit.dx) {
          if (code < 0 || code >= max_dx) {
            throw InvalidRecordError("dx code " + std::to_string(code) +
                                     " outside vocabulary of " + std::to_string(max_dx));
          }
        }
        for (int code : visit.px) {
          if (code < 0 || code >= max_px) {
            throw InvalidRecordError("px code " + std::to_string(code) +
                                     " outside vocabulary of " + std::to_string(max_px));
          }
        }
        record.visits.push_back(std::move(visit));
      }
      if (record.num_visits() < 3) {
        throw InvalidRecordError("patient has fewer than 3 visits");
      }
      cohort.records.push_back(std::move(record));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("load_cohort: line " + std::to_string(line_number) + ": " + e.what());
    } catch (const InvalidRecordError& e) {
      throw IoError("load_cohort: line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return cohort;
}

}  // namespace che
