#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace che {

struct Visit {
  std::vector<int> dx;
  std::vector<int> px;
};

struct PatientRecord {
  std::string id;
  std::string env;
  std::vector<Visit> visits;

  std::size_t num_visits() const { return visits.size(); }
};

// Ground-truth structure behind a generated cohort. Future diagnoses are
// driven by a latent Markov state; procedures follow the canonical policy of
// their diagnosis with probability rho (else uniform), and can carry their
// own causal effect on the next visit's diagnoses.
struct CausalSpec {
  std::size_t num_states = 0;
  std::vector<std::vector<double>> transition;         // S x S, rows sum to 1
  std::vector<std::vector<double>> dx_emission;        // S x M, rows sum to 1
  std::vector<int> canonical_policy;                   // dx code -> px code
  std::vector<std::vector<double>> treatment_effects;  // N x M additive log-odds; empty = none
  std::map<std::string, double> rho_env;

  bool has_treatment_effects() const { return !treatment_effects.empty(); }
};

struct GeneratorConfig {
  std::size_t patients = 500;
  std::size_t num_dx = 100;     // M
  std::size_t num_px = 40;      // N
  std::size_t num_states = 12;  // S
  double mean_visits = 4.0;     // visits per patient, minimum 3
  double mean_codes = 5.0;      // dx codes per visit, minimum 1
  double rho = 0.95;            // P(px follows the canonical policy of its dx)
  std::string env = "medicare";
  std::uint64_t seed = 13;

  void validate() const;
};

struct Cohort {
  std::vector<PatientRecord> records;
  CausalSpec causal;
  GeneratorConfig config;
  // Latent state per (patient, visit); generator ground truth for
  // diagnostics, not part of the observational record.
  std::vector<std::vector<int>> latent_paths;
};

// Shared structure for a family of cohorts. effect_scale > 0 gives
// procedures a real effect on next-visit diagnoses; 0 makes them causally
// inert so any model reliance on them is spurious by construction.
CausalSpec make_causal_spec(std::size_t num_dx, std::size_t num_px, std::size_t num_states,
                            double effect_scale, std::uint64_t seed);

Cohort generate_cohort(const GeneratorConfig& config, const CausalSpec& spec);

struct PredictionPoint {
  std::size_t patient;
  std::size_t prefix_len;  // inputs are visits [0, prefix_len), target is visit prefix_len
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Patient-level 0.75 : 0.1 : 0.15 partition; floored sizes, remainder to train.
SplitIndices split_random(std::size_t cohort_size, std::uint64_t seed);

// Train-environment patients split 0.7 : 0.3 into train/val; the entire
// test-environment cohort (indices offset by train_env_count) is the test set.
SplitIndices split_by_environment(std::size_t train_env_count, std::size_t test_env_count,
                                  std::uint64_t seed);

std::vector<PredictionPoint> enumerate_prediction_points(
    const std::vector<PatientRecord>& records, const std::vector<std::size_t>& patient_indices);

// JSON Lines, one patient per line, plus a <path>.meta.json sidecar with
// the vocabulary sizes, generator config, and causal spec.
void save_cohort(const Cohort& cohort, const std::string& path);
Cohort load_cohort(const std::string& path);

}  // namespace che
