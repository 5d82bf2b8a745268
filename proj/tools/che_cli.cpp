// Command-line pipeline: synthetic cohort generation, training
// (base / che / pw), evaluation, seed sweeps with significance tests, and
// gradient attributions.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "che/attribution.hpp"
#include "che/checkpoint.hpp"
#include "che/encoders.hpp"
#include "che/error.hpp"
#include "che/log.hpp"
#include "che/metrics.hpp"
#include "che/pw.hpp"
#include "che/report.hpp"
#include "che/runconfig.hpp"
#include "che/synth.hpp"
#include "che/trainer.hpp"

namespace fs = std::filesystem;
using namespace che;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

HsicConfig hsic_config_from(const RunConfig& cfg) {
  const double sigma = cfg.get_double("train.sigma");
  return sigma > 0.0 ? HsicConfig::fixed(sigma) : HsicConfig::median();
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epsilon = cfg.get_double("train.epsilon");
  tc.model_lr = cfg.get_double("train.model_lr");
  tc.weight_lr = cfg.get_double("train.weight_lr");
  tc.batch_size = cfg.get_size("train.batch_size");
  tc.max_epochs = cfg.get_size("train.max_epochs");
  tc.patience = cfg.get_size("train.patience");
  tc.embed_dim = cfg.get_size("train.embed_dim");
  tc.dropout = cfg.get_double("train.dropout");
  tc.seed = cfg.get_u64("train.seed");
  tc.hsic = hsic_config_from(cfg);
  tc.validate();
  return tc;
}

struct LoadedData {
  Cohort train_cohort;
  Cohort test_cohort;
  std::vector<PatientRecord> records;  // train-env records first, then test-env
  std::size_t num_dx = 0;
  std::size_t num_px = 0;
};

LoadedData load_data_dir(const std::string& dir) {
  LoadedData data;
  data.train_cohort = load_cohort((fs::path(dir) / "train.jsonl").string());
  data.test_cohort = load_cohort((fs::path(dir) / "test.jsonl").string());
  if (data.train_cohort.config.num_dx != data.test_cohort.config.num_dx ||
      data.train_cohort.config.num_px != data.test_cohort.config.num_px) {
    throw IoError("data: train/test cohorts disagree on vocabulary sizes");
  }
  data.num_dx = data.train_cohort.config.num_dx;
  data.num_px = data.train_cohort.config.num_px;
  data.records = data.train_cohort.records;
  data.records.insert(data.records.end(), data.test_cohort.records.begin(),
                      data.test_cohort.records.end());
  return data;
}

struct SplitSets {
  std::vector<PredictionPoint> train;
  std::vector<PredictionPoint> val;
  std::vector<PredictionPoint> test;
};

SplitSets make_splits(const LoadedData& data, const std::string& protocol,
                      std::uint64_t split_seed) {
  SplitIndices indices;
  if (protocol == "random") {
    // Single-environment protocol over the train-env cohort only.
    indices = split_random(data.train_cohort.records.size(), split_seed);
  } else if (protocol == "env") {
    indices = split_by_environment(data.train_cohort.records.size(),
                                   data.test_cohort.records.size(), split_seed);
  } else {
    throw ConfigError("split protocol must be 'random' or 'env', got '" + protocol + "'");
  }
  SplitSets sets;
  sets.train = enumerate_prediction_points(data.records, indices.train);
  sets.val = enumerate_prediction_points(data.records, indices.val);
  sets.test = enumerate_prediction_points(data.records, indices.test);
  return sets;
}

struct TrainedRun {
  RunResult result;
  Checkpoint best_checkpoint;
  TrainState state;
  std::string weights_json;  // empty for base
};

TrainedRun run_training(const LoadedData& data, const SplitSets& splits, const RunConfig& cfg,
                        const std::string& method_name, std::uint64_t seed) {
  TrainConfig tc = train_config_from(cfg);
  tc.seed = seed;
  const TrainMethod method = train_method_from_name(method_name);
  const ModelKind kind = model_kind_from_name(cfg.get_string("train.model"));

  Model model(kind, data.num_dx, data.num_px, tc.embed_dim, seed);

  TrainedRun run;
  run.result.method = method_name;
  run.result.seed = seed;

  if (method == TrainMethod::pw) {
    PropensityOutcome outcome;
    run.state = fit_pw(model, data.records, splits.train, splits.val, tc, &outcome);
    run.result.propensity_auc = outcome.holdout_auc;
    run.weights_json = outcome.weights.to_json();
  } else {
    SampleWeightTable final_weights(splits.train);
    run.state = fit(model, data.records, splits.train, splits.val, tc, method, nullptr,
                    &final_weights);
    if (method == TrainMethod::che) run.weights_json = final_weights.to_json();
  }

  run.best_checkpoint = run.state.best_checkpoint;
  Model best = Model::from_checkpoint(run.best_checkpoint);
  run.result.test_metrics = evaluate(best, data.records, splits.test);
  run.result.best_val_ndcg10 = run.state.best_val_ndcg10;
  run.result.best_epoch = run.state.best_epoch;
  run.result.epochs_run = run.state.epochs_run;
  run.result.hsic_epoch0 = run.state.curve.front().mean_hsic;
  run.result.hsic_best = run.state.curve.at(run.state.best_epoch).mean_hsic;
  return run;
}

void write_run_artifacts(const fs::path& out_dir, const RunConfig& cfg, const TrainedRun& run,
                         const std::string& protocol, std::uint64_t split_seed) {
  fs::create_directories(out_dir);
  write_file(out_dir / "checkpoint.json", checkpoint_to_json(run.best_checkpoint) + "\n");
  write_file(out_dir / "curves.csv", run.state.curve_csv());
  if (!run.weights_json.empty()) write_file(out_dir / "weights.json", run.weights_json + "\n");
  write_file(out_dir / "resolved.config", cfg.snapshot());

  nlohmann::json meta;
  meta["method"] = run.result.method;
  meta["model"] = cfg.get_string("train.model");
  meta["split"] = protocol;
  meta["split_seed"] = split_seed;
  meta["seed"] = run.result.seed;
  meta["best_epoch"] = run.result.best_epoch;
  meta["epochs_run"] = run.result.epochs_run;
  meta["best_val_ndcg10"] = run.result.best_val_ndcg10;
  meta["hsic_epoch0"] = run.result.hsic_epoch0;
  meta["hsic_best"] = run.result.hsic_best;
  meta["test"] = {{"ndcg10", run.result.test_metrics.ndcg10},
                  {"ndcg20", run.result.test_metrics.ndcg20},
                  {"acc10", run.result.test_metrics.acc10},
                  {"acc20", run.result.test_metrics.acc20},
                  {"average", run.result.test_metrics.average()}};
  if (run.result.propensity_auc) meta["propensity_auc"] = *run.result.propensity_auc;
  write_file(out_dir / "run.json", meta.dump(2) + "\n");
}

int cmd_gen(const RunConfig& cfg, const std::string& out_dir) {
  const std::size_t num_dx = cfg.get_size("gen.dx_codes");
  const std::size_t num_px = cfg.get_size("gen.px_codes");
  const std::size_t states = cfg.get_size("gen.states");
  const std::uint64_t seed = cfg.get_u64("gen.seed");

  const CausalSpec spec =
      make_causal_spec(num_dx, num_px, states, cfg.get_double("gen.effect_scale"), seed);

  GeneratorConfig train_cfg;
  train_cfg.patients = cfg.get_size("gen.patients");
  train_cfg.num_dx = num_dx;
  train_cfg.num_px = num_px;
  train_cfg.num_states = states;
  train_cfg.mean_visits = cfg.get_double("gen.mean_visits");
  train_cfg.mean_codes = cfg.get_double("gen.mean_codes");
  train_cfg.rho = cfg.get_double("gen.rho_train");
  train_cfg.env = cfg.get_string("gen.train_env");
  train_cfg.seed = derive_seed(seed, 1);

  GeneratorConfig test_cfg = train_cfg;
  test_cfg.rho = cfg.get_double("gen.rho_test");
  test_cfg.env = cfg.get_string("gen.test_env");
  test_cfg.seed = derive_seed(seed, 2);

  const Cohort train_cohort = generate_cohort(train_cfg, spec);
  const Cohort test_cohort = generate_cohort(test_cfg, spec);

  fs::create_directories(out_dir);
  save_cohort(train_cohort, (fs::path(out_dir) / "train.jsonl").string());
  save_cohort(test_cohort, (fs::path(out_dir) / "test.jsonl").string());
  write_file(fs::path(out_dir) / "resolved.config", cfg.snapshot());
  std::cout << "generated " << train_cohort.records.size() << " train-env and "
            << test_cohort.records.size() << " test-env patients under " << out_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  const LoadedData data = load_data_dir(data_dir);
  const std::string protocol = cfg.get_string("split.protocol");
  const std::uint64_t split_seed = cfg.get_u64("split.seed");
  const SplitSets splits = make_splits(data, protocol, split_seed);

  const TrainedRun run =
      run_training(data, splits, cfg, cfg.get_string("train.method"), cfg.get_u64("train.seed"));
  write_run_artifacts(out_dir, cfg, run, protocol, split_seed);
  std::cout << "method=" << run.result.method << " best_epoch=" << run.result.best_epoch
            << " test_ndcg10=" << format_sig4(run.result.test_metrics.ndcg10)
            << " test_average=" << format_sig4(run.result.test_metrics.average()) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const LoadedData data = load_data_dir(data_dir);
  if (ckpt.dim_m != data.num_dx || ckpt.dim_n != data.num_px) {
    throw ConfigError("eval: vocabulary mismatch: checkpoint has M=" +
                      std::to_string(ckpt.dim_m) + ", N=" + std::to_string(ckpt.dim_n) +
                      " but dataset has M=" + std::to_string(data.num_dx) + ", N=" +
                      std::to_string(data.num_px));
  }
  const Model model = Model::from_checkpoint(ckpt);
  const SplitSets splits =
      make_splits(data, cfg.get_string("split.protocol"), cfg.get_u64("split.seed"));
  const std::string role = cfg.get_string("eval.role");
  const std::vector<PredictionPoint>* points = nullptr;
  if (role == "test") {
    points = &splits.test;
  } else if (role == "val") {
    points = &splits.val;
  } else if (role == "train") {
    points = &splits.train;
  } else {
    throw ConfigError("eval.role must be train|val|test, got '" + role + "'");
  }

  SweepReport report;
  MethodAggregate aggregate;
  aggregate.method = ckpt.model_kind;
  RunResult result;
  result.method = ckpt.model_kind;
  result.seed = ckpt.seed;
  result.test_metrics = evaluate(model, data.records, *points);
  aggregate.runs.push_back(result);
  report.methods.push_back(std::move(aggregate));
  report.warnings.push_back("single checkpoint: no seed spread, t-tests omitted");

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "report.csv", sweep_report_csv(report));
  write_file(fs::path(out_dir) / "report.json", sweep_report_json(report) + "\n");
  write_file(fs::path(out_dir) / "resolved.config", cfg.snapshot());
  std::cout << sweep_report_csv(report);
  return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  const LoadedData data = load_data_dir(data_dir);
  const std::string protocol = cfg.get_string("split.protocol");
  const std::uint64_t split_seed = cfg.get_u64("split.seed");
  const SplitSets splits = make_splits(data, protocol, split_seed);

  std::vector<std::string> methods;
  {
    std::string raw = cfg.get_string("sweep.methods");
    std::size_t start = 0;
    while (start <= raw.size()) {
      std::size_t comma = raw.find(',', start);
      if (comma == std::string::npos) comma = raw.size();
      const std::string name = raw.substr(start, comma - start);
      if (!name.empty()) {
        train_method_from_name(name);  // validates
        methods.push_back(name);
      }
      start = comma + 1;
    }
  }
  if (methods.empty()) throw ConfigError("sweep: no methods given");
  const std::size_t num_seeds = cfg.get_size("sweep.seeds");
  if (num_seeds == 0) throw ConfigError("sweep: need at least one seed");
  const std::uint64_t base_seed = cfg.get_u64("train.seed");

  struct Job {
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& method : methods) {
    for (std::size_t k = 0; k < num_seeds; ++k) jobs.push_back({method, base_seed + k});
  }

  std::mutex mutex;
  std::size_t next_job = 0;
  std::map<std::string, MethodAggregate> aggregates;
  for (const auto& method : methods) aggregates[method].method = method;
  std::vector<std::string> warnings;
  if (num_seeds < 2) warnings.push_back("single seed: std and t-test fields omitted");

  const std::size_t max_jobs = std::max<std::size_t>(1, cfg.get_size("sweep.jobs"));
  auto worker = [&]() {
    for (;;) {
      Job job;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (next_job >= jobs.size()) return;
        job = jobs[next_job++];
      }
      try {
        TrainedRun run = run_training(data, splits, cfg, job.method, job.seed);
        const fs::path run_dir =
            fs::path(out_dir) / "runs" / (job.method + "-s" + std::to_string(job.seed));
        RunConfig run_cfg = cfg;
        run_cfg.set("train.method", job.method);
        run_cfg.set("train.seed", std::to_string(job.seed));
        write_run_artifacts(run_dir, run_cfg, run, protocol, split_seed);
        std::lock_guard<std::mutex> lock(mutex);
        aggregates[job.method].runs.push_back(run.result);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mutex);
        warnings.push_back("run " + job.method + " seed " + std::to_string(job.seed) +
                           " failed: " + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t thread_count = std::min(max_jobs, jobs.size());
  pool.reserve(thread_count);
  for (std::size_t t = 0; t < thread_count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  SweepReport report;
  for (const auto& method : methods) {
    if (!aggregates[method].runs.empty()) {
      // Deterministic ordering regardless of thread completion order.
      auto& runs = aggregates[method].runs;
      std::sort(runs.begin(), runs.end(),
                [](const RunResult& a, const RunResult& b) { return a.seed < b.seed; });
      report.methods.push_back(std::move(aggregates[method]));
    }
  }
  report.warnings = warnings;
  for (const auto& warning : warnings) logging::warn("sweep: " + warning);
  if (report.methods.empty()) throw NumericError("sweep: all runs failed");

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "report.csv", sweep_report_csv(report));
  write_file(fs::path(out_dir) / "report.json", sweep_report_json(report) + "\n");
  write_file(fs::path(out_dir) / "resolved.config", cfg.snapshot());
  std::cout << sweep_report_csv(report);
  return 0;
}

int cmd_attribute(const RunConfig& cfg, const std::string& checkpoint_path,
                  const std::string& data_dir, const std::string& out_dir, bool emit_csv) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const LoadedData data = load_data_dir(data_dir);
  if (ckpt.dim_m != data.num_dx || ckpt.dim_n != data.num_px) {
    throw ConfigError("attribute: vocabulary mismatch: checkpoint M=" +
                      std::to_string(ckpt.dim_m) + ",N=" + std::to_string(ckpt.dim_n) +
                      " vs dataset M=" + std::to_string(data.num_dx) + ",N=" +
                      std::to_string(data.num_px));
  }
  const Model model = Model::from_checkpoint(ckpt);
  const SplitSets splits =
      make_splits(data, cfg.get_string("split.protocol"), cfg.get_u64("split.seed"));

  std::vector<PredictionPoint> points = splits.test;
  const std::size_t cap = cfg.get_size("attribute.max_points");
  if (points.size() > cap) points.resize(cap);

  nlohmann::json reports = nlohmann::json::array();
  std::string csv = "patient,prefix_len,target,visit,dx_contribution,px_contribution\n";
  for (const auto& point : points) {
    const auto& record = data.records.at(point.patient);
    for (int target : record.visits[point.prefix_len].dx) {
      const AttributionReport report =
          feature_contribution(model, record, point.prefix_len, target);
      nlohmann::json entry;
      entry["patient"] = report.patient_id;
      entry["prefix_len"] = report.prefix_len;
      entry["target"] = report.target_code;
      entry["dx"] = nlohmann::json::array();
      entry["px"] = nlohmann::json::array();
      for (const auto& visit : report.visits) {
        entry["dx"].push_back(visit.dx);
        entry["px"].push_back(visit.px);
      }
      reports.push_back(std::move(entry));
      if (emit_csv) {
        for (std::size_t v = 0; v < report.visits.size(); ++v) {
          csv += report.patient_id + "," + std::to_string(report.prefix_len) + "," +
                 std::to_string(target) + "," + std::to_string(v + 1) + "," +
                 std::to_string(report.visits[v].dx) + "," +
                 std::to_string(report.visits[v].px) + "\n";
        }
      }
    }
  }
  const double share = attribution_summary(model, data.records, points);

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "attributions.json", reports.dump(2) + "\n");
  if (emit_csv) write_file(fs::path(out_dir) / "attributions.csv", csv);
  nlohmann::json summary;
  summary["dx_contribution_share"] = share;
  summary["points"] = points.size();
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  write_file(fs::path(out_dir) / "resolved.config", cfg.snapshot());
  std::cout << "dx contribution share: " << share << " over " << points.size() << " points\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HSIC-weighted stable sequence models for next-diagnosis prediction"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key = value config file")->expected(1);
  app.add_option("--set", overrides, "override a config key, e.g. --set train.epsilon=0.3");

  std::string out_dir = "out";
  std::string data_dir;
  std::string checkpoint_path;
  bool emit_csv = false;

  // gen
  auto* gen = app.add_subcommand("gen", "generate a two-environment synthetic cohort pair");
  std::int64_t gen_patients = -1;
  std::int64_t gen_seed = -1;
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--patients", gen_patients, "patients per cohort");
  gen->add_option("--seed", gen_seed, "generator seed");

  // train
  auto* train = app.add_subcommand("train", "train one model (base, che, or pw)");
  std::string train_method, train_model, split_protocol;
  std::int64_t train_seed = -1;
  train->add_option("--data", data_dir, "dataset directory from `gen`")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--method", train_method, "base|che|pw");
  train->add_option("--model", train_model, "lstm|reverse_attention|bi_attention");
  train->add_option("--split", split_protocol, "random|env");
  train->add_option("--seed", train_seed, "training seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint.json path")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "output directory")->required();
  eval_cmd->add_option("--split", split_protocol, "random|env");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "method x seed sweep with aggregate report");
  std::string sweep_methods;
  std::int64_t sweep_seeds = -1;
  std::int64_t sweep_jobs = -1;
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--out", out_dir, "output directory")->required();
  sweep->add_option("--methods", sweep_methods, "comma list, e.g. base,pw,che");
  sweep->add_option("--model", train_model, "encoder kind");
  sweep->add_option("--split", split_protocol, "random|env");
  sweep->add_option("--seeds", sweep_seeds, "number of seeds");
  sweep->add_option("--jobs", sweep_jobs, "concurrent runs");
  sweep->add_option("--seed", train_seed, "first training seed");

  // attribute
  auto* attribute = app.add_subcommand("attribute", "per-visit gradient contributions");
  attribute->add_option("--checkpoint", checkpoint_path, "checkpoint.json path")->required();
  attribute->add_option("--data", data_dir, "dataset directory")->required();
  attribute->add_option("--out", out_dir, "output directory")->required();
  attribute->add_option("--split", split_protocol, "random|env");
  attribute->add_flag("--csv", emit_csv, "also write attributions.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    if (gen_patients >= 0) cfg.set("gen.patients", std::to_string(gen_patients));
    if (gen_seed >= 0) cfg.set("gen.seed", std::to_string(gen_seed));
    if (!train_method.empty()) cfg.set("train.method", train_method);
    if (!train_model.empty()) cfg.set("train.model", train_model);
    if (!split_protocol.empty()) cfg.set("split.protocol", split_protocol);
    if (train_seed >= 0) cfg.set("train.seed", std::to_string(train_seed));
    if (!sweep_methods.empty()) cfg.set("sweep.methods", sweep_methods);
    if (sweep_seeds >= 0) cfg.set("sweep.seeds", std::to_string(sweep_seeds));
    if (sweep_jobs >= 0) cfg.set("sweep.jobs", std::to_string(sweep_jobs));

    if (gen->parsed()) return cmd_gen(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, data_dir, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint_path, data_dir, out_dir);
    if (sweep->parsed()) return cmd_sweep(cfg, data_dir, out_dir);
    if (attribute->parsed()) return cmd_attribute(cfg, checkpoint_path, data_dir, out_dir, emit_csv);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    logging::error(e.what());
    return 1;
  } catch (const std::exception& e) {
    logging::error(e.what());
    return 2;
  }
}
