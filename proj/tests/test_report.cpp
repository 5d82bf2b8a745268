#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "che/error.hpp"
#include "che/report.hpp"
#include "che/runconfig.hpp"

using namespace che;

namespace {

RunResult make_run(const std::string& method, std::uint64_t seed, double base_value) {
  RunResult run;
  run.method = method;
  run.seed = seed;
  run.test_metrics.ndcg10 = base_value;
  run.test_metrics.ndcg20 = base_value + 0.01;
  run.test_metrics.acc10 = base_value - 0.02;
  run.test_metrics.acc20 = base_value + 0.02;
  return run;
}

}  // namespace

TEST_CASE("improv formatting matches the published 4.079% example") {
  CHECK(improv_percent(0.2648, 0.2756) == "4.079%");
  CHECK(format_sig4(0.2648) == "0.2648");
  CHECK(format_sig4(0.63092975) == "0.6309");
  CHECK_THROWS_AS(improv_percent(0.0, 0.5), ConfigError);
}

TEST_CASE("aggregate mean and std over seeds") {
  MethodAggregate agg;
  agg.method = "base";
  agg.runs = {make_run("base", 1, 0.30), make_run("base", 2, 0.34)};
  const auto mean = agg.mean();
  CHECK(mean.ndcg10 == doctest::Approx(0.32));
  CHECK(mean.average() == doctest::Approx((0.32 + 0.33 + 0.30 + 0.34) / 4.0));
  const auto sd = agg.stddev();
  CHECK(sd.ndcg10 == doctest::Approx(std::sqrt(2.0 * 0.02 * 0.02 / 1.0)).epsilon(1e-9));
  CHECK(agg.values_of("ndcg@10") == std::vector<double>{0.30, 0.34});

  MethodAggregate single;
  single.method = "x";
  single.runs = {make_run("x", 1, 0.2)};
  CHECK_THROWS_AS(single.stddev(), ConfigError);
}

TEST_CASE("sweep report layout has approach, improv, and p-value rows") {
  SweepReport report;
  MethodAggregate base;
  base.method = "base";
  base.runs = {make_run("base", 1, 0.2648), make_run("base", 2, 0.2648)};
  MethodAggregate che_agg;
  che_agg.method = "che";
  che_agg.runs = {make_run("che", 1, 0.2756), make_run("che", 2, 0.2756)};
  report.methods = {base, che_agg};

  const std::string csv = sweep_report_csv(report);
  CHECK(csv.find("approach,ndcg@10,ndcg@20,acc@10,acc@20,average") == 0);
  CHECK(csv.find("\nbase,0.2648,") != std::string::npos);
  CHECK(csv.find("\nche,0.2756,") != std::string::npos);
  CHECK(csv.find("improv(che/base),4.079%") != std::string::npos);
  CHECK(csv.find("p(base vs che)") != std::string::npos);

  const std::string json = sweep_report_json(report);
  CHECK(json.find("\"improv_vs_base\"") != std::string::npos);
  CHECK(json.find("\"welch_t_tests\"") != std::string::npos);
  CHECK(json.find("\"std\"") != std::string::npos);
}

TEST_CASE("single-seed reports omit significance fields") {
  SweepReport report;
  MethodAggregate base;
  base.method = "base";
  base.runs = {make_run("base", 1, 0.30)};
  MethodAggregate che_agg;
  che_agg.method = "che";
  che_agg.runs = {make_run("che", 1, 0.31)};
  report.methods = {base, che_agg};
  report.warnings.push_back("single seed: std and t-test fields omitted");

  const std::string csv = sweep_report_csv(report);
  CHECK(csv.find("p(") == std::string::npos);
  CHECK(csv.find("improv(che/base)") != std::string::npos);

  const std::string json = sweep_report_json(report);
  CHECK(json.find("welch_t_tests") == std::string::npos);
  CHECK(json.find("single seed") != std::string::npos);
}

TEST_CASE("run config rejects unknown keys and bad values") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("nonsense.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(cfg.get_string("nonsense.key"), ConfigError);

  cfg.set("train.epsilon", "0.3");
  CHECK(cfg.get_double("train.epsilon") == 0.3);
  cfg.apply_override("train.batch_size=64");
  CHECK(cfg.get_size("train.batch_size") == 64);

  cfg.set("train.epsilon", "not_a_number");
  CHECK_THROWS_AS(cfg.get_double("train.epsilon"), ConfigError);
  cfg.set("train.batch_size", "-3");
  CHECK_THROWS_AS(cfg.get_size("train.batch_size"), ConfigError);
}

TEST_CASE("run config file loading and snapshot round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "che_cfg_test";
  fs::create_directories(dir);
  const auto path = (dir / "run.config").string();
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "\n";
    out << "train.epsilon = 3\n";
    out << "gen.patients=250\n";
    out << "  train.model =  bi_attention \n";
  }
  RunConfig cfg;
  cfg.load_file(path);
  CHECK(cfg.get_double("train.epsilon") == 3.0);
  CHECK(cfg.get_size("gen.patients") == 250);
  CHECK(cfg.get_string("train.model") == "bi_attention");

  // Snapshot reparses to an identical configuration.
  const auto snap_path = (dir / "snapshot.config").string();
  {
    std::ofstream out(snap_path);
    out << cfg.snapshot();
  }
  RunConfig reloaded;
  reloaded.load_file(snap_path);
  CHECK(reloaded.entries() == cfg.entries());

  {
    std::ofstream out(path, std::ios::trunc);
    out << "keywithoutvalue\n";
  }
  RunConfig bad;
  CHECK_THROWS_AS(bad.load_file(path), ConfigError);
  CHECK_THROWS_AS(bad.load_file((dir / "missing.config").string()), IoError);
  fs::remove_all(dir);
}
