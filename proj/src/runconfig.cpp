#include "che/runconfig.hpp"

#include <charconv>
#include <fstream>

#include "che/error.hpp"

namespace che {

namespace {

std::string trim(const std::string& s) {
  std::size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  std::size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"gen.patients", "500"},
      {"gen.dx_codes", "100"},
      {"gen.px_codes", "40"},
      {"gen.states", "12"},
      {"gen.mean_visits", "4.0"},
      {"gen.mean_codes", "5.0"},
      {"gen.rho_train", "0.95"},
      {"gen.rho_test", "0.2"},
      {"gen.effect_scale", "0"},
      {"gen.train_env", "medicare"},
      {"gen.test_env", "private"},
      {"gen.seed", "13"},
      {"split.protocol", "env"},
      {"split.seed", "7"},
      {"train.method", "base"},
      {"train.model", "lstm"},
      {"train.epsilon", "1.0"},
      {"train.model_lr", "0.003"},
      {"train.weight_lr", "5.0"},
      {"train.batch_size", "32"},
      {"train.max_epochs", "60"},
      {"train.patience", "20"},
      {"train.embed_dim", "16"},
      {"train.dropout", "0.1"},
      {"train.seed", "1"},
      {"train.sigma", "0"},  // 0 selects the median heuristic
      {"train.pw_multiplier", "10"},
      {"sweep.methods", "base,che"},
      {"sweep.seeds", "5"},
      {"sweep.jobs", "1"},
      {"eval.role", "test"},
      {"attribute.max_points", "200"},
  };
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_number) + " has no '=': " +
                        stripped);
    }
    set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second = value;
}

void RunConfig::apply_override(const std::string& key_equals_value) {
  const std::size_t eq = key_equals_value.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("config: override must be key=value, got '" + key_equals_value + "'");
  }
  set(trim(key_equals_value.substr(0, eq)), trim(key_equals_value.substr(eq + 1)));
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

const std::string& RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& raw = get_string(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not a number: '" + raw + "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& raw = get_string(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || ptr != raw.data() + raw.size()) {
    throw ConfigError("config: key '" + key + "' is not an unsigned integer: '" + raw + "'");
  }
  return v;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

std::string RunConfig::snapshot() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key + " = " + value + "\n";
  }
  return out;
}

}  // namespace che
