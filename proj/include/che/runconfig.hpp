#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace che {

// Flat "key = value" configuration with dotted keys. The key set is fixed;
// unknown keys are rejected so typos fail loudly. Every run emits the
// resolved snapshot next to its outputs.
class RunConfig {
 public:
  RunConfig();  // all keys at their defaults

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& key_equals_value);  // "k=v"

  bool has(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;

  // Sorted "key = value" lines.
  std::string snapshot() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace che
