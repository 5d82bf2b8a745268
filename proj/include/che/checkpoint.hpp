#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "che/tensor.hpp"

namespace che {

// Model snapshot. Serialized as canonical JSON: keys sorted, compact
// separators, floats printed with 17 significant digits so that
// save -> load -> save is byte-identical.
struct Checkpoint {
  int format_version = 1;
  std::string model_kind;
  std::size_t dim_m = 0;
  std::size_t dim_n = 0;
  std::size_t dim_r = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> params;

  bool operator==(const Checkpoint& other) const;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace che
