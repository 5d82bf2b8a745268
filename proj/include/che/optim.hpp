#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "che/tensor.hpp"

namespace che {

// param <- param - lr * grad. Rejects non-finite gradients without mutating.
void sgd_step(Tensor& param, const Tensor& grad, double learning_rate);

struct AdamState {
  Tensor first_moment;
  Tensor second_moment;
  std::int64_t step_count = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double learning_rate,
               const AdamConfig& config = {});

// Adam over a named parameter set; state keyed by parameter name.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate, AdamConfig config = {})
      : learning_rate_(learning_rate), config_(config) {}

  void step(std::map<std::string, NodePtr>& params);

 private:
  double learning_rate_;
  AdamConfig config_;
  std::map<std::string, AdamState> states_;
};

}  // namespace che
