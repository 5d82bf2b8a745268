#include "che/optim.hpp"

#include <cmath>

#include "che/error.hpp"

namespace che {

void sgd_step(Tensor& param, const Tensor& grad, double learning_rate) {
  if (!param.same_shape(grad)) {
    throw ShapeError("sgd_step: param/grad shape mismatch " + param.shape_string() + " vs " +
                     grad.shape_string());
  }
  if (!grad.all_finite()) throw NumericError("sgd_step: non-finite gradient, step aborted");
  for (std::size_t i = 0; i < param.numel(); ++i) param[i] -= learning_rate * grad[i];
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double learning_rate,
               const AdamConfig& config) {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam_step: param/grad shape mismatch " + param.shape_string() + " vs " +
                     grad.shape_string());
  }
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient, step aborted");
  if (state.first_moment.empty()) {
    state.first_moment = Tensor::zeros(param.shape());
    state.second_moment = Tensor::zeros(param.shape());
  }
  state.step_count += 1;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g;
    state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g;
    const double m_hat = state.first_moment[i] / bias1;
    const double v_hat = state.second_moment[i] / bias2;
    param[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

void AdamOptimizer::step(std::map<std::string, NodePtr>& params) {
  for (auto& [name, node] : params) {
    if (!node->requires_grad) continue;
    if (node->grad.empty()) continue;  // parameter not touched by this graph
    adam_step(node->value, node->grad, states_[name], learning_rate_, config_);
  }
}

}  // namespace che
