#include "che/encoders.hpp"

#include <cmath>

#include "che/error.hpp"

namespace che {

namespace {

constexpr double kProbClamp = 1e-12;

struct LstmCell {
  NodePtr wx;  // {4r, r}
  NodePtr wh;  // {4r, r}
  NodePtr b;   // {4r}
};

struct LstmState {
  NodePtr h;
  NodePtr c;
};

LstmState lstm_step(const LstmCell& cell, const NodePtr& x, const LstmState& prev,
                    std::size_t r) {
  auto z = add(add(matmul(cell.wx, x), matmul(cell.wh, prev.h)), cell.b);
  auto gate_i = sigmoid(slice(z, 0, r));
  auto gate_f = sigmoid(slice(z, r, 2 * r));
  auto gate_g = tanh(slice(z, 2 * r, 3 * r));
  auto gate_o = sigmoid(slice(z, 3 * r, 4 * r));
  auto c = add(mul(gate_f, prev.c), mul(gate_i, gate_g));
  auto h = mul(gate_o, tanh(c));
  return {h, c};
}

LstmState zero_state(std::size_t r) {
  return {constant(Tensor::zeros({r})), constant(Tensor::zeros({r}))};
}

std::string stream_prefix(Stream stream) {
  return stream == Stream::dx ? "enc.dx." : "enc.px.";
}

LstmCell cell_for(const Model& model, const std::string& prefix) {
  return {model.param(prefix + "wx"), model.param(prefix + "wh"), model.param(prefix + "b")};
}

NodePtr dot(const NodePtr& a, const NodePtr& b) { return sum(mul(a, b)); }

// Softmax over the stacked scalar energies; returns per-visit weight nodes.
std::vector<NodePtr> attention_weights(const std::vector<NodePtr>& energies,
                                       std::vector<double>* attention_out) {
  NodePtr stacked = energies[0];
  for (std::size_t t = 1; t < energies.size(); ++t) stacked = concat(stacked, energies[t]);
  auto weights = softmax_last(stacked);
  if (attention_out) *attention_out = weights->value.data();
  std::vector<NodePtr> out;
  out.reserve(energies.size());
  for (std::size_t t = 0; t < energies.size(); ++t) out.push_back(slice(weights, t, t + 1));
  return out;
}

NodePtr weighted_context(const std::vector<NodePtr>& weights, const std::vector<NodePtr>& items) {
  NodePtr context = scalar_mul(weights[0], items[0]);
  for (std::size_t t = 1; t < items.size(); ++t) {
    context = add(context, scalar_mul(weights[t], items[t]));
  }
  return context;
}

}  // namespace

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::lstm: return "lstm";
    case ModelKind::reverse_attention: return "reverse_attention";
    case ModelKind::bi_attention: return "bi_attention";
  }
  return "unknown";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "lstm") return ModelKind::lstm;
  if (name == "reverse_attention") return ModelKind::reverse_attention;
  if (name == "bi_attention") return ModelKind::bi_attention;
  throw ConfigError("unknown model kind: " + name);
}

Model::Model(ModelKind kind, std::size_t num_dx, std::size_t num_px, std::size_t embed_dim,
             std::uint64_t seed)
    : kind_(kind), num_dx_(num_dx), num_px_(num_px), embed_dim_(embed_dim), seed_(seed) {
  if (num_dx_ < 1 || num_px_ < 1) throw ConfigError("Model: vocabulary sizes must be >= 1");
  if (embed_dim_ < 2) throw ConfigError("Model: embedding dimension must be >= 2");

  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  const std::size_t r = embed_dim_;

  add_param("embed.dx", {num_dx_, r}, rng);
  add_param("embed.px", {num_px_, r}, rng);
  for (const char* stream : {"enc.dx.", "enc.px."}) {
    const std::string p(stream);
    switch (kind_) {
      case ModelKind::lstm:
      case ModelKind::reverse_attention:
        add_param(p + "wx", {4 * r, r}, rng);
        add_param(p + "wh", {4 * r, r}, rng);
        add_param(p + "b", {4 * r}, rng, /*zero_init=*/true);
        break;
      case ModelKind::bi_attention:
        add_param(p + "fwd.wx", {4 * r, r}, rng);
        add_param(p + "fwd.wh", {4 * r, r}, rng);
        add_param(p + "fwd.b", {4 * r}, rng, /*zero_init=*/true);
        add_param(p + "bwd.wx", {4 * r, r}, rng);
        add_param(p + "bwd.wh", {4 * r, r}, rng);
        add_param(p + "bwd.b", {4 * r}, rng, /*zero_init=*/true);
        break;
    }
    if (kind_ == ModelKind::reverse_attention) {
      add_param(p + "att_w", {r}, rng);
      add_param(p + "att_b", {1}, rng, /*zero_init=*/true);
    } else if (kind_ == ModelKind::bi_attention) {
      add_param(p + "att_wf", {r}, rng);
      add_param(p + "att_wb", {r}, rng);
      add_param(p + "att_b", {1}, rng, /*zero_init=*/true);
    }
  }
  add_param("prd.weight", {2 * r, num_dx_}, rng);
  add_param("prd.bias", {num_dx_}, rng, /*zero_init=*/true);
}

void Model::add_param(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                      bool zero_init) {
  Tensor t(std::move(shape));
  if (!zero_init) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim_));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  }
  params_.emplace(name, make_leaf(std::move(t), /*requires_grad=*/true));
}

const NodePtr& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("Model: unknown parameter " + name);
  return it->second;
}

void Model::zero_grad() {
  for (auto& [name, node] : params_) node->grad = Tensor();
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.model_kind = model_kind_name(kind_);
  ckpt.dim_m = num_dx_;
  ckpt.dim_n = num_px_;
  ckpt.dim_r = embed_dim_;
  ckpt.seed = seed_;
  for (const auto& [name, node] : params_) ckpt.params.emplace(name, node->value);
  return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  Model model(model_kind_from_name(ckpt.model_kind), ckpt.dim_m, ckpt.dim_n, ckpt.dim_r,
              ckpt.seed);
  model.load_params(ckpt);
  return model;
}

void Model::load_params(const Checkpoint& ckpt) {
  if (ckpt.params.size() != params_.size()) {
    throw IoError("checkpoint: parameter count mismatch: expected " +
                  std::to_string(params_.size()) + ", got " + std::to_string(ckpt.params.size()));
  }
  for (auto& [name, node] : params_) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw IoError("checkpoint: missing parameter " + name);
    if (it->second.shape() != node->value.shape()) {
      throw IoError("checkpoint: shape mismatch for " + name + ": expected " +
                    node->value.shape_string() + ", got " + it->second.shape_string());
    }
    node->value = it->second;
    node->grad = Tensor();
  }
}

NodePtr embed_visit(const NodePtr& embedding, const std::vector<int>& codes) {
  if (codes.empty()) throw InvalidRecordError("embed_visit: empty code set");
  std::vector<std::size_t> rows;
  rows.reserve(codes.size());
  for (int code : codes) {
    if (code < 0 || static_cast<std::size_t>(code) >= embedding->value.rows()) {
      throw InvalidRecordError("embed_visit: code " + std::to_string(code) +
                               " out of range for vocabulary of " +
                               std::to_string(embedding->value.rows()));
    }
    rows.push_back(static_cast<std::size_t>(code));
  }
  return gather_rows_mean(embedding, rows);
}

NodePtr apply_dropout(const NodePtr& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("apply_dropout: rate must be < 1");
  Tensor mask(x->value.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& v : mask.data()) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mul(x, constant(std::move(mask)));
}

NodePtr encode_prefix(const Model& model, Stream stream,
                      const std::vector<NodePtr>& visit_embeddings,
                      std::vector<double>* attention_out) {
  if (visit_embeddings.empty()) {
    throw InvalidRecordError("encode_prefix: prefix must contain at least one visit");
  }
  const std::size_t r = model.embed_dim();
  const std::size_t j = visit_embeddings.size();
  const std::string prefix = stream_prefix(stream);

  switch (model.kind()) {
    case ModelKind::lstm: {
      const LstmCell cell = cell_for(model, prefix);
      LstmState state = zero_state(r);
      for (const auto& x : visit_embeddings) state = lstm_step(cell, x, state, r);
      if (attention_out) attention_out->clear();
      return state.h;
    }
    case ModelKind::reverse_attention: {
      // Recurrence runs from the most recent visit backwards; one scalar
      // energy per visit drives attention over the visit embeddings.
      const LstmCell cell = cell_for(model, prefix);
      const auto att_w = model.param(prefix + "att_w");
      const auto att_b = model.param(prefix + "att_b");
      std::vector<NodePtr> energies(j);
      LstmState state = zero_state(r);
      for (std::size_t t = j; t-- > 0;) {
        state = lstm_step(cell, visit_embeddings[t], state, r);
        energies[t] = add(dot(att_w, state.h), att_b);
      }
      auto weights = attention_weights(energies, attention_out);
      return weighted_context(weights, visit_embeddings);
    }
    case ModelKind::bi_attention: {
      const LstmCell fwd = cell_for(model, prefix + "fwd.");
      const LstmCell bwd = cell_for(model, prefix + "bwd.");
      const auto att_wf = model.param(prefix + "att_wf");
      const auto att_wb = model.param(prefix + "att_wb");
      const auto att_b = model.param(prefix + "att_b");
      std::vector<NodePtr> h_fwd(j), h_bwd(j);
      LstmState state = zero_state(r);
      for (std::size_t t = 0; t < j; ++t) {
        state = lstm_step(fwd, visit_embeddings[t], state, r);
        h_fwd[t] = state.h;
      }
      state = zero_state(r);
      for (std::size_t t = j; t-- > 0;) {
        state = lstm_step(bwd, visit_embeddings[t], state, r);
        h_bwd[t] = state.h;
      }
      std::vector<NodePtr> energies(j);
      for (std::size_t t = 0; t < j; ++t) {
        energies[t] = add(add(dot(att_wf, h_fwd[t]), dot(att_wb, h_bwd[t])), att_b);
      }
      auto weights = attention_weights(energies, attention_out);
      return weighted_context(weights, visit_embeddings);
    }
  }
  throw ConfigError("encode_prefix: unhandled model kind");
}

PrefixEmbeddings encode_point(const Model& model, const PatientRecord& record,
                              std::size_t prefix_len, double dropout_rate, Rng* dropout_rng) {
  if (prefix_len < 1 || prefix_len >= record.num_visits()) {
    throw InvalidRecordError("encode_point: prefix length " + std::to_string(prefix_len) +
                             " invalid for patient with " + std::to_string(record.num_visits()) +
                             " visits");
  }
  if (dropout_rate > 0.0 && dropout_rng == nullptr) {
    throw ConfigError("encode_point: dropout requires an RNG");
  }
  PrefixEmbeddings out;
  out.dx_visits.reserve(prefix_len);
  out.px_visits.reserve(prefix_len);
  for (std::size_t v = 0; v < prefix_len; ++v) {
    auto dx = embed_visit(model.embedding(Stream::dx), record.visits[v].dx);
    auto px = embed_visit(model.embedding(Stream::px), record.visits[v].px);
    if (dropout_rate > 0.0) {
      dx = apply_dropout(dx, dropout_rate, *dropout_rng);
      px = apply_dropout(px, dropout_rate, *dropout_rng);
    }
    out.dx_visits.push_back(std::move(dx));
    out.px_visits.push_back(std::move(px));
  }
  out.e_d = encode_prefix(model, Stream::dx, out.dx_visits);
  out.e_p = encode_prefix(model, Stream::px, out.px_visits);
  return out;
}

NodePtr predict_logits(const Model& model, const NodePtr& e_d, const NodePtr& e_p) {
  const std::size_t r = model.embed_dim();
  if (e_d->value.numel() != r || e_p->value.numel() != r) {
    throw ShapeError("predict_logits: embeddings must be r-vectors, got " +
                     e_d->value.shape_string() + " and " + e_p->value.shape_string());
  }
  auto joint = concat(e_d, e_p);
  return add(matmul(transpose(model.param("prd.weight")), joint), model.param("prd.bias"));
}

NodePtr predict_next(const Model& model, const NodePtr& e_d, const NodePtr& e_p) {
  // Saturated logits would round the sigmoid to exactly 0 or 1 in double
  // precision; the clamp keeps probabilities strictly inside (0,1).
  return clamp(sigmoid(predict_logits(model, e_d, e_p)), kProbClamp, 1.0 - kProbClamp);
}

Tensor multi_hot(const std::vector<int>& codes, std::size_t num_codes) {
  Tensor y({num_codes});
  for (int code : codes) {
    if (code < 0 || static_cast<std::size_t>(code) >= num_codes) {
      throw InvalidRecordError("multi_hot: code " + std::to_string(code) + " out of range");
    }
    y[static_cast<std::size_t>(code)] = 1.0;
  }
  return y;
}

NodePtr prediction_loss(const NodePtr& probabilities, const Tensor& target_multi_hot) {
  if (!probabilities->value.same_shape(target_multi_hot)) {
    throw ShapeError("prediction_loss: shape mismatch " + probabilities->value.shape_string() +
                     " vs " + target_multi_hot.shape_string());
  }
  for (double v : target_multi_hot.data()) {
    if (v != 0.0 && v != 1.0) {
      throw InvalidRecordError("prediction_loss: target entries must be 0 or 1");
    }
  }
  auto y = constant(target_multi_hot);
  auto ones = constant(Tensor::full(target_multi_hot.shape(), 1.0));
  auto p = clamp(probabilities, kProbClamp, 1.0 - kProbClamp);
  auto positive = mul(y, che::log(p));
  auto negative = mul(sub(ones, y), che::log(sub(ones, p)));
  return scale(mean(add(positive, negative)), -1.0);
}

NodePtr prediction_loss(const NodePtr& probabilities, const std::vector<int>& target_codes,
                        std::size_t num_codes) {
  return prediction_loss(probabilities, multi_hot(target_codes, num_codes));
}

}  // namespace che
