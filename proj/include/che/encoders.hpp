#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "che/checkpoint.hpp"
#include "che/rng.hpp"
#include "che/synth.hpp"
#include "che/tensor.hpp"

namespace che {

struct CodeVocab {
  std::size_t num_dx_codes = 0;
  std::size_t num_px_codes = 0;
  std::vector<std::string> dx_labels;
  std::vector<std::string> px_labels;
};

enum class ModelKind { lstm, reverse_attention, bi_attention };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

enum class Stream { dx, px };

// Two-stream sequence model: separate embedding matrix and encoder
// parameters per stream, shared sigmoid prediction head over the
// concatenated stream embeddings.
class Model {
 public:
  Model(ModelKind kind, std::size_t num_dx, std::size_t num_px, std::size_t embed_dim,
        std::uint64_t seed);

  static Model from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;
  void load_params(const Checkpoint& ckpt);

  ModelKind kind() const { return kind_; }
  std::size_t num_dx() const { return num_dx_; }
  std::size_t num_px() const { return num_px_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::uint64_t seed() const { return seed_; }

  std::map<std::string, NodePtr>& params() { return params_; }
  const std::map<std::string, NodePtr>& params() const { return params_; }
  const NodePtr& param(const std::string& name) const;
  void zero_grad();

  const NodePtr& embedding(Stream stream) const {
    return stream == Stream::dx ? param("embed.dx") : param("embed.px");
  }

 private:
  void add_param(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                 bool zero_init = false);

  ModelKind kind_;
  std::size_t num_dx_;
  std::size_t num_px_;
  std::size_t embed_dim_;
  std::uint64_t seed_;
  std::map<std::string, NodePtr> params_;
};

// Mean of the embedding rows selected by `codes`.
NodePtr embed_visit(const NodePtr& embedding, const std::vector<int>& codes);

// Inverted dropout on a node; identity when rate == 0.
NodePtr apply_dropout(const NodePtr& x, double rate, Rng& rng);

// Encode an ordered prefix of already-embedded visits into an r-vector.
// Only the given visits are read, so the encoding is causal by construction.
// When `attention_out` is non-null and the encoder is attention-based, the
// per-visit attention weights are written to it.
NodePtr encode_prefix(const Model& model, Stream stream,
                      const std::vector<NodePtr>& visit_embeddings,
                      std::vector<double>* attention_out = nullptr);

// Both stream embeddings for one prediction point, plus the per-visit input
// embeddings (kept for attribution). Dropout, when enabled, is applied to the
// visit embeddings of both streams.
struct PrefixEmbeddings {
  NodePtr e_d;
  NodePtr e_p;
  std::vector<NodePtr> dx_visits;
  std::vector<NodePtr> px_visits;
};

PrefixEmbeddings encode_point(const Model& model, const PatientRecord& record,
                              std::size_t prefix_len, double dropout_rate = 0.0,
                              Rng* dropout_rng = nullptr);

NodePtr predict_logits(const Model& model, const NodePtr& e_d, const NodePtr& e_p);

// Per-code probabilities: sigmoid(predictor . concat(e_d, e_p) + bias).
NodePtr predict_next(const Model& model, const NodePtr& e_d, const NodePtr& e_p);

// Mean over codes of binary cross-entropy with probabilities clamped to
// [1e-12, 1 - 1e-12]. Target entries must be exactly 0 or 1.
NodePtr prediction_loss(const NodePtr& probabilities, const Tensor& target_multi_hot);
NodePtr prediction_loss(const NodePtr& probabilities, const std::vector<int>& target_codes,
                        std::size_t num_codes);

Tensor multi_hot(const std::vector<int>& codes, std::size_t num_codes);

}  // namespace che
