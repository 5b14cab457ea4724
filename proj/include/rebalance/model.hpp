// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_MODEL_HPP_
#define REBALANCE_MODEL_HPP_

#include <string>
#include <unordered_map>
#include <vector>

#include "rebalance/batch.hpp"
#include "rebalance/model_config.hpp"
#include "rebalance/ops.hpp"
#include "rebalance/tensor.hpp"

namespace rebalance {

// Hidden states h^0..h^L, each [tokens x H]; h^0 is the post-embedding state.
struct LayerActivations {
  std::vector<TensorPtr> layers;
};

// Transformer encoder with independently sized input/output embeddings.
// Parameters live in a name-ordered list; the order defines the checkpoint
// manifest. When coupled, the output logits reuse the input embedding
// storage and no output_embedding tensor exists.
class Model {
 public:
  // Initializes parameters from a truncated normal (std 0.02), biases zero,
  // layernorm gamma one. Deterministic under seed.
  static Model build(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool has_output_side() const { return has_output_side_; }

  const std::vector<std::pair<std::string, TensorPtr>>& params() const {
    return params_;
  }
  TensorPtr param(const std::string& name) const;
  bool has_param(const std::string& name) const {
    return lookup_.count(name) > 0;
  }
  int64_t param_count() const;

  // Trainable parameter list (all stored tensors).
  std::vector<TensorPtr> tensors() const;

  // Full encoder pass; returns all L+1 hidden states.
  LayerActivations encode(Tape& tape, const Batch& batch) const;

  // MLM logits [masked_positions x V] for the corrupted batch.
  TensorPtr forward_mlm(Tape& tape, const MaskedBatch& batch) const;

  // Scalar MLM loss over the masked positions.
  TensorPtr mlm_loss(Tape& tape, const MaskedBatch& batch) const;

  // New model keeping the first `keep` encoder layers; embedding side and
  // (when keep_output_side) the MLM output side are retained. Tensors are
  // deep-copied.
  Model truncate_layers(int64_t keep, bool keep_output_side = true) const;

  // Fine-tuning form: drops pooler, output projection, MLM layernorm,
  // output embedding and output bias. Idempotent.
  Model to_finetune() const;

  // Deep copy.
  Model clone() const;

  // Used by checkpoint loading; params must exactly cover the expected
  // inventory for the config.
  static Model from_params(
      const ModelConfig& config,
      std::vector<std::pair<std::string, TensorPtr>> params);

  // Expected manifest (name, shape) order for a config.
  static std::vector<std::pair<std::string, std::vector<int64_t>>>
  expected_inventory(const ModelConfig& config, bool with_output_side);

 private:
  Model() = default;
  void add_param(const std::string& name, TensorPtr t);
  void index_params();

  ModelConfig config_;
  bool has_output_side_ = true;
  std::vector<std::pair<std::string, TensorPtr>> params_;
  std::unordered_map<std::string, size_t> lookup_;
};

}  // namespace rebalance

#endif  // REBALANCE_MODEL_HPP_
