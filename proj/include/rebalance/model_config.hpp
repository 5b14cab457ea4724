// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_MODEL_CONFIG_HPP_
#define REBALANCE_MODEL_CONFIG_HPP_

#include <cstdint>

#include "rebalance/errors.hpp"

namespace rebalance {

// Architectural hyperparameters of an encoder with independently sized
// input and output embeddings.
struct ModelConfig {
  int64_t vocab_size = 0;      // V, includes special tokens
  int64_t input_dim = 0;       // E_in
  int64_t output_dim = 0;      // E_out
  int64_t hidden = 0;          // H
  int64_t layers = 0;          // L
  int64_t heads = 0;           // A
  int64_t head_dim = 0;        // defaults to H/A
  int64_t ffn_dim = 0;         // defaults to 4H
  int64_t max_positions = 512;
  int64_t type_vocab = 2;
  bool coupled = false;
  double layernorm_eps = 1e-12;

  // Fills defaulted fields and checks invariants. Throws ConfigError.
  void validate_and_fill() {
    if (head_dim == 0 && heads > 0) head_dim = hidden / heads;
    if (ffn_dim == 0) ffn_dim = 4 * hidden;
    auto positive = [](int64_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string("config: ") + name +
                                   " must be >= 1");
    };
    positive(vocab_size, "vocab_size");
    positive(input_dim, "input_dim");
    positive(output_dim, "output_dim");
    positive(hidden, "hidden");
    positive(layers, "layers");
    positive(heads, "heads");
    positive(head_dim, "head_dim");
    positive(ffn_dim, "ffn_dim");
    positive(max_positions, "max_positions");
    positive(type_vocab, "type_vocab");
    if (heads * head_dim != hidden) {
      throw ConfigError("config: heads*head_dim must equal hidden");
    }
    if (coupled && input_dim != output_dim) {
      throw ConfigError("config: coupled embeddings require input_dim == output_dim");
    }
    if (layernorm_eps <= 0) throw ConfigError("config: layernorm_eps must be > 0");
  }

  bool has_input_proj() const { return input_dim != hidden; }
  bool has_output_proj() const { return output_dim != hidden; }
};

}  // namespace rebalance

#endif  // REBALANCE_MODEL_CONFIG_HPP_
