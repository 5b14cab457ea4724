// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_BUDGET_HPP_
#define REBALANCE_BUDGET_HPP_

#include <string>
#include <vector>

#include "rebalance/model_config.hpp"

namespace rebalance {

struct ParamBudget {
  int64_t pretrain_count = 0;
  int64_t finetune_count = 0;
  int64_t embedding_params = 0;  // input-side embedding matrix V*E_in
  double embedding_fraction = 0.0;
};

// Closed-form parameter accounting matching the live model inventory
// exactly. Pre-training extras (pooler, output projection, MLM layernorm,
// output embedding, output bias) are excluded from the fine-tuning count.
ParamBudget count_params(const ModelConfig& c);

// Parameter count of one encoder layer:
// 4(H^2+H) + 2*H*ffn + ffn + H + 4H.
int64_t per_layer_params(const ModelConfig& c);

enum class FreeAxis { H, L, Ein, Eout };

struct SearchSpec {
  int64_t target_ft_count = 0;
  double tolerance = 0.02;  // relative
  std::vector<FreeAxis> free_axes;
  ModelConfig base;  // fixed fields; free axes are overwritten
  // Lattice bounds.
  int64_t max_hidden = 4096;
  int64_t max_layers = 64;
  int64_t max_embed = 4096;
};

// Enumerates the lattice over the free axes and returns every configuration
// whose fine-tuning count lands within tolerance of the target, sorted by
// |finetune - target| (ties: smaller L, then smaller H). H is enumerated in
// multiples of 64 with a fixed 64-wide head. Throws ConfigError when the
// result set is empty.
std::vector<ModelConfig> search_config(const SearchSpec& s);

}  // namespace rebalance

#endif  // REBALANCE_BUDGET_HPP_
