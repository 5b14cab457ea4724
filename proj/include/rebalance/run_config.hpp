// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_RUN_CONFIG_HPP_
#define REBALANCE_RUN_CONFIG_HPP_

#include <string>

#include "rebalance/model_config.hpp"
#include "rebalance/pretrain.hpp"

namespace rebalance {

// Workflow configuration parsed from a sectioned key = value file:
//
//   [model]
//   vocab_size = 505
//   ...
//   [data]
//   corpus_dir = corpus/
//   vocab = vocab.tsv
//   alpha = 0.5
//   seq_len = 32
//   [train]
//   steps = 2000
//   lr = 1e-3
//   ...
//
// Unknown sections or keys are rejected. The REBALANCE_SEED environment
// variable, when set, overrides the configured seed.
struct RunConfig {
  ModelConfig model;
  std::string corpus_dir;
  std::string vocab_path;
  TrainConfig train;
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text,
                                const std::string& origin = "<string>");

// Applies the REBALANCE_SEED override if the variable is set.
uint64_t effective_seed(uint64_t configured);

}  // namespace rebalance

#endif  // REBALANCE_RUN_CONFIG_HPP_
