// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_CHECKPOINT_HPP_
#define REBALANCE_CHECKPOINT_HPP_

#include <string>

#include "rebalance/model.hpp"

namespace rebalance {

// Checkpoint file layout: a human-readable text manifest terminated by a
// "%%payload%%" line, followed by the raw tensor payload as little-endian
// IEEE-754 binary32 in manifest order. Offsets are relative to the payload
// start, contiguous and non-overlapping. Loading validates the manifest
// total against the closed-form parameter count for the embedded config.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Single-tensor variant used by embedding export.
void save_matrix(const TensorPtr& t, const std::string& name,
                 const std::string& path);
TensorPtr load_matrix(const std::string& path);

}  // namespace rebalance

#endif  // REBALANCE_CHECKPOINT_HPP_
