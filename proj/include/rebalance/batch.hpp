// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_BATCH_HPP_
#define REBALANCE_BATCH_HPP_

#include <cstdint>
#include <vector>

namespace rebalance {

// A batch of B packed sequences of equal length T, row-major [B*T].
struct Batch {
  int64_t batch_size = 0;
  int64_t seq_len = 0;
  std::vector<int64_t> ids;        // B*T token ids
  std::vector<int64_t> type_ids;   // B*T segment ids
  std::vector<bool> attn_mask;     // true = real token, false = padding
  std::vector<bool> special_mask;  // true for [CLS]/[SEP]/[PAD]
};

// Batch after MLM corruption. `positions` are flat indices into ids;
// `originals` holds the clean token at each masked position.
struct MaskedBatch {
  Batch batch;
  std::vector<int64_t> positions;
  std::vector<int64_t> originals;
};

}  // namespace rebalance

#endif  // REBALANCE_BATCH_HPP_
