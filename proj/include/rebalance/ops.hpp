// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_OPS_HPP_
#define REBALANCE_OPS_HPP_

#include <vector>

#include "rebalance/tensor.hpp"

namespace rebalance {

// All primitives are deterministic and record their backward pass on the
// tape when any input requires gradients. Gradients always accumulate.

// [m,k] x [k,n] -> [m,n]
TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// [m,k] x [n,k]^T -> [m,n]  (second operand used transposed)
TensorPtr matmul_nt(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// Elementwise sum of same-shape tensors.
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);

// [n,d] + [d] broadcast over rows.
TensorPtr add_bias(Tape& tape, const TensorPtr& x, const TensorPtr& b);

TensorPtr scale(Tape& tape, const TensorPtr& x, real c);

// tanh-approximation GELU, elementwise.
TensorPtr gelu(Tape& tape, const TensorPtr& x);

TensorPtr tanh_act(Tape& tape, const TensorPtr& x);

// Row-wise normalization over the last dimension, scaled/shifted by
// gamma/beta of width equal to the last extent.
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, real eps);

// Row gather: out[i,:] = table[ids[i],:]. Backward scatter-adds.
TensorPtr gather_rows(Tape& tape, const TensorPtr& table,
                      const std::vector<int64_t>& ids);

// Softmax over the last dimension of a [n,d] tensor (used standalone by the
// mix probe; attention uses its own fused path).
TensorPtr softmax_rows(Tape& tape, const TensorPtr& x);

// [m,n] -> [n,m]
TensorPtr transpose(Tape& tape, const TensorPtr& x);

// out = sum_l weights[l] * parts[l]; all parts same shape, weights [L].
TensorPtr weighted_sum(Tape& tape, const std::vector<TensorPtr>& parts,
                       const TensorPtr& weights);

// Mean negative log-softmax over the rows selected by `mask` (empty mask
// vector means all rows supervised). Numerically stable. Scalar output.
TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits,
                                const std::vector<int64_t>& targets,
                                const std::vector<bool>& mask = {});

// Fused multi-head scaled dot-product self-attention over a batch of
// sequences. q,k,v are [B*T, H] with H = heads*head_dim; attn_mask is B*T
// flags (true = attend). Padding keys get a -1e9 additive bias.
TensorPtr attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                    const TensorPtr& v, int64_t batch, int64_t seq_len,
                    int64_t heads, const std::vector<bool>& attn_mask);

}  // namespace rebalance

#endif  // REBALANCE_OPS_HPP_
