// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_PRETRAIN_HPP_
#define REBALANCE_PRETRAIN_HPP_

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "rebalance/batch.hpp"
#include "rebalance/model.hpp"
#include "rebalance/random.hpp"
#include "rebalance/tokenizer.hpp"

namespace rebalance {

// Per-language sentence counts and smoothing exponent for the sampler.
struct SamplingConfig {
  std::map<std::string, int64_t> counts;
  double alpha = 0.5;
  uint64_t seed = 0;
};

// q_l = p_l^alpha / sum p^alpha over the empirical distribution p.
std::map<std::string, double> smooth_distribution(
    const std::map<std::string, int64_t>& counts, double alpha);

struct MaskingPolicy {
  double mask_prob = 0.15;
  double mask_token_frac = 0.8;
  double random_frac = 0.1;
  double keep_frac = 0.1;

  void validate() const;
};

// Tokenized corpora, one id sequence per sentence, keyed by language.
struct Corpora {
  std::map<std::string, std::vector<std::vector<int64_t>>> sentences;
};

// Reads <lang>.txt files (one sentence per line) from a directory and
// segments them with the vocabulary.
Corpora load_corpora(const std::string& dir, const Vocab& vocab);

// Per-language read cursors; sampling wraps around on exhaustion.
struct CorpusCursor {
  std::map<std::string, size_t> next;
};

// Draws one batch: each sequence's language is sampled i.i.d. from q, then
// consecutive sentences of that language are packed as
// [CLS] s1 [SEP] s2 [SEP] ... up to seq_len, padded with [PAD].
Batch sample_batch(const Corpora& corpora,
                   const std::map<std::string, double>& q, int64_t batch_size,
                   int64_t seq_len, Rng& rng, CorpusCursor& cursor);

// BERT-style corruption: each non-special token is selected independently
// with mask_prob and then replaced by [MASK] / a random id / kept, per the
// policy fractions. Originals are recorded for every selected position.
MaskedBatch apply_masking(const Batch& b, const MaskingPolicy& p, Rng& rng,
                          int64_t vocab_size);

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  int64_t warmup_steps = 0;
  int64_t train_steps = 0;  // 0 = constant lr after warmup
};

// AdamW state over a fixed parameter list. Weight decay is decoupled and
// skipped for biases and layernorm parameters (classified by name).
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, TensorPtr>> params,
        OptimizerConfig cfg);

  // Clips gradients to global clip_norm, applies one update, zeroes grads.
  // Returns the learning rate used.
  double step();

  int64_t step_count() const { return step_; }
  double lr_at(int64_t step) const;

 private:
  std::vector<std::pair<std::string, TensorPtr>> params_;
  std::vector<std::vector<real>> m_, v_;
  std::vector<bool> decay_;
  OptimizerConfig cfg_;
  int64_t step_ = 0;
};

struct TrainConfig {
  int64_t steps = 0;
  int64_t batch_size = 8;
  int64_t seq_len = 32;
  int64_t eval_interval = 200;
  int64_t eval_batches = 4;
  double alpha = 0.5;
  uint64_t seed = 0;
  MaskingPolicy masking;
  OptimizerConfig optimizer;
};

struct StepMetrics {
  int64_t step = 0;
  double loss = 0;
  double lr = 0;
  double mlm_acc = -1;  // -1 when not evaluated this step
};

// Deterministic single-threaded MLM training. Metrics are appended per
// step; evaluation runs every eval_interval steps on freshly sampled
// held-in batches. Diverging (NaN) loss aborts with NumericError after
// restoring the last evaluated parameters into `model`.
std::vector<StepMetrics> train(Model& model, const Corpora& corpora,
                               const TrainConfig& cfg,
                               std::ostream* log = nullptr);

// Fraction of masked positions whose argmax logit equals the original id.
double mlm_accuracy(const Model& model,
                    const std::vector<MaskedBatch>& batches);

}  // namespace rebalance

#endif  // REBALANCE_PRETRAIN_HPP_
