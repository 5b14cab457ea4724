// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_ANALYSIS_HPP_
#define REBALANCE_ANALYSIS_HPP_

#include <string>
#include <tuple>
#include <vector>

#include "rebalance/model.hpp"
#include "rebalance/pretrain.hpp"
#include "rebalance/tokenizer.hpp"

namespace rebalance {

// Word-similarity triples: word1, word2, human score.
struct WordSimDataset {
  std::vector<std::tuple<std::string, std::string, double>> triples;
};

// Aligned sentence pairs for translation-accuracy analysis.
struct ParallelPairs {
  std::vector<std::pair<std::string, std::string>> pairs;
};

WordSimDataset load_wordsim(const std::string& path);
ParallelPairs load_parallel(const std::string& path);

// Spearman rank correlation; ties get average ranks. Needs >= 2 points.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

enum class EmbeddingSide { input, output };

struct WordSimResult {
  double correlation = 0;
  size_t used = 0;
  size_t skipped = 0;  // pairs dropped for containing an [UNK] piece
};

// Dot-product similarity from the chosen embedding matrix against gold
// scores. Words spanning several pieces use the piece average. A skip
// ratio above 20% aborts with StateError.
WordSimResult word_similarity(const Model& model, const Vocab& v,
                              const WordSimDataset& ds, EmbeddingSide side);

// Per-sentence vector stacks: result[i][l] is the layer-l vector (width H)
// for sentence i, averaged over tokens excluding [CLS]/[SEP].
std::vector<std::vector<std::vector<real>>> sentence_vectors(
    const Model& model, const Vocab& v,
    const std::vector<std::string>& sentences);

// Mean-offset nearest-neighbor accuracy for one layer's vectors. The
// offset is the mean of (target - source) over all pairs; a translated
// source counts as correct only when its own target wins the l2 nearest
// neighbor search outright.
double nn_translation(const std::vector<std::vector<real>>& source,
                      const std::vector<std::vector<real>>& target);

// Layer-weighted probe: softmax-normalized per-layer scalars feeding a
// 2-layer GELU classifier on the weighted activation sum.
struct MixProbe {
  TensorPtr layer_scores;  // [n_layers], pre-softmax
  TensorPtr w1, b1;        // [H, H/2], [H/2]
  TensorPtr w2, b2;        // [H/2, K], [K]

  std::vector<double> layer_weights() const;  // softmax(layer_scores)
};

struct MixProbeConfig {
  int64_t epochs = 30;
  int64_t batch_size = 16;
  double lr = 1e-2;
  uint64_t seed = 0;
  OptimizerConfig optimizer;
};

struct MixProbeResult {
  MixProbe probe;
  double dev_accuracy = 0;
};

// acts[i][l] is the layer-l vector for example i; all stacks must share
// layer count and width. Labels in [0, K). Throws ConfigError for fewer
// than two classes.
MixProbeResult mix_probe_train(
    const std::vector<std::vector<std::vector<real>>>& train_acts,
    const std::vector<int64_t>& train_labels,
    const std::vector<std::vector<std::vector<real>>>& dev_acts,
    const std::vector<int64_t>& dev_labels, const MixProbeConfig& cfg);

std::vector<int64_t> mix_probe_predict(
    const MixProbe& probe,
    const std::vector<std::vector<std::vector<real>>>& acts);

// Writes the chosen embedding matrix (vocabulary-order rows) as a
// single-tensor checkpoint file. The output side of a fine-tuning model
// does not exist; asking for it raises StateError.
void export_embeddings(const Model& model, EmbeddingSide side,
                       const std::string& path);

}  // namespace rebalance

#endif  // REBALANCE_ANALYSIS_HPP_
