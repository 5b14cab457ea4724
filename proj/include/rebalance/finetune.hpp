// SPDX-License-Identifier: Apache-2.0
#ifndef REBALANCE_FINETUNE_HPP_
#define REBALANCE_FINETUNE_HPP_

#include <string>
#include <vector>

#include "rebalance/model.hpp"
#include "rebalance/pretrain.hpp"
#include "rebalance/tokenizer.hpp"

namespace rebalance {

enum class TaskKind { classification, tagging, span };

// One encoded supervised example. Which fields are meaningful depends on
// the task kind.
struct TaskExample {
  Encoding encoding;
  int64_t label = -1;               // classification
  std::vector<int64_t> tags;        // tagging: per token, -1 = unlabeled
  int64_t span_start = -1;          // span: token indices into encoding.ids
  int64_t span_end = -1;
};

struct TaskDataset {
  TaskKind kind = TaskKind::classification;
  std::vector<TaskExample> examples;
  std::vector<std::string> label_names;  // class or tag names
};

// Task file loaders (formats: classification "label\ttextA[\ttextB]";
// tagging "token tag" lines with blank-line sentence breaks; span
// "question\tpassage\tchar_start\tchar_end").
TaskDataset load_classification(const std::string& path, const Vocab& v,
                                int64_t max_len);
TaskDataset load_tagging(const std::string& path, const Vocab& v,
                         int64_t max_len);
TaskDataset load_span(const std::string& path, const Vocab& v,
                      int64_t max_len);

// Fine-tuning model: a base encoder without output side plus a freshly
// initialized task head. Classification re-adds a tanh pooler over the
// [CLS] state.
class TaskModel {
 public:
  // Base must be in fine-tuning form (no output side). Throws StateError
  // otherwise; ConfigError for invalid K.
  static TaskModel attach_head(const Model& base, TaskKind kind,
                               int64_t num_labels, uint64_t seed);

  const Model& base() const { return base_; }
  TaskKind kind() const { return kind_; }
  int64_t num_labels() const { return num_labels_; }

  // Head parameters only (H*K+K linear head; span: 2H+2). The pooler for
  // classification is tracked separately.
  int64_t head_param_count() const;
  int64_t pooler_param_count() const;

  // All trainable (name, tensor) pairs: base + pooler + head.
  std::vector<std::pair<std::string, TensorPtr>> trainable() const;

  // Scalar loss over a mini-batch of examples.
  TensorPtr loss(Tape& tape, const std::vector<const TaskExample*>& batch) const;

  // Argmax predictions.
  int64_t predict_class(const TaskExample& ex) const;
  std::vector<int64_t> predict_tags(const TaskExample& ex) const;
  std::pair<int64_t, int64_t> predict_span(const TaskExample& ex) const;

 private:
  explicit TaskModel(Model base) : base_(std::move(base)) {}

  Model base_;
  TaskKind kind_ = TaskKind::classification;
  int64_t num_labels_ = 0;
  TensorPtr pooler_weight_, pooler_bias_;  // classification only
  TensorPtr head_weight_, head_bias_;
};

struct FinetuneConfig {
  double lr = 2e-5;
  int64_t batch_size = 32;
  int64_t epochs = 3;
  uint64_t seed = 0;
  OptimizerConfig optimizer;  // lr is overwritten from `lr`
};

// AdamW over all parameters, examples shuffled per epoch, deterministic
// under seed. Throws NumericError on divergence.
void finetune(TaskModel& model, const TaskDataset& train,
              const FinetuneConfig& cfg);

struct Metrics {
  double accuracy = -1;  // percent
  double f1 = -1;        // percent, entity-level for tagging
  double em = -1;        // percent, span tasks
  double span_f1 = -1;   // percent, token-overlap F1
  double primary() const;
};

Metrics evaluate(const TaskModel& model, const TaskDataset& eval);

struct SweepResult {
  double best_lr = 0;
  double best_metric = -1;
  std::vector<std::pair<double, double>> all;  // (lr, dev metric)
};

// Trains one model per candidate lr from the same base and returns the
// best-dev configuration.
SweepResult sweep_lr(const Model& base, TaskKind kind, int64_t num_labels,
                     const TaskDataset& train, const TaskDataset& dev,
                     const std::vector<double>& lrs, FinetuneConfig cfg);

// Entity-level F1 over BIO tag sequences (shared with evaluate; exposed for
// tests). Stray I- tags are repaired to B-.
double bio_entity_f1(const std::vector<std::vector<std::string>>& gold,
                     const std::vector<std::vector<std::string>>& pred);

}  // namespace rebalance

#endif  // REBALANCE_FINETUNE_HPP_
