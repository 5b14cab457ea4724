// SPDX-License-Identifier: Apache-2.0
#include "rebalance/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

namespace rebalance {

namespace {

Batch batch_from_encoding(const Encoding& e) {
  Batch b;
  b.batch_size = 1;
  b.seq_len = int64_t(e.ids.size());
  b.ids = e.ids;
  b.type_ids = e.type_ids;
  b.attn_mask.assign(e.ids.size(), true);
  b.special_mask.assign(e.special_mask.begin(), e.special_mask.end());
  return b;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, '\t')) out.push_back(cur);
  return out;
}

}  // namespace

TaskDataset load_classification(const std::string& path, const Vocab& v,
                                int64_t max_len) {
  std::ifstream in(path);
  if (!in) throw IoError("task: cannot open " + path);
  std::vector<std::tuple<std::string, std::string, std::optional<std::string>>>
      raw;
  std::set<std::string> labels;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto parts = split_tabs(line);
    if (parts.size() < 2 || parts.size() > 3) {
      throw ParseError("task: expected label\\ttextA[\\ttextB] at line " +
                       std::to_string(lineno));
    }
    labels.insert(parts[0]);
    raw.emplace_back(parts[0], parts[1],
                     parts.size() == 3 ? std::optional<std::string>(parts[2])
                                       : std::nullopt);
  }
  TaskDataset ds;
  ds.kind = TaskKind::classification;
  ds.label_names.assign(labels.begin(), labels.end());
  for (const auto& [label, a, b] : raw) {
    TaskExample ex;
    ex.encoding = encode_pair(a, b, v, max_len);
    ex.label = int64_t(std::find(ds.label_names.begin(), ds.label_names.end(),
                                 label) -
                       ds.label_names.begin());
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset load_tagging(const std::string& path, const Vocab& v,
                         int64_t max_len) {
  std::ifstream in(path);
  if (!in) throw IoError("task: cannot open " + path);
  std::vector<std::vector<std::pair<std::string, std::string>>> sents(1);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      if (!sents.back().empty()) sents.emplace_back();
      continue;
    }
    const size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
      throw ParseError("task: expected \"token tag\" at line " +
                       std::to_string(lineno));
    }
    sents.back().emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  if (sents.back().empty()) sents.pop_back();

  std::set<std::string> tagset;
  for (const auto& s : sents)
    for (const auto& [tok, tag] : s) tagset.insert(tag);

  TaskDataset ds;
  ds.kind = TaskKind::tagging;
  ds.label_names.assign(tagset.begin(), tagset.end());
  auto tag_id = [&](const std::string& t) {
    return int64_t(std::find(ds.label_names.begin(), ds.label_names.end(), t) -
                   ds.label_names.begin());
  };
  for (const auto& s : sents) {
    TaskExample ex;
    auto push = [&](int64_t id, int64_t tag, bool special) {
      ex.encoding.ids.push_back(id);
      ex.encoding.type_ids.push_back(0);
      ex.encoding.special_mask.push_back(special);
      ex.tags.push_back(tag);
    };
    push(kClsId, -1, true);
    for (const auto& [tok, tag] : s) {
      const auto pieces = segment(tok, v);
      bool first = true;
      for (int64_t id : pieces) {
        if (int64_t(ex.encoding.ids.size()) >= max_len - 1) break;
        push(id, first ? tag_id(tag) : -1, false);
        first = false;
      }
    }
    push(kSepId, -1, true);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskDataset load_span(const std::string& path, const Vocab& v,
                      int64_t max_len) {
  std::ifstream in(path);
  if (!in) throw IoError("task: cannot open " + path);
  TaskDataset ds;
  ds.kind = TaskKind::span;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto parts = split_tabs(line);
    if (parts.size() != 4) {
      throw ParseError(
          "task: expected question\\tpassage\\tchar_start\\tchar_end at line " +
          std::to_string(lineno));
    }
    const std::string& question = parts[0];
    const std::string& passage = parts[1];
    const int64_t cs = std::stoll(parts[2]);
    const int64_t ce = std::stoll(parts[3]);
    if (cs < 0 || ce <= cs || ce > int64_t(passage.size())) {
      throw ParseError("task: invalid answer span at line " +
                       std::to_string(lineno));
    }
    std::vector<int64_t> q_ids = segment(question, v);
    std::vector<TokenSpan> p_spans = segment_with_spans(passage, v);
    // Trim the longer segment first, as in encode_pair.
    std::vector<int64_t> p_ids;
    for (const auto& s : p_spans) p_ids.push_back(s.id);
    while (int64_t(q_ids.size() + p_ids.size()) + 3 > max_len) {
      if (q_ids.size() >= p_ids.size() && !q_ids.empty()) q_ids.pop_back();
      else if (!p_ids.empty()) p_ids.pop_back();
      else break;
    }
    // Map the character span onto passage tokens.
    int64_t tok_start = -1, tok_end = -1;
    for (size_t i = 0; i < p_ids.size(); ++i) {
      const auto& s = p_spans[i];
      if (tok_start < 0 && int64_t(s.byte_end) > cs) tok_start = int64_t(i);
      if (int64_t(s.byte_begin) < ce) tok_end = int64_t(i);
    }
    if (tok_start < 0 || tok_end < tok_start) continue;  // answer truncated away

    TaskExample ex;
    auto push = [&](int64_t id, int64_t type, bool special) {
      ex.encoding.ids.push_back(id);
      ex.encoding.type_ids.push_back(type);
      ex.encoding.special_mask.push_back(special);
    };
    push(kClsId, 0, true);
    for (int64_t id : q_ids) push(id, 0, false);
    push(kSepId, 0, true);
    const int64_t passage_base = int64_t(ex.encoding.ids.size());
    for (int64_t id : p_ids) push(id, 1, false);
    push(kSepId, 1, true);
    ex.span_start = passage_base + tok_start;
    ex.span_end = passage_base + tok_end;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

TaskModel TaskModel::attach_head(const Model& base, TaskKind kind,
                                 int64_t num_labels, uint64_t seed) {
  if (base.has_output_side()) {
    throw StateError("attach_head: model still carries the output side; "
                     "convert with to_finetune first");
  }
  if (kind == TaskKind::span) {
    num_labels = 2;
  } else if (num_labels < 2) {
    throw ConfigError("attach_head: need at least 2 labels");
  }
  TaskModel tm(base.clone());
  tm.kind_ = kind;
  tm.num_labels_ = num_labels;
  const int64_t h = base.config().hidden;
  Rng rng(seed);
  auto init = [&](std::vector<int64_t> shape) {
    auto t = make_tensor(std::move(shape), true);
    for (auto& x : t->data) x = real(rng.truncated_normal(0.02));
    return t;
  };
  if (kind == TaskKind::classification) {
    tm.pooler_weight_ = init({h, h});
    tm.pooler_bias_ = make_tensor({h}, true);
  }
  tm.head_weight_ = init({h, num_labels});
  tm.head_bias_ = make_tensor({num_labels}, true);
  return tm;
}

int64_t TaskModel::head_param_count() const {
  return head_weight_->size() + head_bias_->size();
}

int64_t TaskModel::pooler_param_count() const {
  if (!pooler_weight_) return 0;
  return pooler_weight_->size() + pooler_bias_->size();
}

std::vector<std::pair<std::string, TensorPtr>> TaskModel::trainable() const {
  auto out = base_.params();
  if (pooler_weight_) {
    out.emplace_back("task_pooler_weight", pooler_weight_);
    out.emplace_back("task_pooler_bias", pooler_bias_);
  }
  out.emplace_back("task_head_weight", head_weight_);
  out.emplace_back("task_head_bias", head_bias_);
  return out;
}

namespace {

std::vector<int64_t> labeled_positions(const TaskExample& ex) {
  std::vector<int64_t> pos;
  for (size_t i = 0; i < ex.tags.size(); ++i)
    if (ex.tags[i] >= 0) pos.push_back(int64_t(i));
  return pos;
}

std::vector<int64_t> passage_positions(const TaskExample& ex) {
  std::vector<int64_t> pos;
  for (size_t i = 0; i < ex.encoding.ids.size(); ++i)
    if (ex.encoding.type_ids[i] == 1 && !ex.encoding.special_mask[i])
      pos.push_back(int64_t(i));
  return pos;
}

}  // namespace

TensorPtr TaskModel::loss(Tape& tape,
                          const std::vector<const TaskExample*>& batch) const {
  if (batch.empty()) throw StateError("loss: empty batch");
  TensorPtr total;
  for (const TaskExample* ex : batch) {
    Batch b = batch_from_encoding(ex->encoding);
    LayerActivations acts = base_.encode(tape, b);
    TensorPtr hl = acts.layers.back();
    TensorPtr ex_loss;
    if (kind_ == TaskKind::classification) {
      TensorPtr cls = gather_rows(tape, hl, {0});
      TensorPtr pooled = tanh_act(
          tape, add_bias(tape, matmul(tape, cls, pooler_weight_), pooler_bias_));
      TensorPtr logits =
          add_bias(tape, matmul(tape, pooled, head_weight_), head_bias_);
      ex_loss = softmax_cross_entropy(tape, logits, {ex->label});
    } else if (kind_ == TaskKind::tagging) {
      const auto pos = labeled_positions(*ex);
      if (pos.empty()) continue;
      std::vector<int64_t> targets;
      for (int64_t p : pos) targets.push_back(ex->tags[p]);
      TensorPtr h = gather_rows(tape, hl, pos);
      TensorPtr logits =
          add_bias(tape, matmul(tape, h, head_weight_), head_bias_);
      ex_loss = softmax_cross_entropy(tape, logits, targets);
    } else {
      const auto pos = passage_positions(*ex);
      TensorPtr h = gather_rows(tape, hl, pos);
      TensorPtr logits =
          add_bias(tape, matmul(tape, h, head_weight_), head_bias_);
      // Rows become (start, end) logit vectors over passage positions.
      TensorPtr se = transpose(tape, logits);
      const auto it_s = std::find(pos.begin(), pos.end(), ex->span_start);
      const auto it_e = std::find(pos.begin(), pos.end(), ex->span_end);
      if (it_s == pos.end() || it_e == pos.end()) {
        throw StateError("loss: span outside passage tokens");
      }
      ex_loss = softmax_cross_entropy(
          tape, se,
          {int64_t(it_s - pos.begin()), int64_t(it_e - pos.begin())});
    }
    total = total ? add(tape, total, ex_loss) : ex_loss;
  }
  if (!total) throw StateError("loss: no supervised examples in batch");
  return scale(tape, total, real(1.0 / double(batch.size())));
}

int64_t TaskModel::predict_class(const TaskExample& ex) const {
  Tape tape;
  Batch b = batch_from_encoding(ex.encoding);
  LayerActivations acts = base_.encode(tape, b);
  TensorPtr cls = gather_rows(tape, acts.layers.back(), {0});
  TensorPtr pooled = tanh_act(
      tape, add_bias(tape, matmul(tape, cls, pooler_weight_), pooler_bias_));
  TensorPtr logits =
      add_bias(tape, matmul(tape, pooled, head_weight_), head_bias_);
  int64_t arg = 0;
  for (int64_t j = 1; j < num_labels_; ++j)
    if (logits->data[j] > logits->data[arg]) arg = j;
  return arg;
}

std::vector<int64_t> TaskModel::predict_tags(const TaskExample& ex) const {
  Tape tape;
  Batch b = batch_from_encoding(ex.encoding);
  LayerActivations acts = base_.encode(tape, b);
  TensorPtr hl = acts.layers.back();
  const auto pos = labeled_positions(ex);
  TensorPtr h = gather_rows(tape, hl, pos);
  TensorPtr logits = add_bias(tape, matmul(tape, h, head_weight_), head_bias_);
  std::vector<int64_t> out;
  for (size_t i = 0; i < pos.size(); ++i) {
    const real* row = logits->data.data() + int64_t(i) * num_labels_;
    int64_t arg = 0;
    for (int64_t j = 1; j < num_labels_; ++j)
      if (row[j] > row[arg]) arg = j;
    out.push_back(arg);
  }
  return out;
}

std::pair<int64_t, int64_t> TaskModel::predict_span(
    const TaskExample& ex) const {
  Tape tape;
  Batch b = batch_from_encoding(ex.encoding);
  LayerActivations acts = base_.encode(tape, b);
  const auto pos = passage_positions(ex);
  TensorPtr h = gather_rows(tape, acts.layers.back(), pos);
  TensorPtr logits = add_bias(tape, matmul(tape, h, head_weight_), head_bias_);
  const int64_t n = int64_t(pos.size());
  double best = -1e300;
  int64_t bs = 0, be = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i; j < n; ++j) {
      const double sc = double(logits->data[i * 2 + 0]) +
                        double(logits->data[j * 2 + 1]);
      if (sc > best) {
        best = sc;
        bs = i;
        be = j;
      }
    }
  }
  return {pos[bs], pos[be]};
}

void finetune(TaskModel& model, const TaskDataset& train,
              const FinetuneConfig& cfg) {
  if (train.examples.empty()) throw ConfigError("finetune: empty train set");
  OptimizerConfig oc = cfg.optimizer;
  oc.lr = cfg.lr;
  AdamW opt(model.trainable(), oc);
  Rng rng(cfg.seed);
  std::vector<size_t> order(train.examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);
    }
    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
      std::vector<const TaskExample*> batch;
      for (size_t j = at; j < order.size() && j < at + size_t(cfg.batch_size);
           ++j) {
        batch.push_back(&train.examples[order[j]]);
      }
      Tape tape;
      TensorPtr l = model.loss(tape, batch);
      if (!std::isfinite(double(l->data[0]))) {
        throw NumericError("finetune: loss diverged at epoch " +
                           std::to_string(epoch));
      }
      tape.backward(l);
      opt.step();
    }
  }
}

namespace {

struct Entity {
  size_t sent;
  size_t start, end;  // inclusive token range
  std::string type;
  bool operator<(const Entity& o) const {
    return std::tie(sent, start, end, type) <
           std::tie(o.sent, o.start, o.end, o.type);
  }
};

// BIO decoding; stray I- tags open a new entity (treated as B-).
std::set<Entity> decode_entities(
    const std::vector<std::vector<std::string>>& sents) {
  std::set<Entity> out;
  for (size_t s = 0; s < sents.size(); ++s) {
    const auto& tags = sents[s];
    std::string cur_type;
    size_t cur_start = 0;
    bool open = false;
    auto close = [&](size_t end) {
      if (open) out.insert({s, cur_start, end, cur_type});
      open = false;
    };
    for (size_t i = 0; i < tags.size(); ++i) {
      const std::string& t = tags[i];
      if (t.rfind("B-", 0) == 0) {
        close(i - 1);
        cur_type = t.substr(2);
        cur_start = i;
        open = true;
      } else if (t.rfind("I-", 0) == 0) {
        const std::string ty = t.substr(2);
        if (!open || ty != cur_type) {
          close(i == 0 ? 0 : i - 1);
          cur_type = ty;
          cur_start = i;
          open = true;
        }
      } else {
        close(i == 0 ? 0 : i - 1);
      }
    }
    close(tags.empty() ? 0 : tags.size() - 1);
  }
  return out;
}

}  // namespace

double bio_entity_f1(const std::vector<std::vector<std::string>>& gold,
                     const std::vector<std::vector<std::string>>& pred) {
  const auto g = decode_entities(gold);
  const auto p = decode_entities(pred);
  size_t tp = 0;
  for (const auto& e : p) tp += g.count(e);
  if (g.empty() && p.empty()) return 100.0;
  if (tp == 0) return 0.0;
  const double prec = double(tp) / double(p.size());
  const double rec = double(tp) / double(g.size());
  return 100.0 * 2.0 * prec * rec / (prec + rec);
}

double Metrics::primary() const {
  if (accuracy >= 0) return accuracy;
  if (f1 >= 0) return f1;
  return span_f1;
}

Metrics evaluate(const TaskModel& model, const TaskDataset& eval) {
  if (eval.examples.empty()) throw ConfigError("evaluate: empty eval set");
  Metrics m;
  if (model.kind() == TaskKind::classification) {
    int64_t correct = 0;
    for (const auto& ex : eval.examples) {
      correct += (model.predict_class(ex) == ex.label) ? 1 : 0;
    }
    m.accuracy = 100.0 * double(correct) / double(eval.examples.size());
  } else if (model.kind() == TaskKind::tagging) {
    std::vector<std::vector<std::string>> gold, pred;
    for (const auto& ex : eval.examples) {
      const auto pos = labeled_positions(ex);
      const auto p = model.predict_tags(ex);
      std::vector<std::string> gs, ps;
      for (size_t i = 0; i < pos.size(); ++i) {
        gs.push_back(eval.label_names[ex.tags[pos[i]]]);
        ps.push_back(eval.label_names[p[i]]);
      }
      gold.push_back(std::move(gs));
      pred.push_back(std::move(ps));
    }
    m.f1 = bio_entity_f1(gold, pred);
  } else {
    double em = 0, f1 = 0;
    for (const auto& ex : eval.examples) {
      const auto [ps, pe] = model.predict_span(ex);
      if (ps == ex.span_start && pe == ex.span_end) em += 1.0;
      const int64_t inter = std::max<int64_t>(
          0, std::min(pe, ex.span_end) - std::max(ps, ex.span_start) + 1);
      if (inter > 0) {
        const double prec = double(inter) / double(pe - ps + 1);
        const double rec =
            double(inter) / double(ex.span_end - ex.span_start + 1);
        f1 += 2.0 * prec * rec / (prec + rec);
      }
    }
    m.em = 100.0 * em / double(eval.examples.size());
    m.span_f1 = 100.0 * f1 / double(eval.examples.size());
  }
  return m;
}

SweepResult sweep_lr(const Model& base, TaskKind kind, int64_t num_labels,
                     const TaskDataset& train, const TaskDataset& dev,
                     const std::vector<double>& lrs, FinetuneConfig cfg) {
  if (lrs.empty()) throw ConfigError("sweep: empty lr grid");
  SweepResult res;
  for (double lr : lrs) {
    TaskModel tm = TaskModel::attach_head(base, kind, num_labels, cfg.seed);
    cfg.lr = lr;
    finetune(tm, train, cfg);
    const double metric = evaluate(tm, dev).primary();
    res.all.emplace_back(lr, metric);
    if (metric > res.best_metric) {
      res.best_metric = metric;
      res.best_lr = lr;
    }
  }
  return res;
}

}  // namespace rebalance
