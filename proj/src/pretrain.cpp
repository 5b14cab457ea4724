// SPDX-License-Identifier: Apache-2.0
#include "rebalance/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace rebalance {

std::map<std::string, double> smooth_distribution(
    const std::map<std::string, int64_t>& counts, double alpha) {
  if (counts.empty()) throw ConfigError("smooth_distribution: no languages");
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("smooth_distribution: alpha must be in [0,1]");
  }
  double total = 0;
  for (const auto& [lang, n] : counts) {
    if (n <= 0) {
      throw ConfigError("smooth_distribution: non-positive count for " + lang);
    }
    total += double(n);
  }
  std::map<std::string, double> q;
  double z = 0;
  for (const auto& [lang, n] : counts) {
    const double p = double(n) / total;
    const double s = std::pow(p, alpha);
    q[lang] = s;
    z += s;
  }
  for (auto& [lang, s] : q) s /= z;
  return q;
}

void MaskingPolicy::validate() const {
  if (mask_prob < 0.0 || mask_prob > 1.0) {
    throw ConfigError("masking: mask_prob must be in [0,1]");
  }
  const double sum = mask_token_frac + random_frac + keep_frac;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("masking: replacement fractions must sum to 1");
  }
  if (mask_token_frac < 0 || random_frac < 0 || keep_frac < 0) {
    throw ConfigError("masking: fractions must be non-negative");
  }
}

Corpora load_corpora(const std::string& dir, const Vocab& vocab) {
  namespace fs = std::filesystem;
  Corpora c;
  if (!fs::is_directory(dir)) {
    throw IoError("corpus: not a directory: " + dir);
  }
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    if (p.extension() != ".txt") continue;
    const std::string lang = p.stem().string();
    std::ifstream in(p);
    if (!in) throw IoError("corpus: cannot open " + p.string());
    std::string line;
    auto& sents = c.sentences[lang];
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      sents.push_back(segment(line, vocab));
    }
    if (sents.empty()) {
      throw ConfigError("corpus: language " + lang + " has no sentences");
    }
  }
  if (c.sentences.empty()) {
    throw ConfigError("corpus: no <lang>.txt files in " + dir);
  }
  return c;
}

namespace {

std::string draw_language(const std::map<std::string, double>& q, Rng& rng) {
  const double r = rng.uniform();
  double acc = 0;
  for (const auto& [lang, p] : q) {
    acc += p;
    if (r < acc) return lang;
  }
  return q.rbegin()->first;
}

}  // namespace

Batch sample_batch(const Corpora& corpora,
                   const std::map<std::string, double>& q, int64_t batch_size,
                   int64_t seq_len, Rng& rng, CorpusCursor& cursor) {
  Batch b;
  b.batch_size = batch_size;
  b.seq_len = seq_len;
  b.ids.assign(batch_size * seq_len, kPadId);
  b.type_ids.assign(batch_size * seq_len, 0);
  b.attn_mask.assign(batch_size * seq_len, false);
  b.special_mask.assign(batch_size * seq_len, true);
  for (int64_t s = 0; s < batch_size; ++s) {
    const std::string lang = draw_language(q, rng);
    auto it = corpora.sentences.find(lang);
    if (it == corpora.sentences.end() || it->second.empty()) {
      throw ConfigError("sample_batch: empty corpus for language " + lang);
    }
    const auto& sents = it->second;
    size_t& next = cursor.next[lang];
    int64_t pos = 0;
    auto put = [&](int64_t id, bool special) {
      const int64_t flat = s * seq_len + pos;
      b.ids[flat] = id;
      b.attn_mask[flat] = true;
      b.special_mask[flat] = special;
      ++pos;
    };
    put(kClsId, true);
    while (pos < seq_len) {
      const auto& sent = sents[next % sents.size()];
      ++next;  // wrap-around on exhaustion
      for (int64_t id : sent) {
        if (pos >= seq_len) break;
        put(id, false);
      }
      if (pos < seq_len) put(kSepId, true);
    }
  }
  return b;
}

MaskedBatch apply_masking(const Batch& b, const MaskingPolicy& p, Rng& rng,
                          int64_t vocab_size) {
  p.validate();
  MaskedBatch mb;
  mb.batch = b;
  for (size_t i = 0; i < b.ids.size(); ++i) {
    if (b.special_mask[i]) continue;
    if (rng.uniform() >= p.mask_prob) continue;
    mb.positions.push_back(int64_t(i));
    mb.originals.push_back(b.ids[i]);
    const double r = rng.uniform();
    if (r < p.mask_token_frac) {
      mb.batch.ids[i] = kMaskId;
    } else if (r < p.mask_token_frac + p.random_frac) {
      mb.batch.ids[i] =
          kNumSpecials + rng.uniform_int(vocab_size - kNumSpecials);
    }  // else keep
  }
  return mb;
}

AdamW::AdamW(std::vector<std::pair<std::string, TensorPtr>> params,
             OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t->data.size(), real(0));
    v_.emplace_back(t->data.size(), real(0));
    const bool no_decay = name.find("bias") != std::string::npos ||
                          name.find("layernorm") != std::string::npos;
    decay_.push_back(!no_decay);
    t->ensure_grad();
  }
}

double AdamW::lr_at(int64_t step) const {
  if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps) {
    return cfg_.lr * double(step) / double(cfg_.warmup_steps);
  }
  if (cfg_.train_steps > 0) {
    const double denom = double(std::max<int64_t>(
        1, cfg_.train_steps - cfg_.warmup_steps));
    const double rem = double(cfg_.train_steps - step);
    return cfg_.lr * std::max(0.0, rem / denom);
  }
  return cfg_.lr;
}

double AdamW::step() {
  // Global-norm clip before the moment updates.
  double sq = 0;
  for (size_t k = 0; k < params_.size(); ++k) {
    const auto& [name, t] = params_[k];
    for (real g : t->grad) {
      if (!std::isfinite(double(g))) {
        throw NumericError("adamw: non-finite gradient in tensor \"" + name +
                           "\"");
      }
      sq += double(g) * double(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip_scale =
      (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm
                                                    : 1.0;
  ++step_;
  const double lr = lr_at(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& t = params_[k].second;
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < t->data.size(); ++i) {
      const double g = double(t->grad[i]) * clip_scale;
      m[i] = real(cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * g);
      v[i] = real(cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * g * g);
      const double mhat = double(m[i]) / bc1;
      const double vhat = double(v[i]) / bc2;
      double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (decay_[k]) upd += lr * cfg_.weight_decay * double(t->data[i]);
      t->data[i] = real(double(t->data[i]) - upd);
    }
    t->zero_grad();
  }
  return lr;
}

namespace {

std::vector<std::vector<real>> snapshot_params(const Model& m) {
  std::vector<std::vector<real>> snap;
  for (const auto& [name, t] : m.params()) snap.push_back(t->data);
  return snap;
}

void restore_params(Model& m, const std::vector<std::vector<real>>& snap) {
  const auto& ps = m.params();
  for (size_t i = 0; i < ps.size(); ++i) ps[i].second->data = snap[i];
}

std::vector<MaskedBatch> draw_eval_batches(const Corpora& corpora,
                                           const std::map<std::string, double>& q,
                                           const TrainConfig& cfg,
                                           int64_t vocab_size, uint64_t seed) {
  Rng rng(seed);
  CorpusCursor cursor;
  std::vector<MaskedBatch> out;
  for (int64_t i = 0; i < cfg.eval_batches; ++i) {
    Batch b = sample_batch(corpora, q, cfg.batch_size, cfg.seq_len, rng, cursor);
    MaskedBatch mb = apply_masking(b, cfg.masking, rng, vocab_size);
    if (!mb.positions.empty()) out.push_back(std::move(mb));
  }
  if (out.empty()) throw StateError("eval: no masked positions in eval batches");
  return out;
}

}  // namespace

double mlm_accuracy(const Model& model,
                    const std::vector<MaskedBatch>& batches) {
  if (batches.empty()) throw StateError("mlm_accuracy: empty evaluation set");
  int64_t correct = 0, total = 0;
  for (const auto& mb : batches) {
    if (mb.positions.empty()) {
      throw StateError("mlm_accuracy: batch without masked positions");
    }
    Tape tape;
    TensorPtr logits = model.forward_mlm(tape, mb);
    const int64_t n = logits->shape[0], v = logits->shape[1];
    for (int64_t i = 0; i < n; ++i) {
      const real* row = logits->data.data() + i * v;
      int64_t arg = 0;
      for (int64_t j = 1; j < v; ++j)
        if (row[j] > row[arg]) arg = j;
      correct += (arg == mb.originals[i]) ? 1 : 0;
      ++total;
    }
  }
  return double(correct) / double(total);
}

std::vector<StepMetrics> train(Model& model, const Corpora& corpora,
                               const TrainConfig& cfg, std::ostream* log) {
  std::map<std::string, int64_t> counts;
  for (const auto& [lang, sents] : corpora.sentences) {
    counts[lang] = int64_t(sents.size());
  }
  const auto q = smooth_distribution(counts, cfg.alpha);
  const int64_t vocab_size = model.config().vocab_size;

  Rng rng(cfg.seed);
  CorpusCursor cursor;
  OptimizerConfig opt_cfg = cfg.optimizer;
  if (opt_cfg.train_steps == 0) opt_cfg.train_steps = cfg.steps;
  AdamW opt(model.params(), opt_cfg);

  std::vector<StepMetrics> metrics;
  auto last_good = snapshot_params(model);
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    MaskedBatch mb;
    do {
      Batch b =
          sample_batch(corpora, q, cfg.batch_size, cfg.seq_len, rng, cursor);
      mb = apply_masking(b, cfg.masking, rng, vocab_size);
    } while (mb.positions.empty());

    Tape tape;
    TensorPtr loss = model.mlm_loss(tape, mb);
    const double loss_v = double(loss->data[0]);
    if (!std::isfinite(loss_v)) {
      restore_params(model, last_good);
      throw NumericError("train: loss diverged at step " +
                         std::to_string(step) +
                         "; restored last good parameters");
    }
    tape.backward(loss);
    const double lr = opt.step();

    StepMetrics sm;
    sm.step = step;
    sm.loss = loss_v;
    sm.lr = lr;
    if (cfg.eval_interval > 0 &&
        (step % cfg.eval_interval == 0 || step == cfg.steps)) {
      const auto eval_batches = draw_eval_batches(
          corpora, q, cfg, vocab_size, cfg.seed ^ 0x9e3779b97f4a7c15ull);
      sm.mlm_acc = mlm_accuracy(model, eval_batches);
      last_good = snapshot_params(model);
    }
    if (log) {
      (*log) << "step " << sm.step << " loss " << sm.loss << " lr " << sm.lr;
      if (sm.mlm_acc >= 0) (*log) << " mlm_acc " << sm.mlm_acc;
      (*log) << "\n";
    }
    metrics.push_back(sm);
  }
  return metrics;
}

}  // namespace rebalance
