// SPDX-License-Identifier: Apache-2.0
#include "rebalance/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rebalance/checkpoint.hpp"
#include "rebalance/ops.hpp"

namespace rebalance {

WordSimDataset load_wordsim(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("wordsim: cannot open " + path);
  WordSimDataset ds;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string w1, w2, score;
    if (!std::getline(ss, w1, '\t') || !std::getline(ss, w2, '\t') ||
        !std::getline(ss, score, '\t') || w1.empty() || w2.empty()) {
      throw ParseError("wordsim: expected word1\\tword2\\tscore at line " +
                       std::to_string(lineno));
    }
    double s = 0;
    try {
      s = std::stod(score);
    } catch (const std::exception&) {
      throw ParseError("wordsim: malformed score at line " +
                       std::to_string(lineno));
    }
    if (!std::isfinite(s)) {
      throw ParseError("wordsim: non-finite score at line " +
                       std::to_string(lineno));
    }
    ds.triples.emplace_back(w1, w2, s);
  }
  if (ds.triples.size() < 2) throw ParseError("wordsim: need at least 2 pairs");
  return ds;
}

ParallelPairs load_parallel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parallel: cannot open " + path);
  ParallelPairs pp;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("parallel: missing tab at line " +
                       std::to_string(lineno));
    }
    pp.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (pp.pairs.size() < 2) throw ParseError("parallel: need at least 2 pairs");
  std::set<std::string> targets;
  for (const auto& [src, tgt] : pp.pairs) targets.insert(tgt);
  if (targets.size() != pp.pairs.size()) {
    throw ParseError("parallel: duplicate target sentences");
  }
  return pp;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t(0));
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * double(i + j) + 1.0;  // 1-based average rank
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
  if (a.size() < 2) throw ConfigError("spearman: need at least 2 points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(n);
  mb /= double(n);
  double num = 0, va = 0, vb = 0;
  for (size_t i = 0; i < n; ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) throw StateError("spearman: zero rank variance");
  return num / std::sqrt(va * vb);
}

namespace {

// Subword-averaged embedding for one word, or empty when any piece is
// [UNK]. Input side reads rows of input_embedding; output side reads
// columns of output_embedding.
std::vector<double> word_vector(const Model& model, const Vocab& v,
                                const std::string& word, EmbeddingSide side) {
  const auto pieces = segment(word, v);
  for (int64_t id : pieces) {
    if (id == kUnkId) return {};
  }
  const bool output = side == EmbeddingSide::output;
  if (output && !model.has_output_side()) {
    throw StateError("word_similarity: model has no output side");
  }
  const bool via_columns = output && !model.config().coupled;
  TensorPtr table = via_columns ? model.param("output_embedding")
                                : model.param("input_embedding");
  const int64_t width = via_columns ? table->rows() : table->cols();
  const int64_t vocab = model.config().vocab_size;
  std::vector<double> out(size_t(width), 0.0);
  for (int64_t id : pieces) {
    for (int64_t d = 0; d < width; ++d) {
      const real x = via_columns ? table->data[size_t(d * vocab + id)]
                                 : table->data[size_t(id * width + d)];
      out[size_t(d)] += double(x);
    }
  }
  for (auto& x : out) x /= double(pieces.size());
  return out;
}

}  // namespace

WordSimResult word_similarity(const Model& model, const Vocab& v,
                              const WordSimDataset& ds, EmbeddingSide side) {
  if (ds.triples.size() < 2) {
    throw ConfigError("word_similarity: need at least 2 pairs");
  }
  std::vector<double> gold, dots;
  size_t skipped = 0;
  for (const auto& [w1, w2, score] : ds.triples) {
    const auto v1 = word_vector(model, v, w1, side);
    const auto v2 = word_vector(model, v, w2, side);
    if (v1.empty() || v2.empty()) {
      ++skipped;
      continue;
    }
    double dot = 0;
    for (size_t d = 0; d < v1.size(); ++d) dot += v1[d] * v2[d];
    gold.push_back(score);
    dots.push_back(dot);
  }
  if (double(skipped) > 0.2 * double(ds.triples.size())) {
    throw StateError("word_similarity: " + std::to_string(skipped) + " of " +
                     std::to_string(ds.triples.size()) +
                     " pairs skipped (out-of-vocabulary ratio above 20%)");
  }
  if (gold.size() < 2) {
    throw StateError("word_similarity: fewer than 2 usable pairs");
  }
  WordSimResult r;
  r.correlation = spearman(gold, dots);
  r.used = gold.size();
  r.skipped = skipped;
  return r;
}

std::vector<std::vector<std::vector<real>>> sentence_vectors(
    const Model& model, const Vocab& v,
    const std::vector<std::string>& sentences) {
  std::vector<std::vector<std::vector<real>>> out;
  const int64_t h = model.config().hidden;
  for (const auto& s : sentences) {
    const Encoding e = encode_pair(s, std::nullopt, v,
                                   model.config().max_positions);
    Batch b;
    b.batch_size = 1;
    b.seq_len = int64_t(e.ids.size());
    b.ids = e.ids;
    b.type_ids = e.type_ids;
    b.attn_mask.assign(e.ids.size(), true);
    b.special_mask.assign(e.special_mask.begin(), e.special_mask.end());
    Tape tape;
    const LayerActivations acts = model.encode(tape, b);
    std::vector<int64_t> rows;
    for (size_t i = 0; i < e.ids.size(); ++i) {
      if (!e.special_mask[i]) rows.push_back(int64_t(i));
    }
    if (rows.empty()) throw StateError("sentence_vectors: empty sentence");
    std::vector<std::vector<real>> stack;
    for (const TensorPtr& layer : acts.layers) {
      std::vector<real> vec(size_t(h), real(0));
      for (int64_t r : rows) {
        for (int64_t d = 0; d < h; ++d) {
          vec[size_t(d)] += layer->data[size_t(r * h + d)];
        }
      }
      for (auto& x : vec) x /= real(rows.size());
      stack.push_back(std::move(vec));
    }
    out.push_back(std::move(stack));
  }
  return out;
}

double nn_translation(const std::vector<std::vector<real>>& source,
                      const std::vector<std::vector<real>>& target) {
  if (source.size() != target.size()) {
    throw ConfigError("nn_translation: pair count mismatch");
  }
  const size_t m = source.size();
  if (m < 2) throw ConfigError("nn_translation: need at least 2 pairs");
  const size_t d = source[0].size();
  for (const auto& x : source) {
    if (x.size() != d) throw ConfigError("nn_translation: width mismatch");
  }
  for (const auto& x : target) {
    if (x.size() != d) throw ConfigError("nn_translation: width mismatch");
  }
  std::vector<double> offset(d, 0.0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t k = 0; k < d; ++k) {
      offset[k] += double(target[i][k]) - double(source[i][k]);
    }
  }
  for (auto& x : offset) x /= double(m);

  size_t correct = 0;
  for (size_t i = 0; i < m; ++i) {
    double best = 0;
    size_t best_idx = 0, best_count = 0;
    for (size_t j = 0; j < m; ++j) {
      double dist = 0;
      for (size_t k = 0; k < d; ++k) {
        const double diff =
            double(source[i][k]) + offset[k] - double(target[j][k]);
        dist += diff * diff;
      }
      if (j == 0 || dist < best) {
        best = dist;
        best_idx = j;
        best_count = 1;
      } else if (dist == best) {
        ++best_count;
      }
    }
    if (best_idx == i && best_count == 1) ++correct;
  }
  return double(correct) / double(m);
}

std::vector<double> MixProbe::layer_weights() const {
  std::vector<double> w(layer_scores->data.begin(), layer_scores->data.end());
  const double mx = *std::max_element(w.begin(), w.end());
  double sum = 0;
  for (auto& x : w) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (auto& x : w) x /= sum;
  return w;
}

namespace {

void check_stacks(const std::vector<std::vector<std::vector<real>>>& acts,
                  size_t layers, size_t width) {
  for (const auto& stack : acts) {
    if (stack.size() != layers) {
      throw ConfigError("mix_probe: inconsistent layer count");
    }
    for (const auto& vec : stack) {
      if (vec.size() != width) {
        throw ConfigError("mix_probe: inconsistent width");
      }
    }
  }
}

// Forward for a subset of examples; returns [n, K] logits.
TensorPtr probe_forward(Tape& tape, const MixProbe& p,
                        const std::vector<std::vector<std::vector<real>>>& acts,
                        const std::vector<size_t>& idx) {
  const size_t layers = acts[0].size();
  const size_t width = acts[0][0].size();
  std::vector<TensorPtr> parts;
  for (size_t l = 0; l < layers; ++l) {
    auto part = make_tensor({int64_t(idx.size()), int64_t(width)}, false);
    for (size_t i = 0; i < idx.size(); ++i) {
      std::copy(acts[idx[i]][l].begin(), acts[idx[i]][l].end(),
                part->data.begin() + int64_t(i * width));
    }
    parts.push_back(part);
  }
  TensorPtr w = softmax_rows(tape, p.layer_scores);
  TensorPtr x = weighted_sum(tape, parts, w);
  TensorPtr h = gelu(tape, add_bias(tape, matmul(tape, x, p.w1), p.b1));
  return add_bias(tape, matmul(tape, h, p.w2), p.b2);
}

}  // namespace

MixProbeResult mix_probe_train(
    const std::vector<std::vector<std::vector<real>>>& train_acts,
    const std::vector<int64_t>& train_labels,
    const std::vector<std::vector<std::vector<real>>>& dev_acts,
    const std::vector<int64_t>& dev_labels, const MixProbeConfig& cfg) {
  if (train_acts.empty() || train_acts.size() != train_labels.size()) {
    throw ConfigError("mix_probe: train size mismatch");
  }
  if (dev_acts.size() != dev_labels.size()) {
    throw ConfigError("mix_probe: dev size mismatch");
  }
  const size_t layers = train_acts[0].size();
  const size_t width = train_acts[0][0].size();
  if (width < 2) throw ConfigError("mix_probe: width must be >= 2");
  check_stacks(train_acts, layers, width);
  check_stacks(dev_acts, layers, width);
  const std::set<int64_t> classes(train_labels.begin(), train_labels.end());
  if (classes.size() < 2) throw ConfigError("mix_probe: need >= 2 classes");
  const int64_t k = *classes.rbegin() + 1;
  if (*classes.begin() < 0) throw ConfigError("mix_probe: negative label");

  const int64_t hidden = int64_t(width) / 2;
  Rng rng(cfg.seed);
  auto init = [&](std::vector<int64_t> shape) {
    auto t = make_tensor(std::move(shape), true);
    for (auto& x : t->data) x = real(rng.truncated_normal(0.02));
    return t;
  };
  MixProbeResult res;
  MixProbe& p = res.probe;
  p.layer_scores = make_tensor({1, int64_t(layers)}, true);
  p.w1 = init({int64_t(width), hidden});
  p.b1 = make_tensor({hidden}, true);
  p.w2 = init({hidden, k});
  p.b2 = make_tensor({k}, true);

  OptimizerConfig oc = cfg.optimizer;
  oc.lr = cfg.lr;
  AdamW opt({{"probe_layer_scores", p.layer_scores},
             {"probe_w1", p.w1},
             {"probe_b1", p.b1},
             {"probe_w2", p.w2},
             {"probe_b2", p.b2}},
            oc);

  std::vector<size_t> order(train_acts.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[size_t(rng.uniform_int(int64_t(i)))]);
    }
    for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
      std::vector<size_t> idx;
      std::vector<int64_t> targets;
      for (size_t j = at;
           j < order.size() && j < at + size_t(cfg.batch_size); ++j) {
        idx.push_back(order[j]);
        targets.push_back(train_labels[order[j]]);
      }
      Tape tape;
      TensorPtr logits = probe_forward(tape, p, train_acts, idx);
      TensorPtr loss = softmax_cross_entropy(tape, logits, targets);
      if (!std::isfinite(double(loss->data[0]))) {
        throw NumericError("mix_probe: loss diverged");
      }
      tape.backward(loss);
      opt.step();
    }
  }

  if (!dev_acts.empty()) {
    const auto pred = mix_probe_predict(p, dev_acts);
    size_t correct = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == dev_labels[i]) ++correct;
    }
    res.dev_accuracy = double(correct) / double(dev_acts.size());
  }
  return res;
}

std::vector<int64_t> mix_probe_predict(
    const MixProbe& probe,
    const std::vector<std::vector<std::vector<real>>>& acts) {
  std::vector<int64_t> out;
  if (acts.empty()) return out;
  std::vector<size_t> idx(acts.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  Tape tape;
  TensorPtr logits = probe_forward(tape, probe, acts, idx);
  const int64_t k = logits->cols();
  for (int64_t i = 0; i < logits->rows(); ++i) {
    const real* row = logits->data.data() + i * k;
    int64_t arg = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (row[j] > row[arg]) arg = j;
    }
    out.push_back(arg);
  }
  return out;
}

void export_embeddings(const Model& model, EmbeddingSide side,
                       const std::string& path) {
  if (side == EmbeddingSide::input || model.config().coupled) {
    if (side == EmbeddingSide::output && !model.has_output_side()) {
      throw StateError("export: model has no output side");
    }
    save_matrix(model.param("input_embedding"), "input_embedding", path);
    return;
  }
  if (!model.has_output_side()) {
    throw StateError("export: model has no output side");
  }
  TensorPtr table = model.param("output_embedding");  // [E_out, V]
  const int64_t e = table->rows();
  const int64_t vocab = table->cols();
  auto rows = make_tensor({vocab, e}, false);
  for (int64_t i = 0; i < vocab; ++i) {
    for (int64_t d = 0; d < e; ++d) {
      rows->data[size_t(i * e + d)] = table->data[size_t(d * vocab + i)];
    }
  }
  save_matrix(rows, "output_embedding", path);
}

}  // namespace rebalance
