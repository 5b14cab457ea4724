// SPDX-License-Identifier: Apache-2.0
#include "rebalance/model.hpp"

#include <algorithm>

#include "rebalance/random.hpp"

namespace rebalance {

namespace {

std::string layer_prefix(int64_t i) {
  return "layer" + std::to_string(i) + ".";
}

bool is_pretrain_only(const std::string& name) {
  return name == "pooler_weight" || name == "pooler_bias" ||
         name == "output_proj" || name == "mlm_layernorm_gamma" ||
         name == "mlm_layernorm_beta" || name == "output_embedding" ||
         name == "output_bias";
}

}  // namespace

std::vector<std::pair<std::string, std::vector<int64_t>>>
Model::expected_inventory(const ModelConfig& cfg, bool with_output_side) {
  ModelConfig c = cfg;
  c.validate_and_fill();
  std::vector<std::pair<std::string, std::vector<int64_t>>> inv;
  auto put = [&](std::string name, std::vector<int64_t> shape) {
    inv.emplace_back(std::move(name), std::move(shape));
  };
  put("input_embedding", {c.vocab_size, c.input_dim});
  if (c.has_input_proj()) put("input_proj", {c.input_dim, c.hidden});
  put("position_embedding", {c.max_positions, c.hidden});
  put("type_embedding", {c.type_vocab, c.hidden});
  put("embed_layernorm_gamma", {c.hidden});
  put("embed_layernorm_beta", {c.hidden});
  for (int64_t i = 0; i < c.layers; ++i) {
    const std::string p = layer_prefix(i);
    put(p + "attn_q_weight", {c.hidden, c.hidden});
    put(p + "attn_q_bias", {c.hidden});
    put(p + "attn_k_weight", {c.hidden, c.hidden});
    put(p + "attn_k_bias", {c.hidden});
    put(p + "attn_v_weight", {c.hidden, c.hidden});
    put(p + "attn_v_bias", {c.hidden});
    put(p + "attn_out_weight", {c.hidden, c.hidden});
    put(p + "attn_out_bias", {c.hidden});
    put(p + "attn_layernorm_gamma", {c.hidden});
    put(p + "attn_layernorm_beta", {c.hidden});
    put(p + "ffn_in_weight", {c.hidden, c.ffn_dim});
    put(p + "ffn_in_bias", {c.ffn_dim});
    put(p + "ffn_out_weight", {c.ffn_dim, c.hidden});
    put(p + "ffn_out_bias", {c.hidden});
    put(p + "ffn_layernorm_gamma", {c.hidden});
    put(p + "ffn_layernorm_beta", {c.hidden});
  }
  if (with_output_side) {
    put("pooler_weight", {c.hidden, c.hidden});
    put("pooler_bias", {c.hidden});
    if (c.has_output_proj()) put("output_proj", {c.hidden, c.output_dim});
    put("mlm_layernorm_gamma", {c.output_dim});
    put("mlm_layernorm_beta", {c.output_dim});
    if (!c.coupled) put("output_embedding", {c.output_dim, c.vocab_size});
    put("output_bias", {c.vocab_size});
  }
  return inv;
}

void Model::add_param(const std::string& name, TensorPtr t) {
  lookup_[name] = params_.size();
  params_.emplace_back(name, std::move(t));
}

void Model::index_params() {
  lookup_.clear();
  for (size_t i = 0; i < params_.size(); ++i) lookup_[params_[i].first] = i;
}

Model Model::build(const ModelConfig& config, uint64_t seed) {
  ModelConfig c = config;
  c.validate_and_fill();
  Model m;
  m.config_ = c;
  m.has_output_side_ = true;
  Rng rng(seed);
  for (const auto& [name, shape] : expected_inventory(c, true)) {
    auto t = make_tensor(shape, /*requires_grad=*/true);
    const bool is_gamma = name.find("layernorm_gamma") != std::string::npos;
    const bool is_zero = name.find("bias") != std::string::npos ||
                         name.find("layernorm_beta") != std::string::npos;
    if (is_gamma) {
      std::fill(t->data.begin(), t->data.end(), real(1));
    } else if (!is_zero) {
      for (auto& v : t->data) v = real(rng.truncated_normal(0.02));
    }
    m.add_param(name, std::move(t));
  }
  return m;
}

Model Model::from_params(
    const ModelConfig& config,
    std::vector<std::pair<std::string, TensorPtr>> params) {
  ModelConfig c = config;
  c.validate_and_fill();
  bool with_output = false;
  for (const auto& [name, t] : params)
    if (name == "output_bias") with_output = true;
  const auto inv = expected_inventory(c, with_output);
  if (inv.size() != params.size()) {
    throw StateError("model: expected " + std::to_string(inv.size()) +
                     " tensors, got " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < inv.size(); ++i) {
    if (params[i].first != inv[i].first) {
      throw StateError("model: tensor " + std::to_string(i) + " is \"" +
                       params[i].first + "\", expected \"" + inv[i].first +
                       "\"");
    }
    if (params[i].second->shape != inv[i].second) {
      throw StateError("model: tensor \"" + params[i].first + "\" has shape " +
                       shape_str(params[i].second->shape) + ", expected " +
                       shape_str(inv[i].second));
    }
    params[i].second->requires_grad = true;
    params[i].second->ensure_grad();
  }
  Model m;
  m.config_ = c;
  m.has_output_side_ = with_output;
  m.params_ = std::move(params);
  m.index_params();
  return m;
}

TensorPtr Model::param(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) {
    throw StateError("model: no parameter named \"" + name + "\"");
  }
  return params_[it->second].second;
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t->size();
  return n;
}

std::vector<TensorPtr> Model::tensors() const {
  std::vector<TensorPtr> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

LayerActivations Model::encode(Tape& tape, const Batch& batch) const {
  const ModelConfig& c = config_;
  const int64_t bt = batch.batch_size * batch.seq_len;
  if (int64_t(batch.ids.size()) != bt) {
    throw ShapeError("encode: batch ids size mismatch");
  }
  if (batch.seq_len > c.max_positions) {
    throw IndexError("encode: seq_len " + std::to_string(batch.seq_len) +
                     " exceeds max_positions " +
                     std::to_string(c.max_positions));
  }
  for (size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.ids[i] < 0 || batch.ids[i] >= c.vocab_size) {
      throw IndexError("encode: token id " + std::to_string(batch.ids[i]) +
                       " at position " + std::to_string(i) +
                       " out of range [0," + std::to_string(c.vocab_size) + ")");
    }
  }
  std::vector<int64_t> positions(bt);
  for (int64_t i = 0; i < bt; ++i) positions[i] = i % batch.seq_len;

  TensorPtr x = gather_rows(tape, param("input_embedding"), batch.ids);
  if (c.has_input_proj()) x = matmul(tape, x, param("input_proj"));
  x = add(tape, x, gather_rows(tape, param("position_embedding"), positions));
  x = add(tape, x, gather_rows(tape, param("type_embedding"), batch.type_ids));
  x = layer_norm(tape, x, param("embed_layernorm_gamma"),
                 param("embed_layernorm_beta"), real(c.layernorm_eps));

  LayerActivations acts;
  acts.layers.push_back(x);
  for (int64_t i = 0; i < c.layers; ++i) {
    const std::string p = layer_prefix(i);
    TensorPtr q = add_bias(tape, matmul(tape, x, param(p + "attn_q_weight")),
                           param(p + "attn_q_bias"));
    TensorPtr k = add_bias(tape, matmul(tape, x, param(p + "attn_k_weight")),
                           param(p + "attn_k_bias"));
    TensorPtr v = add_bias(tape, matmul(tape, x, param(p + "attn_v_weight")),
                           param(p + "attn_v_bias"));
    TensorPtr ctx = attention(tape, q, k, v, batch.batch_size, batch.seq_len,
                              c.heads, batch.attn_mask);
    TensorPtr attn_out =
        add_bias(tape, matmul(tape, ctx, param(p + "attn_out_weight")),
                 param(p + "attn_out_bias"));
    x = layer_norm(tape, add(tape, x, attn_out),
                   param(p + "attn_layernorm_gamma"),
                   param(p + "attn_layernorm_beta"), real(c.layernorm_eps));
    TensorPtr ffn = add_bias(
        tape,
        matmul(tape,
               gelu(tape, add_bias(tape, matmul(tape, x, param(p + "ffn_in_weight")),
                                   param(p + "ffn_in_bias"))),
               param(p + "ffn_out_weight")),
        param(p + "ffn_out_bias"));
    x = layer_norm(tape, add(tape, x, ffn), param(p + "ffn_layernorm_gamma"),
                   param(p + "ffn_layernorm_beta"), real(c.layernorm_eps));
    acts.layers.push_back(x);
  }
  return acts;
}

TensorPtr Model::forward_mlm(Tape& tape, const MaskedBatch& batch) const {
  if (!has_output_side_) {
    throw StateError("forward_mlm: model has no output side");
  }
  if (batch.positions.empty()) {
    throw StateError("forward_mlm: no masked positions");
  }
  LayerActivations acts = encode(tape, batch.batch);
  TensorPtr h = gather_rows(tape, acts.layers.back(), batch.positions);
  if (config_.has_output_proj()) h = matmul(tape, h, param("output_proj"));
  h = gelu(tape, h);
  h = layer_norm(tape, h, param("mlm_layernorm_gamma"),
                 param("mlm_layernorm_beta"), real(config_.layernorm_eps));
  TensorPtr logits = config_.coupled
                         ? matmul_nt(tape, h, param("input_embedding"))
                         : matmul(tape, h, param("output_embedding"));
  return add_bias(tape, logits, param("output_bias"));
}

TensorPtr Model::mlm_loss(Tape& tape, const MaskedBatch& batch) const {
  TensorPtr logits = forward_mlm(tape, batch);
  return softmax_cross_entropy(tape, logits, batch.originals);
}

namespace {

TensorPtr deep_copy(const TensorPtr& t) {
  auto c = std::make_shared<Tensor>(*t);
  c->ensure_grad();
  c->zero_grad();
  return c;
}

}  // namespace

Model Model::truncate_layers(int64_t keep, bool keep_output_side) const {
  if (keep < 1 || keep > config_.layers) {
    throw ConfigError("truncate_layers: keep " + std::to_string(keep) +
                      " out of range [1," + std::to_string(config_.layers) +
                      "]");
  }
  ModelConfig c = config_;
  c.layers = keep;
  const bool out_side = keep_output_side && has_output_side_;
  std::vector<std::pair<std::string, TensorPtr>> kept;
  for (const auto& [name, shape] : expected_inventory(c, out_side)) {
    kept.emplace_back(name, deep_copy(param(name)));
  }
  return from_params(c, std::move(kept));
}

Model Model::to_finetune() const {
  std::vector<std::pair<std::string, TensorPtr>> kept;
  for (const auto& [name, t] : params_) {
    if (!is_pretrain_only(name)) kept.emplace_back(name, deep_copy(t));
  }
  return from_params(config_, std::move(kept));
}

Model Model::clone() const {
  std::vector<std::pair<std::string, TensorPtr>> kept;
  for (const auto& [name, t] : params_) kept.emplace_back(name, deep_copy(t));
  return from_params(config_, std::move(kept));
}

}  // namespace rebalance
