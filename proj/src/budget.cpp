// SPDX-License-Identifier: Apache-2.0
#include "rebalance/budget.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace rebalance {

int64_t per_layer_params(const ModelConfig& c) {
  const int64_t h = c.hidden, f = c.ffn_dim;
  return 4 * (h * h + h) + 2 * h * f + f + h + 4 * h;
}

ParamBudget count_params(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.validate_and_fill();
  ParamBudget b;
  b.embedding_params = c.vocab_size * c.input_dim;

  int64_t ft = b.embedding_params;
  if (c.has_input_proj()) ft += c.input_dim * c.hidden;
  ft += c.max_positions * c.hidden;
  ft += c.type_vocab * c.hidden;
  ft += 2 * c.hidden;  // embedding layernorm
  ft += c.layers * per_layer_params(c);

  int64_t pt = ft;
  pt += c.hidden * c.hidden + c.hidden;  // pooler, discarded at fine-tuning
  if (c.has_output_proj()) pt += c.hidden * c.output_dim;
  pt += 2 * c.output_dim;  // MLM layernorm
  if (!c.coupled) pt += c.output_dim * c.vocab_size;
  pt += c.vocab_size;  // output bias

  b.finetune_count = ft;
  b.pretrain_count = pt;
  b.embedding_fraction = double(b.embedding_params) / double(pt);
  return b;
}

std::vector<ModelConfig> search_config(const SearchSpec& s) {
  if (s.tolerance <= 0) throw ConfigError("search: tolerance must be > 0");
  if (s.free_axes.empty()) throw ConfigError("search: need at least one free axis");

  auto has = [&](FreeAxis a) {
    return std::find(s.free_axes.begin(), s.free_axes.end(), a) !=
           s.free_axes.end();
  };

  std::vector<int64_t> hs, ls, eins, eouts;
  if (has(FreeAxis::H)) {
    for (int64_t h = 64; h <= s.max_hidden; h += 64) hs.push_back(h);
  } else {
    hs.push_back(s.base.hidden);
  }
  if (has(FreeAxis::L)) {
    for (int64_t l = 1; l <= s.max_layers; ++l) ls.push_back(l);
  } else {
    ls.push_back(s.base.layers);
  }
  if (has(FreeAxis::Ein)) {
    for (int64_t e = 64; e <= s.max_embed; e += 64) eins.push_back(e);
  } else {
    eins.push_back(s.base.input_dim);
  }
  if (has(FreeAxis::Eout)) {
    for (int64_t e = 64; e <= s.max_embed; e += 64) eouts.push_back(e);
  } else {
    eouts.push_back(s.base.output_dim);
  }

  std::vector<ModelConfig> hits;
  const double lo = double(s.target_ft_count) * (1.0 - s.tolerance);
  const double hi = double(s.target_ft_count) * (1.0 + s.tolerance);
  for (int64_t h : hs) {
    for (int64_t l : ls) {
      for (int64_t ein : eins) {
        for (int64_t eout : eouts) {
          ModelConfig c = s.base;
          c.hidden = h;
          c.layers = l;
          c.input_dim = ein;
          c.output_dim = eout;
          if (has(FreeAxis::H)) {
            c.head_dim = 64;
            c.heads = h / 64;
            c.ffn_dim = 4 * h;
          }
          if (c.coupled && c.input_dim != c.output_dim) continue;
          ParamBudget b;
          try {
            b = count_params(c);
          } catch (const ConfigError&) {
            continue;
          }
          const double ft = double(b.finetune_count);
          if (ft >= lo && ft <= hi) hits.push_back(c);
        }
      }
    }
  }
  if (hits.empty()) {
    throw ConfigError("search: no config in tolerance of target " +
                      std::to_string(s.target_ft_count));
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [&](const ModelConfig& a, const ModelConfig& b) {
                     const int64_t da = std::llabs(
                         count_params(a).finetune_count - s.target_ft_count);
                     const int64_t db = std::llabs(
                         count_params(b).finetune_count - s.target_ft_count);
                     if (da != db) return da < db;
                     if (a.layers != b.layers) return a.layers < b.layers;
                     return a.hidden < b.hidden;
                   });
  return hits;
}

}  // namespace rebalance
