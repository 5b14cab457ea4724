// SPDX-License-Identifier: Apache-2.0
#include "rebalance/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rebalance {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: integer expected at " + where);
  }
}

double to_double(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: number expected at " + where);
  }
}

bool to_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: boolean expected at " + where);
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text,
                                const std::string& origin) {
  RunConfig rc;
  std::stringstream in(text);
  std::string line, section;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where =
        origin + ":" + std::to_string(lineno);
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("config: bad section at " + where);
      section = s.substr(1, s.size() - 2);
      if (section != "model" && section != "data" && section != "train") {
        throw ConfigError("config: unknown section [" + section + "] at " +
                          where);
      }
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at " + where);
    }
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty()) {
      throw ConfigError("config: expected key = value at " + where);
    }
    if (section == "model") {
      ModelConfig& m = rc.model;
      if (key == "vocab_size") m.vocab_size = to_int(val, where);
      else if (key == "input_dim") m.input_dim = to_int(val, where);
      else if (key == "output_dim") m.output_dim = to_int(val, where);
      else if (key == "hidden") m.hidden = to_int(val, where);
      else if (key == "layers") m.layers = to_int(val, where);
      else if (key == "heads") m.heads = to_int(val, where);
      else if (key == "head_dim") m.head_dim = to_int(val, where);
      else if (key == "ffn_dim") m.ffn_dim = to_int(val, where);
      else if (key == "max_positions") m.max_positions = to_int(val, where);
      else if (key == "type_vocab") m.type_vocab = to_int(val, where);
      else if (key == "coupled") m.coupled = to_bool(val, where);
      else if (key == "layernorm_eps") m.layernorm_eps = to_double(val, where);
      else throw ConfigError("config: unknown key \"" + key + "\" at " + where);
    } else if (section == "data") {
      if (key == "corpus_dir") rc.corpus_dir = val;
      else if (key == "vocab") rc.vocab_path = val;
      else if (key == "alpha") rc.train.alpha = to_double(val, where);
      else if (key == "seq_len") rc.train.seq_len = to_int(val, where);
      else throw ConfigError("config: unknown key \"" + key + "\" at " + where);
    } else if (section == "train") {
      TrainConfig& t = rc.train;
      if (key == "steps") t.steps = to_int(val, where);
      else if (key == "batch_size") t.batch_size = to_int(val, where);
      else if (key == "eval_interval") t.eval_interval = to_int(val, where);
      else if (key == "eval_batches") t.eval_batches = to_int(val, where);
      else if (key == "seed") t.seed = uint64_t(to_int(val, where));
      else if (key == "lr") t.optimizer.lr = to_double(val, where);
      else if (key == "beta1") t.optimizer.beta1 = to_double(val, where);
      else if (key == "beta2") t.optimizer.beta2 = to_double(val, where);
      else if (key == "eps") t.optimizer.eps = to_double(val, where);
      else if (key == "weight_decay")
        t.optimizer.weight_decay = to_double(val, where);
      else if (key == "clip_norm") t.optimizer.clip_norm = to_double(val, where);
      else if (key == "warmup_steps")
        t.optimizer.warmup_steps = to_int(val, where);
      else if (key == "train_steps")
        t.optimizer.train_steps = to_int(val, where);
      else if (key == "mask_prob") t.masking.mask_prob = to_double(val, where);
      else if (key == "mask_token_frac")
        t.masking.mask_token_frac = to_double(val, where);
      else if (key == "random_frac")
        t.masking.random_frac = to_double(val, where);
      else if (key == "keep_frac") t.masking.keep_frac = to_double(val, where);
      else throw ConfigError("config: unknown key \"" + key + "\" at " + where);
    } else {
      throw ConfigError("config: key outside a section at " + where);
    }
  }
  rc.model.validate_and_fill();
  rc.train.masking.validate();
  rc.train.seed = effective_seed(rc.train.seed);
  return rc;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

uint64_t effective_seed(uint64_t configured) {
  const char* env = std::getenv("REBALANCE_SEED");
  if (!env || !*env) return configured;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw ConfigError("config: REBALANCE_SEED is not an integer");
  }
}

}  // namespace rebalance
