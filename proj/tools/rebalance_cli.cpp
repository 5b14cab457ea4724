// SPDX-License-Identifier: Apache-2.0
//
// Single entry point for every workflow: pretraining, fine-tuning,
// evaluation, layer truncation, budget accounting and the analysis suite.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rebalance/analysis.hpp"
#include "rebalance/budget.hpp"
#include "rebalance/checkpoint.hpp"
#include "rebalance/finetune.hpp"
#include "rebalance/model.hpp"
#include "rebalance/pretrain.hpp"
#include "rebalance/run_config.hpp"

namespace {

using namespace rebalance;

void print_budget(const ModelConfig& c) {
  const ParamBudget b = count_params(c);
  std::cout << "pretrain_params   " << b.pretrain_count << "\n"
            << "finetune_params   " << b.finetune_count << "\n"
            << "embedding_params  " << b.embedding_params << "\n"
            << "embedding_fraction " << std::fixed << std::setprecision(4)
            << b.embedding_fraction << "\n";
  std::cout.unsetf(std::ios::fixed);
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 const std::string& log_path, const std::string& corpus_dir) {
  RunConfig rc = parse_run_config(config_path);
  if (!corpus_dir.empty()) rc.corpus_dir = corpus_dir;
  if (rc.corpus_dir.empty() || rc.vocab_path.empty()) {
    throw ConfigError("pretrain: [data] corpus_dir and vocab are required");
  }
  const Vocab vocab = Vocab::load(rc.vocab_path);
  if (rc.model.vocab_size != vocab.size()) {
    throw ConfigError("pretrain: vocab_size " +
                      std::to_string(rc.model.vocab_size) +
                      " does not match vocabulary of " +
                      std::to_string(vocab.size()));
  }
  const Corpora corpora = load_corpora(rc.corpus_dir, vocab);
  Model model = Model::build(rc.model, rc.train.seed);
  std::ofstream log;
  std::ostream* log_stream = &std::cout;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError("pretrain: cannot open log " + log_path);
    log_stream = &log;
  }
  train(model, corpora, rc.train, log_stream);
  save_checkpoint(model, out_path);
  std::cout << "saved " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt,
                 int64_t batches) {
  RunConfig rc = parse_run_config(config_path);
  if (rc.corpus_dir.empty() || rc.vocab_path.empty()) {
    throw ConfigError("evaluate: [data] corpus_dir and vocab are required");
  }
  const Vocab vocab = Vocab::load(rc.vocab_path);
  const Corpora corpora = load_corpora(rc.corpus_dir, vocab);
  Model model = load_checkpoint(ckpt);
  const auto q = smooth_distribution(
      [&] {
        std::map<std::string, int64_t> counts;
        for (const auto& [lang, sents] : corpora.sentences) {
          counts[lang] = int64_t(sents.size());
        }
        return counts;
      }(),
      rc.train.alpha);
  Rng rng(rc.train.seed);
  CorpusCursor cursor;
  std::vector<MaskedBatch> eval;
  for (int64_t i = 0; i < batches; ++i) {
    Batch b = sample_batch(corpora, q, rc.train.batch_size, rc.train.seq_len,
                           rng, cursor);
    eval.push_back(
        apply_masking(b, rc.train.masking, rng, model.config().vocab_size));
  }
  std::cout << "mlm_accuracy " << std::fixed << std::setprecision(4)
            << mlm_accuracy(model, eval) << "\n";
  return 0;
}

int cmd_truncate(const std::string& in_path, const std::string& out_path,
                 int64_t keep, bool drop_output) {
  Model model = load_checkpoint(in_path);
  Model cut = model.truncate_layers(keep, !drop_output);
  if (drop_output) cut = cut.to_finetune();
  save_checkpoint(cut, out_path);
  std::cout << "kept " << keep << " layers, " << cut.param_count()
            << " params\n";
  return 0;
}

TaskKind parse_task(const std::string& s) {
  if (s == "classification" || s == "cls") return TaskKind::classification;
  if (s == "tagging" || s == "tag") return TaskKind::tagging;
  if (s == "span") return TaskKind::span;
  throw ConfigError("unknown task kind \"" + s + "\"");
}

TaskDataset load_task(TaskKind kind, const std::string& path, const Vocab& v,
                      int64_t max_len) {
  switch (kind) {
    case TaskKind::classification:
      return load_classification(path, v, max_len);
    case TaskKind::tagging:
      return load_tagging(path, v, max_len);
    default:
      return load_span(path, v, max_len);
  }
}

void print_metrics(const Metrics& m) {
  std::cout << std::fixed << std::setprecision(2);
  if (m.accuracy >= 0) std::cout << "accuracy " << m.accuracy << "\n";
  if (m.f1 >= 0) std::cout << "f1 " << m.f1 << "\n";
  if (m.em >= 0) std::cout << "em " << m.em << "\n";
  if (m.span_f1 >= 0) std::cout << "span_f1 " << m.span_f1 << "\n";
  std::cout.unsetf(std::ios::fixed);
}

int cmd_finetune(const std::string& ckpt, const std::string& vocab_path,
                 const std::string& task, const std::string& train_path,
                 const std::string& dev_path, const std::string& sweep,
                 FinetuneConfig cfg, int64_t max_len) {
  const Vocab vocab = Vocab::load(vocab_path);
  const TaskKind kind = parse_task(task);
  Model base = load_checkpoint(ckpt).to_finetune();
  TaskDataset train_ds = load_task(kind, train_path, vocab, max_len);
  cfg.seed = effective_seed(cfg.seed);
  const int64_t k = std::max<int64_t>(2, int64_t(train_ds.label_names.size()));

  if (!sweep.empty()) {
    if (dev_path.empty()) {
      throw ConfigError("finetune: --sweep needs --dev");
    }
    TaskDataset dev_ds = load_task(kind, dev_path, vocab, max_len);
    std::vector<double> lrs;
    std::stringstream ss(sweep);
    std::string item;
    while (std::getline(ss, item, ',')) lrs.push_back(std::stod(item));
    const SweepResult r = sweep_lr(base, kind, k, train_ds, dev_ds, lrs, cfg);
    for (const auto& [lr, metric] : r.all) {
      std::cout << "lr " << lr << "  dev " << std::fixed
                << std::setprecision(2) << metric << "\n";
      std::cout.unsetf(std::ios::fixed);
    }
    std::cout << "best_lr " << r.best_lr << "\n";
    return 0;
  }

  TaskModel tm = TaskModel::attach_head(base, kind, k, cfg.seed);
  finetune(tm, train_ds, cfg);
  std::cout << "train:\n";
  print_metrics(evaluate(tm, train_ds));
  if (!dev_path.empty()) {
    TaskDataset dev_ds = load_task(kind, dev_path, vocab, max_len);
    std::cout << "dev:\n";
    print_metrics(evaluate(tm, dev_ds));
  }
  return 0;
}

EmbeddingSide parse_side(const std::string& s) {
  if (s == "input") return EmbeddingSide::input;
  if (s == "output") return EmbeddingSide::output;
  throw ConfigError("unknown side \"" + s + "\" (want input or output)");
}

int cmd_wordsim(const std::string& ckpt, const std::string& vocab_path,
                const std::string& data, const std::string& side) {
  const Vocab vocab = Vocab::load(vocab_path);
  Model model = load_checkpoint(ckpt);
  const WordSimDataset ds = load_wordsim(data);
  const WordSimResult r =
      word_similarity(model, vocab, ds, parse_side(side));
  std::cout << "side        " << side << "\n"
            << "pairs_used  " << r.used << "\n"
            << "pairs_skipped " << r.skipped << "\n"
            << "spearman    " << std::fixed << std::setprecision(4)
            << r.correlation << "\n";
  std::cout.unsetf(std::ios::fixed);
  return 0;
}

int cmd_nntrans(const std::string& ckpt, const std::string& vocab_path,
                const std::string& pairs_path, const std::string& layer) {
  const Vocab vocab = Vocab::load(vocab_path);
  Model model = load_checkpoint(ckpt);
  const ParallelPairs pp = load_parallel(pairs_path);
  std::vector<std::string> src, tgt;
  for (const auto& [s, t] : pp.pairs) {
    src.push_back(s);
    tgt.push_back(t);
  }
  const auto sv = sentence_vectors(model, vocab, src);
  const auto tv = sentence_vectors(model, vocab, tgt);
  const int64_t layers = int64_t(sv[0].size());
  int64_t lo = 0, hi = layers - 1;
  if (layer != "all") {
    lo = hi = std::stoll(layer);
    if (lo < 0 || lo >= layers) {
      throw ConfigError("nntrans: layer out of range [0," +
                        std::to_string(layers) + ")");
    }
  }
  std::cout << "layer  accuracy\n";
  for (int64_t l = lo; l <= hi; ++l) {
    std::vector<std::vector<real>> s, t;
    for (const auto& stack : sv) s.push_back(stack[size_t(l)]);
    for (const auto& stack : tv) t.push_back(stack[size_t(l)]);
    std::cout << std::setw(5) << l << "  " << std::fixed
              << std::setprecision(4) << nn_translation(s, t) << "\n";
    std::cout.unsetf(std::ios::fixed);
  }
  return 0;
}

// "label<TAB>sentence" per line.
void load_probe_file(const std::string& path, std::vector<std::string>* sents,
                     std::vector<std::string>* labels) {
  std::ifstream in(path);
  if (!in) throw IoError("probe: cannot open " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("probe: missing tab at line " + std::to_string(lineno));
    }
    labels->push_back(line.substr(0, tab));
    sents->push_back(line.substr(tab + 1));
  }
}

int cmd_probe_mix(const std::string& ckpt, const std::string& vocab_path,
                  const std::string& train_path, const std::string& dev_path,
                  MixProbeConfig cfg) {
  const Vocab vocab = Vocab::load(vocab_path);
  Model model = load_checkpoint(ckpt);
  std::vector<std::string> train_s, train_l, dev_s, dev_l;
  load_probe_file(train_path, &train_s, &train_l);
  load_probe_file(dev_path, &dev_s, &dev_l);
  std::set<std::string> names(train_l.begin(), train_l.end());
  std::vector<std::string> label_names(names.begin(), names.end());
  auto to_ids = [&](const std::vector<std::string>& ls) {
    std::vector<int64_t> ids;
    for (const auto& l : ls) {
      const auto it = std::find(label_names.begin(), label_names.end(), l);
      if (it == label_names.end()) {
        throw ParseError("probe: unseen label \"" + l + "\"");
      }
      ids.push_back(int64_t(it - label_names.begin()));
    }
    return ids;
  };
  cfg.seed = effective_seed(cfg.seed);
  const auto res = mix_probe_train(
      sentence_vectors(model, vocab, train_s), to_ids(train_l),
      sentence_vectors(model, vocab, dev_s), to_ids(dev_l), cfg);
  std::cout << "layer  weight\n" << std::fixed << std::setprecision(4);
  const auto w = res.probe.layer_weights();
  for (size_t l = 0; l < w.size(); ++l) {
    std::cout << std::setw(5) << l << "  " << w[l] << "\n";
  }
  std::cout << "dev_accuracy " << res.dev_accuracy << "\n";
  std::cout.unsetf(std::ios::fixed);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embedding-rebalancing laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_path, log_path, in_path, ckpt, vocab_path;
  std::string task, train_path, dev_path, sweep, side = "input", layer = "all";
  std::string data_path, pairs_path;
  int64_t keep = 0, batches = 4, max_len = 128, target = 0;
  bool drop_output = false;
  FinetuneConfig fcfg;
  MixProbeConfig pcfg;
  double tolerance = 0.02;
  std::vector<std::string> free_axes;

  auto* pre = app.add_subcommand("pretrain", "train a model from a config");
  pre->add_option("--config", config_path)->required();
  pre->add_option("--out", out_path)->required();
  pre->add_option("--log", log_path);
  std::string corpus_dir;
  pre->add_option("--corpus-dir", corpus_dir, "overrides [data] corpus_dir");

  auto* ev = app.add_subcommand("evaluate", "held-in MLM accuracy");
  ev->add_option("--config", config_path)->required();
  ev->add_option("--model", ckpt)->required();
  ev->add_option("--batches", batches);

  auto* tr = app.add_subcommand("truncate", "drop trailing encoder layers");
  tr->add_option("--in", in_path)->required();
  tr->add_option("--out", out_path)->required();
  tr->add_option("--keep", keep)->required();
  tr->add_flag("--drop-output-side", drop_output);

  auto* ft = app.add_subcommand("finetune", "task fine-tuning");
  ft->add_option("--ckpt,--model", ckpt)->required();
  ft->add_option("--vocab", vocab_path)->required();
  ft->add_option("--task", task)->required();
  ft->add_option("--train", train_path)->required();
  ft->add_option("--dev", dev_path);
  ft->add_option("--sweep", sweep, "comma-separated lr grid");
  ft->add_option("--lr", fcfg.lr);
  ft->add_option("--epochs", fcfg.epochs);
  ft->add_option("--batch-size", fcfg.batch_size);
  ft->add_option("--seed", fcfg.seed);
  ft->add_option("--max-len", max_len);

  auto* bud = app.add_subcommand("budget", "parameter accounting");
  auto* bc = bud->add_subcommand("count", "counts for one config");
  bc->add_option("--config", config_path)->required();
  auto* bs = bud->add_subcommand("search", "configs matching a target");
  bs->add_option("--config", config_path)->required();
  bs->add_option("--target", target)->required();
  bs->add_option("--tolerance", tolerance);
  bs->add_option("--free", free_axes, "axes to vary: H, L, Ein, Eout")
      ->required();
  bud->require_subcommand(1);

  auto* an = app.add_subcommand("analyze", "representation analyses");
  auto* ws = an->add_subcommand("wordsim", "word-similarity correlation");
  ws->add_option("--model", ckpt)->required();
  ws->add_option("--vocab", vocab_path)->required();
  ws->add_option("--data", data_path)->required();
  ws->add_option("--side", side);
  auto* nt = an->add_subcommand("nntrans", "translation accuracy per layer");
  nt->add_option("--model", ckpt)->required();
  nt->add_option("--vocab", vocab_path)->required();
  nt->add_option("--pairs", pairs_path)->required();
  nt->add_option("--layer", layer, "layer index or \"all\"");
  auto* pm = an->add_subcommand("probe-mix", "layer-weighted probe");
  pm->add_option("--model", ckpt)->required();
  pm->add_option("--vocab", vocab_path)->required();
  pm->add_option("--train", train_path)->required();
  pm->add_option("--dev", dev_path)->required();
  pm->add_option("--epochs", pcfg.epochs);
  pm->add_option("--lr", pcfg.lr);
  pm->add_option("--seed", pcfg.seed);
  an->require_subcommand(1);

  auto* ex = app.add_subcommand("export", "write an embedding matrix");
  ex->add_option("--model", ckpt)->required();
  ex->add_option("--side", side);
  ex->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (pre->parsed()) {
      return cmd_pretrain(config_path, out_path, log_path, corpus_dir);
    }
    if (ev->parsed()) return cmd_evaluate(config_path, ckpt, batches);
    if (tr->parsed()) return cmd_truncate(in_path, out_path, keep, drop_output);
    if (ft->parsed()) {
      return cmd_finetune(ckpt, vocab_path, task, train_path, dev_path, sweep,
                          fcfg, max_len);
    }
    if (bc->parsed()) {
      RunConfig rc = parse_run_config(config_path);
      print_budget(rc.model);
      return 0;
    }
    if (bs->parsed()) {
      RunConfig rc = parse_run_config(config_path);
      SearchSpec spec;
      spec.base = rc.model;
      spec.target_ft_count = target;
      spec.tolerance = tolerance;
      for (const auto& a : free_axes) {
        if (a == "H") spec.free_axes.push_back(FreeAxis::H);
        else if (a == "L") spec.free_axes.push_back(FreeAxis::L);
        else if (a == "Ein") spec.free_axes.push_back(FreeAxis::Ein);
        else if (a == "Eout") spec.free_axes.push_back(FreeAxis::Eout);
        else throw ConfigError("unknown axis \"" + a + "\"");
      }
      const auto found = search_config(spec);
      std::cout << "H     L   Ein   Eout  finetune    pretrain\n";
      for (const auto& c : found) {
        const ParamBudget b = count_params(c);
        std::cout << std::setw(5) << c.hidden << std::setw(4) << c.layers
                  << std::setw(6) << c.input_dim << std::setw(7)
                  << c.output_dim << std::setw(10) << b.finetune_count
                  << std::setw(12) << b.pretrain_count << "\n";
      }
      return 0;
    }
    if (ws->parsed()) return cmd_wordsim(ckpt, vocab_path, data_path, side);
    if (nt->parsed()) return cmd_nntrans(ckpt, vocab_path, pairs_path, layer);
    if (pm->parsed()) {
      return cmd_probe_mix(ckpt, vocab_path, train_path, dev_path, pcfg);
    }
    if (ex->parsed()) {
      export_embeddings(load_checkpoint(ckpt), parse_side(side), out_path);
      std::cout << "saved " << out_path << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
