// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "rebalance/analysis.hpp"
#include "rebalance/checkpoint.hpp"
#include "rebalance/random.hpp"

using namespace rebalance;

namespace {

Vocab four_word_vocab() {
  return Vocab::from_pieces({{"aa", -1}, {"bb", -1}, {"cc", -1}, {"dd", -1}});
}

Model tiny_model(bool coupled = false, int64_t ein = 4, int64_t eout = 4) {
  ModelConfig c;
  c.vocab_size = 9;
  c.input_dim = ein;
  c.output_dim = eout;
  c.hidden = 4;
  c.layers = 1;
  c.heads = 1;
  c.max_positions = 16;
  c.coupled = coupled;
  return Model::build(c, 7);
}

WordSimDataset gold_ds(std::vector<double> scores) {
  WordSimDataset ds;
  ds.triples = {{"aa", "bb", scores[0]},
                {"aa", "cc", scores[1]},
                {"bb", "cc", scores[2]}};
  return ds;
}

// sets input rows so dots are aa.bb=2, aa.cc=3, bb.cc=6
void plant_input_rows(Model& m) {
  auto ie = m.param("input_embedding");
  std::fill(ie->data.begin(), ie->data.end(), real(0));
  ie->data[5 * 4 + 0] = 1;  // aa
  ie->data[6 * 4 + 0] = 2;  // bb
  ie->data[7 * 4 + 0] = 3;  // cc
}

}  // namespace

TEST_CASE("spearman oracles") {
  CHECK(spearman({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3}, {30, 20, 10}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5));
}

TEST_CASE("spearman is a rank statistic") {
  const std::vector<double> a{0.1, 2.7, 1.3, 5.0};
  const std::vector<double> b{3.0, 9.0, 4.5, 12.0};
  const double base = spearman(a, b);
  std::vector<double> bt;
  for (double x : b) bt.push_back(std::exp(x / 3.0));  // strictly increasing
  CHECK(spearman(a, bt) == doctest::Approx(base));
}

TEST_CASE("spearman average ranks for ties") {
  // b has a tie: ranks (1, 2.5, 2.5, 4)
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{5, 7, 7, 9};
  // Pearson of ranks (1,2,3,4) vs (1,2.5,2.5,4)
  CHECK(spearman(a, b) == doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
}

TEST_CASE("spearman input validation") {
  CHECK_THROWS_AS(spearman({1}, {1}), ConfigError);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), ConfigError);
  CHECK_THROWS_AS(spearman({1, 2, 3}, {5, 5, 5}), StateError);
}

TEST_CASE("word_similarity perfect and reversed") {
  Vocab v = four_word_vocab();
  Model m = tiny_model();
  plant_input_rows(m);
  auto up = word_similarity(m, v, gold_ds({1, 2, 3}), EmbeddingSide::input);
  CHECK(up.correlation == doctest::Approx(1.0));
  CHECK(up.used == 3);
  CHECK(up.skipped == 0);
  auto down = word_similarity(m, v, gold_ds({3, 2, 1}), EmbeddingSide::input);
  CHECK(down.correlation == doctest::Approx(-1.0));
  auto half = word_similarity(m, v, gold_ds({1, 3, 2}), EmbeddingSide::input);
  CHECK(half.correlation == doctest::Approx(0.5));
}

TEST_CASE("word_similarity gold transform invariance") {
  Vocab v = four_word_vocab();
  Model m = tiny_model();
  plant_input_rows(m);
  auto r1 = word_similarity(m, v, gold_ds({1, 2, 3}), EmbeddingSide::input);
  auto r2 =
      word_similarity(m, v, gold_ds({0.1, 7.5, 100}), EmbeddingSide::input);
  CHECK(r1.correlation == doctest::Approx(r2.correlation));
}

TEST_CASE("word_similarity output side uses embedding columns") {
  Vocab v = four_word_vocab();
  Model m = tiny_model(false, 4, 3);
  auto oe = m.param("output_embedding");  // [E_out=3, V=9]
  std::fill(oe->data.begin(), oe->data.end(), real(0));
  oe->data[0 * 9 + 5] = 1;
  oe->data[0 * 9 + 6] = 2;
  oe->data[0 * 9 + 7] = 3;
  auto r = word_similarity(m, v, gold_ds({1, 2, 3}), EmbeddingSide::output);
  CHECK(r.correlation == doctest::Approx(1.0));
  Model ft = m.to_finetune();
  CHECK_THROWS_AS(
      word_similarity(ft, v, gold_ds({1, 2, 3}), EmbeddingSide::output),
      StateError);
}

TEST_CASE("word_similarity coupled sides agree") {
  Vocab v = four_word_vocab();
  Model m = tiny_model(true);
  auto in =
      word_similarity(m, v, gold_ds({1, 2, 3}), EmbeddingSide::input);
  auto out =
      word_similarity(m, v, gold_ds({1, 2, 3}), EmbeddingSide::output);
  CHECK(in.correlation == doctest::Approx(out.correlation));
}

TEST_CASE("word_similarity multi-piece averaging") {
  Vocab v = four_word_vocab();
  Model m = tiny_model();
  plant_input_rows(m);
  // "aabb" segments into aa+bb; its vector is the mean of the two rows
  WordSimDataset ds;
  ds.triples = {{"aabb", "cc", 4.5},   // mean(1,2)=1.5 dot 3 -> 4.5
                {"aa", "cc", 3.0},     // 3
                {"bb", "cc", 6.0}};    // 6
  auto r = word_similarity(m, v, ds, EmbeddingSide::input);
  CHECK(r.correlation == doctest::Approx(1.0));
}

TEST_CASE("word_similarity skip accounting") {
  Vocab v = four_word_vocab();
  Model m = tiny_model();
  plant_input_rows(m);
  const char* words[3][2] = {{"aa", "bb"}, {"aa", "cc"}, {"bb", "cc"}};
  WordSimDataset ds;
  for (int i = 0; i < 9; ++i)
    ds.triples.emplace_back(words[i % 3][0], words[i % 3][1], double(i));
  ds.triples.emplace_back("zz", "aa", 5.0);  // z is uncoverable -> skip
  auto r = word_similarity(m, v, ds, EmbeddingSide::input);
  CHECK(r.skipped == 1);
  CHECK(r.used == 9);
  WordSimDataset bad;
  bad.triples = {{"zz", "aa", 1}, {"aa", "bb", 2}, {"bb", "cc", 3}};
  CHECK_THROWS_AS(word_similarity(m, v, bad, EmbeddingSide::input),
                  StateError);  // 33% skipped
}

TEST_CASE("load_wordsim and load_parallel") {
  {
    std::ofstream("ws.tsv") << "aa\tbb\t0.5\ncc\tdd\t-1\n";
    auto ds = load_wordsim("ws.tsv");
    CHECK(ds.triples.size() == 2);
    CHECK(std::get<2>(ds.triples[0]) == 0.5);
    std::ofstream("ws_bad.tsv") << "aa\tbb\t0.5\nmissing\n";
    CHECK_THROWS_WITH_AS(load_wordsim("ws_bad.tsv"),
                         doctest::Contains("line 2"), ParseError);
    std::remove("ws.tsv");
    std::remove("ws_bad.tsv");
  }
  {
    std::ofstream("pp.tsv") << "aa\tbb\ncc\tdd\n";
    auto pp = load_parallel("pp.tsv");
    CHECK(pp.pairs.size() == 2);
    std::ofstream("pp_dup.tsv") << "aa\tbb\ncc\tbb\n";
    CHECK_THROWS_AS(load_parallel("pp_dup.tsv"), ParseError);
    std::remove("pp.tsv");
    std::remove("pp_dup.tsv");
  }
}

TEST_CASE("sentence_vectors shape") {
  Vocab v = four_word_vocab();
  Model m = tiny_model();
  auto stacks = sentence_vectors(m, v, {"aa bb", "cc"});
  REQUIRE(stacks.size() == 2);
  for (const auto& s : stacks) {
    REQUIRE(s.size() == 2);  // L+1 layers
    for (const auto& vec : s) CHECK(vec.size() == 4);
  }
  // a one-token sentence's vector is that token's state, not diluted by
  // [CLS]/[SEP]
  CHECK(stacks[0][0] != stacks[1][0]);
}

TEST_CASE("nn_translation constant offset is perfect") {
  Rng rng(3);
  std::vector<std::vector<real>> src, tgt;
  for (int i = 0; i < 10; ++i) {
    std::vector<real> s(6), t(6);
    for (int j = 0; j < 6; ++j) {
      s[j] = real(rng.normal());
      t[j] = s[j] + real(2.5) + real(0.5 * j);
    }
    src.push_back(s);
    tgt.push_back(t);
  }
  CHECK(nn_translation(src, tgt) == doctest::Approx(1.0));
}

TEST_CASE("nn_translation doubled basis enumeration") {
  std::vector<std::vector<real>> src{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<std::vector<real>> tgt{{2, 0, 0}, {0, 2, 0}, {0, 0, 2}};
  // offset = mean(t - s) = (1/3, 1/3, 1/3); each translated source stays
  // nearest its doubled basis vector (verified by the 9-distance table)
  CHECK(nn_translation(src, tgt) == doctest::Approx(1.0));
}

TEST_CASE("nn_translation chance level on random vectors") {
  Rng rng(5);
  std::vector<std::vector<real>> src, tgt;
  for (int i = 0; i < 200; ++i) {
    std::vector<real> s(8), t(8);
    for (int j = 0; j < 8; ++j) {
      s[j] = real(rng.normal());
      t[j] = real(rng.normal());
    }
    src.push_back(s);
    tgt.push_back(t);
  }
  CHECK(nn_translation(src, tgt) < 0.05);
}

TEST_CASE("nn_translation rigid translation invariance") {
  Rng rng(11);
  std::vector<std::vector<real>> src, tgt;
  for (int i = 0; i < 20; ++i) {
    std::vector<real> s(5), t(5);
    for (int j = 0; j < 5; ++j) {
      s[j] = real(rng.normal());
      t[j] = real(rng.normal() + 0.3 * double(s[j]));
    }
    src.push_back(s);
    tgt.push_back(t);
  }
  const double base = nn_translation(src, tgt);
  auto src2 = src;
  auto tgt2 = tgt;
  for (auto& s : src2)
    for (auto& x : s) x += real(7);
  for (auto& t : tgt2)
    for (auto& x : t) x -= real(3);
  CHECK(nn_translation(src2, tgt2) == doctest::Approx(base));
}

TEST_CASE("nn_translation validates input") {
  std::vector<std::vector<real>> a{{1, 0}, {0, 1}};
  std::vector<std::vector<real>> b{{1, 0}};
  CHECK_THROWS_AS(nn_translation(a, b), ConfigError);
  std::vector<std::vector<real>> c{{1, 0}, {0, 1, 2}};
  CHECK_THROWS_AS(nn_translation(a, c), ConfigError);
}

TEST_CASE("mix probe uniform weights at zero scores") {
  MixProbe p;
  p.layer_scores = make_tensor({1, 4}, std::vector<real>(4, 0));
  auto w = p.layer_weights();
  REQUIRE(w.size() == 4);
  for (double x : w) CHECK(x == doctest::Approx(0.25));
}

TEST_CASE("mix probe planted signal") {
  // layer 1 of 3 carries the class; other layers are noise
  Rng rng(13);
  const int64_t W = 8, L = 3;
  auto make_set = [&](int n, std::vector<std::vector<std::vector<real>>>* acts,
                      std::vector<int64_t>* labels) {
    for (int i = 0; i < n; ++i) {
      const int64_t label = rng.uniform_int(2);
      std::vector<std::vector<real>> stack;
      for (int64_t l = 0; l < L; ++l) {
        std::vector<real> vec(W);
        for (auto& x : vec) x = real(rng.normal());
        if (l == 1) {
          for (int64_t j = 0; j < W; ++j)
            vec[j] = real((label == 0 ? 2.0 : -2.0) + 0.1 * rng.normal());
        }
        stack.push_back(vec);
      }
      acts->push_back(stack);
      labels->push_back(label);
    }
  };
  std::vector<std::vector<std::vector<real>>> train_acts, dev_acts;
  std::vector<int64_t> train_labels, dev_labels;
  make_set(80, &train_acts, &train_labels);
  make_set(40, &dev_acts, &dev_labels);
  MixProbeConfig cfg;
  cfg.seed = 5;
  auto res =
      mix_probe_train(train_acts, train_labels, dev_acts, dev_labels, cfg);
  CHECK(res.dev_accuracy >= 0.99);
  auto w = res.probe.layer_weights();
  REQUIRE(w.size() == 3);
  CHECK(w[1] > w[0]);
  CHECK(w[1] > w[2]);
  double sum = 0;
  for (double x : w) {
    CHECK(x > 0);
    sum += x;
  }
  CHECK(sum == doctest::Approx(1.0));
  auto preds = mix_probe_predict(res.probe, dev_acts);
  int64_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    correct += (preds[i] == dev_labels[i]) ? 1 : 0;
  CHECK(double(correct) / double(preds.size()) ==
        doctest::Approx(res.dev_accuracy));
}

TEST_CASE("mix probe input validation") {
  std::vector<std::vector<std::vector<real>>> acts{
      {{1, 0, 0, 0}, {0, 1, 0, 0}}, {{1, 1, 0, 0}, {0, 0, 1, 0}}};
  MixProbeConfig cfg;
  CHECK_THROWS_AS(mix_probe_train(acts, {0, 0}, acts, {0, 0}, cfg),
                  ConfigError);  // single class
  CHECK_THROWS_AS(mix_probe_train(acts, {0}, acts, {0, 1}, cfg), ConfigError);
  auto ragged = acts;
  ragged[1].pop_back();
  CHECK_THROWS_AS(mix_probe_train(ragged, {0, 1}, acts, {0, 1}, cfg),
                  ConfigError);
}

TEST_CASE("export_embeddings input side round trip") {
  Model m = tiny_model();
  export_embeddings(m, EmbeddingSide::input, "emb_in.ckpt");
  auto t = load_matrix("emb_in.ckpt");
  CHECK(t->shape == std::vector<int64_t>{9, 4});
  CHECK(t->data == m.param("input_embedding")->data);
  std::remove("emb_in.ckpt");
}

TEST_CASE("export_embeddings output side is vocabulary-major") {
  Model m = tiny_model(false, 4, 3);
  export_embeddings(m, EmbeddingSide::output, "emb_out.ckpt");
  auto t = load_matrix("emb_out.ckpt");
  REQUIRE(t->shape == std::vector<int64_t>{9, 3});
  auto oe = m.param("output_embedding");  // [3, 9]
  for (int64_t v = 0; v < 9; ++v)
    for (int64_t j = 0; j < 3; ++j)
      CHECK(t->data[v * 3 + j] == oe->data[j * 9 + v]);
  std::remove("emb_out.ckpt");
}

TEST_CASE("export_embeddings coupled sides identical") {
  Model m = tiny_model(true);
  export_embeddings(m, EmbeddingSide::input, "emb_a.ckpt");
  export_embeddings(m, EmbeddingSide::output, "emb_b.ckpt");
  std::ifstream a("emb_a.ckpt", std::ios::binary), b("emb_b.ckpt",
                                                     std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)),
                 std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)),
                 std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  std::remove("emb_a.ckpt");
  std::remove("emb_b.ckpt");
}

TEST_CASE("export_embeddings rejects missing output side") {
  Model ft = tiny_model().to_finetune();
  CHECK_THROWS_AS(export_embeddings(ft, EmbeddingSide::output, "x.ckpt"),
                  StateError);
}
