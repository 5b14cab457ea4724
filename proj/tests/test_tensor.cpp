// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rebalance/grad_check.hpp"
#include "rebalance/ops.hpp"
#include "rebalance/random.hpp"

using namespace rebalance;

namespace {

TensorPtr t2(int64_t r, int64_t c, std::vector<real> v) {
  return make_tensor({r, c}, std::move(v));
}

TensorPtr random_tensor(std::vector<int64_t> shape, Rng& rng) {
  auto t = make_tensor(std::move(shape));
  for (auto& x : t->data) x = real(rng.normal());
  return t;
}

}  // namespace

TEST_CASE("matmul identity") {
  Tape tape;
  auto i2 = t2(2, 2, {1, 0, 0, 1});
  auto a = t2(2, 2, {1, 2, 3, 4});
  auto c = matmul(tape, i2, a);
  CHECK(c->data == std::vector<real>{1, 2, 3, 4});
}

TEST_CASE("matmul hand oracle") {
  Tape tape;
  auto a = t2(2, 2, {1, 2, 3, 4});
  auto b = t2(2, 1, {5, 6});
  auto c = matmul(tape, a, b);
  CHECK(c->data[0] == doctest::Approx(17));
  CHECK(c->data[1] == doctest::Approx(39));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  auto a = t2(2, 3, std::vector<real>(6, 1));
  auto b = t2(2, 2, std::vector<real>(4, 1));
  CHECK_THROWS_WITH_AS(matmul(tape, a, b),
                       doctest::Contains("[2x3]"), ShapeError);
  try {
    matmul(tape, a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  const double err = grad_check(
      [&](Tape& tape) {
        auto c = matmul(tape, a, b);
        // reduce to scalar through a fixed weighting
        auto w = t2(2, 1, {real(0.3), real(-0.7)});
        auto s = matmul(tape, c, w);
        auto ones = t2(1, 3, {1, 1, 1});
        return matmul(tape, ones, s);
      },
      {a, b}, 1e-2);
  CHECK(err < 1e-3);
}

TEST_CASE("layer_norm constant row") {
  Tape tape;
  auto x = t2(1, 3, {5, 5, 5});
  auto gamma = make_tensor({3}, {1, 1, 1});
  auto beta = make_tensor({3}, {0, 0, 0});
  auto y = layer_norm(tape, x, gamma, beta, real(1e-5));
  for (real v : y->data) CHECK(std::abs(double(v)) < 1e-6);
}

TEST_CASE("layer_norm two-point row") {
  Tape tape;
  auto x = t2(1, 2, {1, 3});
  auto gamma = make_tensor({2}, {1, 1});
  auto beta = make_tensor({2}, {0, 0});
  auto y = layer_norm(tape, x, gamma, beta, real(1e-10));
  CHECK(double(y->data[0]) == doctest::Approx(-1).epsilon(1e-4));
  CHECK(double(y->data[1]) == doctest::Approx(1).epsilon(1e-4));
}

TEST_CASE("layer_norm width mismatch") {
  Tape tape;
  auto x = t2(1, 3, {1, 2, 3});
  auto gamma = make_tensor({2}, {1, 1});
  auto beta = make_tensor({2}, {0, 0});
  CHECK_THROWS_AS(layer_norm(tape, x, gamma, beta, real(1e-5)), ShapeError);
}

TEST_CASE("layer_norm gradient vs finite differences") {
  Rng rng(2);
  auto x = random_tensor({2, 5}, rng);
  auto gamma = random_tensor({5}, rng);
  auto beta = random_tensor({5}, rng);
  auto w = random_tensor({5, 1}, rng);
  const double err = grad_check(
      [&](Tape& tape) {
        auto y = layer_norm(tape, x, gamma, beta, real(1e-5));
        auto s = matmul(tape, y, w);
        auto ones = t2(1, 2, {1, 1});
        return matmul(tape, ones, s);
      },
      {x, gamma, beta}, 1e-2);
  CHECK(err < 1e-3);
}

TEST_CASE("gelu point values") {
  Tape tape;
  auto x = t2(1, 3, {0, 10, 1});
  auto y = gelu(tape, x);
  CHECK(double(y->data[0]) == doctest::Approx(0.0));
  CHECK(double(y->data[1]) == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(double(y->data[2]) == doctest::Approx(0.8412).epsilon(1e-3));
}

TEST_CASE("softmax_cross_entropy uniform logits") {
  Tape tape;
  auto logits = t2(1, 4, {2, 2, 2, 2});
  auto loss = softmax_cross_entropy(tape, logits, {3});
  CHECK(double(loss->data[0]) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy peaked logits") {
  Tape tape;
  auto logits = t2(1, 3, {10, 0, 0});
  auto loss = softmax_cross_entropy(tape, logits, {0});
  CHECK(double(loss->data[0]) == doctest::Approx(9.08e-5).epsilon(0.01));
}

TEST_CASE("softmax_cross_entropy empty mask") {
  Tape tape;
  auto logits = t2(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_WITH_AS(
      softmax_cross_entropy(tape, logits, {0, 1}, {false, false}),
      doctest::Contains("no supervised positions"), StateError);
}

TEST_CASE("softmax_cross_entropy gradient vs finite differences") {
  Rng rng(3);
  auto logits = random_tensor({4, 6}, rng);
  const double err = grad_check(
      [&](Tape& tape) {
        return softmax_cross_entropy(tape, logits, {1, 0, 5, 2},
                                     {true, false, true, true});
      },
      {logits}, 1e-2);
  CHECK(err < 1e-3);
}

TEST_CASE("gather_rows basics") {
  Tape tape;
  auto table = t2(1, 3, {7, 8, 9});
  auto out = gather_rows(tape, table, {0});
  CHECK(out->data == std::vector<real>{7, 8, 9});
}

TEST_CASE("gather_rows repeated ids accumulate") {
  auto table = t2(4, 2, {0, 0, 0, 0, 1, 1, 0, 0});
  table->requires_grad = true;
  Tape tape;
  auto out = gather_rows(tape, table, {2, 2});
  auto ones = t2(1, 2, {1, 1});
  auto col = t2(2, 1, {1, 1});
  auto s = matmul(tape, ones, matmul(tape, out, col));
  tape.backward(s);
  CHECK(double(table->grad[4]) == doctest::Approx(2.0));
  CHECK(double(table->grad[5]) == doctest::Approx(2.0));
  CHECK(double(table->grad[0]) == doctest::Approx(0.0));
}

TEST_CASE("gather_rows bounds") {
  Tape tape;
  auto table = t2(4, 2, std::vector<real>(8, 0));
  CHECK_THROWS_AS(gather_rows(tape, table, {5}), IndexError);
}

TEST_CASE("grad_check quadratic") {
  auto x = make_tensor({1, 1}, std::vector<real>{3});
  const double err = grad_check(
      [&](Tape& tape) { return matmul(tape, x, x); }, {x}, 1e-2);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check linear is near exact") {
  auto x = make_tensor({1, 3}, {1, 2, 3});
  auto w = make_tensor({3, 1}, {4, 5, 6});
  w->requires_grad = false;
  const double err =
      grad_check([&](Tape& tape) { return matmul(tape, x, w); }, {x}, 1e-2);
  CHECK(err < 1e-3);
}

TEST_CASE("shared subexpressions accumulate") {
  auto x = make_tensor({1, 1}, std::vector<real>{5});
  x->requires_grad = true;
  Tape tape;
  auto y = add(tape, x, x);
  tape.backward(y);
  CHECK(double(x->grad[0]) == doctest::Approx(2.0));
}

TEST_CASE("forward determinism") {
  Rng rng(4);
  auto a = random_tensor({3, 3}, rng);
  auto b = random_tensor({3, 3}, rng);
  Tape t1, t2_;
  auto c1 = matmul(t1, a, b);
  auto c2 = matmul(t2_, a, b);
  CHECK(c1->data == c2->data);
}

TEST_CASE("primitive gradient suite") {
  for (uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed + 10);
    auto x = random_tensor({2, 4}, rng);
    auto b = random_tensor({4}, rng);
    auto g = random_tensor({4}, rng);
    auto bt = random_tensor({4}, rng);
    auto w = random_tensor({4, 1}, rng);
    w->requires_grad = false;
    auto reduce = [&](Tape& tape, TensorPtr y) {
      auto ones = t2(1, y->shape[0], std::vector<real>(y->shape[0], 1));
      return matmul(tape, ones, matmul(tape, y, w));
    };
    CHECK(grad_check([&](Tape& t) { return reduce(t, add_bias(t, x, b)); },
                     {x, b}, 1e-2) < 1e-3);
    CHECK(grad_check([&](Tape& t) { return reduce(t, gelu(t, x)); }, {x},
                     1e-2) < 1e-3);
    CHECK(grad_check([&](Tape& t) { return reduce(t, tanh_act(t, x)); }, {x},
                     1e-2) < 1e-3);
    CHECK(grad_check(
              [&](Tape& t) {
                return reduce(t, layer_norm(t, x, g, bt, real(1e-5)));
              },
              {x, g, bt}, 1e-2) < 1e-3);
    CHECK(grad_check([&](Tape& t) { return reduce(t, softmax_rows(t, x)); },
                     {x}, 1e-2) < 1e-3);
    auto wv = random_tensor({1, 3}, rng);
    auto p0 = random_tensor({2, 4}, rng);
    auto p1 = random_tensor({2, 4}, rng);
    auto p2 = random_tensor({2, 4}, rng);
    CHECK(grad_check(
              [&](Tape& t) {
                auto sm = softmax_rows(t, wv);
                return reduce(t, weighted_sum(t, {p0, p1, p2}, sm));
              },
              {wv, p0, p1, p2}, 1e-2) < 1e-3);
    auto wq = random_tensor({2, 6}, rng);
    auto wk = random_tensor({2, 6}, rng);
    auto wvv = random_tensor({2, 6}, rng);
    auto w6 = random_tensor({6, 1}, rng);
    w6->requires_grad = false;
    CHECK(grad_check(
              [&](Tape& t) {
                auto y = attention(t, wq, wk, wvv, 1, 2, 2,
                                   std::vector<bool>{true, true});
                auto ones = t2(1, 2, {1, 1});
                return matmul(t, ones, matmul(t, y, w6));
              },
              {wq, wk, wvv}, 1e-2) < 1e-3);
  }
}
