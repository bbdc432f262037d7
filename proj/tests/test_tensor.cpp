#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "mapdp/rng.hpp"
#include "mapdp/tensor.hpp"

using namespace mapdp;
using testing_oracles::fd_gradients;
using testing_oracles::max_rel_err;

TEST_CASE("matmul basics") {
  Tape<double> tape;
  auto eye = make_tensor<double>({2, 2}, {1, 0, 0, 1});
  auto v = make_tensor<double>({2, 1}, {3, 4});
  auto r = matmul(tape, eye, v);
  CHECK(r->data == std::vector<double>{3, 4});

  auto a = make_tensor<double>({1, 2}, {1, 2});
  auto b = make_tensor<double>({2, 1}, {3, 4});
  CHECK(matmul(tape, a, b)->data[0] == 11.0);

  CHECK_THROWS_AS(matmul(tape, b, eye), ShapeError);  // 2x1 times 2x2
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(42);
  auto a = make_tensor<double>({3, 4});
  auto b = make_tensor<double>({4, 2});
  for (auto& x : a->data) x = rng.uniform(-1, 1);
  for (auto& x : b->data) x = rng.uniform(-1, 1);
  Tape<double> tape;
  auto c = matmul(tape, a, b);
  auto expect = testing_oracles::matmul_naive(a->data, b->data, 3, 4, 2);
  for (size_t i = 0; i < c->size(); ++i)
    CHECK(std::abs(c->data[i] - expect[i]) < 1e-12);
}

TEST_CASE("elementwise mul with masks") {
  Tape<double> tape;
  auto w = make_tensor<double>({3}, {1, 2, 3});
  auto ones = make_tensor<double>({3}, {1, 1, 1});
  CHECK(mul(tape, w, ones)->data == std::vector<double>{1, 2, 3});
  auto m = make_tensor<double>({3}, {0, 1, 0});
  CHECK(mul(tape, w, m)->data == std::vector<double>{0, 2, 0});

  auto wg = make_tensor<double>({3}, {1, 2, 3}, true);
  Tape<double> t2;
  auto loss = sum(t2, mul(t2, wg, m));
  t2.backward(loss);
  CHECK(wg->grad == std::vector<double>{0, 1, 0});

  auto bad = make_tensor<double>({2}, {1, 2});
  CHECK_THROWS_AS(mul(tape, w, bad), ShapeError);
}

TEST_CASE("softmax cross entropy values") {
  Tape<double> tape;
  auto logits = make_tensor<double>({1, 10}, std::vector<double>(10, 0.7));
  auto loss = softmax_cross_entropy(tape, logits, {3});
  CHECK(loss->data[0] == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  auto extreme = make_tensor<double>({1, 2}, {1000, 0});
  auto l2 = softmax_cross_entropy(tape, extreme, {0});
  CHECK(std::isfinite(l2->data[0]));
  CHECK(l2->data[0] == doctest::Approx(0).epsilon(1e-9));

  CHECK_THROWS_AS(softmax_cross_entropy(tape, extreme, {2}), Error);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, extreme, {-1}), Error);
  auto empty = make_tensor<double>({0, 2});
  CHECK_THROWS_AS(softmax_cross_entropy(tape, empty, {}), Error);
}

TEST_CASE("softmax cross entropy gradient vs finite differences") {
  Rng rng(7);
  auto logits = make_tensor<double>({4, 3}, true);
  for (auto& x : logits->data) x = rng.uniform(-2, 2);
  const std::vector<int> labels{0, 2, 1, 1};

  auto loss_value = [&] {
    Tape<double> t;
    return softmax_cross_entropy(t, logits, labels)->data[0];
  };
  Tape<double> tape;
  auto loss = softmax_cross_entropy(tape, logits, labels);
  tape.backward(loss);
  auto fd = fd_gradients({logits}, loss_value);
  CHECK(max_rel_err(logits->grad, fd[0]) < 1e-6);
}

TEST_CASE("backward on linear and quadratic forms") {
  auto w = make_tensor<double>({3}, {1, 2, 3}, true);
  Tape<double> tape;
  tape.backward(sum(tape, w));
  CHECK(w->grad == std::vector<double>{1, 1, 1});

  auto w2 = make_tensor<double>({2}, {1, -2}, true);
  Tape<double> t2;
  t2.backward(sum(t2, mul(t2, w2, w2)));
  CHECK(w2->grad == std::vector<double>{2, -4});
}

TEST_CASE("backward error paths") {
  auto w = make_tensor<double>({2}, {1, 2}, true);
  Tape<double> tape;
  auto y = mul(tape, w, w);
  CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar
  auto loss = sum(tape, y);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), Error);  // consumed
}

TEST_CASE("two-layer MLP gradient vs finite differences") {
  Rng rng(11);
  auto w1 = make_tensor<double>({5, 4}, true);
  auto b1 = make_tensor<double>({4}, true);
  auto w2 = make_tensor<double>({4, 3}, true);
  auto b2 = make_tensor<double>({3}, true);
  auto x = make_tensor<double>({6, 5});
  for (auto* t : {&w1, &b1, &w2, &b2, &x})
    for (auto& v : (*t)->data) v = rng.uniform(-1, 1);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};

  auto loss_value = [&] {
    Tape<double> t;
    auto h = relu(t, add_bias(t, matmul(t, x, w1), b1));
    return softmax_cross_entropy(t, add_bias(t, matmul(t, h, w2), b2), labels)
        ->data[0];
  };
  Tape<double> tape;
  auto h = relu(tape, add_bias(tape, matmul(tape, x, w1), b1));
  auto loss = softmax_cross_entropy(
      tape, add_bias(tape, matmul(tape, h, w2), b2), labels);
  tape.backward(loss);

  auto fd = fd_gradients({w1, b1, w2, b2}, loss_value);
  CHECK(max_rel_err(w1->grad, fd[0]) < 1e-4);
  CHECK(max_rel_err(b1->grad, fd[1]) < 1e-4);
  CHECK(max_rel_err(w2->grad, fd[2]) < 1e-4);
  CHECK(max_rel_err(b2->grad, fd[3]) < 1e-4);
}

TEST_CASE("determinism and grad-reset idempotence") {
  Rng rng(3);
  auto w = make_tensor<double>({4, 4}, true);
  auto x = make_tensor<double>({2, 4});
  for (auto& v : w->data) v = rng.uniform(-1, 1);
  for (auto& v : x->data) v = rng.uniform(-1, 1);
  const std::vector<int> labels{1, 3};

  auto run = [&] {
    Tape<double> t;
    auto loss = softmax_cross_entropy(t, matmul(t, x, w), labels);
    t.backward(loss);
    return std::pair(loss->data[0], w->grad);
  };
  auto [l1, g1] = run();
  w->zero_grad();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("debug mode flags non-finite op outputs") {
  setenv("MAP_DEBUG_CHECKS", "1", 1);
  // debug_checks caches its first read; exercise whichever value is live.
  Tape<double> tape;
  auto a = make_tensor<double>({1}, std::vector<double>{1e308});
  auto b = make_tensor<double>({1}, std::vector<double>{1e308});
  if (debug_checks()) {
    CHECK_THROWS_AS(mul(tape, a, b), Error);
  } else {
    CHECK_NOTHROW(mul(tape, a, b));
  }
}
