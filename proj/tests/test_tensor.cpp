// SPDX-License-Identifier: Apache-2.0
//
// Autodiff engine tests: forward semantics against hand values, analytic
// gradients against the f64 central-difference oracle, and graph/backward
// contracts.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unordered_set>

#include "lsmae/rng.hpp"
#include "lsmae/tensor.hpp"
#include "support/fd_check.hpp"

using namespace lsmae;
using lsmae::test::FdInput;
using lsmae::test::fd_check;
using lsmae::test::random_inputs;

namespace {

constexpr double kLinearTol = 1e-4;
constexpr double kNonlinearTol = 1e-3;

// Scalar probe: sum(x * R) with a fixed random weighting so every output
// coordinate contributes to the loss.
template <typename T>
TensorT<T> probe(const TensorT<T>& x, std::uint64_t seed = 7) {
  CounterRng rng(seed, 0x707262);
  std::vector<T> w(x.numel());
  for (auto& v : w) v = static_cast<T>(rng.next_normal());
  return sum(mul(x, TensorT<T>(x.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("matmul identity") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = matmul(eye, x);
  CHECK(y.value() == x.value());
}

TEST_CASE("matmul hand-multiplied example") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.value()[0] == doctest::Approx(17.0));
  CHECK(c.value()[1] == doctest::Approx(39.0));
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a({2, 3}, std::vector<float>(6, 0.0f));
  Tensor b({2, 2}, std::vector<float>(4, 0.0f));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients vs finite differences") {
  auto inputs = random_inputs({{4, 3}, {3, 5}}, 11);
  for (std::size_t which : {0, 1}) {
    auto rep = fd_check([](auto& in) { return probe(matmul(in[0], in[1])); }, inputs, which);
    CHECK(rep.max_rel_err < kLinearTol);
  }
}

TEST_CASE("batched matmul, shared and batched rhs") {
  auto inputs = random_inputs({{2, 3, 4}, {4, 3}}, 12);
  for (std::size_t which : {0, 1}) {
    auto rep = fd_check([](auto& in) { return probe(matmul(in[0], in[1])); }, inputs, which);
    CHECK(rep.max_rel_err < kLinearTol);
  }
  auto inputs2 = random_inputs({{2, 3, 4}, {2, 4, 2}}, 13);
  auto rep = fd_check([](auto& in) { return probe(matmul(in[0], in[1])); }, inputs2, 0);
  CHECK(rep.max_rel_err < kLinearTol);
}

TEST_CASE("layernorm constant row is zero") {
  Tensor x({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  Tensor y = layernorm(x, Tensor::full({4}, 1.0f), Tensor::zeros({4}), 1e-6f);
  for (float v : y.value()) CHECK(v == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("layernorm two-point row") {
  // mean 2, population std 1: [1,3] -> [-1, 1] as eps -> 0
  Tensor x({1, 2}, {1, 3});
  Tensor y = layernorm(x, Tensor::full({2}, 1.0f), Tensor::zeros({2}), 1e-10f);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layernorm gradients vs finite differences") {
  auto inputs = random_inputs({{3, 6}, {6}, {6}}, 21);
  for (std::size_t which : {0, 1, 2}) {
    auto rep = fd_check(
        [](auto& in) {
          using T = std::decay_t<decltype(in[0].value()[0])>;
          return probe(layernorm(in[0], in[1], in[2], T(1e-5)));
        },
        inputs, which);
    CHECK(rep.max_rel_err < kNonlinearTol);
  }
}

TEST_CASE("softmax uniform and stability") {
  Tensor uniform = softmax(Tensor({3}, {0, 0, 0}), 0);
  for (float v : uniform.value()) CHECK(v == doctest::Approx(1.0 / 3));
  Tensor hot({2}, {1000, 0});
  Tensor s = softmax(hot, 0);
  CHECK(s.value()[0] == doctest::Approx(1.0));
  CHECK(s.value()[1] == doctest::Approx(0.0));
  for (float v : s.value()) CHECK(std::isfinite(v));
}

TEST_CASE("softmax rows sum to one (fuzz)") {
  CounterRng rng(99, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.next_below(4);
    const std::size_t cols = 1 + rng.next_below(7);
    std::vector<float> data(rows * cols);
    for (auto& v : data) v = static_cast<float>(rng.next_normal() * 50.0);
    Tensor s = softmax(Tensor({rows, cols}, std::move(data)), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += s.value()[r * cols + c];
      CHECK(acc == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  auto inputs = random_inputs({{2, 5}}, 31);
  auto rep = fd_check([](auto& in) { return probe(softmax(in[0], 1)); }, inputs, 0);
  CHECK(rep.max_rel_err < kLinearTol);

  // middle-axis softmax on a rank-3 tensor
  auto inputs3 = random_inputs({{2, 3, 2}}, 32);
  auto rep3 = fd_check([](auto& in) { return probe(softmax(in[0], 1)); }, inputs3, 0);
  CHECK(rep3.max_rel_err < kLinearTol);
}

TEST_CASE("gelu values and gradient") {
  Tensor zero({1}, {0});
  CHECK(gelu(zero).value()[0] == 0.0f);
  Tensor ten({1}, {10});
  CHECK(gelu(ten).value()[0] == doctest::Approx(10.0).epsilon(1e-7));

  auto inputs = random_inputs({{17}}, 41);
  auto rep = fd_check([](auto& in) { return probe(gelu(in[0])); }, inputs, 0);
  CHECK(rep.max_rel_err < kNonlinearTol);
}

TEST_CASE("elementwise ops with trailing-suffix broadcast") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  CHECK(add(a, b).value() == std::vector<float>{11, 22, 33, 14, 25, 36});
  CHECK(sub(a, b).value() == std::vector<float>{-9, -18, -27, -6, -15, -24});
  CHECK(mul(a, b).value() == std::vector<float>{10, 40, 90, 40, 100, 180});
  CHECK(scale(a, 2.0f).value() == std::vector<float>{2, 4, 6, 8, 10, 12});
  Tensor c({2}, {1, 2});
  CHECK_THROWS_AS(add(a, c), ShapeError);

  for (std::size_t which : {0, 1}) {
    auto inputs = random_inputs({{3, 4}, {4}}, 51);
    auto rep_add = fd_check([](auto& in) { return probe(add(in[0], in[1])); }, inputs, which);
    CHECK(rep_add.max_rel_err < kLinearTol);
    auto rep_mul = fd_check([](auto& in) { return probe(mul(in[0], in[1])); }, inputs, which);
    CHECK(rep_mul.max_rel_err < kNonlinearTol);
    auto rep_sub = fd_check([](auto& in) { return probe(sub(in[0], in[1])); }, inputs, which);
    CHECK(rep_sub.max_rel_err < kLinearTol);
  }
  auto inputs = random_inputs({{5}}, 52);
  auto rep = fd_check(
      [](auto& in) {
        using T = std::decay_t<decltype(in[0].value()[0])>;
        return probe(scale(in[0], T(-1.7)));
      },
      inputs, 0);
  CHECK(rep.max_rel_err < kLinearTol);
}

TEST_CASE("reshape transpose concat slice semantics") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reshape(x, {3, 2}).value() == x.value());
  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);

  Tensor t = transpose(x, 0, 1);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.value() == std::vector<float>{1, 4, 2, 5, 3, 6});

  Tensor r3({2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  Tensor p = transpose(r3, std::vector<std::size_t>{2, 0, 1});
  CHECK(p.shape() == Shape{2, 2, 2});
  CHECK(p.value() == std::vector<float>{0, 2, 4, 6, 1, 3, 5, 7});

  Tensor y({1, 3}, {7, 8, 9});
  Tensor cat = concat(x, y, 0);
  CHECK(cat.shape() == Shape{3, 3});
  CHECK(cat.value() == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor cat1 = concat(x, x, 1);
  CHECK(cat1.shape() == Shape{2, 6});
  CHECK(cat1.value() == std::vector<float>{1, 2, 3, 1, 2, 3, 4, 5, 6, 4, 5, 6});

  Tensor s = slice(cat, 0, 1, 2);
  CHECK(s.value() == std::vector<float>{4, 5, 6, 7, 8, 9});
  Tensor s1 = slice(x, 1, 1, 2);
  CHECK(s1.value() == std::vector<float>{2, 3, 5, 6});
  CHECK_THROWS_AS(slice(x, 1, 2, 2), ShapeError);
}

TEST_CASE("shape op gradients vs finite differences") {
  auto inputs = random_inputs({{2, 3, 2}}, 61);
  auto rep_reshape = fd_check([](auto& in) { return probe(reshape(in[0], {4, 3})); }, inputs, 0);
  CHECK(rep_reshape.max_rel_err < kLinearTol);
  auto rep_transpose = fd_check(
      [](auto& in) { return probe(transpose(in[0], std::vector<std::size_t>{1, 2, 0})); }, inputs,
      0);
  CHECK(rep_transpose.max_rel_err < kLinearTol);
  auto rep_slice = fd_check([](auto& in) { return probe(slice(in[0], 1, 1, 2)); }, inputs, 0);
  CHECK(rep_slice.max_rel_err < kLinearTol);

  auto two = random_inputs({{2, 3}, {4, 3}}, 62);
  for (std::size_t which : {0, 1}) {
    auto rep_concat =
        fd_check([](auto& in) { return probe(concat(in[0], in[1], 0)); }, two, which);
    CHECK(rep_concat.max_rel_err < kLinearTol);
  }
}

TEST_CASE("gather_rows ordering and errors") {
  Tensor x({3, 2}, {0, 1, 10, 11, 20, 21});
  Tensor g = gather_rows(x, {2, 0});
  CHECK(g.value() == std::vector<float>{20, 21, 0, 1});
  CHECK_THROWS_AS(gather_rows(x, {0, 3}), lsmae::IndexError);
  CHECK_THROWS_AS(gather_rows(x, {1, 1}), lsmae::IndexError);
}

TEST_CASE("gather then scatter round trip is bitwise on gathered rows") {
  CounterRng rng(77, 0);
  std::vector<float> data(5 * 3);
  for (auto& v : data) v = static_cast<float>(rng.next_normal());
  Tensor x({5, 3}, data);
  const std::vector<std::size_t> idx{4, 1, 2};
  Tensor rt = scatter_rows(gather_rows(x, idx), idx, 5, Tensor::zeros({3}));
  for (std::size_t r = 0; r < 5; ++r) {
    const bool gathered = r == 4 || r == 1 || r == 2;
    for (std::size_t c = 0; c < 3; ++c) {
      if (gathered) {
        CHECK(rt.value()[r * 3 + c] == x.value()[r * 3 + c]);  // exact
      } else {
        CHECK(rt.value()[r * 3 + c] == 0.0f);
      }
    }
  }
}

TEST_CASE("gather gradient is an indicator") {
  Tensor x({4, 2}, std::vector<float>(8, 1.0f), /*requires_grad=*/true);
  backward(sum(gather_rows(x, {2, 0})));
  CHECK(x.grad() == std::vector<float>{1, 1, 0, 0, 1, 1, 0, 0});
}

TEST_CASE("scatter routes gradients to rows and fill") {
  auto inputs = random_inputs({{2, 3}, {3}}, 71);
  for (std::size_t which : {0, 1}) {
    auto rep = fd_check(
        [](auto& in) { return probe(scatter_rows(in[0], {3, 1}, 5, in[1])); }, inputs, which);
    CHECK(rep.max_rel_err < kLinearTol);
  }
  // fill gradient counts the unfilled rows
  Tensor rows({1, 2}, {5, 5});
  Tensor fill({2}, {0, 0}, /*requires_grad=*/true);
  backward(sum(scatter_rows(rows, {0}, 4, fill)));
  CHECK(fill.grad() == std::vector<float>{3, 3});
}

TEST_CASE("gather gradient vs finite differences") {
  auto inputs = random_inputs({{5, 3}}, 72);
  auto rep = fd_check([](auto& in) { return probe(gather_rows(in[0], {4, 0, 2})); }, inputs, 0);
  CHECK(rep.max_rel_err < kLinearTol);
}

TEST_CASE("backward of sum of squares is 2x") {
  Tensor x({3}, {1, -2, 3}, /*requires_grad=*/true);
  backward(sum(mul(x, x)));
  CHECK(x.grad() == std::vector<float>{2, -4, 6});
}

TEST_CASE("backward requires scalar loss") {
  Tensor x({2}, {1, 2}, /*requires_grad=*/true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("backward is deterministic across rebuilds") {
  auto run = [] {
    CounterRng rng(123, 5);
    std::vector<float> a(12), b(12);
    for (auto& v : a) v = static_cast<float>(rng.next_normal());
    for (auto& v : b) v = static_cast<float>(rng.next_normal());
    Tensor x({3, 4}, a, true);
    Tensor w({4, 3}, b, true);
    backward(sum(gelu(matmul(x, w))));
    auto gx = x.grad();
    auto gw = w.grad();
    gx.insert(gx.end(), gw.begin(), gw.end());
    return gx;
  };
  CHECK(run() == run());  // bit-identical
}

TEST_CASE("graph is topologically ordered and visits nodes once") {
  Tensor x({2}, {1, 2}, true);
  Tensor a = mul(x, x);
  Tensor b = add(a, x);
  Tensor loss = sum(mul(b, a));  // diamond: a feeds b and the product
  auto graph = GraphT<float>::from_output(loss);
  std::unordered_set<const TensorNodeT<float>*> seen;
  for (const auto* node : graph.nodes) {
    for (const auto& parent : node->parents) {
      if (parent->needs_grad) {
        CHECK(seen.count(parent.get()) == 1);  // inputs precede consumers
      }
    }
    CHECK(seen.insert(node).second);  // exactly one visit
  }
  backward(loss);
  // loss = (x^2 + x) * x^2 = x^4 + x^3; d/dx = 4x^3 + 3x^2
  CHECK(x.grad()[0] == doctest::Approx(4 + 3));
  CHECK(x.grad()[1] == doctest::Approx(4 * 8 + 3 * 4));
}

TEST_CASE("repeated backward after zeroing is bit-identical") {
  CounterRng rng(321, 1);
  std::vector<float> data(20);
  for (auto& v : data) v = static_cast<float>(rng.next_normal());
  Tensor x({4, 5}, data, true);
  Tensor loss = sum(gelu(mul(x, x)));
  backward(loss);
  const auto first = x.grad();
  zero_grads(loss);
  backward(loss);
  CHECK(x.grad() == first);
}
