#include <cmath>

#include "doctest.h"
#include "msjudge/gradcheck.hpp"
#include "msjudge/params.hpp"
#include "msjudge/tensor.hpp"

using namespace msjudge;

namespace {
Tape off(false);
}

TEST_CASE("matmul by the identity returns the operand") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor p = matmul(off, a, id);
  CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(off, a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("softmax values, normalization and shift invariance") {
  Tensor s = softmax(off, Tensor::vector({2, 0}));
  CHECK(s[0] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.11920292202211755).epsilon(1e-12));

  Rng rng(5);
  std::normal_distribution<double> g(0.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + trial % 9);
    for (double& v : x) v = g(rng);
    std::vector<double> shifted = x;
    for (double& v : shifted) v += 37.5;
    Tensor a = softmax(off, Tensor::vector(x)), b = softmax(off, Tensor::vector(shifted));
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      total += a[i];
      CHECK(std::abs(a[i] - b[i]) < 1e-10);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK_THROWS(softmax(off, Tensor::vector({})));
}

TEST_CASE("softmax survives extreme logits") {
  Tensor s = softmax(off, Tensor::vector({1000, -1000, 0}));
  CHECK(s[0] == 1.0);
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("masked softmax gives masked entries exactly zero weight") {
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0};
  Tensor s = masked_softmax(off, Tensor::vector({0.3, -1, 2, 50, 7}), mask);
  CHECK(s[3] == 0.0);
  CHECK(s[4] == 0.0);
  Tensor ref = softmax(off, Tensor::vector({0.3, -1, 2}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(s[i] - ref[i]) < 1e-15);
  const std::vector<std::uint8_t> none{0, 0};
  CHECK_THROWS_AS(masked_softmax(off, Tensor::vector({1, 2}), none), ContractError);
}

TEST_CASE("sigmoid is stable at large magnitudes") {
  Tensor s = sigmoid(off, Tensor::vector({-50, 0, 50, -800}));
  CHECK(s[0] == doctest::Approx(1.9287498479639178e-22).epsilon(1e-9));
  CHECK(s[1] == 0.5);
  CHECK(s[2] == doctest::Approx(1.0));
  CHECK(s[3] >= 0.0);
  CHECK(std::isfinite(s[3]));
}

TEST_CASE("backward runs once per recording") {
  Tape tape;
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK_THROWS_AS(tape.backward(loss), ContractError);
  tape.reset();
  x.zero_grad();
  Tensor again = sum(tape, mul(tape, x, x));
  tape.backward(again);
  CHECK(x.grad()[1] == 4.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Tensor x = Tensor::vector({1, 2}, true);
  CHECK_THROWS_AS(tape.backward(mul(tape, x, x)), ContractError);
}

TEST_CASE("gradients accumulate across uses of a tensor") {
  Tape tape;
  Tensor x = Tensor::vector({3}, true);
  Tensor y = add(tape, scale(tape, x, 2.0), mul(tape, x, x));
  tape.backward(sum(tape, y));
  CHECK(x.grad()[0] == doctest::Approx(2.0 + 6.0));
}

TEST_CASE("dropout zero fraction and mean match the drop rate") {
  Rng rng(17);
  const std::size_t n = 200000;
  Tensor x = Tensor::full({n}, 1.0);
  Tensor y = dropout(off, x, 0.2, true, rng);
  std::size_t zeros = 0;
  double total = 0.0;
  for (double v : y.data()) {
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(1.25));
    total += v;
  }
  CHECK(std::abs(static_cast<double>(zeros) / n - 0.2) < 0.02);
  CHECK(std::abs(total / n - 1.0) < 0.05);
}

TEST_CASE("dropout is the identity when not training or at rate zero") {
  Rng rng(3);
  Tensor x = Tensor::vector({0.5, -2, 3});
  Tensor a = dropout(off, x, 0.2, false, rng);
  Tensor b = dropout(off, x, 0.0, true, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i] == x[i]);
    CHECK(b[i] == x[i]);
  }
  CHECK_THROWS_AS(dropout(off, x, 1.0, true, rng), DomainError);
}

TEST_CASE("lstm_sequence equals chained lstm_cell, masked steps pass state through") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  auto random = [&](Shape s) {
    Tensor t = Tensor::zeros(s);
    for (double& v : t.mutable_data()) v = u(rng);
    return t;
  };
  const std::size_t h = 3, in = 2, len = 5;
  LstmWeights w{random({4 * h, in}), random({4 * h, h}), random({4 * h})};
  Tensor xs = random({len, in});
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0};
  for (bool reverse : {false, true}) {
    Tensor seq = lstm_sequence(off, xs, mask, w, reverse);
    LstmState s{Tensor::zeros({h}), Tensor::zeros({h})};
    for (std::size_t step = 0; step < len; ++step) {
      const std::size_t t = reverse ? len - 1 - step : step;
      if (!mask[t]) {
        for (std::size_t d = 0; d < h; ++d) CHECK(seq.at(t, d) == 0.0);
        continue;
      }
      s = lstm_cell(off, row(off, xs, t), s.h, s.c, w);
      for (std::size_t d = 0; d < h; ++d) CHECK(std::abs(seq.at(t, d) - s.h[d]) < 1e-14);
    }
  }
}

TEST_CASE("an LSTM with all-zero parameters outputs zeros") {
  LstmWeights w{Tensor::zeros({8, 3}), Tensor::zeros({8, 2}), Tensor::zeros({8})};
  Tensor out = lstm_sequence(off, Tensor::full({4, 3}, 0.9), {}, w, false);
  for (double v : out.data()) CHECK(v == 0.0);
  LstmState s = lstm_cell(off, Tensor::full({3}, -2.0), Tensor::zeros({2}), Tensor::zeros({2}), w);
  for (double v : s.c.data()) CHECK(v == 0.0);
}

TEST_CASE("shape errors name the operation") {
  try {
    add(off, Tensor::zeros({2}), Tensor::zeros({3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}

TEST_CASE("every primitive passes the gradient check") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (const auto& r : gradcheck_primitives(seed)) {
      INFO(r.name << " seed " << seed << " err " << r.max_relative_error);
      CHECK(r.passed);
      CHECK(r.checked > 0);
    }
}

TEST_CASE("relative error uses the floor for tiny gradients") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-6));
}

TEST_CASE("closed-form gradients") {
  {
    Tape tape;
    Tensor a = Tensor::from({1, 2}, {1, 2}, true);
    Tensor b = Tensor::from({2, 1}, {3, 4});
    tape.backward(sum(tape, matmul(tape, a, b)));
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == 4.0);
    CHECK(matmul(off, Tensor::from({1, 2}, {1, 2}), Tensor::zeros({2, 1})).item() == 0.0);
  }
  {
    Tape tape;
    Tensor p = Tensor::from({2, 3}, {1, -2, 3, 0.5, 7, 9}, true);
    tape.backward(sum(tape, p));
    for (double g : p.grad()) CHECK(g == 1.0);
  }
  {
    Tape tape;
    Tensor p = Tensor::vector({1, -2, 3}, true);
    tape.backward(sum(tape, scale(tape, p, 0.0)));
    for (double g : p.grad()) CHECK(g == 0.0);
  }
  {
    Tape tape;
    Tensor x = Tensor::vector({0.0}, true);
    tape.backward(sum(tape, sigmoid(tape, x)));
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  }
  Tensor s = softmax(off, Tensor::vector({0, 0}));
  CHECK(s[0] == 0.5);
  Tensor big = softmax(off, Tensor::vector({1000, 1000, 1000}));
  for (double v : big.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("LSTM hidden state stays in [-1, 1] and its input gradient is correct") {
  Rng rng(12);
  LstmWeights w{uniform_tensor({8, 3}, 5.0, rng), uniform_tensor({8, 2}, 5.0, rng), uniform_tensor({8}, 5.0, rng)};
  LstmState s{Tensor::zeros({2}), Tensor::zeros({2})};
  for (int t = 0; t < 50; ++t) {
    s = lstm_cell(off, uniform_tensor({3}, 10.0, rng), s.h, s.c, w);
    for (double v : s.h.data()) CHECK(std::abs(v) <= 1.0);
    for (double v : s.c.data()) CHECK(std::isfinite(v));
  }
  LstmWeights mild{uniform_tensor({8, 3}, 0.8, rng), uniform_tensor({8, 2}, 0.8, rng), uniform_tensor({8}, 0.8, rng)};
  Tensor x = uniform_tensor({3}, 1.0, rng);
  Tensor x_leaf = Tensor::from({3}, {x[0], x[1], x[2]}, true);
  auto r = check_gradients(
      "lstm input",
      [&](Tape& tape) {
        LstmState out = lstm_cell(tape, x_leaf, Tensor::zeros({2}), Tensor::zeros({2}), mild);
        return sum(tape, out.h);
      },
      {x_leaf});
  CHECK(r.passed);
}

TEST_CASE("softmax of matmul of concat matches finite differences") {
  Rng rng(13);
  Tensor a = uniform_tensor({2}, 1.0, rng), b = uniform_tensor({3}, 1.0, rng);
  Tensor m = uniform_tensor({5, 4}, 1.0, rng), target = uniform_tensor({4}, 1.0, rng);
  for (Tensor* t : {&a, &b, &m}) *t = Tensor::from(t->shape(), {t->data().begin(), t->data().end()}, true);
  auto r = check_gradients(
      "softmax(concat . W)",
      [&](Tape& tape) { return sum(tape, mul(tape, softmax(tape, vecmat(tape, concat(tape, {a, b}), m)), target)); },
      {a, b, m});
  INFO(r.max_relative_error);
  CHECK(r.passed);
}
