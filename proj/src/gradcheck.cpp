#include "msjudge/gradcheck.hpp"

#include <cmath>

#include "msjudge/encoders.hpp"
#include "msjudge/heads.hpp"
#include "msjudge/interaction.hpp"

namespace msjudge {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / scale;
}

GradcheckResult check_gradients(const std::string& name, const LossFn& loss, const std::vector<Tensor>& inputs,
                                double step, double tolerance) {
  GradcheckResult result;
  result.name = name;
  for (auto t : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor l = loss(tape);
    tape.backward(l);
  }
  Tape probe(false);
  auto eval = [&] {
    probe.reset();
    return loss(probe).item();
  };
  for (auto t : inputs) {
    auto values = t.mutable_data();
    const auto grad = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = relative_error(grad[i], numeric);
      result.max_relative_error = std::max(result.max_relative_error, rel);
      result.max_absolute_error = std::max(result.max_absolute_error, std::fabs(grad[i] - numeric));
      ++result.checked;
    }
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

/// Values with |x| in [0.1, 1], so kinked functions are probed away from their kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Scalar probe of an arbitrary-shaped output: sum(out * weights).
LossFn project(std::function<Tensor(Tape&)> op, Tensor weights) {
  return [op = std::move(op), weights](Tape& t) {
    Tensor out = op(t);
    if (out.size() == 1 && weights.size() == 1) return scale(t, sum(t, out), weights[0]);
    return sum(t, mul(t, out, weights));
  };
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> m(n);
  std::bernoulli_distribution keep(0.7);
  for (auto& x : m) x = keep(rng);
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  return m;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_primitives(std::uint64_t seed, double tol) {
  Rng rng(seed);
  std::vector<GradcheckResult> results;
  auto run = [&](const std::string& name, std::function<Tensor(Tape&)> op, std::vector<Tensor> inputs) {
    Tape shape_probe(false);
    const Shape shape = op(shape_probe).shape();
    Tensor weights = random_tensor(shape, rng).detach();
    results.push_back(check_gradients(name, project(std::move(op), weights), inputs, 1e-6, tol));
  };

  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
  {
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    run("matmul", [=](Tape& t) { return matmul(t, a, b); }, {a, b});
  }
  {
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({n, k}, rng);
    run("matmul_nt", [=](Tape& t) { return matmul_nt(t, a, b); }, {a, b});
  }
  {
    Tensor a = random_tensor({m, k}, rng), x = random_tensor({k}, rng);
    run("matvec", [=](Tape& t) { return matvec(t, a, x); }, {a, x});
  }
  {
    Tensor x = random_tensor({m}, rng), a = random_tensor({m, k}, rng);
    run("vecmat", [=](Tape& t) { return vecmat(t, x, a); }, {x, a});
  }
  {
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({m, k}, rng);
    run("rowwise_dot", [=](Tape& t) { return rowwise_dot(t, a, b); }, {a, b});
    run("add", [=](Tape& t) { return add(t, a, b); }, {a, b});
    run("sub", [=](Tape& t) { return sub(t, a, b); }, {a, b});
    run("mul", [=](Tape& t) { return mul(t, a, b); }, {a, b});
    run("concat_columns", [=](Tape& t) { return concat_columns(t, a, b); }, {a, b});
  }
  {
    Tensor a = random_tensor({m, k}, rng), r = random_tensor({k}, rng), f = random_tensor({m}, rng);
    run("add_row", [=](Tape& t) { return add_row(t, a, r); }, {a, r});
    run("scale_rows", [=](Tape& t) { return scale_rows(t, a, f); }, {a, f});
    run("append_to_rows", [=](Tape& t) { return append_to_rows(t, a, r); }, {a, r});
    run("scale", [=](Tape& t) { return scale(t, a, -1.7); }, {a});
    run("one_minus", [=](Tape& t) { return one_minus(t, a); }, {a});
    run("sigmoid", [=](Tape& t) { return sigmoid(t, scale(t, a, 3.0)); }, {a});
    run("tanh", [=](Tape& t) { return tanh(t, scale(t, a, 2.0)); }, {a});
    run("sum", [=](Tape& t) { return sum(t, a); }, {a});
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    run("row", [=](Tape& t) { return row(t, a, pick); }, {a});
    std::vector<std::uint8_t> cols = random_mask(k, rng);
    run("masked_softmax_rows", [=](Tape& t) { return masked_softmax_rows(t, scale(t, a, 2.0), cols); }, {a});
  }
  {
    Tensor a = away_from_zero({m, k}, rng);
    run("relu", [=](Tape& t) { return relu(t, a); }, {a});
  }
  {
    Tensor a = random_tensor({m, k}, rng, 0.05, 1.0);
    run("log_clamped", [=](Tape& t) { return log_clamped(t, a, 1e-12); }, {a});
  }
  {
    const std::size_t len = dim(rng, 2, 6);
    Tensor v = random_tensor({len}, rng);
    std::vector<std::uint8_t> mask = random_mask(len, rng);
    run("softmax", [=](Tape& t) { return softmax(t, scale(t, v, 2.0)); }, {v});
    run("masked_softmax", [=](Tape& t) { return masked_softmax(t, scale(t, v, 2.0), mask); }, {v});
    const std::size_t begin = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng);
    const std::size_t count = std::uniform_int_distribution<std::size_t>(1, len - begin)(rng);
    run("slice", [=](Tape& t) { return slice(t, v, begin, count); }, {v});
    std::vector<std::pair<std::size_t, double>> forced{{begin, 0.25}};
    run("override_entries", [=](Tape& t) { return override_entries(t, v, forced); }, {v});
    const std::uint64_t mask_seed = rng();
    run("dropout", [=](Tape& t) {
      Rng r(mask_seed);
      return dropout(t, v, 0.3, true, r);
    }, {v});
  }
  {
    Tensor a = random_tensor({k}, rng), b = random_tensor({n}, rng), c = random_tensor({k}, rng);
    run("concat", [=](Tape& t) { return concat(t, {a, b}); }, {a, b});
    run("stack_rows", [=](Tape& t) { return stack_rows(t, {a, c, a}); }, {a, c});
  }
  {
    Tensor table = random_tensor({n + 1, k}, rng);
    std::vector<int> ids{0, static_cast<int>(n), 0};
    run("gather_rows", [=](Tape& t) { return gather_rows(t, table, ids); }, {table});
  }
  {
    const std::size_t in = dim(rng, 1, 3), h = dim(rng, 1, 3);
    LstmWeights w{random_tensor({4 * h, in}, rng), random_tensor({4 * h, h}, rng), random_tensor({4 * h}, rng)};
    Tensor x = random_tensor({in}, rng), h0 = random_tensor({h}, rng), c0 = random_tensor({h}, rng);
    Tensor wh = random_tensor({h}, rng).detach(), wc = random_tensor({h}, rng).detach();
    results.push_back(check_gradients(
        "lstm_cell",
        [=](Tape& t) {
          LstmState s = lstm_cell(t, x, h0, c0, w);
          return add(t, sum(t, mul(t, s.h, wh)), sum(t, mul(t, s.c, wc)));
        },
        {x, h0, c0, w.input, w.recurrent, w.bias}, 1e-6, tol));

    const std::size_t len = dim(rng, 2, 5);
    Tensor xs = random_tensor({len, in}, rng);
    std::vector<std::uint8_t> mask = random_mask(len, rng);
    const bool reverse = std::bernoulli_distribution(0.5)(rng);
    run("lstm_sequence", [=](Tape& t) { return lstm_sequence(t, xs, mask, w, reverse); },
        {xs, w.input, w.recurrent, w.bias});
  }
  return results;
}

GradcheckResult gradcheck_composite(std::uint64_t seed, double tol) {
  constexpr std::size_t k = 2, n = 3, z = 3, h = 2, hops = 2, vocab = 6, max_words = 3;
  Rng rng(seed);
  ParamStore store;
  EncoderParams enc = EncoderParams::create(store, EncoderDims{vocab, 2, 2, h}, rng);
  InteractionParams inter = InteractionParams::create(store, 2 * h, z, rng);
  HeadParams heads = HeadParams::create(store, 2 * h, kJudgmentCount, z, rng);
  // Re-draw every parameter on a wider range so gradients are not vanishingly small.
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto& t : store.tensors())
    for (auto& v : t.mutable_data()) v = u(rng);

  std::uniform_int_distribution<int> token(1, vocab - 1), role(0, kRoleCount - 1), label(0, kJudgmentCount - 1);
  std::uniform_int_distribution<std::size_t> length(1, max_words);
  auto sequence = [&](std::vector<int>& ids, std::vector<std::uint8_t>& mask) {
    const std::size_t len = length(rng);
    ids.assign(max_words, Vocabulary::kPad);
    mask.assign(max_words, 0);
    for (std::size_t i = 0; i < len; ++i) {
      ids[i] = token(rng);
      mask[i] = 1;
    }
  };
  std::vector<std::vector<int>> utt_ids(n), claim_ids(k);
  std::vector<std::vector<std::uint8_t>> utt_masks(n), claim_masks(k);
  std::vector<int> roles(n), judgments(k);
  for (std::size_t i = 0; i < n; ++i) {
    sequence(utt_ids[i], utt_masks[i]);
    roles[i] = role(rng);
  }
  for (std::size_t j = 0; j < k; ++j) {
    sequence(claim_ids[j], claim_masks[j]);
    judgments[j] = label(rng);
  }
  std::vector<double> gold_facts(z);
  for (auto& f : gold_facts) f = std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
  const Tensor claim_targets = one_hot_targets(judgments, kJudgmentCount);
  const Tensor fact_targets = Tensor::vector(gold_facts);

  auto loss = [&](Tape& t) {
    std::vector<Tensor> utterances, claims;
    for (std::size_t i = 0; i < n; ++i)
      utterances.push_back(encode_utterance(t, utt_ids[i], roles[i], enc, utt_masks[i]).vector);
    Tensor memory = encode_dialogue(t, stack_rows(t, utterances), enc, {});
    for (std::size_t j = 0; j < k; ++j) claims.push_back(encode_claim(t, claim_ids[j], enc, claim_masks[j]).vector);
    Attended facts = debate_to_fact(t, memory, inter, {});
    Tensor fact_probs = predict_facts(t, facts.output, heads);
    Tensor fact_memory = build_fact_memory(t, facts.output, fact_probs);
    HopResult result = run_hops(t, stack_rows(t, claims), memory, {}, fact_memory, {}, inter, hops);
    Tensor claim_probs = predict_judgment(t, result.claims, heads);
    return total_loss(t, claim_loss(t, claim_probs, claim_targets), fact_loss(t, fact_probs, fact_targets));
  };
  return check_gradients("composite", loss, store.tensors(), 1e-6, tol);
}

}  // namespace msjudge
