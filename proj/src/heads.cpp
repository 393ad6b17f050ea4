#include "msjudge/heads.hpp"

#include <cmath>

namespace msjudge {

HeadParams HeadParams::create(ParamStore& store, std::size_t width, std::size_t classes, std::size_t facts,
                              Rng& rng) {
  HeadParams p;
  p.judgment_weight = store.add("heads.judgment_weight", fan_in_tensor({classes, width}, width, rng));
  p.judgment_bias = store.add("heads.judgment_bias", Tensor::zeros({classes}, true));
  if (facts > 0) {
    p.fact_weight = store.add("heads.fact_weight", fan_in_tensor({facts, width}, width, rng));
    p.fact_bias = store.add("heads.fact_bias", Tensor::zeros({facts}, true));
  }
  return p;
}

HeadParams HeadParams::bind(ParamStore& store, bool with_facts) {
  HeadParams p;
  p.judgment_weight = store.get("heads.judgment_weight");
  p.judgment_bias = store.get("heads.judgment_bias");
  if (with_facts) {
    p.fact_weight = store.get("heads.fact_weight");
    p.fact_bias = store.get("heads.fact_bias");
  }
  return p;
}

Tensor judgment_logits(Tape& tape, const Tensor& claims, const HeadParams& params) {
  return add_row(tape, matmul_nt(tape, claims, params.judgment_weight), params.judgment_bias);
}

Tensor predict_judgment(Tape& tape, const Tensor& claims, const HeadParams& params) {
  return masked_softmax_rows(tape, judgment_logits(tape, claims, params), {});
}

Tensor predict_facts(Tape& tape, const Tensor& facts, const HeadParams& params) {
  if (!params.fact_weight.defined()) throw ContractError("predict_facts: model has no fact heads");
  return sigmoid(tape, add(tape, rowwise_dot(tape, params.fact_weight, facts), params.fact_bias));
}

Tensor one_hot_targets(const std::vector<int>& classes, std::size_t num_classes) {
  if (classes.empty()) throw ContractError("one_hot_targets: no targets");
  Tensor t = Tensor::zeros({classes.size(), num_classes});
  for (std::size_t j = 0; j < classes.size(); ++j) {
    if (classes[j] < 0 || static_cast<std::size_t>(classes[j]) >= num_classes)
      throw ContractError("one_hot_targets: class " + std::to_string(classes[j]) + " out of range");
    t.mutable_data()[j * num_classes + classes[j]] = 1.0;
  }
  return t;
}

Tensor claim_loss(Tape& tape, const Tensor& probs, const Tensor& targets) {
  if (probs.rank() != 2 || probs.shape() != targets.shape())
    throw DimensionError("claim_loss: predictions " + shape_string(probs.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  const std::size_t k = probs.shape()[0], classes = probs.shape()[1];
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0.0;
    for (std::size_t d = 0; d < classes; ++d) {
      const double g = targets.at(j, d);
      if (g != 0.0 && g != 1.0) throw ContractError("claim_loss: target row " + std::to_string(j) + " is not one-hot");
      total += g;
    }
    if (total != 1.0) throw ContractError("claim_loss: target row " + std::to_string(j) + " is not one-hot");
  }
  Tensor ce = sum(tape, mul(tape, targets, log_clamped(tape, probs, kProbabilityFloor)));
  return scale(tape, ce, -1.0 / static_cast<double>(k));
}

Tensor fact_loss(Tape& tape, const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape())
    throw DimensionError("fact_loss: predictions " + shape_string(probs.shape()) + " vs targets " +
                         shape_string(targets.shape()));
  for (double g : targets.data())
    if (g != 0.0 && g != 1.0) throw ContractError("fact_loss: targets must be 0 or 1");
  Tensor positive = mul(tape, targets, log_clamped(tape, probs, kProbabilityFloor));
  Tensor negative = mul(tape, one_minus(tape, targets), log_clamped(tape, one_minus(tape, probs), kProbabilityFloor));
  return scale(tape, sum(tape, add(tape, positive, negative)), -1.0 / static_cast<double>(probs.size()));
}

Tensor total_loss(Tape& tape, const Tensor& claim, const Tensor& fact, double fact_weight) {
  if (!fact.defined()) return claim;
  if (fact_weight == 1.0) return add(tape, claim, fact);
  return add(tape, claim, scale(tape, fact, fact_weight));
}

}  // namespace msjudge
