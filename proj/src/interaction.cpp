#include "msjudge/interaction.hpp"

#include <cmath>

namespace msjudge {

InteractionParams InteractionParams::create(ParamStore& store, std::size_t width, std::size_t facts, Rng& rng) {
  InteractionParams p;
  if (facts > 0) p.fact_queries = store.add("interaction.fact_queries", fan_in_tensor({facts, width}, width, rng));
  p.gate_utterance = store.add("interaction.gate_utterance", fan_in_tensor({width, width}, width, rng));
  p.gate_fact = store.add("interaction.gate_fact", fan_in_tensor({width, width}, width, rng));
  p.gate_bias = store.add("interaction.gate_bias", Tensor::zeros({width}, true));
  p.fuse_weight = store.add("interaction.fuse_weight", fan_in_tensor({width, width}, width, rng));
  p.fuse_bias = store.add("interaction.fuse_bias", Tensor::zeros({width}, true));
  return p;
}

InteractionParams InteractionParams::bind(ParamStore& store, bool with_facts) {
  InteractionParams p;
  if (with_facts) p.fact_queries = store.get("interaction.fact_queries");
  p.gate_utterance = store.get("interaction.gate_utterance");
  p.gate_fact = store.get("interaction.gate_fact");
  p.gate_bias = store.get("interaction.gate_bias");
  p.fuse_weight = store.get("interaction.fuse_weight");
  p.fuse_bias = store.get("interaction.fuse_bias");
  return p;
}

Attended debate_to_claim(Tape& tape, const Tensor& claims, const Tensor& utterance_memory, Mask utterance_mask) {
  Tensor weights = masked_softmax_rows(tape, matmul_nt(tape, claims, utterance_memory), utterance_mask);
  return {matmul(tape, weights, utterance_memory), weights};
}

Attended debate_to_fact(Tape& tape, const Tensor& utterance_memory, const InteractionParams& params,
                        Mask utterance_mask) {
  if (!params.fact_queries.defined()) throw ContractError("debate_to_fact: model has no fact queries");
  Tensor weights =
      masked_softmax_rows(tape, matmul_nt(tape, params.fact_queries, utterance_memory), utterance_mask);
  return {matmul(tape, weights, utterance_memory), weights};
}

Tensor build_fact_memory(Tape& tape, const Tensor& facts, const Tensor& fact_probs) {
  return scale_rows(tape, facts, fact_probs);
}

Attended fact_to_claim(Tape& tape, const Tensor& claims, const Tensor& fact_memory) {
  Tensor weights = masked_softmax_rows(tape, matmul_nt(tape, claims, fact_memory), {});
  return {matmul(tape, weights, fact_memory), weights};
}

Tensor fuse(Tape& tape, const Tensor& claims, const Tensor& utterance_out, const Tensor& fact_out,
            const InteractionParams& params) {
  Tensor gate_in = add(tape, matmul_nt(tape, utterance_out, params.gate_utterance),
                       matmul_nt(tape, fact_out, params.gate_fact));
  Tensor gate = sigmoid(tape, add_row(tape, gate_in, params.gate_bias));
  Tensor projected = relu(tape, add_row(tape, matmul_nt(tape, claims, params.fuse_weight), params.fuse_bias));
  Tensor mixed = add(tape, mul(tape, gate, utterance_out), mul(tape, one_minus(tape, gate), fact_out));
  return add(tape, projected, mixed);
}

Attended across_claim(Tape& tape, const Tensor& claims, Mask claim_mask) {
  if (claims.rank() != 2) throw DimensionError("across_claim: expected [k, 2h], got " + shape_string(claims.shape()));
  const double inv_sqrt_width = 1.0 / std::sqrt(static_cast<double>(claims.shape()[1]));
  Tensor weights =
      masked_softmax_rows(tape, scale(tape, matmul_nt(tape, claims, claims), inv_sqrt_width), claim_mask);
  return {add(tape, claims, matmul(tape, weights, claims)), weights};
}

HopResult run_hops(Tape& tape, const Tensor& claims, const Tensor& utterance_memory, Mask utterance_mask,
                   const Tensor& fact_memory, Mask claim_mask, const InteractionParams& params, std::size_t hops,
                   const HopSwitches& switches) {
  if (hops == 0) throw DomainError("run_hops: hop count must be at least 1");
  if (switches.fact_memory && !fact_memory.defined())
    throw ContractError("run_hops: fact pathway enabled without a fact memory");
  const Tensor zeros = Tensor::zeros(claims.shape());
  HopResult result{claims, {}};
  for (std::size_t t = 0; t < hops; ++t) {
    HopTrace trace;
    Tensor utterance_out = zeros, fact_out = zeros;
    if (switches.utterance_memory) {
      auto a = debate_to_claim(tape, result.claims, utterance_memory, utterance_mask);
      utterance_out = a.output;
      trace.debate_to_claim = a.attention;
    }
    if (switches.fact_memory) {
      auto a = fact_to_claim(tape, result.claims, fact_memory);
      fact_out = a.output;
      trace.fact_to_claim = a.attention;
    }
    Tensor fused = fuse(tape, result.claims, utterance_out, fact_out, params);
    if (switches.self_attention) {
      auto a = across_claim(tape, fused, claim_mask);
      result.claims = a.output;
      trace.across_claim = a.attention;
    } else {
      result.claims = fused;
    }
    result.hops.push_back(std::move(trace));
  }
  return result;
}

}  // namespace msjudge
