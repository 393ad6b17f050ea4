#pragma once

// Claim/debate/fact interaction stack. Claims are processed as a [k, 2h]
// matrix, one row per claim; a single claim is the k = 1 case.

#include <vector>

#include "msjudge/params.hpp"
#include "msjudge/tensor.hpp"

namespace msjudge {

struct InteractionParams {
  Tensor fact_queries;    // [z, 2h]; undefined when the model has no fact pathway at all
  Tensor gate_utterance;  // W^u [2h, 2h]
  Tensor gate_fact;       // W^f [2h, 2h]
  Tensor gate_bias;       // b^g [2h]
  Tensor fuse_weight;     // W^l [2h, 2h]
  Tensor fuse_bias;       // b^l [2h]

  static InteractionParams create(ParamStore& store, std::size_t width, std::size_t facts, Rng& rng);
  static InteractionParams bind(ParamStore& store, bool with_facts);
};

struct Attended {
  Tensor output;     // [rows, 2h]
  Tensor attention;  // [rows, memory]
};

/// alpha_ji = softmax_i(C_j . Ubar_i) over unmasked utterances; O^u_j = sum_i alpha_ji Ubar_i.
Attended debate_to_claim(Tape& tape, const Tensor& claims, const Tensor& utterance_memory, Mask utterance_mask);

/// One learnable query per fact: f_p = sum_i softmax_i(Q_p . Ubar_i) Ubar_i.
Attended debate_to_fact(Tape& tape, const Tensor& utterance_memory, const InteractionParams& params,
                        Mask utterance_mask);

/// Row p of the fact matrix scaled by its recognition probability.
Tensor build_fact_memory(Tape& tape, const Tensor& facts, const Tensor& fact_probs);

/// alpha_jp = softmax_p(C_j . fbar_p); O^f_j = sum_p alpha_jp fbar_p.
Attended fact_to_claim(Tape& tape, const Tensor& claims, const Tensor& fact_memory);

/// g = sigmoid(W^u O^u + W^f O^f + b^g); Chat = relu(W^l C + b^l); Cbar = Chat + g*O^u + (1-g)*O^f.
Tensor fuse(Tape& tape, const Tensor& claims, const Tensor& utterance_out, const Tensor& fact_out,
            const InteractionParams& params);

/// A = softmax_rows(Cbar Cbar^T / sqrt(width)) over unmasked claims; C' = Cbar + A Cbar.
Attended across_claim(Tape& tape, const Tensor& claims, Mask claim_mask);

struct HopSwitches {
  bool utterance_memory = true;
  bool fact_memory = true;
  bool self_attention = true;
};

struct HopTrace {
  Tensor debate_to_claim;  // [k, n]; undefined when the utterance pathway is off
  Tensor fact_to_claim;    // [k, z]; undefined when the fact pathway is off
  Tensor across_claim;     // [k, k]; undefined when self-attention is off
};

struct HopResult {
  Tensor claims;
  std::vector<HopTrace> hops;
};

/// T rounds of (debate_to_claim, fact_to_claim, fuse, across_claim) with shared parameters.
/// `fact_memory` may be undefined when switches.fact_memory is false.
HopResult run_hops(Tape& tape, const Tensor& claims, const Tensor& utterance_memory, Mask utterance_mask,
                   const Tensor& fact_memory, Mask claim_mask, const InteractionParams& params, std::size_t hops,
                   const HopSwitches& switches = {});

}  // namespace msjudge
