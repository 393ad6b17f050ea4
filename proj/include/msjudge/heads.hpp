#pragma once

#include <vector>

#include "msjudge/params.hpp"
#include "msjudge/tensor.hpp"

namespace msjudge {

inline constexpr double kProbabilityFloor = 1e-12;

struct HeadParams {
  Tensor judgment_weight;  // W^c [3, 2h]
  Tensor judgment_bias;    // b^c [3]
  Tensor fact_weight;      // row p is W_p^f [z, 2h]; undefined in single-task models
  Tensor fact_bias;        // b^f [z]

  static HeadParams create(ParamStore& store, std::size_t width, std::size_t classes, std::size_t facts, Rng& rng);
  static HeadParams bind(ParamStore& store, bool with_facts);
};

/// Pre-softmax judgment scores, [k, 3].
Tensor judgment_logits(Tape& tape, const Tensor& claims, const HeadParams& params);
/// softmax(W^c C_j + b^c) per claim row, [k, 3].
Tensor predict_judgment(Tape& tape, const Tensor& claims, const HeadParams& params);
/// sigmoid(W_p^f . f_p + b_p^f), [z].
Tensor predict_facts(Tape& tape, const Tensor& facts, const HeadParams& params);

/// One-hot [k, 3] targets from class indices.
Tensor one_hot_targets(const std::vector<int>& classes, std::size_t num_classes);

/// -(1/k) sum_j sum_d g_jd log y_jd with y clamped at 1e-12. Targets must be one-hot rows.
Tensor claim_loss(Tape& tape, const Tensor& probs, const Tensor& targets);
/// Mean binary cross-entropy over the z fact labels.
Tensor fact_loss(Tape& tape, const Tensor& probs, const Tensor& targets);
/// L_c + weight * L_f (weight defaults to the plain sum).
Tensor total_loss(Tape& tape, const Tensor& claim, const Tensor& fact, double fact_weight = 1.0);

}  // namespace msjudge
