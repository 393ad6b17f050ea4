#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msjudge/tensor.hpp"

namespace msjudge {

/// |a - n| / max(|a|, |n|, floor). Below `floor` in magnitude the comparison is
/// effectively absolute, which keeps round-off in near-zero gradients from
/// dominating the report.
double relative_error(double analytic, double numeric, double floor = 1e-3);

struct GradcheckResult {
  std::string name;
  std::size_t checked = 0;  // coordinates compared
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  bool passed = true;
};

using LossFn = std::function<Tensor(Tape&)>;

/// Compares reverse-mode gradients of `loss` against central differences for
/// every coordinate of `inputs` (perturbed in place, then restored).
GradcheckResult check_gradients(const std::string& name, const LossFn& loss, const std::vector<Tensor>& inputs,
                                double step = 1e-6, double tolerance = 1e-4);

/// Every differentiable primitive at small random shapes drawn from `seed`.
std::vector<GradcheckResult> gradcheck_primitives(std::uint64_t seed, double tolerance = 1e-4);

/// The whole encoder / interaction / head stack at k = 2 claims, n = 3
/// utterances, z = 3 facts, h = 2, T = 2 hops, with claim and fact losses.
GradcheckResult gradcheck_composite(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace msjudge
