#pragma once

// Synthetic case life-cycle corpus. Each case samples a fact vector, a set of
// claims, derives every judgment with oracle_judgment, and then writes a
// role-tagged debate carrying evidence for every fact. The rule table is
// documented in docs/rule_table.md.

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "msjudge/corpus.hpp"
#include "msjudge/tensor.hpp"

namespace msjudge {

enum class ClaimType : std::uint8_t { principal = 0, interest, liquidated_damages, guarantee, joint_spouse };
inline constexpr std::size_t kClaimTypeCount = 5;
inline constexpr std::array<std::string_view, kClaimTypeCount> kClaimTypeNames = {
    "principal", "interest", "liquidated_damages", "guarantee", "joint_spouse"};

std::string_view claim_type_name(ClaimType t);
ClaimType parse_claim_type(std::string_view name);  // DomainError on unknown names

/// Deterministic fact -> judgment rules, total over all 2^10 fact vectors.
Judgment oracle_judgment(const FactVector& facts, ClaimType type);
Judgment oracle_judgment(const FactVector& facts, std::string_view claim_type);

struct SynthProfile {
  /// P(fact p = 1), independent per fact.
  std::array<double, kFactCount> fact_marginals{0.5, 0.906, 0.029, 0.934, 0.193, 0.048, 0.934, 0.5, 0.193, 0.972};
  /// Relative weights for drawing claim types without replacement.
  std::array<double, kClaimTypeCount> claim_type_weights{0.45, 0.25, 0.10, 0.12, 0.08};
  /// P(k = 1), P(k = 2), ... claims per case.
  std::vector<double> claims_per_case{0.25, 0.5, 0.25};
  /// Probability that the judge opens the hearing with a formal statement.
  double opening_rate = 0.3;
  /// Probability that the judge asks about a fact before its evidence.
  double judge_question_rate = 0.12;
  std::size_t max_utterance_words = 16;
};

/// Expected share of each judgment label under the profile, by exact enumeration.
std::array<double, kJudgmentCount> expected_label_distribution(const SynthProfile& profile);

std::vector<Case> synth_generate(std::uint64_t seed, std::size_t n_cases, const SynthProfile& profile = {});

}  // namespace msjudge
