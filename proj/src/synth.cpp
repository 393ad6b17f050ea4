#include "msjudge/synth.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

namespace msjudge {

namespace {

enum Fact : std::size_t {
  kAgreedLoanPeriod = 0,
  kCoupleDebt,
  kLimitationOfAction,
  kLiquidatedDamages,
  kRepaymentBehavior,
  kTermOfGuarantee,
  kGuaranteeLiability,
  kTermOfRepayment,
  kInterestDispute,
  kLoanEstablished,
};

struct Evidence {
  std::string_view topic;
  std::array<std::string_view, 2> present;
  std::array<std::string_view, 2> absent;
};

// Evidence phrasing per fact; index order matches kFactLabels.
constexpr std::array<Evidence, kFactCount> kEvidence = {{
    {"the loan term", {{"was fixed at one year in the contract", "ran twelve months as agreed"}},
     {{"was never agreed by the parties", "is missing from the iou"}}},
    {"the spouse and marriage", {{"funds were spent on the household", "both spouses signed the iou"}},
     {{"spouse never knew of the borrowing", "debt was personal gambling spending"}}},
    {"the limitation period", {{"expired before the suit was filed", "lapsed with no demand made"}},
     {{"was interrupted by a written demand", "is still running for this debt"}}},
    {"the penalty clause", {{"provides liquidated damages for delay", "sets a daily penalty for default"}},
     {{"does not exist in the iou", "was struck out before signing"}}},
    {"repayment so far", {{"defendant already repaid part of it", "two installments were paid back"}},
     {{"defendant paid back nothing at all", "no single installment was returned"}}},
    {"the guarantee period", {{"had already lapsed before demand", "ended six months after maturity"}},
     {{"is still within the agreed window", "was extended by written consent"}}},
    {"the guarantor", {{"signed as joint surety on the iou", "pledged to cover the whole debt"}},
     {{"never signed any guarantee", "only witnessed the signing"}}},
    {"the repayment date", {{"has already passed without payment", "fell due last spring"}},
     {{"has not yet arrived", "was postponed by agreement"}}},
    {"the interest rate", {{"exceeds the legal protection cap", "is usurious and contested"}},
     {{"follows the lawful market rate", "is accepted by both sides"}}},
    {"the loan transfer", {{"bank receipt proves funds were delivered", "cash was handed over with receipt"}},
     {{"funds were never actually delivered", "no transfer record can be shown"}}},
}};

constexpr std::array<std::string_view, kClaimTypeCount> kClaimText = {
    "order the defendant to repay the loan principal",
    "order the defendant to pay the overdue interest",
    "order the defendant to pay liquidated damages for default",
    "order the guarantor to bear joint guarantee liability",
    "order the spouse to share the repayment as couple debt",
};

constexpr std::array<std::string_view, 6> kAmounts = {"10000", "30000", "50000", "80000", "120000", "200000"};

constexpr std::array<std::string_view, 3> kOpenings = {
    "the court is now in session for this private lending dispute",
    "the hearing begins please confirm your identities",
    "this court opens the trial on the loan dispute",
};

constexpr std::array<std::string_view, 3> kQuestions = {"please explain", "what do you say about",
                                                         "the court asks about"};

}  // namespace

std::string_view claim_type_name(ClaimType t) { return kClaimTypeNames.at(static_cast<std::size_t>(t)); }

ClaimType parse_claim_type(std::string_view name) {
  for (std::size_t i = 0; i < kClaimTypeCount; ++i)
    if (kClaimTypeNames[i] == name) return static_cast<ClaimType>(i);
  throw DomainError("unknown claim type '" + std::string(name) + "'");
}

Judgment oracle_judgment(const FactVector& f, ClaimType type) {
  if (!f[kLoanEstablished]) return Judgment::reject;
  switch (type) {
    case ClaimType::principal:
      return f[kRepaymentBehavior] ? Judgment::partially_support : Judgment::support;
    case ClaimType::interest:
      if (f[kLimitationOfAction]) return Judgment::reject;
      return f[kInterestDispute] ? Judgment::partially_support : Judgment::support;
    case ClaimType::liquidated_damages:
      if (!f[kLiquidatedDamages]) return Judgment::reject;
      return f[kInterestDispute] ? Judgment::partially_support : Judgment::support;
    case ClaimType::guarantee:
      if (!f[kGuaranteeLiability] || f[kTermOfGuarantee]) return Judgment::reject;
      return f[kRepaymentBehavior] ? Judgment::partially_support : Judgment::support;
    case ClaimType::joint_spouse:
      if (!f[kCoupleDebt]) return Judgment::reject;
      return f[kRepaymentBehavior] ? Judgment::partially_support : Judgment::support;
  }
  throw DomainError("unknown claim type");
}

Judgment oracle_judgment(const FactVector& facts, std::string_view claim_type) {
  return oracle_judgment(facts, parse_claim_type(claim_type));
}

std::array<double, kJudgmentCount> expected_label_distribution(const SynthProfile& profile) {
  // Expected number of claims of each type per case (ordered draws without replacement).
  std::array<double, kClaimTypeCount> type_mass{};
  std::function<void(std::size_t, std::vector<bool>&, double, double)> walk =
      [&](std::size_t remaining, std::vector<bool>& used, double prob, double weight_left) {
        if (remaining == 0) return;
        for (std::size_t t = 0; t < kClaimTypeCount; ++t) {
          if (used[t]) continue;
          const double p = prob * profile.claim_type_weights[t] / weight_left;
          type_mass[t] += p;
          used[t] = true;
          walk(remaining - 1, used, p, weight_left - profile.claim_type_weights[t]);
          used[t] = false;
        }
      };
  const double total_weight = [&] {
    double s = 0;
    for (double w : profile.claim_type_weights) s += w;
    return s;
  }();
  std::array<double, kClaimTypeCount> mass{};
  for (std::size_t k = 1; k <= profile.claims_per_case.size(); ++k) {
    type_mass.fill(0.0);
    std::vector<bool> used(kClaimTypeCount, false);
    walk(std::min(k, kClaimTypeCount), used, 1.0, total_weight);
    for (std::size_t t = 0; t < kClaimTypeCount; ++t) mass[t] += profile.claims_per_case[k - 1] * type_mass[t];
  }
  std::array<double, kJudgmentCount> dist{};
  for (std::uint32_t bits = 0; bits < (1u << kFactCount); ++bits) {
    FactVector f{};
    double p = 1.0;
    for (std::size_t i = 0; i < kFactCount; ++i) {
      f[i] = (bits >> i) & 1u;
      p *= f[i] ? profile.fact_marginals[i] : 1.0 - profile.fact_marginals[i];
    }
    for (std::size_t t = 0; t < kClaimTypeCount; ++t)
      dist[static_cast<std::size_t>(oracle_judgment(f, static_cast<ClaimType>(t)))] += p * mass[t];
  }
  double total = dist[0] + dist[1] + dist[2];
  for (double& d : dist) d /= total;
  return dist;
}

namespace {

std::string clip_words(const std::string& text, std::size_t max_words) {
  auto words = tokenize(text);
  if (words.size() > max_words) words.resize(max_words);
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& options, Rng& rng) {
  return options[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

// Parties assert what favours them; a witness may speak to either side.
Role evidence_speaker(std::size_t fact, bool present, Rng& rng) {
  if (std::bernoulli_distribution(0.2)(rng)) return Role::witness;
  // Facts whose presence helps the plaintiff.
  const bool favours_plaintiff = fact == kLoanEstablished || fact == kCoupleDebt || fact == kLiquidatedDamages ||
                                 fact == kGuaranteeLiability || fact == kAgreedLoanPeriod || fact == kTermOfRepayment;
  return present == favours_plaintiff ? Role::plaintiff : Role::defendant;
}

}  // namespace

std::vector<Case> synth_generate(std::uint64_t seed, std::size_t n_cases, const SynthProfile& profile) {
  if (n_cases == 0) throw DomainError("synth_generate: n_cases must be at least 1");
  Rng rng(seed);
  std::vector<Case> cases;
  cases.reserve(n_cases);
  std::discrete_distribution<std::size_t> claim_count(profile.claims_per_case.begin(), profile.claims_per_case.end());

  for (std::size_t c = 0; c < n_cases; ++c) {
    Case out;
    std::ostringstream id;
    id << "synth-" << seed << '-' << std::setw(6) << std::setfill('0') << c;
    out.case_id = id.str();

    // (1) facts
    FactVector facts{};
    for (std::size_t p = 0; p < kFactCount; ++p)
      facts[p] = std::bernoulli_distribution(profile.fact_marginals[p])(rng) ? 1 : 0;
    out.facts = facts;

    // (2) claims, drawn without replacement
    const std::size_t k = std::min(claim_count(rng) + 1, kClaimTypeCount);
    std::array<double, kClaimTypeCount> weights = profile.claim_type_weights;
    std::vector<ClaimType> types;
    for (std::size_t j = 0; j < k; ++j) {
      std::discrete_distribution<std::size_t> draw(weights.begin(), weights.end());
      const std::size_t t = draw(rng);
      weights[t] = 0.0;
      types.push_back(static_cast<ClaimType>(t));
    }
    const std::string amount(pick(kAmounts, rng));
    for (ClaimType t : types) {
      std::string text(kClaimText[static_cast<std::size_t>(t)]);
      if (t == ClaimType::principal) text += " of " + amount + " yuan";
      out.claims.push_back({text, std::string(claim_type_name(t))});
      // (3) oracle
      out.judgments.push_back(oracle_judgment(facts, t));
    }

    // (4) debate
    const std::size_t max_words = profile.max_utterance_words;
    if (std::bernoulli_distribution(profile.opening_rate)(rng))
      out.utterances.push_back({Role::judge, clip_words(std::string(pick(kOpenings, rng)), max_words)});
    for (ClaimType t : types)
      out.utterances.push_back(
          {Role::plaintiff, clip_words("we request the court " + std::string(kClaimText[static_cast<std::size_t>(t)]),
                                       max_words)});

    std::vector<std::size_t> order(kFactCount);
    for (std::size_t p = 0; p < kFactCount; ++p) order[p] = p;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t p : order) {
      const auto& ev = kEvidence[p];
      if (std::bernoulli_distribution(profile.judge_question_rate)(rng))
        out.utterances.push_back(
            {Role::judge, clip_words(std::string(pick(kQuestions, rng)) + " " + std::string(ev.topic), max_words)});
      const auto& phrasing = facts[p] ? ev.present : ev.absent;
      out.utterances.push_back({evidence_speaker(p, facts[p] != 0, rng),
                                clip_words(std::string(ev.topic) + " " + std::string(pick(phrasing, rng)), max_words)});
    }
    cases.push_back(std::move(out));
  }
  return cases;
}

}  // namespace msjudge
