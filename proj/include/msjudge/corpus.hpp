#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "msjudge/errors.hpp"

namespace msjudge {

enum class Role : std::uint8_t { judge = 0, plaintiff = 1, defendant = 2, witness = 3 };
inline constexpr std::size_t kRoleCount = 4;

enum class Judgment : std::uint8_t { reject = 0, partially_support = 1, support = 2 };
inline constexpr std::size_t kJudgmentCount = 3;

inline constexpr std::size_t kFactCount = 10;

// Index order is fixed: checkpoints, reports and the wire format depend on it.
inline constexpr std::array<std::string_view, kFactCount> kFactLabels = {
    "Agreed Loan Period", "Couple Debt",         "Limitation of Action", "Liquidated Damages",
    "Repayment Behavior", "Term of Guarantee",   "Guarantee Liability",  "Term of Repayment",
    "Interest Dispute",   "Loan Established"};

inline constexpr std::array<std::string_view, kJudgmentCount> kJudgmentLabels = {"reject", "partially_support",
                                                                                 "support"};
inline constexpr std::array<std::string_view, kRoleCount> kRoleNames = {"judge", "plaintiff", "defendant",
                                                                        "witness"};

std::string_view role_name(Role role);
Role parse_role(std::string_view name);  // ValidationError on unknown names
std::string_view judgment_name(Judgment j);
Judgment parse_judgment(std::string_view name);
std::optional<std::size_t> fact_index(std::string_view label);

/// Lowercases ASCII and splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

struct Utterance {
  Role role = Role::judge;
  std::string text;
  bool operator==(const Utterance&) const = default;
};

struct Claim {
  std::string text;
  std::string type;  // generator claim type; empty for external data
  bool operator==(const Claim&) const = default;
};

using FactVector = std::array<std::uint8_t, kFactCount>;

struct Case {
  std::string case_id;
  std::vector<Claim> claims;
  std::vector<Utterance> utterances;
  std::optional<FactVector> facts;  // gold labels; absent in prediction payloads
  std::vector<Judgment> judgments;  // gold labels; empty in prediction payloads

  bool labeled() const { return facts.has_value() && !judgments.empty(); }
  bool operator==(const Case&) const = default;
};

nlohmann::json case_to_json(const Case& c);
/// Validates structure; when require_labels, facts and judgments must be present and consistent.
Case case_from_json(const nlohmann::json& j, bool require_labels);

/// One JSON object per line. Blank lines are skipped.
std::vector<Case> load_cases(const std::filesystem::path& path);
void save_cases(const std::filesystem::path& path, const std::vector<Case>& cases);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocabulary();
  /// Ids follow (count desc, token asc); tokens seen fewer than min_count times are left out.
  static Vocabulary build(const std::vector<Case>& cases, std::size_t min_count);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);  // tokens[id] for id >= 2

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  std::vector<int> encode(std::string_view text) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }
  /// FNV-1a over the ordered token list; batches carry it so a model can refuse foreign encodings.
  std::uint64_t fingerprint() const { return fingerprint_; }

 private:
  void add(std::string token);
  std::vector<std::string> tokens_;
  std::uint64_t fingerprint_ = 0xcbf29ce484222325ULL;
  std::map<std::string, int, std::less<>> ids_;
};

inline Vocabulary build_vocab(const std::vector<Case>& cases, std::size_t min_count) {
  return Vocabulary::build(cases, min_count);
}

struct Limits {
  std::size_t max_utterances = 64;
  std::size_t max_utterance_words = 16;
  std::size_t max_claims = 8;
  std::size_t max_claim_words = 16;
};

enum class PadPolicy {
  batch_max,  // pad to the largest (truncated) case in the batch
  limits,     // pad every dimension up to the configured limits
};

/// Padded, masked id arrays for a set of cases. Row-major layouts:
///   utterance_tokens / word_mask   [batch, utterances, words]
///   roles / utterance_mask         [batch, utterances]
///   claim_tokens / claim_word_mask [batch, claims, claim_words]
///   claim_mask / judgments         [batch, claims]   (judgment -1 on padding)
///   facts                          [batch, 10]
struct Batch {
  std::size_t size = 0;
  std::size_t utterances = 0;
  std::size_t words = 0;
  std::size_t claims = 0;
  std::size_t claim_words = 0;
  bool labeled = false;
  std::uint64_t vocab_fingerprint = 0;

  std::vector<std::string> case_ids;
  std::vector<int> utterance_tokens;
  std::vector<std::uint8_t> word_mask;
  std::vector<int> roles;
  std::vector<std::uint8_t> utterance_mask;
  std::vector<int> claim_tokens;
  std::vector<std::uint8_t> claim_word_mask;
  std::vector<std::uint8_t> claim_mask;
  std::vector<int> judgments;
  std::vector<double> facts;
};

/// Truncation keeps the earliest utterances, claims and tokens.
Batch encode_batch(const std::vector<Case>& cases, const Vocabulary& vocab, const Limits& limits,
                   PadPolicy pad = PadPolicy::batch_max);

}  // namespace msjudge
