#include "msjudge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

namespace msjudge {

using nlohmann::json;

std::string_view role_name(Role role) { return kRoleNames.at(static_cast<std::size_t>(role)); }

Role parse_role(std::string_view name) {
  for (std::size_t i = 0; i < kRoleCount; ++i)
    if (kRoleNames[i] == name) return static_cast<Role>(i);
  throw ValidationError("unknown role '" + std::string(name) + "'");
}

std::string_view judgment_name(Judgment j) { return kJudgmentLabels.at(static_cast<std::size_t>(j)); }

Judgment parse_judgment(std::string_view name) {
  for (std::size_t i = 0; i < kJudgmentCount; ++i)
    if (kJudgmentLabels[i] == name) return static_cast<Judgment>(i);
  throw ValidationError("unknown judgment label '" + std::string(name) + "'");
}

std::optional<std::size_t> fact_index(std::string_view label) {
  for (std::size_t i = 0; i < kFactCount; ++i)
    if (kFactLabels[i] == label) return i;
  return std::nullopt;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

// --- JSON ------------------------------------------------------------------------

json case_to_json(const Case& c) {
  json j;
  j["case_id"] = c.case_id;
  j["claims"] = json::array();
  for (const auto& claim : c.claims) {
    json cj{{"text", claim.text}};
    if (!claim.type.empty()) cj["type"] = claim.type;
    j["claims"].push_back(std::move(cj));
  }
  j["utterances"] = json::array();
  for (const auto& u : c.utterances) j["utterances"].push_back({{"role", role_name(u.role)}, {"text", u.text}});
  if (c.facts) {
    j["facts"] = json::array();
    for (auto f : *c.facts) j["facts"].push_back(static_cast<int>(f));
  }
  if (!c.judgments.empty()) {
    j["judgments"] = json::array();
    for (auto g : c.judgments) j["judgments"].push_back(judgment_name(g));
  }
  return j;
}

namespace {

const json& field(const json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) throw ValidationError(where + ": missing field '" + name + "'");
  return *it;
}

std::string text_field(const json& j, const char* name, const std::string& where) {
  const json& v = field(j, name, where);
  if (!v.is_string()) throw ValidationError(where + ": field '" + name + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

Case case_from_json(const json& j, bool require_labels) {
  if (!j.is_object()) throw ValidationError("case record must be an object");
  Case c;
  c.case_id = text_field(j, "case_id", "case");
  const std::string where = "case '" + c.case_id + "'";

  const json& claims = field(j, "claims", where);
  if (!claims.is_array()) throw ValidationError(where + ": field 'claims' must be an array");
  for (std::size_t i = 0; i < claims.size(); ++i) {
    const std::string at = where + " claims[" + std::to_string(i) + "]";
    Claim claim{text_field(claims[i], "text", at), ""};
    if (auto t = claims[i].find("type"); t != claims[i].end() && t->is_string()) claim.type = t->get<std::string>();
    c.claims.push_back(std::move(claim));
  }

  const json& utts = field(j, "utterances", where);
  if (!utts.is_array()) throw ValidationError(where + ": field 'utterances' must be an array");
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const std::string at = where + " utterances[" + std::to_string(i) + "]";
    Utterance u;
    try {
      u.role = parse_role(text_field(utts[i], "role", at));
    } catch (const ValidationError& e) {
      throw ValidationError(at + ": " + e.what());
    }
    u.text = text_field(utts[i], "text", at);
    c.utterances.push_back(std::move(u));
  }

  if (auto it = j.find("facts"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != kFactCount)
      throw ValidationError(where + ": field 'facts' must hold exactly " + std::to_string(kFactCount) + " entries");
    FactVector facts{};
    for (std::size_t p = 0; p < kFactCount; ++p) {
      const json& v = (*it)[p];
      if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1))
        throw ValidationError(where + ": facts[" + std::to_string(p) + "] must be 0 or 1");
      facts[p] = static_cast<std::uint8_t>(v.get<int>());
    }
    c.facts = facts;
  } else if (require_labels) {
    throw ValidationError(where + ": missing field 'facts'");
  }

  if (auto it = j.find("judgments"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) throw ValidationError(where + ": field 'judgments' must be an array");
    for (const auto& v : *it) {
      if (!v.is_string()) throw ValidationError(where + ": judgment labels must be strings");
      try {
        c.judgments.push_back(parse_judgment(v.get<std::string>()));
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
      }
    }
    if (c.judgments.size() != c.claims.size())
      throw ValidationError(where + ": " + std::to_string(c.claims.size()) + " claims but " +
                            std::to_string(c.judgments.size()) + " judgments");
  } else if (require_labels) {
    throw ValidationError(where + ": missing field 'judgments'");
  }
  return c;
}

std::vector<Case> load_cases(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open case file " + path.string());
  std::vector<Case> cases;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
    try {
      cases.push_back(case_from_json(json::parse(line), /*require_labels=*/true));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

void save_cases(const std::filesystem::path& path, const std::vector<Case>& cases) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write case file " + path.string());
  for (const auto& c : cases) out << case_to_json(c).dump() << '\n';
}

// --- vocabulary ------------------------------------------------------------------

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnknownToken));
}

void Vocabulary::add(std::string token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  for (unsigned char ch : token) fingerprint_ = (fingerprint_ ^ ch) * 0x100000001b3ULL;
  fingerprint_ = (fingerprint_ ^ 0xffU) * 0x100000001b3ULL;
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(const std::vector<Case>& cases, std::size_t min_count) {
  if (min_count < 1) throw DomainError("build_vocab: min_count must be at least 1");
  std::unordered_map<std::string, std::size_t> counts;
  auto count = [&](const std::string& text) {
    for (auto& t : tokenize(text)) ++counts[t];
  };
  for (const auto& c : cases) {
    for (const auto& claim : c.claims) count(claim.text);
    for (const auto& u : c.utterances) count(u.text);
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, n] : counts)
    if (n >= min_count && token != kPadToken && token != kUnknownToken) kept.emplace_back(token, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (auto& [token, n] : kept) vocab.add(token);
  return vocab;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnknownToken)
    throw ValidationError("vocabulary must start with the reserved <pad> and <unk> entries");
  Vocabulary vocab;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (vocab.ids_.count(tokens[i])) throw ValidationError("duplicate vocabulary token '" + tokens[i] + "'");
    vocab.add(tokens[i]);
  }
  return vocab;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(token);
  return it == ids_.end() || it->second == kPad ? kUnknown : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw DomainError("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

// --- batching ----------------------------------------------------------------------

Batch encode_batch(const std::vector<Case>& cases, const Vocabulary& vocab, const Limits& limits,
                   PadPolicy pad) {
  if (cases.empty()) throw ContractError("encode_batch: no cases");
  if (!limits.max_utterances || !limits.max_utterance_words || !limits.max_claims || !limits.max_claim_words)
    throw DomainError("encode_batch: limits must be positive");

  struct Encoded {
    std::vector<std::vector<int>> utterances;
    std::vector<int> roles;
    std::vector<std::vector<int>> claims;
  };
  std::vector<Encoded> encoded;
  Batch b;
  b.size = cases.size();
  b.vocab_fingerprint = vocab.fingerprint();
  b.labeled = std::all_of(cases.begin(), cases.end(), [](const Case& c) { return c.labeled(); });
  for (const auto& c : cases) {
    if (c.claims.empty()) throw ValidationError("case '" + c.case_id + "' has no claims");
    if (c.utterances.empty()) throw ValidationError("case '" + c.case_id + "' has no utterances");
    Encoded e;
    for (std::size_t i = 0; i < std::min(c.utterances.size(), limits.max_utterances); ++i) {
      auto ids = vocab.encode(c.utterances[i].text);
      if (ids.empty()) ids.push_back(Vocabulary::kUnknown);
      if (ids.size() > limits.max_utterance_words) ids.resize(limits.max_utterance_words);
      b.words = std::max(b.words, ids.size());
      e.utterances.push_back(std::move(ids));
      e.roles.push_back(static_cast<int>(c.utterances[i].role));
    }
    for (std::size_t j = 0; j < std::min(c.claims.size(), limits.max_claims); ++j) {
      auto ids = vocab.encode(c.claims[j].text);
      if (ids.empty()) ids.push_back(Vocabulary::kUnknown);
      if (ids.size() > limits.max_claim_words) ids.resize(limits.max_claim_words);
      b.claim_words = std::max(b.claim_words, ids.size());
      e.claims.push_back(std::move(ids));
    }
    b.utterances = std::max(b.utterances, e.utterances.size());
    b.claims = std::max(b.claims, e.claims.size());
    b.case_ids.push_back(c.case_id);
    encoded.push_back(std::move(e));
  }
  if (pad == PadPolicy::limits) {
    b.utterances = limits.max_utterances;
    b.words = limits.max_utterance_words;
    b.claims = limits.max_claims;
    b.claim_words = limits.max_claim_words;
  }

  const std::size_t n = b.utterances, l = b.words, k = b.claims, q = b.claim_words;
  b.utterance_tokens.assign(b.size * n * l, Vocabulary::kPad);
  b.word_mask.assign(b.size * n * l, 0);
  b.roles.assign(b.size * n, 0);
  b.utterance_mask.assign(b.size * n, 0);
  b.claim_tokens.assign(b.size * k * q, Vocabulary::kPad);
  b.claim_word_mask.assign(b.size * k * q, 0);
  b.claim_mask.assign(b.size * k, 0);
  b.judgments.assign(b.size * k, -1);
  b.facts.assign(b.size * kFactCount, 0.0);

  for (std::size_t s = 0; s < b.size; ++s) {
    const auto& e = encoded[s];
    for (std::size_t i = 0; i < e.utterances.size(); ++i) {
      b.utterance_mask[s * n + i] = 1;
      b.roles[s * n + i] = e.roles[i];
      for (std::size_t t = 0; t < e.utterances[i].size(); ++t) {
        b.utterance_tokens[(s * n + i) * l + t] = e.utterances[i][t];
        b.word_mask[(s * n + i) * l + t] = 1;
      }
    }
    for (std::size_t j = 0; j < e.claims.size(); ++j) {
      b.claim_mask[s * k + j] = 1;
      for (std::size_t v = 0; v < e.claims[j].size(); ++v) {
        b.claim_tokens[(s * k + j) * q + v] = e.claims[j][v];
        b.claim_word_mask[(s * k + j) * q + v] = 1;
      }
      if (b.labeled) b.judgments[s * k + j] = static_cast<int>(cases[s].judgments[j]);
    }
    if (b.labeled)
      for (std::size_t p = 0; p < kFactCount; ++p) b.facts[s * kFactCount + p] = (*cases[s].facts)[p];
  }
  return b;
}

}  // namespace msjudge
