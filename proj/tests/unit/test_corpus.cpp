#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "msjudge/corpus.hpp"
#include "msjudge/synth.hpp"

using namespace msjudge;
using nlohmann::json;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << contents;
  return path;
}

Case simple_case(const std::string& utterance) {
  Case c;
  c.case_id = "c";
  c.claims = {{"pay back", ""}};
  c.utterances = {{Role::plaintiff, utterance}};
  return c;
}

}  // namespace

TEST_CASE("a record whose judgments disagree with its claims names the case") {
  json j{{"case_id", "case-42"},
         {"claims", {{{"text", "a"}}, {{"text", "b"}}}},
         {"utterances", {{{"role", "judge"}, {"text", "x"}}}},
         {"facts", std::vector<int>(10, 0)},
         {"judgments", {"reject", "support", "support"}}};
  try {
    case_from_json(j, true);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("case-42") != std::string::npos);
  }
}

TEST_CASE("malformed records are rejected with the offending field") {
  json base{{"case_id", "k"},
            {"claims", {{{"text", "a"}}}},
            {"utterances", {{{"role", "judge"}, {"text", "x"}}}},
            {"facts", std::vector<int>(10, 0)},
            {"judgments", {"reject"}}};
  CHECK_NOTHROW(case_from_json(base, true));
  json bad_role = base;
  bad_role["utterances"][0]["role"] = "clerk";
  CHECK_THROWS_AS(case_from_json(bad_role, true), ValidationError);
  json short_facts = base;
  short_facts["facts"] = {1, 0};
  CHECK_THROWS_WITH_AS(case_from_json(short_facts, true), doctest::Contains("facts"), ValidationError);
  json unlabeled = base;
  unlabeled.erase("judgments");
  CHECK_THROWS_AS(case_from_json(unlabeled, true), ValidationError);
  CHECK_NOTHROW(case_from_json(unlabeled, false));
}

TEST_CASE("an empty file loads as an empty list") {
  auto path = temp_file("msjudge_empty.jsonl", "");
  CHECK(load_cases(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("bad JSON lines report file and line") {
  auto path = temp_file("msjudge_badline.jsonl", "\n{not json\n");
  CHECK_THROWS_WITH_AS(load_cases(path), doctest::Contains(":2:"), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("save then load reproduces a generated corpus") {
  const auto cases = synth_generate(21, 40);
  const auto path = std::filesystem::temp_directory_path() / "msjudge_roundtrip.jsonl";
  save_cases(path, cases);
  CHECK(load_cases(path) == cases);
  std::filesystem::remove(path);
}

TEST_CASE("tokens below min_count map to unknown") {
  Case c = simple_case("a a b");
  c.claims = {{"a", ""}};
  Vocabulary v = build_vocab({c}, 2);
  CHECK(v.id("a") >= 2);
  CHECK(v.id("b") == Vocabulary::kUnknown);
  CHECK(v.size() == 3);
}

TEST_CASE("vocabulary is deterministic and sized by surviving tokens") {
  const auto cases = synth_generate(2, 60);
  Vocabulary a = build_vocab(cases, 1), b = build_vocab(cases, 1);
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
  for (std::size_t min_count : {1, 3, 50}) {
    std::map<std::string, std::size_t> counts;
    for (const auto& c : cases) {
      for (const auto& u : c.utterances)
        for (const auto& t : tokenize(u.text)) ++counts[t];
      for (const auto& cl : c.claims)
        for (const auto& t : tokenize(cl.text)) ++counts[t];
    }
    std::size_t surviving = 0;
    for (const auto& [t, n] : counts) surviving += n >= min_count;
    CHECK(build_vocab(cases, min_count).size() == surviving + 2);
  }
}

TEST_CASE("vocabulary round trips through its token list") {
  Vocabulary v = build_vocab(synth_generate(2, 10), 1);
  Vocabulary back = Vocabulary::from_tokens(v.tokens());
  CHECK(back == v);
  CHECK(back.fingerprint() == v.fingerprint());
  CHECK(build_vocab(synth_generate(3, 10), 1).fingerprint() != v.fingerprint());
}

TEST_CASE("word masks cover real tokens only") {
  Case c = simple_case("x y z");
  Vocabulary v = build_vocab({c}, 1);
  Limits lim;
  lim.max_utterance_words = 5;
  Batch b = encode_batch({c}, v, lim, PadPolicy::limits);
  CHECK(std::vector<std::uint8_t>(b.word_mask.begin(), b.word_mask.begin() + 5) ==
        std::vector<std::uint8_t>{1, 1, 1, 0, 0});
}

TEST_CASE("long utterances keep their first tokens") {
  Case c = simple_case("t1 t2 t3 t4 t5 t6 t7");
  Vocabulary v = build_vocab({c}, 1);
  Limits lim;
  lim.max_utterance_words = 5;
  Batch b = encode_batch({c}, v, lim);
  REQUIRE(b.words == 5);
  for (int i = 0; i < 5; ++i) CHECK(b.utterance_tokens[i] == v.id("t" + std::to_string(i + 1)));
}

TEST_CASE("encoding refuses cases without claims or utterances") {
  Case c = simple_case("x");
  Vocabulary v = build_vocab({c}, 1);
  Case no_claims = c;
  no_claims.claims.clear();
  CHECK_THROWS_AS(encode_batch({no_claims}, v, {}), ValidationError);
  Case silent = c;
  silent.utterances.clear();
  CHECK_THROWS_AS(encode_batch({silent}, v, {}), ValidationError);
}
