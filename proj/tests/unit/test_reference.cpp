#include "doctest.h"
#include "helpers.hpp"
#include "reference_model.hpp"

using namespace msjudge;

namespace {

void compare(const Model& model, const Case& c, const std::vector<std::pair<std::size_t, double>>& overrides = {}) {
  reference::Vec forced;
  if (!overrides.empty()) {
    forced.assign(kFactCount, -1.0);
    for (auto [i, v] : overrides) forced[i] = v;
  }
  const auto ref = reference::run(model, c, forced);
  const ForwardResult r = model.infer(c, overrides);
  const ForwardTrace& t = r.trace;
  CHECK(testing::max_abs_diff(t.claim_probs, ref.claim_probs) < 1e-10);
  CHECK(testing::max_abs_diff(t.fact_probs, ref.fact_probs) < 1e-10);
  CHECK(testing::max_abs_diff(t.utterance_word_attention, ref.utterance_word_attention) < 1e-10);
  CHECK(testing::max_abs_diff(t.claim_word_attention, ref.claim_word_attention) < 1e-10);
  CHECK(testing::max_abs_diff(t.debate_to_fact, ref.debate_to_fact) < 1e-10);
  REQUIRE(t.hops.size() == model.config().hops);
  for (std::size_t h = 0; h < t.hops.size(); ++h) {
    const auto pick = [h](const std::vector<reference::Mat>& maps) {
      return maps.empty() ? reference::Mat{} : maps[h];
    };
    CHECK(testing::max_abs_diff(t.hops[h].debate_to_claim, pick(ref.debate_to_claim)) < 1e-10);
    CHECK(testing::max_abs_diff(t.hops[h].fact_to_claim, pick(ref.fact_to_claim)) < 1e-10);
    CHECK(testing::max_abs_diff(t.hops[h].across_claim, pick(ref.across_claim)) < 1e-10);
  }
  if (c.labeled()) {
    CHECK(std::abs(r.claim_loss.item() - ref.claim_loss) < 1e-10);
    if (r.fact_loss.defined()) CHECK(std::abs(r.fact_loss.item() - ref.fact_loss) < 1e-10);
  }
}

}  // namespace

TEST_CASE("library forward matches the straight-line reference") {
  const auto cases = synth_generate(3, 12);
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Model model = testing::random_model(cases, testing::tiny_config(1 + seed % 3), seed);
    for (const auto& c : cases) compare(model, c);
  }
}

TEST_CASE("reference agreement holds under every ablation") {
  const auto cases = synth_generate(4, 6);
  std::vector<Ablation> variants(5);
  variants[0].no_role = true;
  variants[1].no_utterance_memory = true;
  variants[2].no_fact_memory = true;
  variants[3].no_self_attention = true;
  variants[4].single_task = true;
  std::uint64_t seed = 10;
  for (const auto& ab : variants) {
    const Model model = testing::random_model(cases, testing::tiny_config(2, ab), ++seed);
    for (const auto& c : cases) compare(model, c);
  }
}

TEST_CASE("reference agreement holds with fact overrides and truncation") {
  auto cases = synth_generate(5, 6);
  ModelConfig cfg = testing::tiny_config(2);
  cfg.limits.max_utterances = 5;
  cfg.limits.max_utterance_words = 4;
  cfg.limits.max_claims = 1;
  cfg.limits.max_claim_words = 3;
  const Model model = testing::random_model(cases, cfg, 77);
  for (auto& c : cases) {
    c.judgments.resize(std::min<std::size_t>(c.judgments.size(), 1));
    compare(model, c, {{0, 1.0}, {4, 0.0}, {9, 0.25}});
  }
}
