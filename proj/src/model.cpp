#include "msjudge/model.hpp"

#include <algorithm>

namespace msjudge {

using nlohmann::json;

std::string Ablation::name() const {
  std::string out;
  auto add = [&out](bool on, const char* tag) {
    if (on) out += (out.empty() ? "" : "+") + std::string(tag);
  };
  add(no_role, "no_role");
  add(no_utterance_memory, "no_utterance_memory");
  add(no_fact_memory, "no_fact_memory");
  add(no_self_attention, "no_self_attention");
  add(single_task, "single_task");
  return out.empty() ? "full" : out;
}

json to_json(const ModelConfig& c) {
  return {
      {"word_dim", c.word_dim},
      {"role_dim", c.role_dim},
      {"hidden", c.hidden},
      {"hops", c.hops},
      {"embedding_dropout", c.embedding_dropout},
      {"classifier_dropout", c.classifier_dropout},
      {"fact_loss_weight", c.fact_loss_weight},
      {"ablation",
       {{"no_role", c.ablation.no_role},
        {"no_utterance_memory", c.ablation.no_utterance_memory},
        {"no_fact_memory", c.ablation.no_fact_memory},
        {"no_self_attention", c.ablation.no_self_attention},
        {"single_task", c.ablation.single_task}}},
      {"limits",
       {{"max_utterances", c.limits.max_utterances},
        {"max_utterance_words", c.limits.max_utterance_words},
        {"max_claims", c.limits.max_claims},
        {"max_claim_words", c.limits.max_claim_words}}},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.word_dim = j.value("word_dim", c.word_dim);
  c.role_dim = j.value("role_dim", c.role_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.hops = j.value("hops", c.hops);
  c.embedding_dropout = j.value("embedding_dropout", c.embedding_dropout);
  c.classifier_dropout = j.value("classifier_dropout", c.classifier_dropout);
  c.fact_loss_weight = j.value("fact_loss_weight", c.fact_loss_weight);
  if (auto a = j.find("ablation"); a != j.end()) {
    c.ablation.no_role = a->value("no_role", false);
    c.ablation.no_utterance_memory = a->value("no_utterance_memory", false);
    c.ablation.no_fact_memory = a->value("no_fact_memory", false);
    c.ablation.no_self_attention = a->value("no_self_attention", false);
    c.ablation.single_task = a->value("single_task", false);
  }
  if (auto l = j.find("limits"); l != j.end()) {
    c.limits.max_utterances = l->value("max_utterances", c.limits.max_utterances);
    c.limits.max_utterance_words = l->value("max_utterance_words", c.limits.max_utterance_words);
    c.limits.max_claims = l->value("max_claims", c.limits.max_claims);
    c.limits.max_claim_words = l->value("max_claim_words", c.limits.max_claim_words);
  }
  if (c.word_dim == 0 || c.hidden == 0) throw ValidationError("model config: word_dim and hidden must be positive");
  if (c.hops == 0) throw ValidationError("model config: hops must be at least 1");
  return c;
}

json to_json(const ForwardTrace& t) {
  json hops = json::array();
  for (const auto& h : t.hops)
    hops.push_back({{"debate_to_claim", h.debate_to_claim},
                    {"fact_to_claim", h.fact_to_claim},
                    {"across_claim", h.across_claim}});
  return {
      {"utterance_word_attention", t.utterance_word_attention},
      {"claim_word_attention", t.claim_word_attention},
      {"debate_to_fact", t.debate_to_fact},
      {"hops", hops},
      {"fact_probs", t.fact_probs},
      {"fact_memory_scale", t.fact_memory_scale},
      {"claim_logits", t.claim_logits},
      {"claim_probs", t.claim_probs},
  };
}

namespace {

std::vector<double> masked_values(const Tensor& v, Mask mask) {
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (mask.empty() || mask[i]) out.push_back(v[i]);
  return out;
}

Matrix masked_matrix(const Tensor& m, Mask row_mask, Mask col_mask) {
  Matrix out;
  if (!m.defined()) return out;
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  for (std::size_t i = 0; i < rows; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    std::vector<double> r;
    for (std::size_t j = 0; j < cols; ++j)
      if (col_mask.empty() || col_mask[j]) r.push_back(m.at(i, j));
    out.push_back(std::move(r));
  }
  return out;
}

ParamStore deep_copy(const ParamStore& src) {
  ParamStore out;
  for (std::size_t i = 0; i < src.size(); ++i) out.add(src.names()[i], src.tensors()[i].detach());
  return out;
}

}  // namespace

Model::Model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.hops == 0) throw DomainError("model: hop count must be at least 1");
  Rng rng(seed);
  EncoderDims dims{vocab_.size(), config_.word_dim, config_.ablation.no_role ? 0 : config_.role_dim, config_.hidden};
  const std::size_t width = 2 * config_.hidden;
  const std::size_t facts = config_.ablation.fact_pathway() ? kFactCount : 0;
  EncoderParams::create(store_, dims, rng);
  InteractionParams::create(store_, width, facts, rng);
  HeadParams::create(store_, width, kJudgmentCount, facts, rng);
  bind();
}

Model::Model(const ModelConfig& config, Vocabulary vocab, ParamStore store)
    : config_(config), vocab_(std::move(vocab)), store_(std::move(store)) {
  bind();
}

Model::Model(const Model& other) : config_(other.config_), vocab_(other.vocab_), store_(deep_copy(other.store_)) {
  bind();
}

void Model::bind() {
  encoder_ = EncoderParams::bind(store_, !config_.ablation.no_role);
  interaction_ = InteractionParams::bind(store_, config_.ablation.fact_pathway());
  heads_ = HeadParams::bind(store_, config_.ablation.fact_pathway());
}

void Model::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  json meta{{"format", "msjudge-checkpoint"}, {"config", to_json(config_)}, {"vocab", vocab_.tokens()}};
  ckpt.metadata = meta.dump();
  ckpt.names = store_.names();
  ckpt.tensors = store_.tensors();
  write_checkpoint(path, ckpt);
}

Model Model::load(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": bad metadata: " + e.what());
  }
  if (meta.value("format", "") != "msjudge-checkpoint")
    throw ValidationError("checkpoint " + path.string() + ": not a model checkpoint");
  ModelConfig config = model_config_from_json(meta.at("config"));
  Vocabulary vocab = Vocabulary::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
  ParamStore store;
  for (std::size_t i = 0; i < ckpt.names.size(); ++i) store.add(ckpt.names[i], ckpt.tensors[i]);
  Model model(config, std::move(vocab), std::move(store));
  if (model.encoder_.word_embedding.shape()[0] != model.vocab_.size())
    throw ValidationError("checkpoint " + path.string() + ": embedding rows disagree with vocabulary size");
  return model;
}

ForwardResult Model::forward(Tape& tape, const Batch& b, std::size_t s, const ForwardOptions& opt) const {
  if (s >= b.size) throw ContractError("forward: case index out of range");
  if (b.vocab_fingerprint != vocab_.fingerprint())
    throw ContractError("forward: batch was encoded with a different vocabulary than the model's");
  const std::size_t n = b.utterances, l = b.words, k = b.claims, q = b.claim_words;
  const std::size_t width = 2 * config_.hidden;
  const DropoutPlan drop{config_.embedding_dropout, config_.classifier_dropout, opt.training, opt.rng};
  const Mask utterance_mask(b.utterance_mask.data() + s * n, n);
  const Mask claim_mask(b.claim_mask.data() + s * k, k);
  const Ablation& ab = config_.ablation;

  ForwardResult out;
  ForwardTrace& trace = out.trace;
  const Tensor zero_row = Tensor::zeros({width});

  std::vector<Tensor> utterances(n, zero_row);
  for (std::size_t i = 0; i < n; ++i) {
    if (!utterance_mask[i]) continue;
    const std::size_t off = (s * n + i) * l;
    const Mask words(b.word_mask.data() + off, l);
    Pooled p = encode_utterance(tape, std::span<const int>(b.utterance_tokens.data() + off, l), b.roles[s * n + i],
                                encoder_, words, drop);
    utterances[i] = p.vector;
    if (opt.build_trace) trace.utterance_word_attention.push_back(masked_values(p.attention, words));
  }
  Tensor memory = encode_dialogue(tape, stack_rows(tape, utterances), encoder_, utterance_mask);

  std::vector<Tensor> claims(k, zero_row);
  std::vector<int> targets;
  for (std::size_t j = 0; j < k; ++j) {
    if (!claim_mask[j]) continue;
    const std::size_t off = (s * k + j) * q;
    const Mask words(b.claim_word_mask.data() + off, q);
    Pooled p = encode_claim(tape, std::span<const int>(b.claim_tokens.data() + off, q), encoder_, words, drop);
    claims[j] = p.vector;
    if (opt.build_trace) trace.claim_word_attention.push_back(masked_values(p.attention, words));
    if (b.labeled) targets.push_back(b.judgments[s * k + j]);
  }
  if (std::none_of(claim_mask.begin(), claim_mask.end(), [](std::uint8_t m) { return m != 0; }))
    throw ContractError("forward: case has no claims");

  Tensor fact_memory;
  if (ab.fact_pathway()) {
    Attended facts = debate_to_fact(tape, memory, interaction_, utterance_mask);
    out.fact_probs = predict_facts(tape, drop.classifier(tape, facts.output), heads_);
    if (opt.build_trace) {
      trace.debate_to_fact = masked_matrix(facts.attention, {}, utterance_mask);
      trace.fact_probs.assign(out.fact_probs.data().begin(), out.fact_probs.data().end());
    }
    if (ab.fact_memory()) {
      Tensor scale_by = out.fact_probs;
      if (!opt.fact_overrides.empty()) {
        for (const auto& [index, value] : opt.fact_overrides) {
          if (index >= kFactCount) throw DomainError("fact override index " + std::to_string(index) + " out of range");
          if (!(value >= 0.0 && value <= 1.0))
            throw DomainError("fact override for '" + std::string(kFactLabels[index]) + "' must lie in [0, 1]");
        }
        scale_by = override_entries(tape, out.fact_probs, opt.fact_overrides);
      }
      fact_memory = build_fact_memory(tape, facts.output, scale_by);
      if (opt.build_trace) trace.fact_memory_scale.assign(scale_by.data().begin(), scale_by.data().end());
    }
  }
  if (!opt.fact_overrides.empty() && !ab.fact_memory())
    throw ContractError("fact overrides need a model with a fact memory");

  const HopSwitches switches{!ab.no_utterance_memory, ab.fact_memory(), !ab.no_self_attention};
  HopResult hops = run_hops(tape, stack_rows(tape, claims), memory, utterance_mask, fact_memory, claim_mask,
                            interaction_, config_.hops, switches);

  Tensor final_claims = hops.claims;
  if (std::any_of(claim_mask.begin(), claim_mask.end(), [](std::uint8_t m) { return m == 0; })) {
    std::vector<Tensor> real;
    for (std::size_t j = 0; j < k; ++j)
      if (claim_mask[j]) real.push_back(row(tape, hops.claims, j));
    final_claims = stack_rows(tape, real);
  }
  Tensor logits = judgment_logits(tape, drop.classifier(tape, final_claims), heads_);
  out.claim_probs = masked_softmax_rows(tape, logits, {});

  if (opt.build_trace) {
    for (const auto& h : hops.hops)
      trace.hops.push_back({masked_matrix(h.debate_to_claim, claim_mask, utterance_mask),
                            masked_matrix(h.fact_to_claim, claim_mask, {}),
                            masked_matrix(h.across_claim, claim_mask, claim_mask)});
    trace.claim_logits = masked_matrix(logits, {}, {});
    trace.claim_probs = masked_matrix(out.claim_probs, {}, {});
  }

  if (b.labeled) {
    out.claim_loss = claim_loss(tape, out.claim_probs, one_hot_targets(targets, kJudgmentCount));
    if (ab.fact_pathway()) {
      std::vector<double> gold(b.facts.begin() + s * kFactCount, b.facts.begin() + (s + 1) * kFactCount);
      out.fact_loss = fact_loss(tape, out.fact_probs, Tensor::vector(std::move(gold)));
    }
    out.loss = total_loss(tape, out.claim_loss, out.fact_loss, config_.fact_loss_weight);
  }
  return out;
}

ForwardResult Model::infer(const Case& c, const std::vector<std::pair<std::size_t, double>>& fact_overrides) const {
  Batch batch = encode_batch({c}, vocab_, config_.limits);
  Tape tape(false);
  ForwardOptions opt;
  opt.fact_overrides = fact_overrides;
  return forward(tape, batch, 0, opt);
}

}  // namespace msjudge
