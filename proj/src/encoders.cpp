#include "msjudge/encoders.hpp"

#include <algorithm>

namespace msjudge {

namespace {

constexpr double kRecurrentInit = 0.08;

bool all_masked(Mask mask) {
  return !mask.empty() && std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
}

LstmWeights create_lstm(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                        Rng& rng) {
  LstmWeights w;
  w.input = store.add(prefix + ".W", uniform_tensor({4 * hidden, input}, kRecurrentInit, rng));
  w.recurrent = store.add(prefix + ".U", uniform_tensor({4 * hidden, hidden}, kRecurrentInit, rng));
  w.bias = store.add(prefix + ".b", uniform_tensor({4 * hidden}, kRecurrentInit, rng));
  return w;
}

LstmWeights bind_lstm(ParamStore& store, const std::string& prefix) {
  return {store.get(prefix + ".W"), store.get(prefix + ".U"), store.get(prefix + ".b")};
}

}  // namespace

Tensor DropoutPlan::embedding(Tape& tape, const Tensor& x) const {
  if (!training || embedding_rate == 0.0) return x;
  if (!rng) throw ContractError("dropout in training mode needs a random generator");
  return dropout(tape, x, embedding_rate, true, *rng);
}

Tensor DropoutPlan::classifier(Tape& tape, const Tensor& x) const {
  if (!training || classifier_rate == 0.0) return x;
  if (!rng) throw ContractError("dropout in training mode needs a random generator");
  return dropout(tape, x, classifier_rate, true, *rng);
}

BiLstmWeights BiLstmWeights::create(ParamStore& store, const std::string& prefix, std::size_t input,
                                    std::size_t hidden, Rng& rng) {
  BiLstmWeights w;
  w.forward = create_lstm(store, prefix + ".fwd", input, hidden, rng);
  w.backward = create_lstm(store, prefix + ".bwd", input, hidden, rng);
  return w;
}

BiLstmWeights BiLstmWeights::bind(ParamStore& store, const std::string& prefix) {
  return {bind_lstm(store, prefix + ".fwd"), bind_lstm(store, prefix + ".bwd")};
}

EncoderParams EncoderParams::create(ParamStore& store, const EncoderDims& dims, Rng& rng) {
  if (dims.vocab < 2 || dims.word_dim == 0 || dims.hidden == 0)
    throw DomainError("encoder dimensions must be positive");
  EncoderParams p;
  p.word_embedding = store.add("encoder.word_embedding", uniform_tensor({dims.vocab, dims.word_dim}, 0.1, rng));
  if (dims.role_dim > 0)
    p.role_embedding = store.add("encoder.role_embedding", uniform_tensor({kRoleCount, dims.role_dim}, 0.1, rng));
  const std::size_t h = dims.hidden;
  p.utterance = BiLstmWeights::create(store, "encoder.utterance_lstm", dims.word_dim + dims.role_dim, h, rng);
  p.dialogue = BiLstmWeights::create(store, "encoder.dialogue_lstm", 2 * h, h, rng);
  p.claim = BiLstmWeights::create(store, "encoder.claim_lstm", dims.word_dim, h, rng);
  p.utterance_query = store.add("encoder.utterance_query", fan_in_tensor({2 * h}, 2 * h, rng));
  p.claim_query = store.add("encoder.claim_query", fan_in_tensor({2 * h}, 2 * h, rng));
  return p;
}

EncoderParams EncoderParams::bind(ParamStore& store, bool with_role) {
  EncoderParams p;
  p.word_embedding = store.get("encoder.word_embedding");
  if (with_role) p.role_embedding = store.get("encoder.role_embedding");
  p.utterance = BiLstmWeights::bind(store, "encoder.utterance_lstm");
  p.dialogue = BiLstmWeights::bind(store, "encoder.dialogue_lstm");
  p.claim = BiLstmWeights::bind(store, "encoder.claim_lstm");
  p.utterance_query = store.get("encoder.utterance_query");
  p.claim_query = store.get("encoder.claim_query");
  return p;
}

Tensor bilstm(Tape& tape, const Tensor& inputs, Mask mask, const BiLstmWeights& weights) {
  if (inputs.rank() != 2) throw DimensionError("bilstm: inputs must be [len, in], got " + shape_string(inputs.shape()));
  const std::size_t len = inputs.shape()[0];
  if (!mask.empty() && mask.size() != len)
    throw DimensionError("bilstm: mask length " + std::to_string(mask.size()) + " for " + std::to_string(len) + " steps");
  Tensor fwd = lstm_sequence(tape, inputs, mask, weights.forward, false);
  Tensor bwd = lstm_sequence(tape, inputs, mask, weights.backward, true);
  return concat_columns(tape, fwd, bwd);
}

Pooled attention_pool(Tape& tape, const Tensor& states, const Tensor& query, Mask mask) {
  if (all_masked(mask)) throw ContractError("attention_pool: every position is masked");
  Tensor scores = matvec(tape, states, query);
  Tensor weights = masked_softmax(tape, scores, mask);
  return {vecmat(tape, weights, states), weights};
}

Pooled encode_utterance(Tape& tape, std::span<const int> tokens, int role, const EncoderParams& params, Mask mask,
                        const DropoutPlan& dropout) {
  if (tokens.empty()) throw ContractError("encode_utterance: empty utterance");
  if (all_masked(mask)) throw ContractError("encode_utterance: every word is masked");
  Tensor words = gather_rows(tape, params.word_embedding, tokens);
  if (params.role_embedding.defined()) {
    if (role < 0 || static_cast<std::size_t>(role) >= params.role_embedding.shape()[0])
      throw DomainError("encode_utterance: role id " + std::to_string(role) + " out of range");
    words = append_to_rows(tape, words, row(tape, params.role_embedding, static_cast<std::size_t>(role)));
  }
  words = dropout.embedding(tape, words);
  Tensor states = bilstm(tape, words, mask, params.utterance);
  return attention_pool(tape, states, params.utterance_query, mask);
}

Tensor encode_dialogue(Tape& tape, const Tensor& utterance_vectors, const EncoderParams& params, Mask mask) {
  if (!utterance_vectors.defined() || utterance_vectors.rank() != 2 || utterance_vectors.shape()[0] == 0)
    throw ContractError("encode_dialogue: needs at least one utterance");
  if (all_masked(mask)) throw ContractError("encode_dialogue: every utterance is masked");
  return bilstm(tape, utterance_vectors, mask, params.dialogue);
}

Pooled encode_claim(Tape& tape, std::span<const int> tokens, const EncoderParams& params, Mask mask,
                    const DropoutPlan& dropout) {
  if (tokens.empty()) throw ContractError("encode_claim: empty claim");
  if (all_masked(mask)) throw ContractError("encode_claim: every word is masked");
  Tensor words = dropout.embedding(tape, gather_rows(tape, params.word_embedding, tokens));
  Tensor states = bilstm(tape, words, mask, params.claim);
  return attention_pool(tape, states, params.claim_query, mask);
}

}  // namespace msjudge
