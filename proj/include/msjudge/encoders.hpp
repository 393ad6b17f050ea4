#pragma once

// Hierarchical debate encoder and claim encoder.
//
//   e_it  = word(w_it) ++ role(r_i)                  (role channel optional)
//   h_it  = BiLSTM_U(e_i)_t
//   U_i   = sum_t softmax_t(Q_u . h_it) h_it
//   Ubar  = BiLSTM_D(U_1..U_n)                         per-position outputs
//   C_j   = sum_v softmax_v(Q_c . h_jv) h_jv,  h_jv = BiLSTM_C(word(w_jv))_v
//
// Every sequence is masked: a masked step carries the recurrent state through
// unchanged and emits a zero row, so right-padding never alters real outputs.

#include <cstddef>
#include <span>

#include "msjudge/corpus.hpp"
#include "msjudge/params.hpp"
#include "msjudge/tensor.hpp"

namespace msjudge {

struct EncoderDims {
  std::size_t vocab = 2;
  std::size_t word_dim = 32;
  std::size_t role_dim = 32;  // 0 disables the role channel
  std::size_t hidden = 32;    // per direction; encodings are 2*hidden wide
};

/// Dropout sites used during training. Inference passes training = false.
struct DropoutPlan {
  double embedding_rate = 0.0;
  double classifier_rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;

  Tensor embedding(Tape& tape, const Tensor& x) const;
  Tensor classifier(Tape& tape, const Tensor& x) const;
};

struct BiLstmWeights {
  LstmWeights forward;
  LstmWeights backward;

  static BiLstmWeights create(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                              Rng& rng);
  static BiLstmWeights bind(ParamStore& store, const std::string& prefix);
  std::size_t hidden() const { return forward.hidden(); }
};

struct EncoderParams {
  Tensor word_embedding;  // [vocab, d], shared by utterances and claims
  Tensor role_embedding;  // [4, r]; undefined when the role channel is off
  BiLstmWeights utterance;
  BiLstmWeights dialogue;
  BiLstmWeights claim;
  Tensor utterance_query;  // [2h]
  Tensor claim_query;      // [2h]

  static EncoderParams create(ParamStore& store, const EncoderDims& dims, Rng& rng);
  static EncoderParams bind(ParamStore& store, bool with_role);
  std::size_t width() const { return 2 * utterance.hidden(); }
};

struct Pooled {
  Tensor vector;     // [2h]
  Tensor attention;  // [len], zero at masked positions
};

/// [len, in] -> [len, 2h], concatenating forward and backward states per position.
Tensor bilstm(Tape& tape, const Tensor& inputs, Mask mask, const BiLstmWeights& weights);

/// Masked softmax of (states . query) and the weighted sum of states.
Pooled attention_pool(Tape& tape, const Tensor& states, const Tensor& query, Mask mask);

Pooled encode_utterance(Tape& tape, std::span<const int> tokens, int role, const EncoderParams& params, Mask mask,
                        const DropoutPlan& dropout = {});
/// [n, 2h] utterance vectors -> [n, 2h] dialogue-level representations.
Tensor encode_dialogue(Tape& tape, const Tensor& utterance_vectors, const EncoderParams& params, Mask mask);
Pooled encode_claim(Tape& tape, std::span<const int> tokens, const EncoderParams& params, Mask mask,
                    const DropoutPlan& dropout = {});

}  // namespace msjudge
