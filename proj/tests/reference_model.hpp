#pragma once
// Straight-line reference forward pass written directly from the model
// equations with plain vectors and loops. It shares nothing with the library
// except parameter values and tokenization, and only ever sees real
// (unpadded) tokens, utterances and claims.

#include <cmath>
#include <string>
#include <vector>

#include "msjudge/model.hpp"

namespace reference {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct Output {
  Mat utterance_word_attention;  // alpha^u per utterance
  Mat claim_word_attention;      // alpha^c per claim
  Mat debate_to_fact;            // alpha^r [z, n]
  std::vector<Mat> debate_to_claim, fact_to_claim, across_claim;  // per hop
  Vec fact_probs;
  Mat claim_probs;
  double claim_loss = 0.0;
  double fact_loss = 0.0;
};

inline Mat matrix(const msjudge::Tensor& t) {
  const std::size_t rows = t.shape()[0], cols = t.shape()[1];
  Mat m(rows, Vec(cols));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = t.data()[i * cols + j];
  return m;
}

inline Vec vector(const msjudge::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec times(const Mat& w, const Vec& x) {  // W x
  Vec out(w.size());
  for (std::size_t r = 0; r < w.size(); ++r) out[r] = dot(w[r], x);
  return out;
}

inline double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec softmax(const Vec& scores) {
  double top = scores[0];
  for (double s : scores) top = std::max(top, s);
  Vec e(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (e[i] = std::exp(scores[i] - top));
  for (double& v : e) v /= z;
  return e;
}

struct Lstm {
  Mat W, U;
  Vec b;
  Lstm(const msjudge::ParamStore& p, const std::string& prefix)
      : W(matrix(p.get(prefix + ".W"))), U(matrix(p.get(prefix + ".U"))), b(vector(p.get(prefix + ".b"))) {}

  /// Hidden states for each input, processed in the given order from a zero state.
  Mat run(const Mat& xs, bool reverse) const {
    const std::size_t h = b.size() / 4;
    Vec hs(h, 0.0), cs(h, 0.0);
    Mat out(xs.size());
    for (std::size_t step = 0; step < xs.size(); ++step) {
      const std::size_t t = reverse ? xs.size() - 1 - step : step;
      Vec wx = times(W, xs[t]), uh = times(U, hs);
      Vec next_h(h), next_c(h);
      for (std::size_t j = 0; j < h; ++j) {
        const double i = sigma(wx[j] + uh[j] + b[j]);
        const double f = sigma(wx[h + j] + uh[h + j] + b[h + j]);
        const double g = std::tanh(wx[2 * h + j] + uh[2 * h + j] + b[2 * h + j]);
        const double o = sigma(wx[3 * h + j] + uh[3 * h + j] + b[3 * h + j]);
        next_c[j] = f * cs[j] + i * g;
        next_h[j] = o * std::tanh(next_c[j]);
      }
      hs = next_h;
      cs = next_c;
      out[t] = hs;
    }
    return out;
  }
};

/// h_t = [forward_t, backward_t]
inline Mat bilstm(const Lstm& fwd, const Lstm& bwd, const Mat& xs) {
  Mat f = fwd.run(xs, false), b = bwd.run(xs, true), out(xs.size());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    out[t] = f[t];
    out[t].insert(out[t].end(), b[t].begin(), b[t].end());
  }
  return out;
}

/// sum_t softmax_t(q . h_t) h_t
inline Vec pool(const Mat& hs, const Vec& q, Vec& attention) {
  Vec scores;
  for (const auto& h : hs) scores.push_back(dot(q, h));
  attention = softmax(scores);
  Vec out(hs[0].size(), 0.0);
  for (std::size_t t = 0; t < hs.size(); ++t)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += attention[t] * hs[t][d];
  return out;
}

/// Attention of each query row over `memory`; returns outputs, stores weights.
inline Mat attend(const Mat& queries, const Mat& memory, Mat& weights, double scale = 1.0) {
  Mat out;
  weights.clear();
  for (const auto& q : queries) {
    Vec scores;
    for (const auto& m : memory) scores.push_back(dot(q, m) * scale);
    Vec a = softmax(scores);
    Vec o(memory[0].size(), 0.0);
    for (std::size_t i = 0; i < memory.size(); ++i)
      for (std::size_t d = 0; d < o.size(); ++d) o[d] += a[i] * memory[i][d];
    weights.push_back(a);
    out.push_back(o);
  }
  return out;
}

/// Dropout-free forward pass of `model` on `c`. `fact_memory_override` replaces
/// the probabilities that scale the fact memory (entry < 0 keeps the model's).
inline Output run(const msjudge::Model& model, const msjudge::Case& c, Vec fact_memory_override = {}) {
  using namespace msjudge;
  const ParamStore& P = model.params();
  const ModelConfig& cfg = model.config();
  const Ablation& ab = cfg.ablation;
  const Mat E = matrix(P.get("encoder.word_embedding"));
  const bool roles = !ab.no_role;
  const Mat R = roles ? matrix(P.get("encoder.role_embedding")) : Mat{};
  const Lstm uf(P, "encoder.utterance_lstm.fwd"), ub(P, "encoder.utterance_lstm.bwd");
  const Lstm df(P, "encoder.dialogue_lstm.fwd"), db(P, "encoder.dialogue_lstm.bwd");
  const Lstm cf(P, "encoder.claim_lstm.fwd"), cb(P, "encoder.claim_lstm.bwd");
  const Vec Qu = vector(P.get("encoder.utterance_query")), Qc = vector(P.get("encoder.claim_query"));
  const Mat Wu = matrix(P.get("interaction.gate_utterance")), Wf = matrix(P.get("interaction.gate_fact"));
  const Vec bg = vector(P.get("interaction.gate_bias"));
  const Mat Wl = matrix(P.get("interaction.fuse_weight"));
  const Vec bl = vector(P.get("interaction.fuse_bias"));
  const Mat Wc = matrix(P.get("heads.judgment_weight"));
  const Vec bc = vector(P.get("heads.judgment_bias"));

  auto ids = [&](const std::string& text, std::size_t limit) {
    std::vector<int> t = model.vocab().encode(text);
    if (t.empty()) t.push_back(Vocabulary::kUnknown);
    if (t.size() > limit) t.resize(limit);
    return t;
  };

  Output out;
  // Utterances: e_it = w_it ++ e_i^r, BiLSTM, attention pooling with Q^u.
  Mat U;
  const std::size_t n = std::min(c.utterances.size(), cfg.limits.max_utterances);
  for (std::size_t i = 0; i < n; ++i) {
    Mat e;
    for (int w : ids(c.utterances[i].text, cfg.limits.max_utterance_words)) {
      Vec x = E[w];
      if (roles) {
        const Vec& r = R[static_cast<std::size_t>(c.utterances[i].role)];
        x.insert(x.end(), r.begin(), r.end());
      }
      e.push_back(x);
    }
    Vec a;
    U.push_back(pool(bilstm(uf, ub, e), Qu, a));
    out.utterance_word_attention.push_back(a);
  }
  // Dialogue: Ubar = BiLSTM_D(U).
  const Mat Ubar = bilstm(df, db, U);
  // Claims: BiLSTM over word embeddings, attention pooling with Q^c.
  Mat C;
  const std::size_t k = std::min(c.claims.size(), cfg.limits.max_claims);
  for (std::size_t j = 0; j < k; ++j) {
    Mat e;
    for (int w : ids(c.claims[j].text, cfg.limits.max_claim_words)) e.push_back(E[w]);
    Vec a;
    C.push_back(pool(bilstm(cf, cb, e), Qc, a));
    out.claim_word_attention.push_back(a);
  }
  const std::size_t width = C[0].size();

  // Debate-to-fact, fact probabilities, fact memory.
  Mat fbar;
  if (ab.fact_pathway()) {
    const Mat Qr = matrix(P.get("interaction.fact_queries"));
    const Mat f = attend(Qr, Ubar, out.debate_to_fact);
    const Mat Wp = matrix(P.get("heads.fact_weight"));
    const Vec bp = vector(P.get("heads.fact_bias"));
    for (std::size_t p = 0; p < f.size(); ++p) out.fact_probs.push_back(sigma(dot(Wp[p], f[p]) + bp[p]));
    if (ab.fact_memory()) {
      for (std::size_t p = 0; p < f.size(); ++p) {
        double y = out.fact_probs[p];
        if (p < fact_memory_override.size() && fact_memory_override[p] >= 0.0) y = fact_memory_override[p];
        Vec row = f[p];
        for (double& v : row) v *= y;
        fbar.push_back(row);
      }
    }
  }

  // Hops.
  for (std::size_t hop = 0; hop < cfg.hops; ++hop) {
    Mat Ou(k, Vec(width, 0.0)), Of(k, Vec(width, 0.0)), w;
    if (!ab.no_utterance_memory) {
      Ou = attend(C, Ubar, w);
      out.debate_to_claim.push_back(w);
    }
    if (ab.fact_memory()) {
      Of = attend(C, fbar, w);
      out.fact_to_claim.push_back(w);
    }
    Mat Cbar(k);
    for (std::size_t j = 0; j < k; ++j) {
      Vec gu = times(Wu, Ou[j]), gf = times(Wf, Of[j]), l = times(Wl, C[j]);
      Cbar[j].resize(width);
      for (std::size_t d = 0; d < width; ++d) {
        const double g = sigma(gu[d] + gf[d] + bg[d]);
        const double chat = std::max(0.0, l[d] + bl[d]);
        Cbar[j][d] = chat + g * Ou[j][d] + (1.0 - g) * Of[j][d];
      }
    }
    if (!ab.no_self_attention) {
      Mat A;
      Mat attended = attend(Cbar, Cbar, A, 1.0 / std::sqrt(static_cast<double>(width)));
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t d = 0; d < width; ++d) Cbar[j][d] += attended[j][d];
      out.across_claim.push_back(A);
    }
    C = Cbar;
  }

  // Judgment head and losses.
  for (std::size_t j = 0; j < k; ++j) {
    Vec logits = times(Wc, C[j]);
    for (std::size_t d = 0; d < logits.size(); ++d) logits[d] += bc[d];
    out.claim_probs.push_back(softmax(logits));
  }
  if (c.labeled()) {
    for (std::size_t j = 0; j < k; ++j)
      out.claim_loss -= std::log(std::max(out.claim_probs[j][static_cast<std::size_t>(c.judgments[j])], 1e-12));
    out.claim_loss /= static_cast<double>(k);
    for (std::size_t p = 0; p < out.fact_probs.size(); ++p) {
      const double y = out.fact_probs[p], g = (*c.facts)[p];
      out.fact_loss -= g * std::log(std::max(y, 1e-12)) + (1.0 - g) * std::log(std::max(1.0 - y, 1e-12));
    }
    if (!out.fact_probs.empty()) out.fact_loss /= static_cast<double>(out.fact_probs.size());
  }
  return out;
}

}  // namespace reference
