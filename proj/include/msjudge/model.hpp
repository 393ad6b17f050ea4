#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msjudge/corpus.hpp"
#include "msjudge/encoders.hpp"
#include "msjudge/heads.hpp"
#include "msjudge/interaction.hpp"
#include "msjudge/params.hpp"

namespace msjudge {

/// Architecture switches. The defaults are the full multi-task model.
struct Ablation {
  bool no_role = false;
  bool no_utterance_memory = false;
  bool no_fact_memory = false;
  bool no_self_attention = false;
  bool single_task = false;  // drops the fact loss, fact heads, fact queries and fact memory

  bool fact_pathway() const { return !single_task; }
  bool fact_memory() const { return !single_task && !no_fact_memory; }
  std::string name() const;
};

struct ModelConfig {
  std::size_t word_dim = 32;
  std::size_t role_dim = 32;
  std::size_t hidden = 32;
  std::size_t hops = 3;
  double embedding_dropout = 0.2;
  double classifier_dropout = 0.2;
  double fact_loss_weight = 1.0;
  Ablation ablation;
  Limits limits;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

using Matrix = std::vector<std::vector<double>>;

struct HopMaps {
  Matrix debate_to_claim;  // [k, n]
  Matrix fact_to_claim;    // [k, z]
  Matrix across_claim;     // [k, k]
};

/// Everything one forward pass exposes for evaluation and inspection. Rows and
/// columns cover real (unmasked) claims and utterances in input order.
struct ForwardTrace {
  std::vector<std::vector<double>> utterance_word_attention;  // per utterance, over its words
  std::vector<std::vector<double>> claim_word_attention;      // per claim, over its words
  Matrix debate_to_fact;                                      // [z, n]
  std::vector<HopMaps> hops;
  std::vector<double> fact_probs;    // model probabilities, [z]
  std::vector<double> fact_memory_scale;  // probabilities actually used to scale the fact memory
  Matrix claim_logits;               // [k, 3]
  Matrix claim_probs;                // [k, 3]
};

nlohmann::json to_json(const ForwardTrace& trace);

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
  /// Fact index -> probability forced into the fact memory (does not change fact_probs).
  std::vector<std::pair<std::size_t, double>> fact_overrides;
  bool build_trace = true;
};

struct ForwardResult {
  Tensor claim_probs;  // [k, 3]
  Tensor fact_probs;   // [z]; undefined for single-task models
  Tensor claim_loss;   // defined when the batch is labeled
  Tensor fact_loss;
  Tensor loss;
  ForwardTrace trace;
};

class Model {
 public:
  Model(const ModelConfig& config, Vocabulary vocab, std::uint64_t seed);

  Model(const Model& other);
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;

  static Model load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Forward pass for case `index` of the batch.
  ForwardResult forward(Tape& tape, const Batch& batch, std::size_t index, const ForwardOptions& options = {}) const;

  /// Encodes and runs one case without recording gradients.
  ForwardResult infer(const Case& c, const std::vector<std::pair<std::size_t, double>>& fact_overrides = {}) const;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }
  std::uint64_t fingerprint() const { return store_.fingerprint(); }

 private:
  Model(const ModelConfig& config, Vocabulary vocab, ParamStore store);
  void bind();

  ModelConfig config_;
  Vocabulary vocab_;
  ParamStore store_;
  EncoderParams encoder_;
  InteractionParams interaction_;
  HeadParams heads_;
};

}  // namespace msjudge
