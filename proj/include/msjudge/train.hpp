#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "msjudge/corpus.hpp"
#include "msjudge/metrics.hpp"
#include "msjudge/model.hpp"

namespace msjudge {

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  std::size_t patience = 10;  // epochs without a validation micro-F1 gain; 0 disables early stopping
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::size_t min_count = 1;
  /// Stop as soon as validation micro F1 reaches this value.
  std::optional<double> target_micro_f1;

  // Corpus locations. Either one corpus split 80/10/10 by `seed`, or explicit split files.
  std::string corpus_path;
  std::string train_path, validation_path, test_path;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
  std::size_t folds = 0;  // > 1 switches `train` to k-fold cross-validation
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; "model" holds a ModelConfig object.
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::string& path);

struct EvalReport {
  std::size_t cases = 0;
  ClassificationReport judgment;
  std::optional<FactReport> facts;  // absent for single-task models
  double mean_loss = 0.0;           // mean per-case loss, dropout off
  std::vector<double> loss_curve;   // per-epoch mean training loss, filled by train()
};

nlohmann::json to_json(const EvalReport& r);

/// Scores `cases` with the model's own vocabulary and limits.
EvalReport evaluate(const Model& model, const std::vector<Case>& cases);
/// Scores a pre-encoded batch; the batch must come from the model's vocabulary.
EvalReport evaluate(const Model& model, const Batch& batch);

struct Splits {
  std::vector<Case> train, validation, test;
};

Splits split_cases(const std::vector<Case>& cases, std::uint64_t seed, double train_fraction = 0.8,
                   double validation_fraction = 0.1);
/// k folds; fold i tests on the i-th slice and validates on the next one.
std::vector<Splits> kfold_splits(const std::vector<Case>& cases, std::size_t folds, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // claim accuracy of the dropout-on training passes
  EvalReport validation;
  double seconds = 0.0;
};

struct TrainResult {
  Model model;  // best-by-validation-micro-F1 parameters
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_micro_f1 = -1.0;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// The vocabulary is built from `train` only. With an empty validation set the
/// last epoch is kept and early stopping is off.
TrainResult train(const TrainConfig& config, const std::vector<Case>& train, const std::vector<Case>& validation,
                  const EpochCallback& on_epoch = {});

struct AblationRow {
  std::string name;
  Ablation ablation;
  std::vector<EvalReport> runs;  // one per seed, on the test split
  std::size_t parameter_count = 0;
  double median_micro_f1 = 0.0;
  double median_macro_f1 = 0.0;
  double rie_micro = 0.0;  // (F1_full - F1_row) / (1 - F1_full)
  double rie_macro = 0.0;
};

struct AblationTable {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // full model first
  const AblationRow& row(const std::string& name) const;
};

/// Trains the full model, the four component ablations and (optionally) the
/// single-task variant on identical splits and seeds.
AblationTable run_ablations(const TrainConfig& base, const Splits& splits, const std::vector<std::uint64_t>& seeds,
                            bool include_single_task = true, std::ostream* log = nullptr);

struct HopRow {
  std::size_t hops = 0;
  std::size_t parameter_count = 0;
  EvalReport test;
  std::size_t epochs_run = 0;
  double seconds = 0.0;  // training + evaluation wall clock
  double seconds_per_epoch = 0.0;
};

std::vector<HopRow> hop_sweep(const TrainConfig& base, const Splits& splits, std::size_t first = 1,
                              std::size_t last = 6, std::ostream* log = nullptr);

nlohmann::json to_json(const AblationTable& t);
nlohmann::json to_json(const std::vector<HopRow>& rows);
std::string format_table(const EvalReport& r);
std::string format_table(const AblationTable& t);
std::string format_table(const std::vector<HopRow>& rows);

double median(std::vector<double> values);

}  // namespace msjudge
