#include "msjudge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace msjudge {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int argmax_row(const Tensor& probs, std::size_t r) {
  const std::size_t cols = probs.shape()[1];
  int best = 0;
  for (std::size_t c = 1; c < cols; ++c)
    if (probs.at(r, c) > probs.at(r, best)) best = static_cast<int>(c);
  return best;
}

std::vector<Batch> encode_each(const std::vector<Case>& cases, const Vocabulary& vocab, const Limits& limits) {
  std::vector<Batch> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(encode_batch({c}, vocab, limits));
  return out;
}

void validate(const TrainConfig& c) {
  if (c.batch_size == 0) throw ValidationError("train config: batch_size must be positive");
  if (c.epochs == 0) throw ValidationError("train config: epochs must be positive");
  if (!(c.learning_rate > 0.0)) throw ValidationError("train config: learning_rate must be positive");
  if (!(c.clip_norm > 0.0)) throw ValidationError("train config: clip_norm must be positive");
  if (c.model.hops == 0) throw ValidationError("train config: hops must be at least 1");
  for (double r : {c.model.embedding_dropout, c.model.classifier_dropout})
    if (!(r >= 0.0 && r < 1.0)) throw ValidationError("train config: drop rates must lie in [0, 1)");
}

}  // namespace

// --- config ------------------------------------------------------------------------

json to_json(const TrainConfig& c) {
  json j{{"model", to_json(c.model)},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"patience", c.patience},
         {"clip_norm", c.clip_norm},
         {"seed", c.seed},
         {"min_count", c.min_count},
         {"corpus_path", c.corpus_path},
         {"train_path", c.train_path},
         {"validation_path", c.validation_path},
         {"test_path", c.test_path},
         {"train_fraction", c.train_fraction},
         {"validation_fraction", c.validation_fraction},
         {"folds", c.folds}};
  j["target_micro_f1"] = c.target_micro_f1 ? json(*c.target_micro_f1) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("train config must be an object");
  TrainConfig c;
  try {
    if (auto m = j.find("model"); m != j.end()) c.model = model_config_from_json(*m);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.min_count = j.value("min_count", c.min_count);
    c.corpus_path = j.value("corpus_path", c.corpus_path);
    c.train_path = j.value("train_path", c.train_path);
    c.validation_path = j.value("validation_path", c.validation_path);
    c.test_path = j.value("test_path", c.test_path);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.folds = j.value("folds", c.folds);
    if (auto t = j.find("target_micro_f1"); t != j.end() && !t->is_null()) c.target_micro_f1 = t->get<double>();
  } catch (const json::type_error& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  try {
    return train_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

// --- evaluation --------------------------------------------------------------------

json to_json(const EvalReport& r) {
  json j{{"cases", r.cases}, {"judgment", to_json(r.judgment)}, {"mean_loss", r.mean_loss}};
  j["facts"] = r.facts ? to_json(*r.facts) : json(nullptr);
  if (!r.loss_curve.empty()) j["loss_curve"] = r.loss_curve;
  return j;
}

EvalReport evaluate(const Model& model, const Batch& batch) {
  if (batch.vocab_fingerprint != model.vocab().fingerprint())
    throw ContractError("evaluate: corpus was encoded with a vocabulary that does not match the checkpoint");
  const bool facts = model.config().ablation.fact_pathway();
  std::vector<int> gold, predicted;
  std::vector<FactVector> gold_facts, predicted_facts;
  double loss = 0.0;
  Tape tape(false);
  ForwardOptions opt;
  opt.build_trace = false;
  for (std::size_t s = 0; s < batch.size; ++s) {
    tape.reset();
    ForwardResult r = model.forward(tape, batch, s, opt);
    const std::size_t k = r.claim_probs.shape()[0];
    for (std::size_t j = 0, seen = 0; j < batch.claims && seen < k; ++j) {
      if (!batch.claim_mask[s * batch.claims + j]) continue;
      predicted.push_back(argmax_row(r.claim_probs, seen++));
      if (batch.labeled) gold.push_back(batch.judgments[s * batch.claims + j]);
    }
    if (batch.labeled) {
      loss += r.loss.item();
      if (facts) {
        FactVector g{}, p{};
        for (std::size_t f = 0; f < kFactCount; ++f) {
          g[f] = batch.facts[s * kFactCount + f] != 0.0;
          p[f] = r.fact_probs[f] > 0.5;
        }
        gold_facts.push_back(g);
        predicted_facts.push_back(p);
      }
    }
  }
  if (!batch.labeled) throw ContractError("evaluate: corpus has no gold labels");
  EvalReport report;
  report.cases = batch.size;
  report.judgment = classification_report(gold, predicted, kJudgmentCount);
  if (facts) report.facts = fact_report(gold_facts, predicted_facts);
  report.mean_loss = loss / static_cast<double>(batch.size);
  return report;
}

EvalReport evaluate(const Model& model, const std::vector<Case>& cases) {
  if (cases.empty()) throw ContractError("evaluate: no cases");
  // Padding is per-case work, so encode in modest chunks and merge the scores.
  std::vector<int> gold, predicted;
  std::vector<FactVector> gold_facts, predicted_facts;
  double loss = 0.0;
  const bool facts = model.config().ablation.fact_pathway();
  Tape tape(false);
  ForwardOptions opt;
  opt.build_trace = false;
  for (const auto& c : cases) {
    if (!c.labeled()) throw ContractError("evaluate: case '" + c.case_id + "' has no gold labels");
    Batch b = encode_batch({c}, model.vocab(), model.config().limits);
    tape.reset();
    ForwardResult r = model.forward(tape, b, 0, opt);
    for (std::size_t j = 0; j < b.claims; ++j) {
      predicted.push_back(argmax_row(r.claim_probs, j));
      gold.push_back(b.judgments[j]);
    }
    loss += r.loss.item();
    if (facts) {
      FactVector p{};
      for (std::size_t f = 0; f < kFactCount; ++f) p[f] = r.fact_probs[f] > 0.5;
      gold_facts.push_back(*c.facts);
      predicted_facts.push_back(p);
    }
  }
  EvalReport report;
  report.cases = cases.size();
  report.judgment = classification_report(gold, predicted, kJudgmentCount);
  if (facts) report.facts = fact_report(gold_facts, predicted_facts);
  report.mean_loss = loss / static_cast<double>(cases.size());
  return report;
}

// --- splits ------------------------------------------------------------------------

Splits split_cases(const std::vector<Case>& cases, std::uint64_t seed, double train_fraction,
                   double validation_fraction) {
  if (cases.empty()) throw ContractError("split_cases: no cases");
  if (!(train_fraction > 0.0) || validation_fraction < 0.0 || train_fraction + validation_fraction > 1.0)
    throw DomainError("split_cases: fractions must be positive and sum to at most 1");
  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(cases.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
  const auto n_val = std::min(cases.size() - n_train, static_cast<std::size_t>(std::llround(n * validation_fraction)));
  Splits s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dest = i < n_train ? s.train : i < n_train + n_val ? s.validation : s.test;
    dest.push_back(cases[order[i]]);
  }
  return s;
}

std::vector<Splits> kfold_splits(const std::vector<Case>& cases, std::size_t folds, std::uint64_t seed) {
  if (folds < 3) throw DomainError("kfold_splits: need at least 3 folds");
  if (cases.size() < folds) throw DomainError("kfold_splits: fewer cases than folds");
  std::vector<std::size_t> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Splits> out(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t slot = i % folds;
      auto& dest = slot == f ? out[f].test : slot == (f + 1) % folds ? out[f].validation : out[f].train;
      dest.push_back(cases[order[i]]);
    }
  }
  return out;
}

// --- training ----------------------------------------------------------------------

TrainResult train(const TrainConfig& config, const std::vector<Case>& train_cases,
                  const std::vector<Case>& validation_cases, const EpochCallback& on_epoch) {
  validate(config);
  if (train_cases.empty()) throw ContractError("train: empty training corpus");
  const auto start = Clock::now();
  Vocabulary vocab = build_vocab(train_cases, config.min_count);
  Model model(config.model, vocab, config.seed);
  const std::vector<Batch> encoded = encode_each(train_cases, vocab, config.model.limits);
  for (const auto& b : encoded)
    if (!b.labeled) throw ContractError("train: case '" + b.case_ids[0] + "' has no gold labels");

  AdamState adam;
  adam.learning_rate = config.learning_rate;
  Rng shuffle_rng(config.seed ^ 0x5bd1e995ULL);
  Rng dropout_rng(config.seed ^ 0x2545f4914f6cdd1dULL);
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result{Model(model), {}, 0, -1.0, 0.0};
  std::vector<double> curve;
  std::size_t stale = 0;
  Tape tape;
  ForwardOptions opt;
  opt.training = true;
  opt.rng = &dropout_rng;
  opt.build_trace = false;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, claims = 0;
    for (std::size_t lo = 0, batch_no = 1; lo < order.size(); lo += config.batch_size, ++batch_no) {
      const std::size_t hi = std::min(order.size(), lo + config.batch_size);
      tape.reset();
      model.params().zero_grad();
      Tensor total;
      for (std::size_t i = lo; i < hi; ++i) {
        const Batch& b = encoded[order[i]];
        ForwardResult r = model.forward(tape, b, 0, opt);
        total = total.defined() ? add(tape, total, r.loss) : r.loss;
        for (std::size_t j = 0; j < b.claims; ++j, ++claims)
          correct += argmax_row(r.claim_probs, j) == b.judgments[j];
      }
      Tensor mean = scale(tape, total, 1.0 / static_cast<double>(hi - lo));
      if (!std::isfinite(mean.item()))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_no) + ": loss is " + std::to_string(mean.item()));
      loss_sum += mean.item() * static_cast<double>(hi - lo);
      tape.backward(mean);
      model.params().clip_grad_norm(config.clip_norm);
      try {
        adam_step(model.params(), adam);
      } catch (const DivergenceError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_no) + ": " + e.what());
      }
    }
    tape.reset();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(claims);
    curve.push_back(rec.train_loss);
    const bool has_validation = !validation_cases.empty();
    if (has_validation) rec.validation = evaluate(model, validation_cases);
    rec.seconds = elapsed(epoch_start);

    bool stop = false;
    if (!has_validation) {
      result.model.params().assign_values(model.params());
      result.best_epoch = epoch;
    } else if (rec.validation.judgment.micro_f1 > result.best_micro_f1) {
      result.best_micro_f1 = rec.validation.judgment.micro_f1;
      result.best_epoch = epoch;
      result.model.params().assign_values(model.params());
      stale = 0;
    } else if (config.patience > 0 && ++stale >= config.patience) {
      stop = true;
    }
    if (has_validation && config.target_micro_f1 && rec.validation.judgment.micro_f1 >= *config.target_micro_f1)
      stop = true;
    result.history.push_back(rec);
    result.history.back().validation.loss_curve = curve;
    if (on_epoch) on_epoch(result.history.back());
    if (stop) break;
  }
  result.seconds = elapsed(start);
  return result;
}

// --- ablations and hop sweep -------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

const AblationRow& AblationTable::row(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw ContractError("ablation table has no row '" + name + "'");
}

AblationTable run_ablations(const TrainConfig& base, const Splits& splits, const std::vector<std::uint64_t>& seeds,
                            bool include_single_task, std::ostream* log) {
  if (seeds.empty()) throw ContractError("run_ablations: no seeds");
  if (splits.test.empty()) throw ContractError("run_ablations: empty test split");
  std::vector<Ablation> variants(5);
  variants[1].no_role = true;
  variants[2].no_utterance_memory = true;
  variants[3].no_fact_memory = true;
  variants[4].no_self_attention = true;
  if (include_single_task) variants.push_back(Ablation{.single_task = true});

  AblationTable table;
  table.seeds = seeds;
  for (const auto& ab : variants) {
    AblationRow row;
    row.name = ab.name();
    row.ablation = ab;
    std::vector<double> micro, macro;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.ablation = ab;
      cfg.seed = seed;
      TrainResult trained = train(cfg, splits.train, splits.validation);
      row.parameter_count = trained.model.parameter_count();
      row.runs.push_back(evaluate(trained.model, splits.test));
      micro.push_back(row.runs.back().judgment.micro_f1);
      macro.push_back(row.runs.back().judgment.macro_f1);
      if (log)
        *log << "[ablate] " << row.name << " seed " << seed << ": micro F1 " << micro.back() << ", macro F1 "
             << macro.back() << " (best epoch " << trained.best_epoch << ", " << trained.seconds << " s)\n"
             << std::flush;
    }
    row.median_micro_f1 = median(micro);
    row.median_macro_f1 = median(macro);
    table.rows.push_back(std::move(row));
  }
  const AblationRow& full = table.rows.front();
  const double full_micro = full.median_micro_f1, full_macro = full.median_macro_f1;
  auto rie = [](double f_full, double f) { return f_full < 1.0 ? (f_full - f) / (1.0 - f_full) : 0.0; };
  for (auto& r : table.rows) {
    r.rie_micro = rie(full_micro, r.median_micro_f1);
    r.rie_macro = rie(full_macro, r.median_macro_f1);
  }
  return table;
}

std::vector<HopRow> hop_sweep(const TrainConfig& base, const Splits& splits, std::size_t first, std::size_t last,
                              std::ostream* log) {
  if (first == 0 || last < first) throw DomainError("hop_sweep: need 1 <= first <= last");
  if (splits.test.empty()) throw ContractError("hop_sweep: empty test split");
  std::vector<HopRow> rows;
  for (std::size_t t = first; t <= last; ++t) {
    TrainConfig cfg = base;
    cfg.model.hops = t;
    const auto start = Clock::now();
    TrainResult trained = train(cfg, splits.train, splits.validation);
    HopRow row;
    row.hops = t;
    row.parameter_count = trained.model.parameter_count();
    row.test = evaluate(trained.model, splits.test);
    row.epochs_run = trained.history.size();
    row.seconds = elapsed(start);
    row.seconds_per_epoch = trained.seconds / static_cast<double>(std::max<std::size_t>(1, row.epochs_run));
    if (log)
      *log << "[hops] T=" << t << ": micro F1 " << row.test.judgment.micro_f1 << ", macro F1 "
           << row.test.judgment.macro_f1 << ", " << row.parameter_count << " parameters, " << row.seconds << " s\n"
           << std::flush;
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- reporting ---------------------------------------------------------------------

json to_json(const AblationTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json runs = json::array();
    for (const auto& e : r.runs) runs.push_back(to_json(e));
    rows.push_back({{"name", r.name},
                    {"parameter_count", r.parameter_count},
                    {"median_micro_f1", r.median_micro_f1},
                    {"median_macro_f1", r.median_macro_f1},
                    {"rie_micro", r.rie_micro},
                    {"rie_macro", r.rie_macro},
                    {"runs", runs}});
  }
  return {{"seeds", t.seeds},
          {"rie_definition", "RIE = (F1_full - F1_variant) / (1 - F1_full), medians over seeds"},
          {"rows", rows}};
}

json to_json(const std::vector<HopRow>& rows) {
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"hops", r.hops},
                   {"micro_f1", r.test.judgment.micro_f1},
                   {"macro_f1", r.test.judgment.macro_f1},
                   {"parameter_count", r.parameter_count},
                   {"epochs_run", r.epochs_run},
                   {"seconds", r.seconds},
                   {"seconds_per_epoch", r.seconds_per_epoch},
                   {"test", to_json(r.test)}});
  return {{"rows", out}};
}

namespace {

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * v;
  return s.str();
}

}  // namespace

std::string format_table(const EvalReport& r) {
  std::ostringstream s;
  const auto& j = r.judgment;
  s << "cases " << r.cases << ", claims " << j.count << ", mean loss " << std::setprecision(4) << r.mean_loss << "\n";
  s << "Mac.P " << pct(j.macro_precision) << "  Mac.R " << pct(j.macro_recall) << "  Mac.F1 " << pct(j.macro_f1)
    << "  Mic.F1 " << pct(j.micro_f1) << "\n";
  s << std::left << std::setw(20) << "class" << std::right << std::setw(8) << "P" << std::setw(8) << "R"
    << std::setw(8) << "F1" << "   confusion (gold rows)\n";
  for (std::size_t c = 0; c < kJudgmentCount; ++c) {
    s << std::left << std::setw(20) << kJudgmentLabels[c] << std::right << std::setw(8) << pct(j.precision[c])
      << std::setw(8) << pct(j.recall[c]) << std::setw(8) << pct(j.f1[c]) << "  ";
    for (std::size_t o = 0; o < kJudgmentCount; ++o) s << std::setw(7) << j.confusion[c][o];
    s << "\n";
  }
  if (r.facts) {
    s << "facts: Mic.F1 " << pct(r.facts->micro_f1) << "  Mac.F1 " << pct(r.facts->macro_f1) << "\n";
    s << std::left << std::setw(24) << "fact" << std::right << std::setw(8) << "Mic.F1" << std::setw(8) << "Mac.F1"
      << "\n";
    for (std::size_t p = 0; p < kFactCount; ++p)
      s << std::left << std::setw(24) << kFactLabels[p] << std::right << std::setw(8)
        << pct(r.facts->per_label[p].micro_f1) << std::setw(8) << pct(r.facts->per_label[p].macro_f1) << "\n";
  }
  return s.str();
}

std::string format_table(const AblationTable& t) {
  std::ostringstream s;
  s << std::left << std::setw(24) << "model" << std::right << std::setw(9) << "Mic.F1" << std::setw(9) << "Mac.F1"
    << std::setw(11) << "RIE(mic)" << std::setw(11) << "RIE(mac)" << std::setw(10) << "params" << "\n";
  for (const auto& r : t.rows)
    s << std::left << std::setw(24) << r.name << std::right << std::setw(9) << pct(r.median_micro_f1)
      << std::setw(9) << pct(r.median_macro_f1) << std::setw(10) << pct(r.rie_micro) << "%" << std::setw(10)
      << pct(r.rie_macro) << "%" << std::setw(10) << r.parameter_count << "\n";
  s << "medians over " << t.seeds.size() << " seed(s); RIE = (F1_full - F1) / (1 - F1_full)\n";
  return s.str();
}

std::string format_table(const std::vector<HopRow>& rows) {
  std::ostringstream s;
  s << std::left << std::setw(10) << "#Hops" << std::right << std::setw(10) << "Micro F1" << std::setw(10)
    << "Macro F1" << std::setw(10) << "params" << std::setw(8) << "epochs" << std::setw(12) << "s/epoch" << "\n";
  for (const auto& r : rows)
    s << std::left << std::setw(10) << ("hops(" + std::to_string(r.hops) + ")") << std::right << std::setw(10)
      << pct(r.test.judgment.micro_f1) << std::setw(10) << pct(r.test.judgment.macro_f1) << std::setw(10)
      << r.parameter_count << std::setw(8) << r.epochs_run << std::setw(12) << std::fixed << std::setprecision(3)
      << r.seconds_per_epoch << std::defaultfloat << "\n";
  return s.str();
}

}  // namespace msjudge
