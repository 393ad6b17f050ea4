// Command-line front end: corpus generation, training, evaluation, ablations,
// hop sweeps, gradient checks and the prediction service.

#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "httplib.h"
#include "msjudge/gradcheck.hpp"
#include "msjudge/serve.hpp"
#include "msjudge/synth.hpp"
#include "msjudge/train.hpp"

using namespace msjudge;
using nlohmann::json;

namespace {

/// Command-line values that override the config file when given.
struct Overrides {
  std::string config;
  std::optional<std::string> corpus, train, validation, test;
  std::optional<std::size_t> epochs, batch_size, patience, hops, word_dim, role_dim, hidden, folds;
  std::optional<double> learning_rate, drop_rate;
  std::optional<std::uint64_t> seed;
  bool no_role = false, no_utterance_memory = false, no_fact_memory = false, no_self_attention = false,
       single_task = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON training config");
    app->add_option("--corpus", corpus, "JSON-lines corpus, split 80/10/10 by seed");
    app->add_option("--train", train, "explicit training split");
    app->add_option("--validation", validation, "explicit validation split");
    app->add_option("--test", test, "explicit test split");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--patience", patience, "early-stopping patience in epochs (0 = off)");
    app->add_option("--hops", hops);
    app->add_option("--word-dim", word_dim);
    app->add_option("--role-dim", role_dim);
    app->add_option("--hidden", hidden);
    app->add_option("--lr", learning_rate);
    app->add_option("--drop-rate", drop_rate, "dropout rate at embeddings and classifier inputs");
    app->add_option("--seed", seed);
    app->add_option("--folds", folds, "k-fold cross-validation instead of one split");
    app->add_flag("--no-role", no_role);
    app->add_flag("--no-utterance-memory", no_utterance_memory);
    app->add_flag("--no-fact-memory", no_fact_memory);
    app->add_flag("--no-self-attention", no_self_attention);
    app->add_flag("--single-task", single_task);
  }

  TrainConfig resolve() const {
    TrainConfig c = config.empty() ? TrainConfig{} : load_train_config(config);
    if (corpus) c.corpus_path = *corpus;
    if (train) c.train_path = *train;
    if (validation) c.validation_path = *validation;
    if (test) c.test_path = *test;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (patience) c.patience = *patience;
    if (hops) c.model.hops = *hops;
    if (word_dim) c.model.word_dim = *word_dim;
    if (role_dim) c.model.role_dim = *role_dim;
    if (hidden) c.model.hidden = *hidden;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (drop_rate) c.model.embedding_dropout = c.model.classifier_dropout = *drop_rate;
    if (seed) c.seed = *seed;
    if (folds) c.folds = *folds;
    c.model.ablation.no_role |= no_role;
    c.model.ablation.no_utterance_memory |= no_utterance_memory;
    c.model.ablation.no_fact_memory |= no_fact_memory;
    c.model.ablation.no_self_attention |= no_self_attention;
    c.model.ablation.single_task |= single_task;
    return train_config_from_json(to_json(c));  // re-validates
  }
};

Splits load_splits(const TrainConfig& c) {
  if (!c.train_path.empty()) {
    Splits s;
    s.train = load_cases(c.train_path);
    if (!c.validation_path.empty()) s.validation = load_cases(c.validation_path);
    if (!c.test_path.empty()) s.test = load_cases(c.test_path);
    return s;
  }
  if (c.corpus_path.empty()) throw ValidationError("no corpus given (--corpus or --train)");
  auto cases = load_cases(c.corpus_path);
  if (cases.empty()) throw ValidationError("corpus " + c.corpus_path + " is empty");
  return split_cases(cases, c.seed, c.train_fraction, c.validation_fraction);
}

void write_report(const std::string& path, const json& report) {
  if (path.empty()) return;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write report " + path);
  out << report.dump(2) << '\n';
}

void print_epoch(const EpochRecord& e) {
  std::cerr << "epoch " << e.epoch << "  loss " << e.train_loss << "  train acc " << e.train_accuracy;
  if (e.validation.cases) {
    std::cerr << "  val Mic.F1 " << e.validation.judgment.micro_f1 << "  Mac.F1 " << e.validation.judgment.macro_f1;
    if (e.validation.facts) std::cerr << "  fact Mic.F1 " << e.validation.facts->micro_f1;
  }
  std::cerr << "  (" << e.seconds << " s)\n";
}

json history_json(const TrainResult& r) {
  json epochs = json::array();
  for (const auto& e : r.history) {
    json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy},
             {"seconds", e.seconds}};
    if (e.validation.cases) {
      row["validation"] = to_json(e.validation);
      row["validation"].erase("loss_curve");
    }
    epochs.push_back(std::move(row));
  }
  return epochs;
}

int run_train(const Overrides& o, const std::string& checkpoint, const std::string& report_path) {
  TrainConfig cfg = o.resolve();
  if (cfg.folds > 1) {
    std::vector<Case> cases = load_cases(cfg.corpus_path);
    json folds = json::array();
    std::vector<double> micro, macro;
    auto splits = kfold_splits(cases, cfg.folds, cfg.seed);
    for (std::size_t f = 0; f < splits.size(); ++f) {
      TrainResult r = train(cfg, splits[f].train, splits[f].validation, print_epoch);
      EvalReport test = evaluate(r.model, splits[f].test);
      std::cout << "fold " << f + 1 << "/" << splits.size() << "\n" << format_table(test);
      micro.push_back(test.judgment.micro_f1);
      macro.push_back(test.judgment.macro_f1);
      folds.push_back({{"fold", f}, {"best_epoch", r.best_epoch}, {"test", to_json(test)}});
    }
    double mean_micro = 0, mean_macro = 0;
    for (std::size_t f = 0; f < micro.size(); ++f) {
      mean_micro += micro[f] / micro.size();
      mean_macro += macro[f] / macro.size();
    }
    std::cout << "mean over folds: Mic.F1 " << mean_micro << "  Mac.F1 " << mean_macro << "\n";
    write_report(report_path, {{"config", to_json(cfg)}, {"folds", folds}, {"mean_micro_f1", mean_micro},
                               {"mean_macro_f1", mean_macro}});
    return 0;
  }
  Splits s = load_splits(cfg);
  std::cerr << "train " << s.train.size() << " / validation " << s.validation.size() << " / test " << s.test.size()
            << " cases\n";
  TrainResult r = train(cfg, s.train, s.validation, print_epoch);
  r.model.save(checkpoint);
  std::cerr << "best epoch " << r.best_epoch << ", checkpoint written to " << checkpoint << "\n";
  json report{{"config", to_json(cfg)}, {"checkpoint", checkpoint}, {"best_epoch", r.best_epoch},
              {"seconds", r.seconds}, {"parameter_count", r.model.parameter_count()}, {"epochs", history_json(r)}};
  if (!s.test.empty()) {
    EvalReport test = evaluate(r.model, s.test);
    for (const auto& e : r.history) test.loss_curve.push_back(e.train_loss);
    std::cout << "test split\n" << format_table(test);
    report["test"] = to_json(test);
  }
  write_report(report_path, report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MSJudge: multi-stage judgment prediction from court debates"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus as JSON lines");
  std::uint64_t gen_seed = 1;
  std::size_t gen_count = 2500;
  std::string gen_out;
  gen->add_option("--seed", gen_seed);
  gen->add_option("--count", gen_count, "number of cases");
  gen->add_option("--out", gen_out, "output path")->required();

  Overrides train_o, ablate_o, hops_o;
  auto* tr = app.add_subcommand("train", "train a model; keeps the best-by-validation-micro-F1 parameters");
  train_o.attach(tr);
  std::string train_ckpt = "model.ckpt", train_report;
  tr->add_option("--checkpoint", train_ckpt, "where to write the checkpoint");
  tr->add_option("--report", train_report, "JSON report path");

  auto* ev = app.add_subcommand("eval", "score a checkpoint on a labelled corpus");
  std::string eval_ckpt, eval_corpus, eval_report;
  ev->add_option("--checkpoint", eval_ckpt)->required();
  ev->add_option("--corpus", eval_corpus)->required();
  ev->add_option("--report", eval_report, "JSON report path");

  auto* ab = app.add_subcommand("ablate", "full model, four ablations and the single-task variant");
  ablate_o.attach(ab);
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};
  std::string ablate_report;
  bool ablate_no_single = false;
  ab->add_option("--seeds", ablate_seeds, "training seeds (medians are reported)")->delimiter(',');
  ab->add_option("--report", ablate_report);
  ab->add_flag("--skip-single-task", ablate_no_single);

  auto* hp = app.add_subcommand("hops", "hop sweep");
  hops_o.attach(hp);
  std::size_t hop_from = 1, hop_to = 6;
  std::string hops_report;
  hp->add_option("--from", hop_from);
  hp->add_option("--to", hop_to);
  hp->add_option("--report", hops_report);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::size_t gc_seeds = 100;
  double gc_tol = 1e-4;
  gc->add_option("--seeds", gc_seeds);
  gc->add_option("--tolerance", gc_tol);

  auto* sv = app.add_subcommand("serve", "HTTP prediction service");
  std::string sv_ckpt, sv_host = "127.0.0.1", sv_static;
  int sv_port = 8080;
  sv->add_option("--checkpoint", sv_ckpt)->required();
  sv->add_option("--host", sv_host);
  sv->add_option("--port", sv_port);
  sv->add_option("--static", sv_static, "directory of static files served at /");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cases = synth_generate(gen_seed, gen_count);
      save_cases(gen_out, cases);
      std::array<std::size_t, kJudgmentCount> counts{};
      std::size_t claims = 0;
      for (const auto& c : cases)
        for (auto j : c.judgments) {
          ++counts[static_cast<std::size_t>(j)];
          ++claims;
        }
      std::cout << "wrote " << cases.size() << " cases (" << claims << " claims) to " << gen_out << "\n";
      for (std::size_t k = 0; k < kJudgmentCount; ++k)
        std::cout << "  " << kJudgmentLabels[k] << ": " << counts[k] << "\n";
      return 0;
    }
    if (tr->parsed()) return run_train(train_o, train_ckpt, train_report);
    if (ev->parsed()) {
      Model model = Model::load(eval_ckpt);
      EvalReport r = evaluate(model, load_cases(eval_corpus));
      std::cout << format_table(r);
      write_report(eval_report, to_json(r));
      return 0;
    }
    if (ab->parsed()) {
      TrainConfig cfg = ablate_o.resolve();
      AblationTable t = run_ablations(cfg, load_splits(cfg), ablate_seeds, !ablate_no_single, &std::cerr);
      std::cout << format_table(t);
      write_report(ablate_report, to_json(t));
      return 0;
    }
    if (hp->parsed()) {
      TrainConfig cfg = hops_o.resolve();
      auto rows = hop_sweep(cfg, load_splits(cfg), hop_from, hop_to, &std::cerr);
      std::cout << format_table(rows);
      write_report(hops_report, to_json(rows));
      return 0;
    }
    if (gc->parsed()) {
      std::size_t failures = 0;
      std::map<std::string, GradcheckResult> worst;
      for (std::uint64_t s = 0; s < gc_seeds; ++s) {
        auto results = gradcheck_primitives(s, gc_tol);
        results.push_back(gradcheck_composite(s, gc_tol));
        for (const auto& r : results) {
          failures += !r.passed;
          auto& w = worst[r.name];
          if (w.name.empty() || r.max_relative_error > w.max_relative_error) w = r;
        }
      }
      for (const auto& [name, r] : worst)
        std::cout << (r.max_relative_error < gc_tol ? "ok   " : "FAIL ") << name << "  max rel err "
                  << r.max_relative_error << "\n";
      std::cout << failures << " failing checks over " << gc_seeds << " seeds\n";
      return failures ? 1 : 0;
    }
    if (sv->parsed()) {
      PredictionService service;
      service.load(sv_ckpt);
      httplib::Server server;
      mount_routes(server, service, sv_static.empty() ? std::nullopt : std::optional<std::filesystem::path>(sv_static));
      std::cerr << "serving on http://" << sv_host << ":" << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) {
        std::cerr << "error: cannot listen on " << sv_host << ":" << sv_port << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
