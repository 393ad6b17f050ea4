#include "msjudge/metrics.hpp"

namespace msjudge {

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }
double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

ClassificationReport classification_report(std::span<const int> gold, std::span<const int> predicted,
                                           std::size_t classes) {
  if (gold.size() != predicted.size())
    throw DimensionError("classification_report: " + std::to_string(gold.size()) + " gold vs " +
                         std::to_string(predicted.size()) + " predicted labels");
  ClassificationReport r;
  r.count = gold.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(gold[i]) >= classes ||
        static_cast<std::size_t>(predicted[i]) >= classes)
      throw DomainError("classification_report: label out of range");
    ++r.confusion[gold[i]][predicted[i]];
    if (gold[i] == predicted[i]) ++correct;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = r.confusion[c][c], gold_c = 0, pred_c = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      gold_c += r.confusion[c][o];
      pred_c += r.confusion[o][c];
    }
    const double p = ratio(tp, pred_c), rec = ratio(tp, gold_c);
    r.precision.push_back(p);
    r.recall.push_back(rec);
    r.f1.push_back(harmonic(p, rec));
  }
  for (std::size_t c = 0; c < classes; ++c) {
    r.macro_precision += r.precision[c] / classes;
    r.macro_recall += r.recall[c] / classes;
    r.macro_f1 += r.f1[c] / classes;
  }
  r.accuracy = ratio(correct, r.count);
  r.micro_f1 = r.accuracy;
  return r;
}

FactReport fact_report(const std::vector<FactVector>& gold, const std::vector<FactVector>& predicted) {
  if (gold.size() != predicted.size()) throw DimensionError("fact_report: gold/predicted case counts differ");
  FactReport r;
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0, total = 0;
  for (std::size_t p = 0; p < kFactCount; ++p) {
    auto& lab = r.per_label[p];
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i][p] != 0, y = predicted[i][p] != 0;
      lab.tp += g && y;
      lab.fp += !g && y;
      lab.fn += g && !y;
      lab.tn += !g && !y;
    }
    const double n = static_cast<double>(gold.size());
    lab.micro_f1 = ratio(lab.tp + lab.tn, n);
    lab.positive_f1 = harmonic(ratio(lab.tp, lab.tp + lab.fp), ratio(lab.tp, lab.tp + lab.fn));
    const double negative_f1 = harmonic(ratio(lab.tn, lab.tn + lab.fn), ratio(lab.tn, lab.tn + lab.fp));
    lab.macro_f1 = 0.5 * (lab.positive_f1 + negative_f1);
    r.macro_f1 += lab.macro_f1 / kFactCount;
    tp += lab.tp;
    fp += lab.fp;
    fn += lab.fn;
    correct += lab.tp + lab.tn;
    total += gold.size();
  }
  r.micro_f1 = ratio(correct, total);
  r.positive_micro_f1 = harmonic(ratio(tp, tp + fp), ratio(tp, tp + fn));
  return r;
}

nlohmann::json to_json(const ClassificationReport& r) {
  return {{"count", r.count},
          {"confusion", r.confusion},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"macro_precision", r.macro_precision},
          {"macro_recall", r.macro_recall},
          {"macro_f1", r.macro_f1},
          {"micro_f1", r.micro_f1},
          {"accuracy", r.accuracy}};
}

nlohmann::json to_json(const FactReport& r) {
  nlohmann::json labels = nlohmann::json::array();
  for (std::size_t p = 0; p < kFactCount; ++p) {
    const auto& l = r.per_label[p];
    labels.push_back({{"label", kFactLabels[p]},
                      {"micro_f1", l.micro_f1},
                      {"macro_f1", l.macro_f1},
                      {"positive_f1", l.positive_f1},
                      {"tp", l.tp},
                      {"fp", l.fp},
                      {"fn", l.fn},
                      {"tn", l.tn}});
  }
  return {{"micro_f1", r.micro_f1},
          {"macro_f1", r.macro_f1},
          {"positive_micro_f1", r.positive_micro_f1},
          {"per_label", labels}};
}

}  // namespace msjudge
