#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"
#include "msjudge/corpus.hpp"

namespace msjudge {

/// Single-label multi-class scores. A class absent from both gold and
/// predictions scores F1 = 0 and still counts toward the macro mean.
struct ClassificationReport {
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
  std::vector<double> precision, recall, f1;        // per class
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;  // equals accuracy
  double accuracy = 0.0;
};

ClassificationReport classification_report(std::span<const int> gold, std::span<const int> predicted,
                                           std::size_t classes);

/// One binary fact label scored as a two-class problem.
struct BinaryLabelReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double micro_f1 = 0.0;     // pooled over both classes (= accuracy)
  double macro_f1 = 0.0;     // mean of the present-class and absent-class F1
  double positive_f1 = 0.0;  // F1 of the present class alone
};

struct FactReport {
  std::array<BinaryLabelReport, kFactCount> per_label{};
  double micro_f1 = 0.0;           // pooled over every (case, label) decision
  double macro_f1 = 0.0;           // mean of per-label macro F1
  double positive_micro_f1 = 0.0;  // present-class F1 pooled over all labels
};

FactReport fact_report(const std::vector<FactVector>& gold, const std::vector<FactVector>& predicted);

nlohmann::json to_json(const ClassificationReport& r);
nlohmann::json to_json(const FactReport& r);

}  // namespace msjudge
