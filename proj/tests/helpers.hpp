#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "msjudge/model.hpp"
#include "msjudge/synth.hpp"

namespace testing {

inline msjudge::ModelConfig tiny_config(std::size_t hops = 2, msjudge::Ablation ablation = {}) {
  msjudge::ModelConfig cfg;
  cfg.word_dim = 3;
  cfg.role_dim = 2;
  cfg.hidden = 2;
  cfg.hops = hops;
  cfg.ablation = ablation;
  return cfg;
}

/// A model over the vocabulary of `cases` whose parameters are redrawn from
/// uniform(-bound, bound), so attention maps are far from uniform.
inline msjudge::Model random_model(const std::vector<msjudge::Case>& cases, const msjudge::ModelConfig& cfg,
                                   std::uint64_t seed, double bound = 0.8) {
  msjudge::Model model(cfg, msjudge::build_vocab(cases, 1), seed);
  msjudge::Rng rng(seed * 7919 + 11);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& t : model.params().tensors())
    for (double& v : t.mutable_data()) v = u(rng);
  return model;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, max_abs_diff(a[i], b[i]));
  return m;
}

}  // namespace testing
