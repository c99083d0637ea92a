#include "mgnli/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mgnli/error.hpp"

namespace mgnli {

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon); }

void check_label(int y) {
  if (y != 0 && y != 1) throw ArgumentError("label must be 0 or 1, got " + std::to_string(y));
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigurationError("lambda must be non-negative");
  if (!(gamma >= 0 && gamma <= 1)) throw ConfigurationError("gamma must lie in [0, 1]");
  if (!(tau > 0)) throw ConfigurationError("tau must be positive");
}

double loss_entailment(const EntailmentProbabilities& p, int y) {
  check_label(y);
  return -std::log(clamp_probability(p.p[static_cast<std::size_t>(y)]));
}

double loss_retrieval(std::span<const double> p, std::span<const int> r) {
  if (p.size() != r.size()) throw ArgumentError("loss_retrieval: score and label counts differ");
  if (p.empty()) throw DegenerateInputError("loss_retrieval: no sentences");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    check_label(r[i]);
    total -= r[i] == 1 ? std::log(clamp_probability(p[i])) : std::log(clamp_probability(1.0 - p[i]));
  }
  return total / static_cast<double>(p.size());
}

double loss_multitask(double loss_a, double loss_b, const LossConfig& cfg) { return loss_a + cfg.lambda * loss_b; }

double supervised_contrastive_loss(const Mat& globals, std::span<const int> y, double tau) {
  const Eigen::Index n = globals.rows();
  if (static_cast<std::size_t>(n) != y.size()) throw ArgumentError("contrastive: label count mismatch");
  Mat h = globals;
  for (Eigen::Index i = 0; i < n; ++i) h.row(i) /= h.row(i).norm();
  const Mat sim = (h * h.transpose()) / tau;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) positives += (j != i && y[j] == y[i]) ? 1 : 0;
    if (positives == 0) continue;
    double mx = -INFINITY;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) mx = std::max(mx, sim(i, k));
    }
    double z = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) z += std::exp(sim(i, k) - mx);
    }
    const double lse = mx + std::log(z);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && y[j] == y[i]) total -= (sim(i, j) - lse) / positives;
    }
  }
  return total;
}

double loss_contrastive(const Mat& globals, std::span<const int> y, std::span<const EntailmentProbabilities> p,
                        const LossConfig& cfg) {
  if (y.size() < 2) throw ArgumentError("loss_contrastive: batch size must be at least 2");
  if (p.size() != y.size()) throw ArgumentError("loss_contrastive: prediction count mismatch");
  double ce = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) ce += loss_entailment(p[i], y[i]);
  ce /= static_cast<double>(y.size());
  if (cfg.gamma == 1.0) return ce;
  return cfg.gamma * ce + (1.0 - cfg.gamma) * supervised_contrastive_loss(globals, y, cfg.tau);
}

namespace ag_loss {

using namespace ag;

Var entailment(const Var& p, int y) {
  check_label(y);
  return scale(log_clamped(slice_cols(p, y, 1), kProbabilityEpsilon, 1.0 - kProbabilityEpsilon), -1.0);
}

Var retrieval(std::span<const Var> p, std::span<const int> r) {
  if (p.size() != r.size()) throw ArgumentError("loss_retrieval: score and label counts differ");
  if (p.empty()) throw DegenerateInputError("loss_retrieval: no sentences");
  std::vector<Var> terms;
  terms.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    check_label(r[i]);
    const Var& q = r[i] == 1 ? p[i] : one_minus(p[i]);
    terms.push_back(log_clamped(q, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon));
  }
  return scale(mean(concat_rows(terms)), -1.0);
}

Var multitask(const Var& loss_a, const Var& loss_b, const LossConfig& cfg) {
  if (cfg.lambda == 0.0) return loss_a;
  return add(loss_a, scale(loss_b, cfg.lambda));
}

Var contrastive(std::span<const Var> globals, std::span<const int> y, std::span<const Var> p,
                const LossConfig& cfg) {
  if (y.size() < 2) throw ArgumentError("loss_contrastive: batch size must be at least 2");
  if (p.size() != y.size() || globals.size() != y.size()) {
    throw ArgumentError("loss_contrastive: batch component sizes differ");
  }
  std::vector<Var> ce;
  ce.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) ce.push_back(entailment(p[i], y[i]));
  Var mean_ce = mean(concat_rows(ce));
  if (cfg.gamma == 1.0) return mean_ce;
  Var h = normalize_rows(concat_rows(globals));
  Var sim = scale(matmul_nt(h, h), 1.0 / cfg.tau);
  Var scl = supervised_contrastive(sim, y);
  return add(scale(mean_ce, cfg.gamma), scale(scl, 1.0 - cfg.gamma));
}

}  // namespace ag_loss

}  // namespace mgnli
