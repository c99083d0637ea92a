#pragma once

// Training losses: entailment cross-entropy, evidence binary cross-entropy,
// the multitask sum, and cross-entropy mixed with a supervised contrastive
// term. Each loss has a scalar form and a differentiable form.

#include <span>
#include <vector>

#include "mgnli/mgnet.hpp"
#include "mgnli/tensor.hpp"

namespace mgnli {

inline constexpr double kProbabilityEpsilon = 1e-12;

struct LossConfig {
  double lambda = 0.01;
  double gamma = 0.5;
  double tau = 0.3;

  void validate() const;
};

// -(1-y) log p_1 - y log p_2, probabilities clamped to [eps, 1-eps].
double loss_entailment(const EntailmentProbabilities& p, int y);
// Mean binary cross-entropy over sentences.
double loss_retrieval(std::span<const double> p, std::span<const int> r);
double loss_multitask(double loss_a, double loss_b, const LossConfig& cfg);
// Sum over anchors of the supervised contrastive term on L2-normalized rows
// of `globals` (N x d). Anchors without a same-label partner are skipped.
double supervised_contrastive_loss(const Mat& globals, std::span<const int> y, double tau);
// gamma * mean(L_A) + (1 - gamma) * L_SCL.
double loss_contrastive(const Mat& globals, std::span<const int> y, std::span<const EntailmentProbabilities> p,
                        const LossConfig& cfg);

namespace ag_loss {

ag::Var entailment(const ag::Var& p, int y);  // p is 1x2
ag::Var retrieval(std::span<const ag::Var> p, std::span<const int> r);  // each p is 1x1
ag::Var multitask(const ag::Var& loss_a, const ag::Var& loss_b, const LossConfig& cfg);
ag::Var contrastive(std::span<const ag::Var> globals, std::span<const int> y, std::span<const ag::Var> p,
                    const LossConfig& cfg);

}  // namespace ag_loss

}  // namespace mgnli
