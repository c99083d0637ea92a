#include "mgnli/optim.hpp"

#include <algorithm>
#include <cmath>

namespace mgnli {

double LinearSchedule::at(std::int64_t step) const {
  if (warmup_steps > 0 && step < warmup_steps) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const std::int64_t decay = std::max<std::int64_t>(1, total_steps - warmup_steps);
  const double remaining = static_cast<double>(total_steps - step) / static_cast<double>(decay);
  return peak * std::clamp(remaining, 0.0, 1.0);
}

double clip_grad_norm(std::span<ParameterStore* const> stores, double max_norm) {
  double sq = 0.0;
  for (const ParameterStore* s : stores) {
    for (const auto& [_, v] : s->items()) {
      if (v->has_grad()) sq += v->grad.squaredNorm();
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (ParameterStore* s : stores) {
      for (const auto& [_, v] : s->items()) {
        if (v->has_grad()) v->grad *= factor;
      }
    }
  }
  return norm;
}

void Adam::step(ParameterStore& store, double lr) {
  for (const auto& [_, v] : store.items()) {
    if (!v->has_grad()) continue;
    Slot& s = state_[v.get()];
    if (s.t == 0) {
      s.m = Mat::Zero(v->rows(), v->cols());
      s.v = Mat::Zero(v->rows(), v->cols());
    }
    ++s.t;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * v->grad;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * v->grad.cwiseProduct(v->grad);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    const Mat update = (s.m / bc1).array() / ((s.v / bc2).array().sqrt() + cfg_.eps);
    if (cfg_.weight_decay > 0) v->value *= (1.0 - lr * cfg_.weight_decay);
    v->value -= lr * update;
  }
}

void Adafactor::step(ParameterStore& store, double lr) {
  for (const auto& [_, v] : store.items()) {
    if (!v->has_grad()) continue;
    Slot& s = state_[v.get()];
    const bool factored = v->rows() > 1 && v->cols() > 1;
    if (s.t == 0) {
      if (factored) {
        s.row = Mat::Zero(v->rows(), 1);
        s.col = Mat::Zero(1, v->cols());
      } else {
        s.full = Mat::Zero(v->rows(), v->cols());
      }
    }
    ++s.t;
    const double beta2 = 1.0 - std::pow(static_cast<double>(s.t), cfg_.decay_rate);
    const Mat g2 = v->grad.cwiseProduct(v->grad).array() + cfg_.eps1;
    Mat update;
    if (factored) {
      s.row = beta2 * s.row + (1.0 - beta2) * g2.rowwise().mean();
      s.col = beta2 * s.col + (1.0 - beta2) * g2.colwise().mean();
      const Mat r = s.row / s.row.mean();
      const Mat approx = r * s.col;
      update = v->grad.array() / approx.array().sqrt();
    } else {
      s.full = beta2 * s.full + (1.0 - beta2) * g2;
      update = v->grad.array() / s.full.array().sqrt();
    }
    const double rms = std::sqrt(update.squaredNorm() / static_cast<double>(update.size()));
    update /= std::max(1.0, rms / cfg_.clip_threshold);
    double step_size = lr;
    if (cfg_.scale_parameter) {
      const double param_rms = std::sqrt(v->value.squaredNorm() / static_cast<double>(v->value.size()));
      step_size *= std::max(cfg_.eps2, param_rms);
    }
    v->value -= step_size * update;
  }
}

}  // namespace mgnli
