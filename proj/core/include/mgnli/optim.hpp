#pragma once

// Optimizers and learning-rate schedules over ParameterStore gradients.

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "mgnli/params.hpp"

namespace mgnli {

// Linear warmup to the peak followed by linear decay to zero.
struct LinearSchedule {
  double peak = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  double at(std::int64_t step) const;  // step is 0-based
};

// Global L2 norm over every gradient in the stores; scales them down to
// max_norm when larger. Returns the norm before clipping.
double clip_grad_norm(std::span<ParameterStore* const> stores, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParameterStore& store, double lr);

 private:
  struct Slot {
    Mat m;
    Mat v;
    std::int64_t t = 0;
  };
  AdamConfig cfg_;
  std::map<const ag::Node*, Slot> state_;
};

// Factored second-moment estimates for matrices, per-element for vectors;
// no first moment; update RMS clipping.
struct AdafactorConfig {
  double eps1 = 1e-30;
  double eps2 = 1e-3;
  double clip_threshold = 1.0;
  double decay_rate = -0.8;
  bool scale_parameter = false;
};

class Adafactor {
 public:
  explicit Adafactor(AdafactorConfig cfg = {}) : cfg_(cfg) {}
  void step(ParameterStore& store, double lr);

 private:
  struct Slot {
    Mat row;   // rows x 1
    Mat col;   // 1 x cols
    Mat full;  // used for vectors
    std::int64_t t = 0;
  };
  AdafactorConfig cfg_;
  std::map<const ag::Node*, Slot> state_;
};

}  // namespace mgnli
