#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major double
// matrices. Every value in the network is a 2-D matrix; vectors are 1xN rows.
//
// Graph nodes are reference counted. Parameters are long-lived leaf nodes whose
// gradients accumulate across backward calls until zero_grad(); intermediate
// nodes live only as long as the graph that references them.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

namespace mgnli {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

namespace ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  Node() = default;
  explicit Node(Mat v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }

  void accumulate(const Mat& g);
  void zero_grad();
  bool has_grad() const { return grad.size() != 0; }
};

// RAII guard that disables graph construction on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Mat value);
Var parameter(Mat value);
Var zeros(Eigen::Index rows, Eigen::Index cols);

// Runs reverse accumulation from a 1x1 root. The root's gradient is seeded
// with `seed` (default 1).
void backward(const Var& root, double seed = 1.0);

// --- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);     // a * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var add_bias(const Var& a, const Var& bias);  // bias is 1xC, broadcast over rows
Var mul(const Var& a, const Var& b);          // elementwise
Var scale(const Var& a, double s);
Var one_minus(const Var& a);
Var linear(const Var& x, const Var& w, const Var& b);  // x*w + b

// --- elementwise nonlinearities -------------------------------------------
Var gelu(const Var& a);  // exact erf form
Var tanh(const Var& a);
Var sigmoid(const Var& a);
// log(clamp(a, lo, hi)); gradient is zero where the clamp is active.
Var log_clamped(const Var& a, double lo, double hi);

// --- row-wise reductions and normalizations -------------------------------
Var softmax_rows(const Var& a);
Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps);
Var normalize_rows(const Var& a);  // L2
Var max_rows(const Var& a);        // 1xC coordinate-wise max over rows
Var mean_rows(const Var& a);       // 1xC
Var sum(const Var& a);             // 1x1
Var mean(const Var& a);            // 1x1

// --- structural -----------------------------------------------------------
Var gather_rows(const Var& table, std::span<const int> ids);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var broadcast_rows(const Var& row, Eigen::Index rows);  // 1xC -> RxC
Var dropout(const Var& a, double p, std::mt19937_64& rng);

// --- fused layers ---------------------------------------------------------
// Unidirectional LSTM over the rows of x (T x in) with zero initial state.
// Gate order in w_ih (in x 4h), w_hh (h x 4h), b (1 x 4h): input, forget,
// cell, output. With reverse=true the sequence is consumed last-to-first and
// output row t is the state after reading row t. Returns T x h.
Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b, bool reverse);

// Sum over rows of -log softmax(logits)[target].
Var cross_entropy_rows(const Var& logits, std::span<const int> targets);

// Supervised contrastive term over a similarity matrix (already divided by
// the temperature). Anchors without a same-label partner contribute nothing.
Var supervised_contrastive(const Var& similarity, std::span<const int> labels);

}  // namespace ag
}  // namespace mgnli
