#include "mgnli/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "mgnli/error.hpp"

namespace mgnli::ag {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Var*> vars) {
  if (!g_grad_enabled) return false;
  for (const Var* v : vars) {
    if ((*v)->requires_grad) return true;
  }
  return false;
}

bool any_requires_grad(std::span<const Var> vars) {
  if (!g_grad_enabled) return false;
  return std::any_of(vars.begin(), vars.end(), [](const Var& v) { return v->requires_grad; });
}

// Builds a result node; the closure and inputs are retained only when some
// input participates in differentiation.
Var make(Mat value, std::vector<Var> inputs, bool rg, std::function<void(Node&)> fn) {
  auto out = std::make_shared<Node>(std::move(value), rg);
  if (rg) {
    out->inputs = std::move(inputs);
    out->backward_fn = std::move(fn);
  }
  return out;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw ConfigurationError(std::string(op) + ": shape mismatch (" + std::to_string(a->rows()) + "x" +
                             std::to_string(a->cols()) + " vs " + std::to_string(b->rows()) + "x" +
                             std::to_string(b->cols()) + ")");
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Node::accumulate(const Mat& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

void Node::zero_grad() { grad.resize(0, 0); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Mat value) { return std::make_shared<Node>(std::move(value), false); }

Var parameter(Mat value) { return std::make_shared<Node>(std::move(value), true); }

Var zeros(Eigen::Index rows, Eigen::Index cols) { return constant(Mat::Zero(rows, cols)); }

void backward(const Var& root, double seed) {
  if (root->rows() != 1 || root->cols() != 1) {
    throw ArgumentError("backward: root must be a 1x1 scalar");
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the live graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward_fn && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Mat::Constant(1, 1, seed));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) {
      n->backward_fn(*n);
    }
  }
  // Intermediate gradients are not needed after the sweep.
  for (Node* n : order) {
    if (n->backward_fn) n->zero_grad();
  }
}

// --- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) {
    throw ConfigurationError("matmul: inner dimensions differ (" + std::to_string(a->cols()) + " vs " +
                             std::to_string(b->rows()) + ")");
  }
  const bool rg = any_requires_grad({&a, &b});
  return make(a->value * b->value, {a, b}, rg, [](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) x.accumulate(self.grad * y.value.transpose());
    if (y.requires_grad) y.accumulate(x.value.transpose() * self.grad);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) {
    throw ConfigurationError("matmul_nt: column counts differ");
  }
  const bool rg = any_requires_grad({&a, &b});
  return make(a->value * b->value.transpose(), {a, b}, rg, [](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) x.accumulate(self.grad * y.value);
    if (y.requires_grad) y.accumulate(self.grad.transpose() * x.value);
  });
}

Var transpose(const Var& a) {
  const bool rg = any_requires_grad({&a});
  return make(a->value.transpose(), {a}, rg,
              [](Node& self) { self.inputs[0]->accumulate(self.grad.transpose()); });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const bool rg = any_requires_grad({&a, &b});
  return make(a->value + b->value, {a, b}, rg, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad);
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const bool rg = any_requires_grad({&a, &b});
  return make(a->value - b->value, {a, b}, rg, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(-self.grad);
  });
}

Var add_bias(const Var& a, const Var& bias) {
  if (bias->rows() != 1 || bias->cols() != a->cols()) {
    throw ConfigurationError("add_bias: bias must be 1x" + std::to_string(a->cols()));
  }
  const bool rg = any_requires_grad({&a, &bias});
  Mat out = a->value.rowwise() + bias->value.row(0);
  return make(std::move(out), {a, bias}, rg, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(self.grad.colwise().sum());
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const bool rg = any_requires_grad({&a, &b});
  return make(a->value.cwiseProduct(b->value), {a, b}, rg, [](Node& self) {
    auto& x = *self.inputs[0];
    auto& y = *self.inputs[1];
    if (x.requires_grad) x.accumulate(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.accumulate(self.grad.cwiseProduct(x.value));
  });
}

Var scale(const Var& a, double s) {
  const bool rg = any_requires_grad({&a});
  return make(a->value * s, {a}, rg, [s](Node& self) { self.inputs[0]->accumulate(self.grad * s); });
}

Var one_minus(const Var& a) {
  const bool rg = any_requires_grad({&a});
  Mat out = (1.0 - a->value.array()).matrix();
  return make(std::move(out), {a}, rg, [](Node& self) { self.inputs[0]->accumulate(-self.grad); });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

// --- elementwise ----------------------------------------------------------

Var gelu(const Var& a) {
  const bool rg = any_requires_grad({&a});
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Mat out = a->value.unaryExpr([inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return make(std::move(out), {a}, rg, [inv_sqrt2](Node& self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Mat d = self.inputs[0]->value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var tanh(const Var& a) {
  const bool rg = any_requires_grad({&a});
  Mat out = a->value.array().tanh().matrix();
  return make(std::move(out), {a}, rg, [](Node& self) {
    Mat d = (1.0 - self.value.array().square()).matrix();
    self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  const bool rg = any_requires_grad({&a});
  Mat out = a->value.unaryExpr(&sigmoid_scalar);
  return make(std::move(out), {a}, rg, [](Node& self) {
    Mat d = (self.value.array() * (1.0 - self.value.array())).matrix();
    self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Var log_clamped(const Var& a, double lo, double hi) {
  const bool rg = any_requires_grad({&a});
  Mat out = a->value.unaryExpr([lo, hi](double x) { return std::log(std::clamp(x, lo, hi)); });
  return make(std::move(out), {a}, rg, [lo, hi](Node& self) {
    Mat d = self.inputs[0]->value.unaryExpr([lo, hi](double x) { return (x < lo || x > hi) ? 0.0 : 1.0 / x; });
    self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

// --- row-wise -------------------------------------------------------------

Var softmax_rows(const Var& a) {
  const bool rg = any_requires_grad({&a});
  Mat out(a->rows(), a->cols());
  for (Eigen::Index r = 0; r < a->rows(); ++r) {
    const double mx = a->value.row(r).maxCoeff();
    out.row(r) = (a->value.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make(std::move(out), {a}, rg, [](Node& self) {
    Mat g(self.value.rows(), self.value.cols());
    for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r) = self.value.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
    }
    self.inputs[0]->accumulate(g);
  });
}

Var layer_norm(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = a->rows();
  const Eigen::Index c = a->cols();
  if (gamma->cols() != c || beta->cols() != c) {
    throw ConfigurationError("layer_norm: gain/bias width mismatch");
  }
  Mat xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = a->value.row(r).mean();
    const double var = (a->value.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((a->value.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Mat out = (xhat.array().rowwise() * gamma->value.row(0).array()).matrix();
  out.rowwise() += beta->value.row(0);
  const bool rg = any_requires_grad({&a, &gamma, &beta});
  return make(std::move(out), {a, gamma, beta}, rg,
              [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                auto& x = *self.inputs[0];
                auto& g = *self.inputs[1];
                auto& b = *self.inputs[2];
                if (g.requires_grad) g.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                if (b.requires_grad) b.accumulate(self.grad.colwise().sum());
                if (x.requires_grad) {
                  const double c = static_cast<double>(xhat.cols());
                  Mat dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
                  Mat dx(xhat.rows(), xhat.cols());
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const double m1 = dxhat.row(r).sum() / c;
                    const double m2 = dxhat.row(r).dot(xhat.row(r)) / c;
                    dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r)).matrix();
                  }
                  x.accumulate(dx);
                }
              });
}

Var normalize_rows(const Var& a) {
  const bool rg = any_requires_grad({&a});
  Eigen::VectorXd norms = a->value.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (norms(r) == 0.0) throw DegenerateInputError("normalize_rows: zero-norm row");
  }
  Mat out = a->value.array().colwise() / norms.array();
  return make(std::move(out), {a}, rg, [norms = std::move(norms)](Node& self) {
    Mat g(self.value.rows(), self.value.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r) = (self.grad.row(r) - dot * self.value.row(r)) / norms(r);
    }
    self.inputs[0]->accumulate(g);
  });
}

Var max_rows(const Var& a) {
  if (a->rows() == 0) throw DegenerateInputError("max_rows: no rows");
  const bool rg = any_requires_grad({&a});
  Mat out(1, a->cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(a->cols()));
  for (Eigen::Index c = 0; c < a->cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < a->rows(); ++r) {
      if (a->value(r, c) > a->value(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = a->value(best, c);
  }
  return make(std::move(out), {a}, rg, [arg = std::move(arg)](Node& self) {
    auto& x = *self.inputs[0];
    Mat g = Mat::Zero(x.rows(), x.cols());
    for (std::size_t c = 0; c < arg.size(); ++c) {
      g(arg[c], static_cast<Eigen::Index>(c)) = self.grad(0, static_cast<Eigen::Index>(c));
    }
    x.accumulate(g);
  });
}

Var mean_rows(const Var& a) {
  if (a->rows() == 0) throw DegenerateInputError("mean_rows: no rows");
  const bool rg = any_requires_grad({&a});
  const double n = static_cast<double>(a->rows());
  return make(a->value.colwise().mean(), {a}, rg, [n](Node& self) {
    auto& x = *self.inputs[0];
    Mat g = self.grad.replicate(x.rows(), 1) / n;
    x.accumulate(g);
  });
}

Var sum(const Var& a) {
  const bool rg = any_requires_grad({&a});
  return make(Mat::Constant(1, 1, a->value.sum()), {a}, rg, [](Node& self) {
    auto& x = *self.inputs[0];
    x.accumulate(Mat::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  return scale(sum(a), 1.0 / n);
}

// --- structural -----------------------------------------------------------

Var gather_rows(const Var& table, std::span<const int> ids) {
  Mat out(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->rows()) {
      throw EncodingError("gather_rows: index " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(table->rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  const bool rg = any_requires_grad({&table});
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), {table}, rg, [idx = std::move(idx)](Node& self) {
    auto& t = *self.inputs[0];
    if (!t.has_grad()) t.grad = Mat::Zero(t.rows(), t.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      t.grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front()->cols();
  for (const auto& p : parts) {
    if (p->cols() != cols) throw ConfigurationError("concat_rows: column mismatch");
    rows += p->rows();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  const bool rg = any_requires_grad(parts);
  return make(std::move(out), {parts.begin(), parts.end()}, rg, [](Node& self) {
    Eigen::Index off = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad.middleRows(off, in->rows()));
      off += in->rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  const Eigen::Index rows = parts.front()->rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p->rows() != rows) throw ConfigurationError("concat_cols: row mismatch");
    cols += p->cols();
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->cols()) = p->value;
    at += p->cols();
  }
  const bool rg = any_requires_grad(parts);
  return make(std::move(out), {parts.begin(), parts.end()}, rg, [](Node& self) {
    Eigen::Index off = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad.middleCols(off, in->cols()));
      off += in->cols();
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->rows()) throw ArgumentError("slice_rows: out of range");
  const bool rg = any_requires_grad({&a});
  return make(a->value.middleRows(start, count), {a}, rg, [start, count](Node& self) {
    auto& x = *self.inputs[0];
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = self.grad;
    x.accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->cols()) throw ArgumentError("slice_cols: out of range");
  const bool rg = any_requires_grad({&a});
  return make(a->value.middleCols(start, count), {a}, rg, [start, count](Node& self) {
    auto& x = *self.inputs[0];
    Mat g = Mat::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = self.grad;
    x.accumulate(g);
  });
}

Var broadcast_rows(const Var& row, Eigen::Index rows) {
  if (row->rows() != 1) throw ArgumentError("broadcast_rows: expects a single row");
  const bool rg = any_requires_grad({&row});
  return make(row->value.replicate(rows, 1), {row}, rg,
              [](Node& self) { self.inputs[0]->accumulate(self.grad.colwise().sum()); });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(a->rows(), a->cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  }
  const bool rg = any_requires_grad({&a});
  Mat out = a->value.cwiseProduct(mask);
  return make(std::move(out), {a}, rg,
              [mask = std::move(mask)](Node& self) { self.inputs[0]->accumulate(self.grad.cwiseProduct(mask)); });
}

// --- fused ----------------------------------------------------------------

Var lstm(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b, bool reverse) {
  const Eigen::Index steps = x->rows();
  const Eigen::Index h = w_hh->rows();
  if (w_ih->rows() != x->cols() || w_ih->cols() != 4 * h || w_hh->cols() != 4 * h || b->cols() != 4 * h) {
    throw ConfigurationError("lstm: weight shapes inconsistent with input width " + std::to_string(x->cols()));
  }
  // Cached per-step activations for back-propagation through time.
  Mat gates(steps, 4 * h);  // post-activation i, f, g, o
  Mat cells(steps, h);
  Mat hidden(steps, h);
  Mat xw = x->value * w_ih->value;
  Vec hp = Vec::Zero(h);
  Vec cp = Vec::Zero(h);
  for (Eigen::Index s = 0; s < steps; ++s) {
    const Eigen::Index t = reverse ? steps - 1 - s : s;
    Vec z = xw.row(t) + hp * w_hh->value + b->value.row(0);
    for (Eigen::Index k = 0; k < h; ++k) {
      gates(t, k) = sigmoid_scalar(z(k));
      gates(t, h + k) = sigmoid_scalar(z(h + k));
      gates(t, 2 * h + k) = std::tanh(z(2 * h + k));
      gates(t, 3 * h + k) = sigmoid_scalar(z(3 * h + k));
    }
    Vec c = gates.row(t).segment(h, h).cwiseProduct(cp) +
            gates.row(t).segment(0, h).cwiseProduct(gates.row(t).segment(2 * h, h));
    Vec hn = gates.row(t).segment(3 * h, h).cwiseProduct(c.array().tanh().matrix());
    cells.row(t) = c;
    hidden.row(t) = hn;
    hp = hn;
    cp = c;
  }
  const bool rg = any_requires_grad({&x, &w_ih, &w_hh, &b});
  return make(hidden, {x, w_ih, w_hh, b}, rg,
              [gates = std::move(gates), cells = std::move(cells), reverse, h](Node& self) {
                auto& xin = *self.inputs[0];
                auto& wih = *self.inputs[1];
                auto& whh = *self.inputs[2];
                auto& bias = *self.inputs[3];
                const Eigen::Index steps = self.value.rows();
                Mat dz(steps, 4 * h);
                Vec dh_next = Vec::Zero(h);
                Vec dc_next = Vec::Zero(h);
                for (Eigen::Index s = steps - 1; s >= 0; --s) {
                  const Eigen::Index t = reverse ? steps - 1 - s : s;
                  const Eigen::Index prev = reverse ? t + 1 : t - 1;
                  const bool has_prev = s > 0;
                  Vec dh = self.grad.row(t) + dh_next;
                  const auto i_g = gates.row(t).segment(0, h).array();
                  const auto f_g = gates.row(t).segment(h, h).array();
                  const auto g_g = gates.row(t).segment(2 * h, h).array();
                  const auto o_g = gates.row(t).segment(3 * h, h).array();
                  const Eigen::Array<double, 1, Eigen::Dynamic> tc = cells.row(t).array().tanh();
                  Eigen::Array<double, 1, Eigen::Dynamic> dc =
                      dc_next.array() + dh.array() * o_g * (1.0 - tc.square());
                  Eigen::Array<double, 1, Eigen::Dynamic> c_prev =
                      has_prev ? Eigen::Array<double, 1, Eigen::Dynamic>(cells.row(prev).array())
                               : Eigen::Array<double, 1, Eigen::Dynamic>::Zero(h);
                  dz.row(t).segment(0, h) = (dc * g_g * i_g * (1.0 - i_g)).matrix();
                  dz.row(t).segment(h, h) = (dc * c_prev * f_g * (1.0 - f_g)).matrix();
                  dz.row(t).segment(2 * h, h) = (dc * i_g * (1.0 - g_g.square())).matrix();
                  dz.row(t).segment(3 * h, h) = (dh.array() * tc * o_g * (1.0 - o_g)).matrix();
                  dh_next = dz.row(t) * whh.value.transpose();
                  dc_next = (dc * f_g).matrix();
                }
                if (xin.requires_grad) xin.accumulate(dz * wih.value.transpose());
                if (wih.requires_grad) wih.accumulate(xin.value.transpose() * dz);
                if (bias.requires_grad) bias.accumulate(dz.colwise().sum());
                if (whh.requires_grad) {
                  // h_{prev} for each step; zero for the first step consumed.
                  Mat hprev = Mat::Zero(steps, h);
                  for (Eigen::Index s = 1; s < steps; ++s) {
                    const Eigen::Index t = reverse ? steps - 1 - s : s;
                    const Eigen::Index prev = reverse ? t + 1 : t - 1;
                    hprev.row(t) = self.value.row(prev);
                  }
                  whh.accumulate(hprev.transpose() * dz);
                }
              });
}

Var cross_entropy_rows(const Var& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits->rows()) {
    throw ArgumentError("cross_entropy_rows: one target per row required");
  }
  Mat probs(logits->rows(), logits->cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits->rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits->cols()) throw ArgumentError("cross_entropy_rows: target out of range");
    const double mx = logits->value.row(r).maxCoeff();
    const double lse = mx + std::log((logits->value.row(r).array() - mx).exp().sum());
    probs.row(r) = (logits->value.row(r).array() - lse).exp().matrix();
    total += lse - logits->value(r, t);
  }
  const bool rg = any_requires_grad({&logits});
  std::vector<int> tg(targets.begin(), targets.end());
  return make(Mat::Constant(1, 1, total), {logits}, rg, [probs = std::move(probs), tg = std::move(tg)](Node& self) {
    Mat g = probs;
    for (std::size_t r = 0; r < tg.size(); ++r) g(static_cast<Eigen::Index>(r), tg[r]) -= 1.0;
    self.inputs[0]->accumulate(g * self.grad(0, 0));
  });
}

Var supervised_contrastive(const Var& similarity, std::span<const int> labels) {
  const Eigen::Index n = similarity->rows();
  if (similarity->cols() != n || static_cast<Eigen::Index>(labels.size()) != n) {
    throw ArgumentError("supervised_contrastive: similarity must be square and match labels");
  }
  // d loss / d s_ij = -[j positive for i]/P_i + softmax_{k != i}(s_i)_j
  Mat g = Mat::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) ++positives;
    }
    if (positives == 0) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) mx = std::max(mx, similarity->value(i, k));
    }
    double z = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k != i) z += std::exp(similarity->value(i, k) - mx);
    }
    const double lse = mx + std::log(z);
    const double inv_p = 1.0 / positives;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool pos = labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
      if (pos) total -= inv_p * (similarity->value(i, j) - lse);
      g(i, j) = std::exp(similarity->value(i, j) - lse) - (pos ? inv_p : 0.0);
    }
  }
  const bool rg = any_requires_grad({&similarity});
  return make(Mat::Constant(1, 1, total), {similarity}, rg,
              [g = std::move(g)](Node& self) { self.inputs[0]->accumulate(g * self.grad(0, 0)); });
}

}  // namespace mgnli::ag
