#pragma once

// Tape-based reverse-mode automatic differentiation over small dense
// row-major matrices, plus Adam with freezable parameter groups.
//
// Trainable weights live in Tensor objects owned by the caller. A Tape records
// the operations of one forward pass; Tape::backward walks the records in
// reverse creation order (a valid topological order) and accumulates
// d(root)/d(weight) into Tensor::grad. Gradients are never zeroed implicitly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dmn/errors.hpp"

namespace dmn::ad {

/// Trainable leaf array. `grad` is a mutable accumulator so that read-only
/// models can still be bound into recording tapes.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  mutable std::vector<double> grad;
  bool requires_grad = true;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill), grad(r * c, 0.0) {}

  std::size_t size() const { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  void zero_grad() const { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t size() const { return rows() * cols(); }
  std::span<const double> value() const;
  double item() const;
  double operator[](std::size_t i) const { return value()[i]; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// A non-recording tape computes values only; nothing requires gradients.
  explicit Tape(bool recording = true) : recording_(recording) { nodes_.reserve(256); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Binds a weight tensor without copying it. Gradients flow into t.grad when
  /// the tape records and the tensor is not frozen.
  Var param(const Tensor& t) {
    Node n;
    n.rows = t.rows;
    n.cols = t.cols;
    n.ext_value = t.data.data();
    if (recording_ && t.requires_grad) {
      n.ext_grad = t.grad.data();
      n.requires_grad = true;
    }
    return push(std::move(n));
  }

  /// Embedding lookup: row `r` of `table`. Backward scatter-adds into that row.
  Var row(const Tensor& table, std::size_t r) {
    if (r >= table.rows) throw std::out_of_range("embedding row " + std::to_string(r) + " out of range");
    Node n;
    n.rows = 1;
    n.cols = table.cols;
    n.ext_value = table.data.data() + r * table.cols;
    if (recording_ && table.requires_grad) {
      n.ext_grad = table.grad.data() + r * table.cols;
      n.requires_grad = true;
    }
    return push(std::move(n));
  }

  Var constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw std::invalid_argument("constant: shape/data mismatch");
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(values);
    return push(std::move(n));
  }

  Var constant(std::span<const double> row_values) {
    return constant(1, row_values.size(), std::vector<double>(row_values.begin(), row_values.end()));
  }

  Var scalar(double v) { return constant(1, 1, {v}); }
  Var zeros(std::size_t rows, std::size_t cols) { return constant(rows, cols, std::vector<double>(rows * cols, 0.0)); }

  /// Reverse sweep from a 1x1 root. Repeated calls accumulate into weights.
  void backward(Var root) {
    if (root.tape() != this) throw std::invalid_argument("backward: root belongs to another tape");
    Node& r = nodes_[root.id()];
    if (r.rows * r.cols != 1) throw std::invalid_argument("backward: root must be a scalar");
    for (std::size_t i = 0; i <= root.id(); ++i) {
      Node& n = nodes_[i];
      if (n.ext_value == nullptr) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }
    if (!r.requires_grad) return;
    grad_ptr(root.id())[0] += 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward) n.backward();
    }
  }

  // ---- access used by operations ----
  std::size_t rows(std::size_t id) const { return nodes_[id].rows; }
  std::size_t cols(std::size_t id) const { return nodes_[id].cols; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const double* value_ptr(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ext_value ? n.ext_value : n.value.data();
  }
  double* grad_ptr(std::size_t id) {
    Node& n = nodes_[id];
    return n.ext_grad ? n.ext_grad : n.grad.data();
  }

  /// Records an operation result. `backward` runs only if some input needs a gradient.
  Var record(std::size_t rows, std::size_t cols, std::vector<double> value, std::initializer_list<Var> inputs,
             std::function<void()> backward) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    for (const Var& v : inputs) n.requires_grad = n.requires_grad || needs_grad(v.id());
    if (n.requires_grad) {
      n.grad.assign(rows * cols, 0.0);
      n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

  Var record_many(std::size_t rows, std::size_t cols, std::vector<double> value, const std::vector<Var>& inputs,
                  std::function<void()> backward) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.value = std::move(value);
    for (const Var& v : inputs) n.requires_grad = n.requires_grad || needs_grad(v.id());
    if (n.requires_grad) {
      n.grad.assign(rows * cols, 0.0);
      n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

 private:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    const double* ext_value = nullptr;
    double* ext_grad = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool recording_;
  std::vector<Node> nodes_;
};

inline std::size_t Var::rows() const { return tape_->rows(id_); }
inline std::size_t Var::cols() const { return tape_->cols(id_); }
inline std::span<const double> Var::value() const { return {tape_->value_ptr(id_), size()}; }
inline double Var::item() const {
  if (size() != 1) throw std::invalid_argument("item: not a scalar");
  return tape_->value_ptr(id_)[0];
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Elementwise unary op: f gives the value, df(x, y) the local derivative.
template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  const std::size_t n = a.size();
  const double* av = a.value().data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  std::size_t io = t.size();
  return t.record(a.rows(), a.cols(), std::move(out), {a}, [&t, ia, io, n, df] {
    if (!t.needs_grad(ia)) return;
    const double* x = t.value_ptr(ia);
    const double* y = t.value_ptr(io);
    const double* g = t.grad_ptr(io);
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

/// (m x k) * (k x n)
inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape& t = *a.tape();
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* av = a.value().data();
  const double* bv = b.value().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  const std::size_t ia = a.id(), ib = b.id(), io = t.size();
  return t.record(m, n, std::move(out), {a, b}, [&t, ia, ib, io, m, k, n] {
    const double* g = t.grad_ptr(io);
    const double* av = t.value_ptr(ia);
    const double* bv = t.value_ptr(ib);
    if (t.needs_grad(ia)) {
      double* ga = t.grad_ptr(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = bv + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
    }
    if (t.needs_grad(ib)) {
      double* gb = t.grad_ptr(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tape& t = *a.tape();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id(), io = t.size();
  return t.record(a.rows(), a.cols(), std::move(out), {a, b}, [&t, ia, ib, io, n] {
    const double* g = t.grad_ptr(io);
    if (t.needs_grad(ia)) {
      double* ga = t.grad_ptr(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      double* gb = t.grad_ptr(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id(), io = t.size();
  return t.record(a.rows(), a.cols(), std::move(out), {a, b}, [&t, ia, ib, io, n] {
    const double* g = t.grad_ptr(io);
    if (t.needs_grad(ia)) {
      double* ga = t.grad_ptr(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      double* gb = t.grad_ptr(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tape& t = *a.tape();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id(), io = t.size();
  return t.record(a.rows(), a.cols(), std::move(out), {a, b}, [&t, ia, ib, io, n] {
    const double* g = t.grad_ptr(io);
    const double* av = t.value_ptr(ia);
    const double* bv = t.value_ptr(ib);
    if (t.needs_grad(ia)) {
      double* ga = t.grad_ptr(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      double* gb = t.grad_ptr(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// Elementwise quotient a / b.
inline Var div(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "div");
  Tape& t = *a.tape();
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] / bv[i];
  const std::size_t ia = a.id(), ib = b.id(), io = t.size();
  return t.record(a.rows(), a.cols(), std::move(out), {a, b}, [&t, ia, ib, io, n] {
    const double* g = t.grad_ptr(io);
    const double* bv = t.value_ptr(ib);
    const double* ov = t.value_ptr(io);
    if (t.needs_grad(ia)) {
      double* ga = t.grad_ptr(ia);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / bv[i];
    }
    if (t.needs_grad(ib)) {
      double* gb = t.grad_ptr(ib);
      for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i] * ov[i] / bv[i];
    }
  });
}

/// alpha * a + beta, elementwise.
inline Var affine(const Var& a, double alpha, double beta) {
  return detail::unary(
      a, [alpha, beta](double x) { return alpha * x + beta; }, [alpha](double, double) { return alpha; });
}

inline Var scale(const Var& a, double alpha) { return affine(a, alpha, 0.0); }
inline Var neg(const Var& a) { return affine(a, -1.0, 0.0); }

inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// log(1 + e^x), overflow-safe.
inline Var softplus(const Var& a) {
  return detail::unary(a, detail::stable_softplus, [](double x, double) { return detail::stable_sigmoid(x); });
}

/// Row-wise log-sum-exp: (m x n) -> (m x 1). Shifted by the row max.
inline Var logsumexp(const Var& a) {
  Tape& t = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  const double* av = a.value().data();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av + i * n;
    const double mx = *std::max_element(row, row + n);
    if (!std::isfinite(mx)) {
      out[i] = mx;
      continue;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  const std::size_t ia = a.id(), io = t.size();
  return t.record(m, 1, std::move(out), {a}, [&t, ia, io, m, n] {
    const double* g = t.grad_ptr(io);
    const double* av = t.value_ptr(ia);
    const double* ov = t.value_ptr(io);
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * std::exp(av[i * n + j] - ov[i]);
  });
}

/// Row-wise softmax.
inline Var softmax(const Var& a) {
  Tape& t = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  const double* av = a.value().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (out[i * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  const std::size_t ia = a.id(), io = t.size();
  return t.record(m, n, std::move(out), {a}, [&t, ia, io, m, n] {
    const double* g = t.grad_ptr(io);
    const double* y = t.value_ptr(io);
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

/// Row-wise log-softmax.
inline Var log_softmax(const Var& a) {
  Tape& t = *a.tape();
  const std::size_t m = a.rows(), n = a.cols();
  const double* av = a.value().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  const std::size_t ia = a.id(), io = t.size();
  return t.record(m, n, std::move(out), {a}, [&t, ia, io, m, n] {
    const double* g = t.grad_ptr(io);
    const double* y = t.value_ptr(io);
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
  });
}

/// Horizontal concatenation of same-height blocks.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape& t = *parts.front().tape();
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) throw std::invalid_argument("concat: row mismatch");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const double* pv = p.value().data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy(pv + i * p.cols(), pv + (i + 1) * p.cols(), out.begin() + i * n + offset);
    offset += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  const std::size_t io = t.size();
  return t.record_many(m, n, std::move(out), parts, [&t, ids, widths, io, m, n] {
    const double* g = t.grad_ptr(io);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.needs_grad(ids[k])) {
        double* gp = t.grad_ptr(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + offset + j];
      }
      offset += w;
    }
  });
}

/// Columns [begin, end) of every row.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw std::invalid_argument("slice_cols: bad range");
  Tape& t = *a.tape();
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  const double* av = a.value().data();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy(av + i * n + begin, av + i * n + end, out.begin() + i * w);
  const std::size_t ia = a.id(), io = t.size();
  return t.record(m, w, std::move(out), {a}, [&t, ia, io, m, n, w, begin] {
    const double* g = t.grad_ptr(io);
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
  });
}

/// Flat element `index` as a 1x1 value.
inline Var pick(const Var& a, std::size_t index) {
  if (index >= a.size()) throw std::out_of_range("pick: index out of range");
  Tape& t = *a.tape();
  const std::size_t ia = a.id(), io = t.size();
  return t.record(1, 1, {a.value()[index]}, {a}, [&t, ia, io, index] {
    t.grad_ptr(ia)[index] += t.grad_ptr(io)[0];
  });
}

/// Sum of all elements as a 1x1 value.
inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t ia = a.id(), io = t.size(), n = a.size();
  return t.record(1, 1, {s}, {a}, [&t, ia, io, n] {
    const double g = t.grad_ptr(io)[0];
    double* ga = t.grad_ptr(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i] += g;
  });
}

/// Sum of a list of 1x1 values.
inline Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: no inputs");
  Tape& t = *terms.front().tape();
  double s = 0.0;
  std::vector<std::size_t> ids;
  ids.reserve(terms.size());
  for (const Var& v : terms) {
    if (v.size() != 1) throw std::invalid_argument("add_n: expects scalars");
    s += v.item();
    ids.push_back(v.id());
  }
  const std::size_t io = t.size();
  return t.record_many(1, 1, {s}, terms, [&t, ids, io] {
    const double g = t.grad_ptr(io)[0];
    for (std::size_t id : ids)
      if (t.needs_grad(id)) t.grad_ptr(id)[0] += g;
  });
}

/// x W + b for a row vector x (1 x in), W (in x out), b (1 x out).
inline Var linear(const Var& x, const Var& w, const Var& b) { return add(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// Parameter groups and optimizer
// ---------------------------------------------------------------------------

struct ParamGroup {
  std::string name;
  std::vector<Tensor*> params;
  bool frozen = false;

  void set_frozen(bool f) {
    frozen = f;
    for (Tensor* p : params) p->requires_grad = !f;
  }
  void zero_grad() const {
    for (const Tensor* p : params) p->zero_grad();
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment state is keyed by tensor address and
/// created lazily (zero) on first update.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long step_count() const { return step_; }

  /// One update of every non-frozen group. A non-finite gradient aborts the
  /// whole step (nothing is modified) and names the offending group.
  void step(std::span<ParamGroup* const> groups) {
    for (const ParamGroup* g : groups) {
      if (g->frozen) continue;
      for (const Tensor* p : g->params)
        for (double v : p->grad)
          if (!std::isfinite(v)) throw DivergenceError("non-finite gradient in parameter group '" + g->name + "'");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (ParamGroup* g : groups) {
      if (g->frozen) continue;
      for (Tensor* p : g->params) {
        auto& st = state_[p];
        if (st.m.empty()) {
          st.m.assign(p->size(), 0.0);
          st.v.assign(p->size(), 0.0);
        }
        for (std::size_t i = 0; i < p->size(); ++i) {
          const double gr = p->grad[i];
          st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gr;
          st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gr * gr;
          const double mhat = st.m[i] / bc1;
          const double vhat = st.v[i] / bc2;
          p->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
  }

  void step(std::vector<ParamGroup*> groups) { step(std::span<ParamGroup* const>(groups)); }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  long step_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

/// Builds a scalar objective on the given tape.
using Objective = std::function<Var(Tape&)>;

/// Max over all weights in `group` of |analytic - central| / (|analytic| + |central| + 1e-12).
/// Existing gradients in the group are overwritten.
inline double finite_diff_check(const Objective& f, const ParamGroup& group, double h = 1e-5) {
  for (Tensor* p : group.params) {
    p->requires_grad = true;
    p->zero_grad();
  }
  {
    Tape tape;
    Var root = f(tape);
    tape.backward(root);
  }
  auto eval = [&f] {
    Tape tape(false);
    return f(tape).item();
  };
  double worst = 0.0;
  for (Tensor* p : group.params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + h;
      const double up = eval();
      p->data[i] = saved - h;
      const double down = eval();
      p->data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double err = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, err);
    }
  }
  for (Tensor* p : group.params) p->requires_grad = !group.frozen;
  return worst;
}

}  // namespace dmn::ad
