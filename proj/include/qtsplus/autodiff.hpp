// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation as a node holding its forward value and a
// closure that pushes the node's adjoint into its inputs. Nodes are appended
// in creation order, which is a topological order of the graph, so backward()
// simply walks the node list in reverse. Nodes that do not depend on any
// differentiable leaf carry no closure and are skipped.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qtsplus/error.hpp"
#include "qtsplus/matrix.hpp"

namespace qtsplus::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double scalar() const { return value()[0]; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push_leaf(std::move(value), false); }
  Var variable(Matrix value) { return push_leaf(std::move(value), true); }

  // Leaf bound to a model parameter, created once per distinct address so the
  // same weight used twice accumulates into a single adjoint.
  Var param(const Matrix& p) {
    if (auto it = params_.find(&p); it != params_.end()) return {this, it->second};
    Var v = push_leaf(p, true);
    params_.emplace(&p, v.id);
    return v;
  }

  // Appends an operation node. `fn` may be empty when no input needs a
  // gradient; it is also dropped automatically in that case.
  Var record(Matrix value, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    n.inputs = std::move(inputs);
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Adjoint of `id` after backward(); zeros if nothing flowed into it.
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_adjoint) return n.adjoint;
    return Matrix(n.value.rows(), n.value.cols());
  }

  // Gradient of a parameter bound through param(); zeros if it was unused.
  Matrix grad_of(const Matrix& p) const {
    if (auto it = params_.find(&p); it != params_.end()) return grad(Var{nullptr, it->second});
    return Matrix(p.rows(), p.cols());
  }

  bool has_param(const Matrix& p) const { return params_.contains(&p); }

  // Adds `delta` into the adjoint of `id` (allocating it on first use).
  // No-op for nodes that do not require gradients.
  Matrix* adjoint_for(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (!n.has_adjoint) {
      n.adjoint = Matrix(n.value.rows(), n.value.cols());
      n.has_adjoint = true;
    }
    return &n.adjoint;
  }

  const Matrix& adjoint(std::size_t id) const { return nodes_[id].adjoint; }

  void backward(Var loss) {
    if (loss.tape != this) fail(ErrorKind::parameter, "backward: variable belongs to another tape");
    if (nodes_[loss.id].value.size() != 1) {
      fail(ErrorKind::shape, "backward: loss must be 1x1, got " + nodes_[loss.id].value.shape_string());
    }
    for (auto& n : nodes_) {
      n.has_adjoint = false;
      n.adjoint = Matrix();
    }
    last_order_.clear();
    if (!nodes_[loss.id].requires_grad) return;
    adjoint_for(loss.id)->data()[0] = 1.0;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.has_adjoint || !n.backward) continue;
      last_order_.push_back(k);
      n.backward(*this, k);
    }
  }

  // Node ids whose closures ran during the most recent backward(), in order.
  const std::vector<std::size_t>& last_backward_order() const noexcept { return last_order_; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    bool has_adjoint = false;
    bool requires_grad = false;
    BackwardFn backward;
    std::vector<std::size_t> inputs;
  };

  Var push_leaf(Matrix value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> params_;
  std::vector<std::size_t> last_order_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {

inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) fail(ErrorKind::parameter, "operands recorded on different tapes");
}

inline void accumulate(Tape& t, std::size_t id, const Matrix& delta) {
  if (Matrix* adj = t.adjoint_for(id)) *adj += delta;
}

template <class F>
void accumulate_with(Tape& t, std::size_t id, F&& f) {
  if (Matrix* adj = t.adjoint_for(id)) f(*adj);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(qtsplus::matmul(a.value(), b.value()), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    if (t.requires_grad(a)) detail::accumulate(t, a, qtsplus::matmul_transposed(g, t.value(b)));
    if (t.requires_grad(b)) detail::accumulate(t, b, qtsplus::matmul(qtsplus::transpose(t.value(a)), g));
  });
}

// a * b^T
inline Var matmul_transposed(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  return t.record(qtsplus::matmul_transposed(a.value(), b.value()), {a.id, b.id},
                  [a = a.id, b = b.id](Tape& t, std::size_t self) {
                    const Matrix& g = t.adjoint(self);
                    if (t.requires_grad(a)) detail::accumulate(t, a, qtsplus::matmul(g, t.value(b)));
                    if (t.requires_grad(b)) detail::accumulate(t, b, qtsplus::matmul(qtsplus::transpose(g), t.value(a)));
                  });
}

inline Var transpose(Var a) {
  return a.tape->record(qtsplus::transpose(a.value()), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    detail::accumulate(t, a, qtsplus::transpose(t.adjoint(self)));
  });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  return a.tape->record(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    detail::accumulate(t, a, t.adjoint(self));
    detail::accumulate(t, b, t.adjoint(self));
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  return a.tape->record(a.value() - b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    detail::accumulate(t, a, t.adjoint(self));
    detail::accumulate(t, b, t.adjoint(self) * -1.0);
  });
}

inline Var hadamard(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i] * t.value(b)[i];
    });
    detail::accumulate_with(t, b, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i] * t.value(a)[i];
    });
  });
}

// a + bias, with bias (1 x cols) broadcast over rows.
inline Var add_row_broadcast(Var a, Var bias) {
  detail::same_tape(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    fail(ErrorKind::shape, "add_row_broadcast: " + a.value().shape_string() + " + " + bias.value().shape_string());
  }
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()[j];
  return a.tape->record(std::move(out), {a.id, bias.id}, [a = a.id, bias = bias.id](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate(t, a, g);
    detail::accumulate_with(t, bias, [&](Matrix& adj) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) adj[j] += g(i, j);
    });
  });
}

// a + s for a 1x1 variable s broadcast to every entry.
inline Var add_scalar(Var a, Var s) {
  detail::same_tape(a, s);
  if (s.value().size() != 1) fail(ErrorKind::shape, "add_scalar: scalar operand must be 1x1");
  Matrix out = a.value();
  for (auto& v : out.data()) v += s.scalar();
  return a.tape->record(std::move(out), {a.id, s.id}, [a = a.id, s = s.id](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate(t, a, g);
    detail::accumulate_with(t, s, [&](Matrix& adj) {
      adj[0] += std::accumulate(g.data().begin(), g.data().end(), 0.0);
    });
  });
}

inline Var scale(Var a, double c) {
  return a.tape->record(a.value() * c, {a.id}, [a = a.id, c](Tape& t, std::size_t self) {
    detail::accumulate(t, a, t.adjoint(self) * c);
  });
}

inline Var shift(Var a, double c) {
  Matrix out = a.value();
  for (auto& v : out.data()) v += c;
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    detail::accumulate(t, a, t.adjoint(self));
  });
}

// Row-wise softmax of a / temperature, stabilised by subtracting the row max.
inline Matrix softmax_rows_value(const Matrix& a, double temperature) {
  if (!(temperature > 0)) fail(ErrorKind::parameter, "softmax temperature must be positive");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto in = a.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp((in[j] - mx) / temperature);
      z += o[j];
    }
    for (auto& v : o) v /= z;
  }
  return out;
}

inline Var softmax_rows(Var a, double temperature = 1.0) {
  return a.tape->record(softmax_rows_value(a.value(), temperature), {a.id},
                        [a = a.id, temperature](Tape& t, std::size_t self) {
                          const Matrix& y = t.value(self);
                          const Matrix& g = t.adjoint(self);
                          detail::accumulate_with(t, a, [&](Matrix& adj) {
                            for (std::size_t i = 0; i < y.rows(); ++i) {
                              double dot = 0;
                              for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                              for (std::size_t j = 0; j < y.cols(); ++j)
                                adj(i, j) += y(i, j) * (g(i, j) - dot) / temperature;
                            }
                          });
                        });
}

// Per-row RMS normalisation with a learned gain (1 x cols).
inline Var rmsnorm_rows(Var a, Var gain, double eps) {
  detail::same_tape(a, gain);
  if (gain.rows() != 1 || gain.cols() != a.cols()) {
    fail(ErrorKind::shape, "rmsnorm: gain " + gain.value().shape_string() + " for input " + a.value().shape_string());
  }
  const Matrix& x = a.value();
  const std::size_t c = x.cols();
  Matrix out(x.rows(), c);
  std::vector<double> inv_rms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0;
    for (double v : x.row(i)) ms += v * v;
    ms = c ? ms / static_cast<double>(c) : 0.0;
    inv_rms[i] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < c; ++j) out(i, j) = gain.value()[j] * x(i, j) * inv_rms[i];
  }
  return a.tape->record(std::move(out), {a.id, gain.id},
                        [a = a.id, gain = gain.id, inv_rms = std::move(inv_rms)](Tape& t, std::size_t self) {
                          const Matrix& x = t.value(a);
                          const Matrix& gn = t.value(gain);
                          const Matrix& g = t.adjoint(self);
                          const std::size_t c = x.cols();
                          detail::accumulate_with(t, gain, [&](Matrix& adj) {
                            for (std::size_t i = 0; i < x.rows(); ++i)
                              for (std::size_t j = 0; j < c; ++j) adj[j] += g(i, j) * x(i, j) * inv_rms[i];
                          });
                          detail::accumulate_with(t, a, [&](Matrix& adj) {
                            for (std::size_t i = 0; i < x.rows(); ++i) {
                              const double ir = inv_rms[i];
                              double dot = 0;
                              for (std::size_t j = 0; j < c; ++j) dot += g(i, j) * gn[j] * x(i, j);
                              const double k = dot * ir * ir * ir / static_cast<double>(c);
                              for (std::size_t j = 0; j < c; ++j) adj(i, j) += g(i, j) * gn[j] * ir - x(i, j) * k;
                            }
                          });
                        });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value();
  for (auto& v : out.data()) v = detail::sigmoid(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i] * y[i] * (1.0 - y[i]);
    });
  });
}

// x * sigmoid(x)
inline Var silu(Var a) {
  Matrix out = a.value();
  for (auto& v : out.data()) v = v * detail::sigmoid(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& x = t.value(a);
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.size(); ++i) {
        const double s = detail::sigmoid(x[i]);
        adj[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
      }
    });
  });
}

inline Var log(Var a) {
  Matrix out = a.value();
  for (auto& v : out.data()) v = std::log(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& t, std::size_t self) {
    const Matrix& x = t.value(a);
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[i] / x[i];
    });
  });
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& x = a.value();
  if (begin + count > x.cols()) fail(ErrorKind::shape, "slice_cols out of range");
  Matrix out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x(i, begin + j);
  return a.tape->record(std::move(out), {a.id}, [a = a.id, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) adj(i, begin + j) += g(i, j);
    });
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "concat_cols: no operands");
  Tape& t = *parts[0].tape;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != rows) fail(ErrorKind::shape, "concat_cols: row mismatch");
    offsets.push_back(cols);
    ids.push_back(p.id);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = parts[k].value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, offsets[k] + j) = v(i, j);
  }
  auto inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      detail::accumulate_with(t, ids[k], [&](Matrix& adj) {
        for (std::size_t i = 0; i < adj.rows(); ++i)
          for (std::size_t j = 0; j < adj.cols(); ++j) adj(i, j) += g(i, offsets[k] + j);
      });
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "concat_rows: no operands");
  Tape& t = *parts[0].tape;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.cols() != cols) fail(ErrorKind::shape, "concat_rows: column mismatch");
    offsets.push_back(rows);
    ids.push_back(p.id);
    rows += p.rows();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Matrix& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k] * cols));
  }
  auto inputs = ids;
  return t.record(std::move(out), std::move(inputs), [ids, offsets](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      detail::accumulate_with(t, ids[k], [&](Matrix& adj) {
        const std::size_t base = offsets[k] * g.cols();
        for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += g[base + i];
      });
    }
  });
}

inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  Matrix out = qtsplus::gather_rows(a.value(), idx);
  return a.tape->record(std::move(out), {a.id}, [a = a.id, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < g.cols(); ++j) adj(idx[k], j) += g(k, j);
    });
  });
}

inline Var gather_cols(Var a, std::vector<std::size_t> idx) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= x.cols()) fail(ErrorKind::shape, "gather_cols: index out of range");
    for (std::size_t i = 0; i < x.rows(); ++i) out(i, k) = x(i, idx[k]);
  }
  return a.tape->record(std::move(out), {a.id}, [a = a.id, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t i = 0; i < g.rows(); ++i) adj(i, idx[k]) += g(i, k);
    });
  });
}

// Multiplies row i of `a` by s[i], where s is (rows x 1).
inline Var scale_rows(Var a, Var s) {
  detail::same_tape(a, s);
  if (s.cols() != 1 || s.rows() != a.rows()) {
    fail(ErrorKind::shape, "scale_rows: " + a.value().shape_string() + " by " + s.value().shape_string());
  }
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (auto& v : out.row(i)) v *= s.value()[i];
  return a.tape->record(std::move(out), {a.id, s.id}, [a = a.id, s = s.id](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    const Matrix& x = t.value(a);
    const Matrix& sv = t.value(s);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) adj(i, j) += g(i, j) * sv[i];
    });
    detail::accumulate_with(t, s, [&](Matrix& adj) {
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) adj[i] += g(i, j) * x(i, j);
    });
  });
}

// Column-wise maximum (1 x cols). The gradient goes to the first maximal row.
inline Var col_max(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) fail(ErrorKind::empty_input, "col_max of an empty matrix");
  Matrix out(1, x.cols());
  std::vector<std::size_t> arg(x.cols(), 0);
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double best = x(0, j);
    for (std::size_t i = 1; i < x.rows(); ++i) {
      if (x(i, j) > best) {
        best = x(i, j);
        arg[j] = i;
      }
    }
    out[j] = best;
  }
  return a.tape->record(std::move(out), {a.id}, [a = a.id, arg = std::move(arg)](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t j = 0; j < arg.size(); ++j) adj(arg[j], j) += g[j];
    });
  });
}

// Column means (1 x cols).
inline Var mean_rows(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) fail(ErrorKind::empty_input, "mean_rows of an empty matrix");
  Matrix out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x(i, j);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto& v : out.data()) v *= inv;
  return a.tape->record(std::move(out), {a.id}, [a = a.id, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.adjoint(self);
    detail::accumulate_with(t, a, [&](Matrix& adj) {
      for (std::size_t i = 0; i < adj.rows(); ++i)
        for (std::size_t j = 0; j < adj.cols(); ++j) adj(i, j) += g[j] * inv;
    });
  });
}

inline Var sum(Var a) {
  const auto& d = a.value().data();
  return a.tape->record(Matrix::scalar(std::accumulate(d.begin(), d.end(), 0.0)), {a.id},
                        [a = a.id](Tape& t, std::size_t self) {
                          const double g = t.adjoint(self)[0];
                          detail::accumulate_with(t, a, [&](Matrix& adj) {
                            for (auto& v : adj.data()) v += g;
                          });
                        });
}

// Entropy of p_i = r_i / (sum_j r_j + eps) over every entry of r, 0 log 0 := 0.
inline Var normalized_entropy(Var r, double eps) {
  const auto& v = r.value().data();
  const double denom = std::accumulate(v.begin(), v.end(), 0.0) + eps;
  double h = 0;
  for (double ri : v) {
    const double p = ri / denom;
    if (p > 0) h -= p * std::log(p);
  }
  return r.tape->record(Matrix::scalar(h), {r.id}, [r = r.id, denom](Tape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    const auto& v = t.value(r).data();
    double common = 0;
    for (double ri : v) {
      const double p = ri / denom;
      if (p > 0) common += p * (std::log(p) + 1.0);
    }
    detail::accumulate_with(t, r, [&](Matrix& adj) {
      for (std::size_t k = 0; k < v.size(); ++k) {
        const double p = v[k] / denom;
        const double own = p > 0 ? -(std::log(p) + 1.0) : 0.0;
        adj[k] += g * (own + common) / denom;
      }
    });
  });
}

// A 1x1 function of a 1x1 input whose value and derivative are supplied by
// the caller (used for closed-form penalty terms).
inline Var scalar_function(Var x, double value, double derivative) {
  if (x.value().size() != 1) fail(ErrorKind::shape, "scalar_function: input must be 1x1");
  return x.tape->record(Matrix::scalar(value), {x.id}, [x = x.id, derivative](Tape& t, std::size_t self) {
    detail::accumulate_with(t, x, [&](Matrix& adj) { adj[0] += t.adjoint(self)[0] * derivative; });
  });
}

// Forward value `hard`, backward identity into `soft`.
inline Var straight_through(Var soft, Matrix hard) {
  require_same_shape(soft.value(), hard, "straight_through");
  return soft.tape->record(std::move(hard), {soft.id}, [s = soft.id](Tape& t, std::size_t self) {
    detail::accumulate(t, s, t.adjoint(self));
  });
}

}  // namespace qtsplus::ad
