#include "ldmrec/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "ldmrec/errors.hpp"
#include "ldmrec/kernels.hpp"

namespace ldmrec {

// ---------------------------------------------------------------- ParamSet

std::size_t ParamSet::add(std::string name, DenseMatrix value) {
  if (contains(name)) throw UsageError("ParamSet: duplicate parameter " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw IndexError("ParamSet: unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

// --------------------------------------------------------------- Gradients

Gradients::Gradients(const ParamSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.emplace_back(params.value(i).rows(), params.value(i).cols());
  }
}

void Gradients::accumulate(const Gradients& other) {
  if (other.size() != size()) throw DimensionError("Gradients: size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].values();
    auto src = other.grads_[i].values();
    if (dst.size() != src.size()) throw DimensionError("Gradients: tensor shape mismatch");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void Gradients::scale(double factor) {
  for (auto& g : grads_) {
    for (auto& x : g.values()) x *= factor;
  }
}

// -------------------------------------------------------------------- Tape

const DenseMatrix& Var::value() const { return tape_->value(id_); }

const DenseMatrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external != nullptr ? *n.external : n.value;
}

Var Tape::constant(DenseMatrix value) {
  if (!value.all_finite()) throw NumericError("tape: non-finite constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(std::size_t index) {
  if (params_ == nullptr) throw UsageError("tape: no ParamSet bound");
  if (index >= params_->size()) throw IndexError("tape: parameter index out of range");
  Node n;
  n.external = &params_->value(index);
  n.param_index = static_cast<long>(index);
  n.requires_grad = track_;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const std::string& name) {
  if (params_ == nullptr) throw UsageError("tape: no ParamSet bound");
  return param(params_->index_of(name));
}

Var Tape::record(DenseMatrix value, std::vector<Var> inputs, Backward backward, const char* op) {
  if (consumed_) throw UsageError("tape: cannot record after backward");
  if (!value.all_finite()) throw NumericError(std::string("tape: non-finite output of ") + op);
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape_ != this) throw UsageError(std::string("tape: operand of ") + op + " from another tape");
    needs = needs || nodes_[v.id_].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::add_grad_with(Var v, const std::function<void(DenseMatrix&)>& fn) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    const DenseMatrix& val = value(v.id_);
    n.grad = DenseMatrix(val.rows(), val.cols());
  }
  fn(n.grad);
}

void Tape::add_grad(Var v, const DenseMatrix& g) {
  add_grad_with(v, [&](DenseMatrix& acc) {
    if (!acc.same_shape(g)) throw DimensionError("tape: adjoint shape mismatch");
    auto a = acc.values();
    auto b = g.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  });
}

Gradients Tape::backward(Var loss) {
  if (consumed_) throw UsageError("tape: backward called twice on the same tape");
  if (loss.tape_ != this) throw UsageError("tape: loss recorded on another tape");
  const DenseMatrix& lv = value(loss.id_);
  if (lv.rows() != 1 || lv.cols() != 1) throw UsageError("tape: loss must be a 1x1 scalar");
  consumed_ = true;

  Gradients grads = params_ != nullptr ? Gradients(*params_) : Gradients();
  if (!nodes_[loss.id_].requires_grad) return grads;

  nodes_[loss.id_].grad = DenseMatrix(1, 1, 1.0);
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param_index >= 0) {
      DenseMatrix& dst = grads[static_cast<std::size_t>(n.param_index)];
      auto d = dst.values();
      auto s = n.grad.values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    } else if (n.backward) {
      // The adjoint is dead after this node's replay.
      DenseMatrix g = std::move(n.grad);
      n.backward(*this, g);
    }
  }
  return grads;
}

// -------------------------------------------------------------- primitives

namespace ag {

namespace {

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw UsageError("tape: uninitialized Var");
  return *a.tape();
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) throw DimensionError(std::string(op) + ": shape mismatch");
}

template <typename F>
DenseMatrix map(const DenseMatrix& x, F f) {
  DenseMatrix y(x.rows(), x.cols());
  auto in = x.values();
  auto out = y.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return y;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  DenseMatrix out = kernels::matmul(a.value(), b.value());
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& t, const DenseMatrix& g) {
                    // dA = g B^T, dB = A^T g
                    if (t.requires_grad(a)) t.add_grad(a, kernels::matmul_bt(g, b.value()));
                    if (t.requires_grad(b)) t.add_grad(b, kernels::matmul_at(a.value(), g));
                  },
                  "matmul");
}

Var matmul_bt(Var a, Var b) {
  Tape& t = tape_of(a);
  DenseMatrix out = kernels::matmul_bt(a.value(), b.value());
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& t, const DenseMatrix& g) {
                    // C = A B^T: dA = g B, dB = g^T A
                    if (t.requires_grad(a)) t.add_grad(a, kernels::matmul(g, b.value()));
                    if (t.requires_grad(b)) t.add_grad(b, kernels::matmul_at(g, a.value()));
                  },
                  "matmul_bt");
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  DenseMatrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& t, const DenseMatrix& g) {
                    t.add_grad(a, g);
                    t.add_grad(b, g);
                  },
                  "add");
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  DenseMatrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& t, const DenseMatrix& g) {
                    t.add_grad(a, g);
                    t.add_grad_with(b, [&](DenseMatrix& acc) {
                      auto d = acc.values();
                      auto s = g.values();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
                    });
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  DenseMatrix out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return t.record(std::move(out), {a, b},
                  [a, b](Tape& t, const DenseMatrix& g) {
                    auto gv = g.values();
                    t.add_grad_with(a, [&](DenseMatrix& acc) {
                      auto d = acc.values();
                      auto other = b.value().values();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * other[i];
                    });
                    t.add_grad_with(b, [&](DenseMatrix& acc) {
                      auto d = acc.values();
                      auto other = a.value().values();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gv[i] * other[i];
                    });
                  },
                  "mul");
}

Var add_row(Var x, Var row) {
  Tape& t = tape_of(x);
  const DenseMatrix& xv = x.value();
  const DenseMatrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != xv.cols()) throw DimensionError("add_row: row shape mismatch");
  DenseMatrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += rv[c];
  }
  return t.record(std::move(out), {x, row},
                  [x, row](Tape& t, const DenseMatrix& g) {
                    t.add_grad(x, g);
                    t.add_grad_with(row, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < g.rows(); ++r) {
                        auto gr = g.row(r);
                        for (std::size_t c = 0; c < gr.size(); ++c) acc[c] += gr[c];
                      }
                    });
                  },
                  "add_row");
}

Var affine(Var x, double scale, double shift) {
  Tape& t = tape_of(x);
  DenseMatrix out = map(x.value(), [=](double v) { return scale * v + shift; });
  return t.record(std::move(out), {x},
                  [x, scale](Tape& t, const DenseMatrix& g) {
                    t.add_grad_with(x, [&](DenseMatrix& acc) {
                      auto d = acc.values();
                      auto s = g.values();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
                    });
                  },
                  "affine");
}

namespace {

double logistic(double v) {
  // Split on sign so exp() never overflows.
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Var sigmoid(Var x) {
  Tape& t = tape_of(x);
  DenseMatrix out = map(x.value(), logistic);
  const std::size_t self = t.num_ops();
  return t.record(std::move(out), {x},
                  [x, self](Tape& t, const DenseMatrix& g) {
                    const DenseMatrix& y = t.value(self);
                    t.add_grad_with(x, [&](DenseMatrix& acc) {
                      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * y[i] * (1.0 - y[i]);
                    });
                  },
                  "sigmoid");
}

Var tanh(Var x) {
  Tape& t = tape_of(x);
  DenseMatrix out = map(x.value(), [](double v) { return std::tanh(v); });
  const std::size_t self = t.num_ops();
  return t.record(std::move(out), {x},
                  [x, self](Tape& t, const DenseMatrix& g) {
                    const DenseMatrix& y = t.value(self);
                    t.add_grad_with(x, [&](DenseMatrix& acc) {
                      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * (1.0 - y[i] * y[i]);
                    });
                  },
                  "tanh");
}

Var leaky_relu(Var x, double slope) {
  Tape& t = tape_of(x);
  DenseMatrix out = map(x.value(), [=](double v) { return v >= 0.0 ? v : slope * v; });
  return t.record(std::move(out), {x},
                  [x, slope](Tape& t, const DenseMatrix& g) {
                    const DenseMatrix& xv = x.value();
                    t.add_grad_with(x, [&](DenseMatrix& acc) {
                      for (std::size_t i = 0; i < acc.size(); ++i) {
                        acc[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : slope);
                      }
                    });
                  },
                  "leaky_relu");
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a);
  const DenseMatrix& av = a.value();
  const DenseMatrix& bv = b.value();
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row count mismatch");
  const std::size_t ca = av.cols(), cb = bv.cols();
  DenseMatrix out(av.rows(), ca + cb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto o = out.row(r);
    auto ra = av.row(r);
    auto rb = bv.row(r);
    std::copy(ra.begin(), ra.end(), o.begin());
    std::copy(rb.begin(), rb.end(), o.begin() + static_cast<std::ptrdiff_t>(ca));
  }
  return t.record(std::move(out), {a, b},
                  [a, b, ca, cb](Tape& t, const DenseMatrix& g) {
                    t.add_grad_with(a, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < ca; ++c) acc(r, c) += g(r, c);
                    });
                    t.add_grad_with(b, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < cb; ++c) acc(r, c) += g(r, ca + c);
                    });
                  },
                  "concat_cols");
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  Tape& t = tape_of(table);
  const DenseMatrix& tv = table.value();
  DenseMatrix out(rows.size(), tv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= tv.rows()) throw IndexError("gather_rows: row index out of range");
    auto src = tv.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {table},
                  [table, idx = std::move(idx)](Tape& t, const DenseMatrix& g) {
                    t.add_grad_with(table, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < idx.size(); ++r) {
                        auto dst = acc.row(idx[r]);
                        auto src = g.row(r);
                        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                      }
                    });
                  },
                  "gather_rows");
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return t.record(DenseMatrix(1, 1, s), {x},
                  [x](Tape& t, const DenseMatrix& g) {
                    const double gv = g[0];
                    t.add_grad_with(x, [&](DenseMatrix& acc) {
                      for (auto& a : acc.values()) a += gv;
                    });
                  },
                  "sum");
}

Var row_mse(Var pred, Var target) {
  Tape& t = tape_of(pred);
  const DenseMatrix& p = pred.value();
  const DenseMatrix& y = target.value();
  require_same_shape(p, y, "row_mse");
  if (p.cols() == 0) throw DimensionError("row_mse: zero columns");
  const double inv_n = 1.0 / static_cast<double>(p.cols());
  DenseMatrix out(p.rows(), 1);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    auto pr = p.row(r);
    auto yr = y.row(r);
    for (std::size_t c = 0; c < pr.size(); ++c) {
      const double d = pr[c] - yr[c];
      s += d * d;
    }
    out(r, 0) = s * inv_n;
  }
  return t.record(std::move(out), {pred, target},
                  [pred, target, inv_n](Tape& t, const DenseMatrix& g) {
                    const DenseMatrix& p = pred.value();
                    const DenseMatrix& y = target.value();
                    t.add_grad_with(pred, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < p.rows(); ++r) {
                        const double k = 2.0 * inv_n * g(r, 0);
                        for (std::size_t c = 0; c < p.cols(); ++c) acc(r, c) += k * (p(r, c) - y(r, c));
                      }
                    });
                    t.add_grad_with(target, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < p.rows(); ++r) {
                        const double k = 2.0 * inv_n * g(r, 0);
                        for (std::size_t c = 0; c < p.cols(); ++c) acc(r, c) -= k * (p(r, c) - y(r, c));
                      }
                    });
                  },
                  "row_mse");
}

Var weighted_mean(Var col, std::span<const double> weights) {
  Tape& t = tape_of(col);
  const DenseMatrix& v = col.value();
  if (v.cols() != 1 || v.rows() != weights.size() || v.rows() == 0) {
    throw DimensionError("weighted_mean: expects a non-empty column matching the weights");
  }
  const double inv_n = 1.0 / static_cast<double>(v.rows());
  double s = 0.0;
  for (std::size_t r = 0; r < v.rows(); ++r) s += weights[r] * v[r];
  std::vector<double> w(weights.begin(), weights.end());
  return t.record(DenseMatrix(1, 1, s * inv_n), {col},
                  [col, w = std::move(w), inv_n](Tape& t, const DenseMatrix& g) {
                    t.add_grad_with(col, [&](DenseMatrix& acc) {
                      for (std::size_t r = 0; r < w.size(); ++r) acc[r] += g[0] * w[r] * inv_n;
                    });
                  },
                  "weighted_mean");
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul_bt(x, weight), bias); }

}  // namespace ag

}  // namespace ldmrec
