#pragma once

// Reverse-mode differentiation over DenseMatrix values.
//
// A Tape records every primitive applied to its Vars. backward() replays the
// adjoints in exact reverse order and returns one gradient per entry of the
// ParamSet the tape was bound to. A tape is single-use: a second backward()
// throws UsageError. Tapes are not thread-safe; give each worker its own tape
// over a shared const ParamSet and reduce the Gradients explicitly.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ldmrec/dense_matrix.hpp"

namespace ldmrec {

// Named, ordered collection of trainable tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, DenseMatrix value);
  std::size_t index_of(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  DenseMatrix& value(std::size_t i) { return values_[i]; }
  const DenseMatrix& value(std::size_t i) const { return values_[i]; }
  DenseMatrix& operator[](const std::string& name) { return values_[index_of(name)]; }
  const DenseMatrix& operator[](const std::string& name) const { return values_[index_of(name)]; }

  bool operator==(const ParamSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<DenseMatrix> values_;
};

// One gradient tensor per ParamSet entry, same shapes.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamSet& params);

  std::size_t size() const { return grads_.size(); }
  DenseMatrix& operator[](std::size_t i) { return grads_[i]; }
  const DenseMatrix& operator[](std::size_t i) const { return grads_[i]; }

  // Elementwise sum; the reduction step across workers.
  void accumulate(const Gradients& other);
  void scale(double factor);

 private:
  std::vector<DenseMatrix> grads_;
};

class Tape;

class Var {
 public:
  Var() = default;
  const DenseMatrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const DenseMatrix& out_grad)>;

  // With track_gradients = false, parameter leaves behave like constants and
  // no adjoint closures are kept.
  explicit Tape(const ParamSet* params = nullptr, bool track_gradients = true)
      : params_(params), track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(DenseMatrix value);
  // Leaf that reads params.value(index) without copying; its adjoint lands in
  // the returned Gradients at the same index.
  Var param(std::size_t index);
  Var param(const std::string& name);

  Gradients backward(Var loss);

  std::size_t num_ops() const { return nodes_.size(); }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

  // Used by primitives.
  const DenseMatrix& value(std::size_t id) const;
  Var record(DenseMatrix value, std::vector<Var> inputs, Backward backward, const char* op);
  void add_grad(Var v, const DenseMatrix& g);
  // Accumulate into v's adjoint; fn receives the adjoint buffer (allocated
  // zeroed on first use). No-op for Vars that do not require gradients.
  void add_grad_with(Var v, const std::function<void(DenseMatrix&)>& fn);

 private:
  struct Node {
    DenseMatrix value;
    const DenseMatrix* external = nullptr;  // parameter leaves
    DenseMatrix grad;
    Backward backward;
    long param_index = -1;
    bool requires_grad = false;
  };

  const ParamSet* params_;
  bool track_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Primitives. Operands must live on the same tape.
namespace ag {

Var matmul(Var a, Var b);         // a * b
Var matmul_bt(Var a, Var b);      // a * b^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);            // elementwise
Var add_row(Var x, Var row);      // x + row broadcast over rows; row is 1 x cols
Var affine(Var x, double scale, double shift);  // scale * x + shift
Var sigmoid(Var x);
Var tanh(Var x);
Var leaky_relu(Var x, double slope);  // derivative at 0 is 1
Var concat_cols(Var a, Var b);
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var sum(Var x);                   // 1 x 1
Var row_mse(Var pred, Var target);  // rows x 1, mean over columns
Var weighted_mean(Var col, std::span<const double> weights);  // 1 x 1

// x * W^T + b, the dense layer used throughout the network.
Var linear(Var x, Var weight, Var bias);

}  // namespace ag

}  // namespace ldmrec
