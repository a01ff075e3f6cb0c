#pragma once

// Define-by-run reverse-mode differentiation over small dense tensors.
//
// A Tape records every operation applied during one forward pass. Handles
// (Var) index into the tape; the tape is append-only, so every node's inputs
// precede it and a reverse sweep over node ids is a valid topological order.

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dlrrec/rng.hpp"

namespace dlrrec::ad {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Matrix view: rank-2 tensors are [rows x cols]; rank-1 [n] reads as 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::span<const double> values() const { return values_; }
  std::vector<double>& data() { return values_; }

  std::string shape_str() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

struct Var {
  std::size_t id = 0;
  bool operator==(const Var&) const = default;
};

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Mul,
  Neg,
  Relu,
  Sigmoid,
  Exp,
  Log,
  Scale,
  AddRow,
  Sum,
  Mean,
  LogSumExp,
  GatherRows,
  SegmentMean,
  ConcatCols,
  Dropout,
};

enum class Mode { Train, Eval };

std::string_view op_name(OpKind kind);
// Every differentiable op (all kinds except Leaf), in declaration order.
std::span<const OpKind> registered_ops();

// Gradients keyed by tape node. Nodes that received no gradient are absent
// and mean zero.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(std::vector<std::optional<Tensor>> grads);

  const Tensor* find(Var v) const;
  const Tensor& at(Var v) const;
  bool contains(Var v) const { return find(v) != nullptr; }
  std::size_t size() const;
  bool operator==(const GradientMap&) const = default;

 private:
  std::vector<std::optional<Tensor>> grads_;
};

class Tape {
 public:
  Var constant(Tensor t);
  // Leaf that participates in differentiation.
  Var parameter(Tensor t);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var scale(Var a, double factor);
  // x[m x n] + row[1 x n] broadcast over rows (bias add).
  Var add_row(Var x, Var row);

  // Reductions keep the reduced axis with extent 1: [m x n] over axis 1 -> [m x 1].
  Var sum(Var x, std::size_t axis);
  Var mean(Var x, std::size_t axis);
  Var logsumexp(Var x, std::size_t axis);
  // Sum over every element; the result keeps the input's rank with unit extents.
  Var sum_all(Var x);
  Var mean_all(Var x);

  Var gather_rows(Var table, std::vector<std::size_t> indices);
  // Mean of consecutive row segments: rows [offsets[b], offsets[b+1]) form
  // output row b. An empty segment yields a zero row.
  Var segment_mean(Var x, std::vector<std::size_t> offsets);
  Var concat_cols(std::span<const Var> parts);
  Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
  }
  // Inverted dropout: Train zeroes each unit with probability `rate` and
  // scales survivors by 1/(1-rate). Eval, or rate 0, returns `x` itself.
  Var dropout(Var x, double rate, Mode mode, Rng& rng);

  GradientMap backward(Var root) const;

  // Test hook: multiplies the input gradients produced by `kind`'s backward
  // rule by `factor`, for negative-control gradient checks.
  void corrupt_backward(OpKind kind, double factor) {
    corrupt_kind_ = kind;
    corrupt_factor_ = factor;
  }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    // Saved context for backward.
    std::vector<std::size_t> indices;
    Tensor aux;
    double scalar = 0.0;
    std::size_t axis = 0;
  };

  Var push(Node node);
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  void check_var(Var v) const;

  std::vector<Node> nodes_;
  std::optional<OpKind> corrupt_kind_;
  double corrupt_factor_ = 1.0;
};

}  // namespace dlrrec::ad
