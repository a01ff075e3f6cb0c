#include "dlrrec/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dlrrec/error.hpp"

namespace dlrrec::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void add_into(Tensor& dst, const Tensor& src) {
  auto& d = dst.data();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

void require_matrix(const Tensor& t, std::string_view op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_str());
  }
}

// C[m x n] = A[m x k] * B[k x n], optionally with A or B transposed in place.
Tensor matmul_raw(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  Tensor c({m, n});
  auto& cv = c.data();
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t ac = a.cols();
  const std::size_t bc = b.cols();
  if (tb && !ta) {
    // Both operands row-major along k: plain dot products.
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = av.data() + i * ac;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = bv.data() + j * bc;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        cv[i * n + j] = acc;
      }
    }
    return c;
  }
  if (ta && !tb) {
    // Outer products of matching rows, so both operands stream contiguously.
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = av.data() + p * ac;
      const double* brow = bv.data() + p * bc;
      for (std::size_t i = 0; i < m; ++i) {
        const double aip = arow[i];
        if (aip == 0.0) continue;
        double* crow = cv.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
    return c;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = cv.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta ? av[p * ac + i] : av[i * ac + p];
      if (aip == 0.0) continue;
      if (!tb) {
        const double* brow = bv.data() + p * bc;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * bv[j * bc + p];
      }
    }
  }
  return c;
}

std::vector<std::size_t> reduced_shape(const Tensor& x, std::size_t axis) {
  auto shape = x.shape();
  shape[axis] = 1;
  return shape;
}

// Outer/inner strides for reducing `axis` of a tensor laid out row-major.
struct AxisLayout {
  std::size_t outer, extent, inner;
};

AxisLayout layout(const Tensor& x, std::size_t axis) {
  AxisLayout l{1, x.shape()[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) l.outer *= x.shape()[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) l.inner *= x.shape()[d];
  return l;
}

constexpr std::array kOps = {
    OpKind::MatMul,     OpKind::Add,         OpKind::Mul,        OpKind::Neg,
    OpKind::Relu,       OpKind::Sigmoid,     OpKind::Exp,        OpKind::Log,
    OpKind::Scale,      OpKind::AddRow,      OpKind::Sum,        OpKind::Mean,
    OpKind::LogSumExp,  OpKind::GatherRows,  OpKind::SegmentMean, OpKind::ConcatCols,
    OpKind::Dropout,
};

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != product(shape_)) {
    throw DimensionError("tensor " + shape_str() + " needs " + std::to_string(product(shape_)) +
                         " values, got " + std::to_string(values_.size()));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("from_rows: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

std::size_t Tensor::rows() const {
  return rank() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (values_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str());
  return values_[0];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- registry

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Neg: return "neg";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Scale: return "scale";
    case OpKind::AddRow: return "add_row";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::SegmentMean: return "segment_mean";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Dropout: return "dropout";
  }
  return "unknown";
}

std::span<const OpKind> registered_ops() { return kOps; }

// ---------------------------------------------------------------- GradientMap

GradientMap::GradientMap(std::vector<std::optional<Tensor>> grads) : grads_(std::move(grads)) {}

const Tensor* GradientMap::find(Var v) const {
  if (v.id >= grads_.size() || !grads_[v.id]) return nullptr;
  return &*grads_[v.id];
}

const Tensor& GradientMap::at(Var v) const {
  const Tensor* t = find(v);
  if (t == nullptr) throw ContractError("no gradient recorded for node " + std::to_string(v.id));
  return *t;
}

std::size_t GradientMap::size() const {
  return static_cast<std::size_t>(
      std::count_if(grads_.begin(), grads_.end(), [](const auto& g) { return g.has_value(); }));
}

// ---------------------------------------------------------------- Tape: forward

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

void Tape::check_var(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
}

bool Tape::any_requires_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(),
                     [&](Var v) { return nodes_[v.id].requires_grad; });
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Tape::parameter(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  check_var(a);
  check_var(b);
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + av.shape_str() + " x " +
                         bv.shape_str());
  }
  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a.id, b.id};
  n.value = matmul_raw(av, false, bv, false);
  n.requires_grad = any_requires_grad({a, b});
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check_var(a);
  check_var(b);
  require_same_shape(value(a), value(b), "add");
  Node n;
  n.kind = OpKind::Add;
  n.inputs = {a.id, b.id};
  n.value = value(a);
  add_into(n.value, value(b));
  n.requires_grad = any_requires_grad({a, b});
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  check_var(a);
  check_var(b);
  require_same_shape(value(a), value(b), "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a.id, b.id};
  n.value = value(a);
  const auto bv = value(b).values();
  auto& out = n.value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  n.requires_grad = any_requires_grad({a, b});
  return push(std::move(n));
}

namespace {

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out = x;
  for (auto& v : out.data()) v = f(v);
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var Tape::neg(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Neg;
  n.inputs = {a.id};
  n.value = map_values(value(a), [](double v) { return -v; });
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {a.id};
  // NaN passes through so that divergence reaches the finite-loss check.
  n.value = map_values(value(a), [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; });
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Sigmoid;
  n.inputs = {a.id};
  n.value = map_values(value(a), stable_sigmoid);
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  check_var(a);
  Node n;
  n.kind = OpKind::Exp;
  n.inputs = {a.id};
  n.value = map_values(value(a), [](double v) { return std::exp(v); });
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::log(Var a) {
  check_var(a);
  for (double v : value(a).values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  Node n;
  n.kind = OpKind::Log;
  n.inputs = {a.id};
  n.value = map_values(value(a), [](double v) { return std::log(v); });
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  check_var(a);
  Node n;
  n.kind = OpKind::Scale;
  n.inputs = {a.id};
  n.scalar = factor;
  n.value = map_values(value(a), [factor](double v) { return v * factor; });
  n.requires_grad = any_requires_grad({a});
  return push(std::move(n));
}

Var Tape::add_row(Var x, Var row) {
  check_var(x);
  check_var(row);
  const Tensor& xv = value(x);
  const Tensor& rv = value(row);
  require_matrix(xv, "add_row");
  if (rv.size() != xv.cols() || rv.rows() != 1) {
    throw DimensionError("add_row: row " + rv.shape_str() + " does not match " + xv.shape_str());
  }
  Node n;
  n.kind = OpKind::AddRow;
  n.inputs = {x.id, row.id};
  n.value = xv;
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) n.value.at(r, c) += rv[c];
  n.requires_grad = any_requires_grad({x, row});
  return push(std::move(n));
}

Var Tape::sum(Var x, std::size_t axis) {
  check_var(x);
  const Tensor& xv = value(x);
  if (axis >= xv.rank()) {
    throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for " +
                         xv.shape_str());
  }
  const auto l = layout(xv, axis);
  Tensor out(reduced_shape(xv, axis));
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t e = 0; e < l.extent; ++e)
      for (std::size_t i = 0; i < l.inner; ++i)
        out[o * l.inner + i] += xv[(o * l.extent + e) * l.inner + i];
  Node n;
  n.kind = OpKind::Sum;
  n.inputs = {x.id};
  n.axis = axis;
  n.value = std::move(out);
  n.requires_grad = any_requires_grad({x});
  return push(std::move(n));
}

Var Tape::mean(Var x, std::size_t axis) {
  check_var(x);
  const Tensor& xv = value(x);
  if (axis >= xv.rank()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " +
                         xv.shape_str());
  }
  const auto l = layout(xv, axis);
  Tensor out(reduced_shape(xv, axis));
  for (std::size_t o = 0; o < l.outer; ++o)
    for (std::size_t e = 0; e < l.extent; ++e)
      for (std::size_t i = 0; i < l.inner; ++i)
        out[o * l.inner + i] += xv[(o * l.extent + e) * l.inner + i];
  for (auto& v : out.data()) v /= static_cast<double>(l.extent);
  Node n;
  n.kind = OpKind::Mean;
  n.inputs = {x.id};
  n.axis = axis;
  n.value = std::move(out);
  n.requires_grad = any_requires_grad({x});
  return push(std::move(n));
}

Var Tape::logsumexp(Var x, std::size_t axis) {
  check_var(x);
  const Tensor& xv = value(x);
  if (axis >= xv.rank()) {
    throw DimensionError("logsumexp: axis " + std::to_string(axis) + " out of range for " +
                         xv.shape_str());
  }
  const auto l = layout(xv, axis);
  Tensor out(reduced_shape(xv, axis));
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t i = 0; i < l.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t e = 0; e < l.extent; ++e)
        mx = std::max(mx, xv[(o * l.extent + e) * l.inner + i]);
      double s = 0.0;
      for (std::size_t e = 0; e < l.extent; ++e)
        s += std::exp(xv[(o * l.extent + e) * l.inner + i] - mx);
      out[o * l.inner + i] = mx + std::log(s);
    }
  }
  Node n;
  n.kind = OpKind::LogSumExp;
  n.inputs = {x.id};
  n.axis = axis;
  n.value = std::move(out);
  n.requires_grad = any_requires_grad({x});
  return push(std::move(n));
}

Var Tape::sum_all(Var x) {
  Var v = x;
  for (std::size_t axis = value(x).rank(); axis-- > 0;) v = sum(v, axis);
  return v;
}

Var Tape::mean_all(Var x) {
  const auto count = static_cast<double>(value(x).size());
  return scale(sum_all(x), 1.0 / count);
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> indices) {
  check_var(table);
  const Tensor& tv = value(table);
  require_matrix(tv, "gather_rows");
  const std::size_t d = tv.cols();
  Tensor out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tv.rows()) {
      throw RangeError("gather_rows: index " + std::to_string(indices[r]) +
                       " out of range for table with " + std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.values().begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Node n;
  n.kind = OpKind::GatherRows;
  n.inputs = {table.id};
  n.indices = std::move(indices);
  n.value = std::move(out);
  n.requires_grad = any_requires_grad({table});
  return push(std::move(n));
}

Var Tape::segment_mean(Var x, std::vector<std::size_t> offsets) {
  check_var(x);
  const Tensor& xv = value(x);
  require_matrix(xv, "segment_mean");
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != xv.rows() ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ContractError("segment_mean: offsets must run monotonically from 0 to " +
                        std::to_string(xv.rows()));
  }
  const std::size_t segments = offsets.size() - 1;
  const std::size_t d = xv.cols();
  Tensor out({segments, d});
  for (std::size_t b = 0; b < segments; ++b) {
    const std::size_t count = offsets[b + 1] - offsets[b];
    if (count == 0) continue;
    for (std::size_t r = offsets[b]; r < offsets[b + 1]; ++r)
      for (std::size_t c = 0; c < d; ++c) out.at(b, c) += xv.at(r, c);
    for (std::size_t c = 0; c < d; ++c) out.at(b, c) /= static_cast<double>(count);
  }
  Node n;
  n.kind = OpKind::SegmentMean;
  n.inputs = {x.id};
  n.indices = std::move(offsets);
  n.value = std::move(out);
  n.requires_grad = any_requires_grad({x});
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  std::size_t rows = 0;
  std::size_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    check_var(parts[p]);
    const Tensor& v = value(parts[p]);
    require_matrix(v, "concat_cols");
    if (p == 0) rows = v.rows();
    if (v.rows() != rows) {
      throw DimensionError("concat_cols: row count mismatch " + value(parts[0]).shape_str() +
                           " vs " + v.shape_str());
    }
    total += v.cols();
  }
  Tensor out({rows, total});
  Node n;
  n.kind = OpKind::ConcatCols;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, offset + c) = v.at(r, c);
    offset += v.cols();
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::dropout(Var x, double rate, Mode mode, Rng& rng) {
  check_var(x);
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask(value(x).shape());
  for (auto& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Node n;
  n.kind = OpKind::Dropout;
  n.inputs = {x.id};
  n.value = value(x);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] *= mask[i];
  n.aux = std::move(mask);
  n.requires_grad = any_requires_grad({x});
  return push(std::move(n));
}

// ---------------------------------------------------------------- Tape: backward

GradientMap Tape::backward(Var root) const {
  check_var(root);
  if (value(root).size() != 1) {
    throw ContractError("backward: root must be scalar, got " + value(root).shape_str());
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  if (!nodes_[root.id].requires_grad) return GradientMap(std::move(grads));

  grads[root.id] = Tensor(value(root).shape(), 1.0);

  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!grads[id] || node.kind == OpKind::Leaf) continue;
    const Tensor& g = *grads[id];
    const double corrupt =
        (corrupt_kind_ && *corrupt_kind_ == node.kind) ? corrupt_factor_ : 1.0;

    auto accumulate = [&](std::size_t input, Tensor contribution) {
      if (!nodes_[input].requires_grad) return;
      if (corrupt != 1.0)
        for (auto& v : contribution.data()) v *= corrupt;
      if (grads[input]) {
        add_into(*grads[input], contribution);
      } else {
        grads[input] = std::move(contribution);
      }
    };

    switch (node.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        if (nodes_[node.inputs[0]].requires_grad)
          accumulate(node.inputs[0], matmul_raw(g, false, b, true));
        if (nodes_[node.inputs[1]].requires_grad)
          accumulate(node.inputs[1], matmul_raw(a, true, g, false));
        break;
      }
      case OpKind::Add:
        accumulate(node.inputs[0], g);
        accumulate(node.inputs[1], g);
        break;
      case OpKind::Mul: {
        const Tensor& a = nodes_[node.inputs[0]].value;
        const Tensor& b = nodes_[node.inputs[1]].value;
        Tensor ga = g, gb = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] *= b[i];
          gb[i] *= a[i];
        }
        accumulate(node.inputs[0], std::move(ga));
        accumulate(node.inputs[1], std::move(gb));
        break;
      }
      case OpKind::Neg:
        accumulate(node.inputs[0], map_values(g, [](double v) { return -v; }));
        break;
      case OpKind::Relu: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (!(x[i] > 0.0)) gx[i] = 0.0;
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::Sigmoid: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const double y = node.value[i];
          gx[i] *= y * (1.0 - y);
        }
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::Exp: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= node.value[i];
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::Log: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] /= x[i];
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::Scale: {
        const double f = node.scalar;
        accumulate(node.inputs[0], map_values(g, [f](double v) { return v * f; }));
        break;
      }
      case OpKind::AddRow: {
        accumulate(node.inputs[0], g);
        const Tensor& row = nodes_[node.inputs[1]].value;
        Tensor grow(row.shape());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) grow[c] += g.at(r, c);
        accumulate(node.inputs[1], std::move(grow));
        break;
      }
      case OpKind::Sum:
      case OpKind::Mean: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        const auto l = layout(x, node.axis);
        const double f = node.kind == OpKind::Mean ? 1.0 / static_cast<double>(l.extent) : 1.0;
        Tensor gx(x.shape());
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t e = 0; e < l.extent; ++e)
            for (std::size_t i = 0; i < l.inner; ++i)
              gx[(o * l.extent + e) * l.inner + i] = g[o * l.inner + i] * f;
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::LogSumExp: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        const auto l = layout(x, node.axis);
        Tensor gx(x.shape());
        for (std::size_t o = 0; o < l.outer; ++o)
          for (std::size_t e = 0; e < l.extent; ++e)
            for (std::size_t i = 0; i < l.inner; ++i) {
              const std::size_t xi = (o * l.extent + e) * l.inner + i;
              const std::size_t yi = o * l.inner + i;
              gx[xi] = g[yi] * std::exp(x[xi] - node.value[yi]);
            }
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::GatherRows: {
        const Tensor& table = nodes_[node.inputs[0]].value;
        const std::size_t d = table.cols();
        Tensor gt(table.shape());
        for (std::size_t r = 0; r < node.indices.size(); ++r)
          for (std::size_t c = 0; c < d; ++c) gt.at(node.indices[r], c) += g.at(r, c);
        accumulate(node.inputs[0], std::move(gt));
        break;
      }
      case OpKind::SegmentMean: {
        const Tensor& x = nodes_[node.inputs[0]].value;
        Tensor gx(x.shape());
        const auto& off = node.indices;
        for (std::size_t b = 0; b + 1 < off.size(); ++b) {
          const std::size_t count = off[b + 1] - off[b];
          for (std::size_t r = off[b]; r < off[b + 1]; ++r)
            for (std::size_t c = 0; c < x.cols(); ++c)
              gx.at(r, c) = g.at(b, c) / static_cast<double>(count);
        }
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
      case OpKind::ConcatCols: {
        std::size_t offset = 0;
        for (std::size_t input : node.inputs) {
          const Tensor& part = nodes_[input].value;
          Tensor gp(part.shape());
          for (std::size_t r = 0; r < part.rows(); ++r)
            for (std::size_t c = 0; c < part.cols(); ++c) gp.at(r, c) = g.at(r, offset + c);
          offset += part.cols();
          accumulate(input, std::move(gp));
        }
        break;
      }
      case OpKind::Dropout: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= node.aux[i];
        accumulate(node.inputs[0], std::move(gx));
        break;
      }
    }
  }
  return GradientMap(std::move(grads));
}

}  // namespace dlrrec::ad
