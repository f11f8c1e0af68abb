#include "nmcdr/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nmcdr::num {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void ensure_grad(Tensor& g, const Tensor& like) {
  if (g.empty() && !like.empty()) g = Tensor(like.rows(), like.cols());
}

}  // namespace

void SparseRows::push_mean_row(const std::vector<std::size_t>& members) {
  const double w = members.empty() ? 0.0 : 1.0 / static_cast<double>(members.size());
  for (std::size_t m : members) {
    index.push_back(m);
    weight.push_back(w);
  }
  offsets.push_back(index.size());
}

void SparseRows::push_row(const std::vector<std::size_t>& members, const std::vector<double>& weights) {
  if (members.size() != weights.size()) throw ShapeError("sparse row: members and weights differ in length");
  index.insert(index.end(), members.begin(), members.end());
  weight.insert(weight.end(), weights.begin(), weights.end());
  offsets.push_back(index.size());
}

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add-row";
    case OpKind::Sub: return "sub";
    case OpKind::Hadamard: return "hadamard";
    case OpKind::MulCol: return "mul-col";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add-scalar";
    case OpKind::GatherRows: return "row-gather";
    case OpKind::ScatterAddRows: return "row-scatter-add";
    case OpKind::Aggregate: return "aggregate";
    case OpKind::RowSlice: return "row-slice";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::SoftmaxRows: return "softmax-row";
    case OpKind::SegmentSoftmax: return "segment-softmax";
    case OpKind::ConcatCols: return "concat-cols";
    case OpKind::RowDot: return "row-dot";
    case OpKind::ReduceSum: return "reduce-sum";
    case OpKind::BceWithLogits: return "bce-with-logits";
  }
  return "unknown";
}

std::string Tape::where(std::size_t op_index, OpKind kind) const {
  std::ostringstream s;
  s << op_name(kind) << " (op #" << op_index << ")";
  return s.str();
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

OpKind Tape::kind(Var v) const { return node(v).kind; }

Var Tape::push(Node n) {
  const std::size_t id = nodes_.size();
  if (n.a.valid()) node(n.a);
  if (n.b.valid()) node(n.b);
  n.needs_grad = n.kind == OpKind::Parameter ||
                 (n.a.valid() && nodes_[n.a.id].needs_grad) || (n.b.valid() && nodes_[n.b.id].needs_grad);
  nodes_.push_back(std::move(n));
  compute(nodes_.back(), id);
  return Var{id};
}

Var Tape::parameter(std::string name, Tensor value) {
  if (name.empty()) throw UsageError("parameters need a name");
  Node n;
  n.kind = OpKind::Parameter;
  n.name = std::move(name);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::Node Tape::make(OpKind kind, Var a, Var b) {
  Node n;
  n.kind = kind;
  n.a = a;
  n.b = b;
  return n;
}

Var Tape::matmul(Var a, Var b) { return push(make(OpKind::MatMul, a, b)); }

Var Tape::add(Var a, Var b) {
  const auto& va = node(a).value;
  const auto& vb = node(b).value;
  const bool row_broadcast = vb.rows() == 1 && va.rows() != 1 && vb.cols() == va.cols();
  return push(make(row_broadcast ? OpKind::AddRow : OpKind::Add, a, b));
}

Var Tape::sub(Var a, Var b) { return push(make(OpKind::Sub, a, b)); }
Var Tape::hadamard(Var a, Var b) { return push(make(OpKind::Hadamard, a, b)); }
Var Tape::mul_col(Var a, Var c) { return push(make(OpKind::MulCol, a, c)); }

Var Tape::scale(Var a, double s) {
  auto n = make(OpKind::Scale, a);
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
  auto n = make(OpKind::AddScalar, a);
  n.scalar = s;
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> index) {
  auto n = make(OpKind::GatherRows, a);
  n.index = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  return push(std::move(n));
}

Var Tape::scatter_add_rows(Var a, std::vector<std::size_t> index, std::size_t out_rows) {
  auto n = make(OpKind::ScatterAddRows, a);
  n.index = std::make_shared<const std::vector<std::size_t>>(std::move(index));
  n.extent = out_rows;
  return push(std::move(n));
}

Var Tape::aggregate(Var a, std::shared_ptr<const SparseRows> rows) {
  if (!rows) throw UsageError("aggregate: null sparse rows");
  auto n = make(OpKind::Aggregate, a);
  n.sparse = std::move(rows);
  return push(std::move(n));
}

Var Tape::row_slice(Var a, std::size_t begin, std::size_t count) {
  auto n = make(OpKind::RowSlice, a);
  n.extent = begin;
  n.scalar = static_cast<double>(count);
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) { return push(make(OpKind::Sigmoid, a)); }
Var Tape::tanh(Var a) { return push(make(OpKind::Tanh, a)); }
Var Tape::relu(Var a) { return push(make(OpKind::Relu, a)); }
Var Tape::softplus(Var a) { return push(make(OpKind::Softplus, a)); }
Var Tape::softmax_rows(Var a) { return push(make(OpKind::SoftmaxRows, a)); }

Var Tape::segment_softmax(Var scores, std::vector<std::size_t> offsets) {
  auto n = make(OpKind::SegmentSoftmax, scores);
  n.index = std::make_shared<const std::vector<std::size_t>>(std::move(offsets));
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) { return push(make(OpKind::ConcatCols, a, b)); }
Var Tape::row_dot(Var a, Var b) { return push(make(OpKind::RowDot, a, b)); }
Var Tape::reduce_sum(Var a) { return push(make(OpKind::ReduceSum, a)); }

Var Tape::mean(Var a) {
  const auto count = node(a).value.size();
  if (count == 0) throw ShapeError("mean of an empty tensor");
  return scale(reduce_sum(a), 1.0 / static_cast<double>(count));
}

Var Tape::bce_with_logits(Var logits, std::vector<double> labels) {
  auto n = make(OpKind::BceWithLogits, logits);
  n.labels = std::make_shared<const std::vector<double>>(std::move(labels));
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
const Tensor& Tape::grad(Var v) const { return node(v).grad; }

void Tape::set_value(Var leaf, Tensor value) {
  node(leaf);
  auto& n = nodes_[leaf.id];
  if (n.kind != OpKind::Parameter && n.kind != OpKind::Constant) throw UsageError("set_value on a non-leaf node");
  if (!n.value.same_shape(value)) {
    throw ShapeError("set_value: " + n.value.shape_str() + " vs " + value.shape_str());
  }
  n.value = std::move(value);
  stale_ = true;
}

const Tensor& Tape::forward() {
  if (nodes_.empty()) throw UsageError("forward on an empty tape");
  for (std::size_t i = 0; i < nodes_.size(); ++i) compute(nodes_[i], i);
  stale_ = false;
  return nodes_.back().value;
}

std::vector<std::pair<std::string, Var>> Tape::parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].kind == OpKind::Parameter) out.emplace_back(nodes_[i].name, Var{i});
  return out;
}

Gradients Tape::backward(Var out) {
  const auto& v = node(out).value;
  if (v.rows() != 1 || v.cols() != 1) throw UsageError("backward without seed needs a 1x1 output, got " + v.shape_str());
  return backward(out, Tensor(1, 1, 1.0));
}

Gradients Tape::backward(Var out, const Tensor& seed) {
  if (stale_) throw UsageError("backward called before forward: leaf values changed since the last evaluation");
  const auto& terminal = node(out);
  if (!terminal.value.same_shape(seed)) {
    throw ShapeError("backward seed " + seed.shape_str() + " does not match output " + terminal.value.shape_str());
  }
  for (auto& n : nodes_) n.grad = Tensor();
  auto& root = nodes_[out.id];
  if (root.needs_grad) root.grad = seed;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.grad.empty() || !n.needs_grad) continue;
    propagate(n);
  }
  Gradients grads;
  for (auto& n : nodes_) {
    if (n.kind != OpKind::Parameter) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad;
    auto [it, inserted] = grads.try_emplace(n.name, std::move(g));
    if (!inserted) {
      // The same name registered twice shares one gradient.
      for (std::size_t k = 0; k < it->second.size(); ++k) it->second[k] += n.grad.empty() ? 0.0 : n.grad[k];
    }
  }
  return grads;
}

void Tape::compute(Node& n, std::size_t op_index) {
  auto mismatch = [&](const Tensor& x, const Tensor& y) {
    return ShapeError(where(op_index, n.kind) + ": " + x.shape_str() + " vs " + y.shape_str());
  };
  const Tensor* a = n.a.valid() ? &nodes_[n.a.id].value : nullptr;
  const Tensor* b = n.b.valid() ? &nodes_[n.b.id].value : nullptr;
  Tensor& out = n.value;

  switch (n.kind) {
    case OpKind::Parameter:
    case OpKind::Constant:
      break;
    case OpKind::MatMul:
      if (a->cols() != b->rows()) throw mismatch(*a, *b);
      if (!(out.rows() == a->rows() && out.cols() == b->cols())) out = Tensor(a->rows(), b->cols());
      matmul_into(*a, *b, out);
      break;
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Hadamard: {
      if (!a->same_shape(*b)) throw mismatch(*a, *b);
      out = *a;
      const auto& bv = b->values();
      auto ov = out.values();
      if (n.kind == OpKind::Add)
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
      else if (n.kind == OpKind::Sub)
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
      else
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
      break;
    }
    case OpKind::AddRow:
      if (b->rows() != 1 || b->cols() != a->cols()) throw mismatch(*a, *b);
      out = *a;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += (*b)[c];
      }
      break;
    case OpKind::MulCol:
      if (b->cols() != 1 || b->rows() != a->rows()) throw mismatch(*a, *b);
      out = *a;
      for (std::size_t r = 0; r < out.rows(); ++r)
        for (auto& x : out.row_span(r)) x *= (*b)[r];
      break;
    case OpKind::Scale:
      out = *a;
      for (auto& x : out.values()) x *= n.scalar;
      break;
    case OpKind::AddScalar:
      out = *a;
      for (auto& x : out.values()) x += n.scalar;
      break;
    case OpKind::GatherRows: {
      const auto& idx = *n.index;
      out = Tensor(idx.size(), a->cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a->rows()) {
          throw ShapeError(where(op_index, n.kind) + ": row " + std::to_string(idx[r]) + " out of range for " +
                           a->shape_str());
        }
        std::copy_n(a->data() + idx[r] * a->cols(), a->cols(), out.data() + r * a->cols());
      }
      break;
    }
    case OpKind::ScatterAddRows: {
      const auto& idx = *n.index;
      if (idx.size() != a->rows()) {
        throw ShapeError(where(op_index, n.kind) + ": " + std::to_string(idx.size()) + " indices for " +
                         a->shape_str());
      }
      out = Tensor(n.extent, a->cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= n.extent) {
          throw ShapeError(where(op_index, n.kind) + ": target row " + std::to_string(idx[r]) + " >= " +
                           std::to_string(n.extent));
        }
        auto dst = out.row_span(idx[r]);
        auto src = a->row_span(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
      }
      break;
    }
    case OpKind::Aggregate: {
      const auto& sp = *n.sparse;
      out = Tensor(sp.rows(), a->cols());
      for (std::size_t r = 0; r < sp.rows(); ++r) {
        auto dst = out.row_span(r);
        for (std::size_t k = sp.offsets[r]; k < sp.offsets[r + 1]; ++k) {
          if (sp.index[k] >= a->rows()) {
            throw ShapeError(where(op_index, n.kind) + ": source row " + std::to_string(sp.index[k]) +
                             " out of range for " + a->shape_str());
          }
          const double w = sp.weight[k];
          auto src = a->row_span(sp.index[k]);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
        }
      }
      break;
    }
    case OpKind::RowSlice: {
      const auto count = static_cast<std::size_t>(n.scalar);
      if (n.extent + count > a->rows()) {
        throw ShapeError(where(op_index, n.kind) + ": rows [" + std::to_string(n.extent) + ", " +
                         std::to_string(n.extent + count) + ") of " + a->shape_str());
      }
      out = Tensor(count, a->cols());
      std::copy_n(a->data() + n.extent * a->cols(), count * a->cols(), out.data());
      break;
    }
    case OpKind::Sigmoid:
      out = *a;
      for (auto& x : out.values()) x = stable_sigmoid(x);
      break;
    case OpKind::Tanh:
      out = *a;
      for (auto& x : out.values()) x = std::tanh(x);
      break;
    case OpKind::Relu:
      out = *a;
      for (auto& x : out.values()) x = x > 0.0 ? x : 0.0;
      break;
    case OpKind::Softplus:
      out = *a;
      for (auto& x : out.values()) x = stable_softplus(x);
      break;
    case OpKind::SoftmaxRows:
      out = *a;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row_span(r);
        if (row.empty()) continue;
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (auto& x : row) {
          x = std::exp(x - mx);
          z += x;
        }
        for (auto& x : row) x /= z;
      }
      break;
    case OpKind::SegmentSoftmax: {
      const auto& off = *n.index;
      if (a->cols() != 1 || off.empty() || off.back() != a->rows()) {
        throw ShapeError(where(op_index, n.kind) + ": segments do not cover " + a->shape_str());
      }
      out = *a;
      for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        if (off[s] >= off[s + 1]) continue;
        double mx = out[off[s]];
        for (std::size_t e = off[s]; e < off[s + 1]; ++e) mx = std::max(mx, out[e]);
        double z = 0.0;
        for (std::size_t e = off[s]; e < off[s + 1]; ++e) {
          out[e] = std::exp(out[e] - mx);
          z += out[e];
        }
        for (std::size_t e = off[s]; e < off[s + 1]; ++e) out[e] /= z;
      }
      break;
    }
    case OpKind::ConcatCols:
      if (a->rows() != b->rows()) throw mismatch(*a, *b);
      out = Tensor(a->rows(), a->cols() + b->cols());
      for (std::size_t r = 0; r < a->rows(); ++r) {
        std::copy_n(a->data() + r * a->cols(), a->cols(), out.data() + r * out.cols());
        std::copy_n(b->data() + r * b->cols(), b->cols(), out.data() + r * out.cols() + a->cols());
      }
      break;
    case OpKind::RowDot:
      if (!a->same_shape(*b)) throw mismatch(*a, *b);
      out = Tensor(a->rows(), 1);
      for (std::size_t r = 0; r < a->rows(); ++r) {
        auto x = a->row_span(r);
        auto y = b->row_span(r);
        double s = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) s += x[c] * y[c];
        out[r] = s;
      }
      break;
    case OpKind::ReduceSum:
      out = Tensor(1, 1, a->sum());
      break;
    case OpKind::BceWithLogits: {
      const auto& y = *n.labels;
      if (a->cols() != 1 || a->rows() != y.size()) {
        throw ShapeError(where(op_index, n.kind) + ": logits " + a->shape_str() + " vs " +
                         std::to_string(y.size()) + " labels");
      }
      out = Tensor(a->rows(), 1);
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double x = (*a)[i];
        // max(x,0) − x·y + log(1 + e^{−|x|})
        out[i] = std::max(x, 0.0) - x * y[i] + std::log1p(std::exp(-std::abs(x)));
      }
      break;
    }
  }

  if (n.kind != OpKind::Parameter && n.kind != OpKind::Constant && !out.all_finite()) {
    throw NumericError(where(op_index, n.kind) + " produced a non-finite value");
  }
}

void Tape::propagate(Node& n) {
  const Tensor& g = n.grad;
  Node* na = n.a.valid() ? &nodes_[n.a.id] : nullptr;
  Node* nb = n.b.valid() ? &nodes_[n.b.id] : nullptr;
  const bool ga = na && na->needs_grad;
  const bool gb = nb && nb->needs_grad;
  if (ga) ensure_grad(na->grad, na->value);
  if (gb) ensure_grad(nb->grad, nb->value);

  switch (n.kind) {
    case OpKind::Parameter:
    case OpKind::Constant:
      break;
    case OpKind::MatMul:
      if (ga) matmul_bt_into(g, nb->value, na->grad, true);
      if (gb) matmul_at_into(na->value, g, nb->grad, true);
      break;
    case OpKind::Add:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i];
      if (gb) for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i];
      break;
    case OpKind::Sub:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i];
      if (gb) for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] -= g[i];
      break;
    case OpKind::Hadamard:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * nb->value[i];
      if (gb) for (std::size_t i = 0; i < g.size(); ++i) nb->grad[i] += g[i] * na->value[i];
      break;
    case OpKind::AddRow:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i];
      if (gb)
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row_span(r);
          for (std::size_t c = 0; c < row.size(); ++c) nb->grad[c] += row[c];
        }
      break;
    case OpKind::MulCol:
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto grow = g.row_span(r);
        const double cr = nb->value[r];
        if (ga) {
          auto dst = na->grad.row_span(r);
          for (std::size_t c = 0; c < grow.size(); ++c) dst[c] += grow[c] * cr;
        }
        if (gb) {
          auto arow = na->value.row_span(r);
          double s = 0.0;
          for (std::size_t c = 0; c < grow.size(); ++c) s += grow[c] * arow[c];
          nb->grad[r] += s;
        }
      }
      break;
    case OpKind::Scale:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * n.scalar;
      break;
    case OpKind::AddScalar:
      if (ga) for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i];
      break;
    case OpKind::GatherRows:
      if (ga) {
        const auto& idx = *n.index;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          auto dst = na->grad.row_span(idx[r]);
          auto src = g.row_span(r);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
      }
      break;
    case OpKind::ScatterAddRows:
      if (ga) {
        const auto& idx = *n.index;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          auto dst = na->grad.row_span(r);
          auto src = g.row_span(idx[r]);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
      }
      break;
    case OpKind::Aggregate:
      if (ga) {
        const auto& sp = *n.sparse;
        for (std::size_t r = 0; r < sp.rows(); ++r) {
          auto src = g.row_span(r);
          for (std::size_t k = sp.offsets[r]; k < sp.offsets[r + 1]; ++k) {
            auto dst = na->grad.row_span(sp.index[k]);
            const double w = sp.weight[k];
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * src[c];
          }
        }
      }
      break;
    case OpKind::RowSlice:
      if (ga) {
        double* dst = na->grad.data() + n.extent * na->value.cols();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      break;
    case OpKind::Sigmoid:
      if (ga)
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = n.value[i];
          na->grad[i] += g[i] * s * (1.0 - s);
        }
      break;
    case OpKind::Tanh:
      if (ga)
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double t = n.value[i];
          na->grad[i] += g[i] * (1.0 - t * t);
        }
      break;
    case OpKind::Relu:
      if (ga)
        for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += na->value[i] > 0.0 ? g[i] : 0.0;
      break;
    case OpKind::Softplus:
      if (ga)
        for (std::size_t i = 0; i < g.size(); ++i) na->grad[i] += g[i] * stable_sigmoid(na->value[i]);
      break;
    case OpKind::SoftmaxRows:
      if (ga)
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto y = n.value.row_span(r);
          auto gy = g.row_span(r);
          double dot = 0.0;
          for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * gy[c];
          auto dst = na->grad.row_span(r);
          for (std::size_t c = 0; c < y.size(); ++c) dst[c] += y[c] * (gy[c] - dot);
        }
      break;
    case OpKind::SegmentSoftmax:
      if (ga) {
        const auto& off = *n.index;
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          double dot = 0.0;
          for (std::size_t e = off[s]; e < off[s + 1]; ++e) dot += n.value[e] * g[e];
          for (std::size_t e = off[s]; e < off[s + 1]; ++e) na->grad[e] += n.value[e] * (g[e] - dot);
        }
      }
      break;
    case OpKind::ConcatCols:
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double* src = g.data() + r * g.cols();
        if (ga) {
          double* dst = na->grad.data() + r * na->value.cols();
          for (std::size_t c = 0; c < na->value.cols(); ++c) dst[c] += src[c];
        }
        if (gb) {
          double* dst = nb->grad.data() + r * nb->value.cols();
          const double* tail = src + na->value.cols();
          for (std::size_t c = 0; c < nb->value.cols(); ++c) dst[c] += tail[c];
        }
      }
      break;
    case OpKind::RowDot:
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const double gr = g[r];
        auto x = na->value.row_span(r);
        auto y = nb->value.row_span(r);
        if (ga) {
          auto dst = na->grad.row_span(r);
          for (std::size_t c = 0; c < x.size(); ++c) dst[c] += gr * y[c];
        }
        if (gb) {
          auto dst = nb->grad.row_span(r);
          for (std::size_t c = 0; c < y.size(); ++c) dst[c] += gr * x[c];
        }
      }
      break;
    case OpKind::ReduceSum:
      if (ga) for (auto& x : na->grad.values()) x += g[0];
      break;
    case OpKind::BceWithLogits:
      if (ga) {
        const auto& y = *n.labels;
        for (std::size_t i = 0; i < y.size(); ++i) na->grad[i] += g[i] * (stable_sigmoid(na->value[i]) - y[i]);
      }
      break;
  }
}

}  // namespace nmcdr::num
