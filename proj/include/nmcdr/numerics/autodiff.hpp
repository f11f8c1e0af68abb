#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nmcdr/numerics/tensor.hpp"

namespace nmcdr::num {

/// Raised on misuse of a Tape (stale values, foreign handles, bad seeds).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

/// Compressed sparse rows: out[r] = Σ_k weight[k] · x[index[k]] for k in [offsets[r], offsets[r+1]).
struct SparseRows {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> index;
  std::vector<double> weight;

  std::size_t rows() const noexcept { return offsets.size() - 1; }
  /// Appends a row averaging `members` (an empty row contributes zero).
  void push_mean_row(const std::vector<std::size_t>& members);
  void push_row(const std::vector<std::size_t>& members, const std::vector<double>& weights);
};

using Gradients = std::map<std::string, Tensor>;

enum class OpKind {
  Parameter,
  Constant,
  MatMul,
  Add,
  AddRow,
  Sub,
  Hadamard,
  MulCol,
  Scale,
  AddScalar,
  GatherRows,
  ScatterAddRows,
  Aggregate,
  RowSlice,
  Sigmoid,
  Tanh,
  Relu,
  Softplus,
  SoftmaxRows,
  SegmentSoftmax,
  ConcatCols,
  RowDot,
  ReduceSum,
  BceWithLogits,
};

std::string_view op_name(OpKind kind) noexcept;

/// Define-by-run computation record. Every op is evaluated as it is appended and
/// its inputs precede it, so node order is a topological order. `forward()`
/// replays the record against the current leaf values; `backward()` walks the
/// nodes in exact reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Named leaf that receives a gradient.
  Var parameter(std::string name, Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  Var matmul(Var a, Var b);
  /// a + b for equal shapes; `b` may also be a 1×cols row broadcast over rows of `a`.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  /// Multiplies row r of `a` by c[r]; `c` is rows×1.
  Var mul_col(Var a, Var c);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  /// 1 − a, elementwise.
  Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

  Var gather_rows(Var a, std::vector<std::size_t> index);
  /// out[index[k]] += a[k]; output has `out_rows` rows.
  Var scatter_add_rows(Var a, std::vector<std::size_t> index, std::size_t out_rows);
  Var aggregate(Var a, std::shared_ptr<const SparseRows> rows);
  Var row_slice(Var a, std::size_t begin, std::size_t count);

  Var sigmoid(Var a);
  Var tanh(Var a);
  /// ReLU; subgradient 0 at 0.
  Var relu(Var a);
  Var softplus(Var a);
  Var softmax_rows(Var a);
  /// Softmax of an n×1 column within segments [offsets[s], offsets[s+1]).
  Var segment_softmax(Var scores, std::vector<std::size_t> offsets);
  Var concat_cols(Var a, Var b);
  /// Per-row inner product of equal-shaped a and b; rows×1.
  Var row_dot(Var a, Var b);
  /// Sum of all entries; 1×1.
  Var reduce_sum(Var a);
  Var mean(Var a);
  /// Elementwise binary cross-entropy from logits (rows×1) against 0/1 labels.
  Var bce_with_logits(Var logits, std::vector<double> labels);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() w.r.t. `v`; zero-shaped if unreached.
  const Tensor& grad(Var v) const;

  /// Replaces a leaf value; the record becomes stale until forward() runs.
  void set_value(Var leaf, Tensor value);
  /// Re-evaluates every node from the current leaves. Returns the terminal value.
  const Tensor& forward();
  /// Reverse pass from `out` seeded with `seed`; returns gradients of every named
  /// parameter (zeros for parameters `out` does not depend on).
  Gradients backward(Var out, const Tensor& seed);
  /// Reverse pass from a 1×1 output with seed 1.
  Gradients backward(Var out);

  std::size_t size() const noexcept { return nodes_.size(); }
  Var terminal() const noexcept { return nodes_.empty() ? Var{} : Var{nodes_.size() - 1}; }
  OpKind kind(Var v) const;
  /// Handles of all named parameters, in creation order.
  std::vector<std::pair<std::string, Var>> parameters() const;

 private:
  struct Node {
    OpKind kind = OpKind::Constant;
    Var a;
    Var b;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    double scalar = 0.0;
    std::size_t extent = 0;  // out_rows for scatter, begin for slices
    std::string name;
    std::shared_ptr<const std::vector<std::size_t>> index;
    std::shared_ptr<const SparseRows> sparse;
    std::shared_ptr<const std::vector<double>> labels;
  };

  static Node make(OpKind kind, Var a, Var b = {});
  Var push(Node node);
  const Node& node(Var v) const;
  void compute(Node& n, std::size_t op_index);
  void propagate(Node& n);
  std::string where(std::size_t op_index, OpKind kind) const;

  std::vector<Node> nodes_;
  bool stale_ = false;
};

}  // namespace nmcdr::num
