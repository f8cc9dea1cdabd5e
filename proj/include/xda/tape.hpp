#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "xda/tensor.hpp"

namespace xda {

class Tape;

/// Handle to a node on a tape.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense tensors. Nodes are recorded in creation
/// order, which is a topological order by construction; backward() walks the
/// ancestors of the loss exactly once in reverse.
///
/// A tape is single-threaded; independent tapes may live on different
/// threads.
class Tape {
 public:
  /// Receives the output adjoint and accumulates into the input adjoints.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

  /// Registers an external tensor. Its storage is referenced, not copied;
  /// backward() deposits gradients into `t.grad` when t.requires_grad.
  Var leaf(Tensor& t);

  /// Owned value that is never differentiated.
  Var constant(Tensor value);

  /// Records an op node. `bwd` may be empty for constants.
  Var node(Tensor value, std::span<const Var> inputs, BackwardFn bwd);

  const Tensor& value(Var v) const;
  double scalar_value(Var v) const;
  bool needs_grad(Var v) const;

  /// Adjoint accumulation buffer, valid while backward() runs.
  std::vector<double>& adjoint(Var v);
  bool has_adjoint(Var v) const;

  /// Populates `grad` on every registered requires_grad leaf: the adjoint of
  /// the given scalar loss, or exact zeros for leaves the loss never touched.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

  /// Forward-value NaN/Inf guard, meant for test builds; off by default.
  static void set_finite_checks(bool on);
  static bool finite_checks();

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    std::vector<Var> inputs;
    BackwardFn bwd;
    std::vector<double> adj;
    bool needs_grad = false;
  };

  const Node& at(Var v) const;
  Node& at(Var v);

  std::vector<Node> nodes_;
};

// Graph-building operations. Shape violations throw DimensionError naming
// the offending shapes; precondition violations throw ContractError.

/// x[B,I] * W[I,O] + b[O] -> [B,O]
Var affine(Tape& t, Var x, Var w, Var b);

/// Elementwise max(0, x); subgradient at 0 is 0.
Var relu(Tape& t, Var x);

/// Elementwise logistic function, overflow-safe for large |x|.
Var sigmoid(Tape& t, Var x);

/// out[i,j] = ||A_i - B_j||_2 for A[M,D], B[N,D]. The derivative of sqrt at
/// zero distance is taken as 0 so coincident points do not poison gradients.
Var pairwise_euclidean(Tape& t, Var a, Var b);

/// Row subset of a [B,D] matrix; backward scatter-adds.
Var gather_rows(Tape& t, Var x, std::vector<int64_t> rows);

Var sum_all(Tape& t, Var x);
Var mean_all(Tape& t, Var x);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_const(Tape& t, Var a, double c);

/// Mean binary cross entropy over the batch. Probabilities are clamped to
/// [1e-12, 1-1e-12] before the logs; labels must be exactly 0 or 1.
Var bce_mean(Tape& t, Var probs, const Tensor& labels);

/// Stride-1 valid-padding convolution: x[B,H,W], k[C,KH,KW], bias[C]
/// -> [B,C,H-KH+1,W-KW+1].
Var conv2d(Tape& t, Var x, Var k, Var bias);

/// [B, ...] -> [B, prod(rest)]
Var flatten_rows(Tape& t, Var x);

}  // namespace xda
