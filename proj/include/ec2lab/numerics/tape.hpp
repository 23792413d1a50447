#pragma once

#include <functional>
#include <map>
#include <vector>

#include "ec2lab/numerics/array.hpp"
#include "ec2lab/numerics/param.hpp"

namespace ec2lab::num {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
  const Array& val() const;
};

// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
// creation order is already a topological order and backward() is a single
// reverse sweep. Leaf nodes write their gradient straight into Parameter::grad.
class Tape {
 public:
  using BwdFn = std::function<void(Tape&, int, const Array&)>;

  Var constant(Array value);
  // One leaf per parameter per tape; repeated calls return the cached node.
  Var leaf(Parameter* p);

  const Array& value_of(int idx) const { return nodes_[idx].value; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. loss must be a
  // scalar node. Gradients accumulate into Parameter::grad buffers.
  void backward(Var loss);

  // Used by op implementations.
  Var emit(Array value, BwdFn bwd);
  void accum(int idx, const Array& g);
  void accum_scaled(int idx, const Array& g, double s);

 private:
  struct Node {
    Array value;
    BwdFn bwd;  // empty for constants
  };
  std::vector<Node> nodes_;
  std::vector<Array> grads_;  // populated during backward
  std::map<Parameter*, int> leaf_cache_;
};

// ---- tape ops ----
// All ops validate shapes and throw std::invalid_argument on mismatch.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);       // elementwise
Var scale(Var a, double s);
Var square(Var a);
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var add_rowvec(Var m, Var v);
Var gelu(Var a);
Var relu(Var a);
Var tanh_v(Var a);
Var sigmoid_v(Var a);
Var sum_all(Var a);    // -> scalar
Var mean_all(Var a);   // -> scalar
Var reshape(Var a, const std::vector<size_t>& shape);  // row-major relabel
Var slice_rows(Var a, size_t start, size_t len);
Var slice_cols(Var a, size_t start, size_t len);
Var concat_rows(Var a, Var b);
Var concat_cols(const std::vector<Var>& parts);
Var softmax_rows(Var a, bool causal = false);
Var layernorm_rows(Var x, Var gamma, Var beta);
// Gathers rows of a table; backward scatter-adds into the table rows.
Var embedding_lookup(Var table, const std::vector<size_t>& ids);
// Fused log-softmax cross-entropy over a score vector: logsumexp(s) - s[target].
// Stable for scores up to ~1e8.
Var ce_with_logits(Var scores, size_t target);
// Elementwise y = 1 / max(eps, x); zero gradient on the clamped branch.
Var inv_clamped(Var a, double eps);
// Re-enters a value as a constant, cutting the gradient path.
Var detach(Var a);

// Gumbel-softmax relaxation. Noise is drawn from rng at call time. With
// hard=true the forward value is the one-hot argmax while the backward pass
// uses the soft distribution (straight-through). tau must be > 0; non-finite
// logits raise NumericError.
Var gumbel_softmax_sample(Var logits, double tau, Rng& rng, bool hard);

// Train-mode batch norm over rows of x {B, C}; requires B >= 2 (batch
// statistics are undefined for a single sample). Normalizes by batch stats and
// EMA-updates the caller's running stats in place (initialize them to mean 0,
// var 1). Eval mode is k_batchnorm_eval on the running stats.
Var batchnorm_train(Var x, Var gamma, Var beta, Array& running_mean,
                    Array& running_var, double momentum = 0.1);

}  // namespace ec2lab::num
