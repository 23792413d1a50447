#pragma once

#include <string>
#include <vector>

#include "ec2lab/numerics/param.hpp"
#include "ec2lab/numerics/tape.hpp"

namespace ec2lab::num {

// Fully connected layer, y = x W + b, with W stored {in, out}.
struct Linear {
  Parameter* W = nullptr;
  Parameter* b = nullptr;

  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, size_t in, size_t out,
         Rng& rng);

  Var apply(Tape& t, Var x) const;
  Array apply_plain(const Array& x) const;
  size_t in_dim() const { return W->value.rows(); }
  size_t out_dim() const { return W->value.cols(); }
};

enum class Act { None, ReLU, GELU, Tanh };

// MLP over row batches. Activation is applied between layers, never after the
// last one. With batchnorm=true a batch-norm stage runs on the input and after
// every activation; running stats live in Parameters (excluded from training)
// so they travel with checkpoints.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<Parameter*> bn_gamma, bn_beta, bn_rmean, bn_rvar;
  Act act = Act::GELU;
  bool batchnorm = false;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, size_t in,
      const std::vector<size_t>& hidden, size_t out, Act act, bool batchnorm,
      Rng& rng);

  // training=true uses batch statistics (requires >= 2 rows when batchnorm);
  // training=false uses running statistics and is fully deterministic.
  Var apply(Tape& t, Var x, bool training) const;
  Array apply_plain(const Array& x) const;  // eval mode only

  // Parameters the optimizer should touch (running stats excluded).
  std::vector<Parameter*> trainable() const;
};

// GRU cell with separate per-gate weights, PyTorch update convention:
//   r = sigm(x Wir + bir + h Whr + bhr)
//   z = sigm(x Wiz + biz + h Whz + bhz)
//   n = tanh(x Win + bin + r * (h Whn + bhn))
//   h' = (1 - z) * n + z * h
struct GruCell {
  Parameter *Wir = nullptr, *Wiz = nullptr, *Win = nullptr;
  Parameter *Whr = nullptr, *Whz = nullptr, *Whn = nullptr;
  Parameter *bir = nullptr, *biz = nullptr, *bin = nullptr;
  Parameter *bhr = nullptr, *bhz = nullptr, *bhn = nullptr;

  GruCell() = default;
  GruCell(ParamStore& store, const std::string& prefix, size_t in, size_t hidden,
          Rng& rng);

  // x {B, in}, h {B, hidden} -> {B, hidden}
  Var step(Tape& t, Var x, Var h) const;
  Array step_plain(const Array& x, const Array& h) const;
  size_t hidden_dim() const { return Whr->value.rows(); }
};

struct TransformerConfig {
  size_t n_layer = 2;
  size_t n_head = 2;
  size_t d_model = 16;
  size_t max_len = 64;
  size_t d_ff() const { return 4 * d_model; }
};

// Pre-LN causal transformer stack (no token/position embeddings; callers own
// those). Exposes a whole-sequence forward for training and a one-position
// step with grown K/V caches for incremental decoding; both go through the
// same kernels, so values agree bit-for-bit.
struct TransformerStack {
  struct Block {
    Parameter *ln1_g, *ln1_b;
    Linear wq, wk, wv, wo;
    Parameter *ln2_g, *ln2_b;
    Linear fc1, fc2;
  };

  TransformerConfig cfg;
  std::vector<Block> blocks;
  Parameter *lnf_g = nullptr, *lnf_b = nullptr;

  TransformerStack() = default;
  TransformerStack(ParamStore& store, const std::string& prefix,
                   const TransformerConfig& cfg, Rng& rng);

  // x {L, d} -> {L, d}, causal attention, final layer norm applied.
  Var forward_seq(Tape& t, Var x) const;
  Array forward_seq_plain(const Array& x) const;

  // Per-layer K/V caches, grown one row per step.
  struct KvCache {
    std::vector<Var> k, v;
  };
  struct KvCacheArr {
    std::vector<Array> k, v;
    size_t len() const { return k.empty() || k[0].data.empty() ? 0 : k[0].rows(); }
  };

  // x {1, d}; appends this position's K/V to the cache and returns the output
  // row (final layer norm applied). Throws once the cache would exceed max_len.
  Var step(Tape& t, Var x, KvCache& cache) const;
  Array step_plain(const Array& x, KvCacheArr& cache) const;

  // B independent items advance one position each on a single tape. Cache rows
  // are interleaved (row t*B + i is item i at time t) and an additive mask
  // restricts each item to its own rows, which reproduces per-item attention
  // exactly: masked entries underflow to probability zero.
  struct KvBatch {
    size_t batch = 0;
    std::vector<Var> k, v;
    size_t len() const { return k.empty() || !k[0].valid() ? 0 : k[0].val().rows() / batch; }
  };
  Var step_batch(Tape& t, Var x, KvBatch& cache) const;  // x {B, d} -> {B, d}
};

// Spec-level convenience wrappers over the structs above.
inline Var mlp_forward(Tape& t, const Mlp& mlp, Var x, bool training) {
  return mlp.apply(t, x, training);
}
inline Var gru_step(Tape& t, const GruCell& cell, Var x, Var h) {
  return cell.step(t, x, h);
}
inline Var transformer_forward(Tape& t, const TransformerStack& stack, Var x) {
  return stack.forward_seq(t, x);
}

}  // namespace ec2lab::num
