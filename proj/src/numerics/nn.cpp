#include "ec2lab/numerics/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ec2lab::num {

Linear::Linear(ParamStore& store, const std::string& prefix, size_t in,
               size_t out, Rng& rng) {
  W = store.add(prefix + ".weight", init_linear_weight(in, out, rng));
  b = store.add(prefix + ".bias", Array::zeros({out}));
}

Var Linear::apply(Tape& t, Var x) const {
  return add_rowvec(matmul(x, t.leaf(W)), t.leaf(b));
}

Array Linear::apply_plain(const Array& x) const {
  return k_add_rowvec(k_gemm(x, W->value), b->value);
}

static Var activate(Var h, Act act) {
  switch (act) {
    case Act::ReLU: return relu(h);
    case Act::GELU: return gelu(h);
    case Act::Tanh: return tanh_v(h);
    case Act::None: return h;
  }
  throw std::invalid_argument("activate: unknown activation");
}

static Array activate_plain(const Array& h, Act act) {
  switch (act) {
    case Act::ReLU: return k_relu(h);
    case Act::GELU: return k_gelu(h);
    case Act::Tanh: return k_tanh(h);
    case Act::None: return h;
  }
  throw std::invalid_argument("activate_plain: unknown activation");
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, size_t in,
         const std::vector<size_t>& hidden, size_t out, Act act_, bool bn,
         Rng& rng)
    : act(act_), batchnorm(bn) {
  std::vector<size_t> dims;
  dims.push_back(in);
  for (size_t h : hidden) dims.push_back(h);
  dims.push_back(out);
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, prefix + ".l" + std::to_string(i), dims[i],
                        dims[i + 1], rng);
  if (batchnorm) {
    // One BN stage ahead of each linear layer: input plus each hidden.
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      std::string bp = prefix + ".bn" + std::to_string(i);
      bn_gamma.push_back(store.add(bp + ".gamma", Array::full({dims[i]}, 1.0)));
      bn_beta.push_back(store.add(bp + ".beta", Array::zeros({dims[i]})));
      bn_rmean.push_back(store.add(bp + ".running_mean", Array::zeros({dims[i]})));
      bn_rvar.push_back(store.add(bp + ".running_var", Array::full({dims[i]}, 1.0)));
    }
  }
}

Var Mlp::apply(Tape& t, Var x, bool training) const {
  Var h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (batchnorm) {
      if (training) {
        h = batchnorm_train(h, t.leaf(bn_gamma[i]), t.leaf(bn_beta[i]),
                            bn_rmean[i]->value, bn_rvar[i]->value);
      } else {
        h = t.constant(k_batchnorm_eval(h.val(), bn_gamma[i]->value,
                                        bn_beta[i]->value, bn_rmean[i]->value,
                                        bn_rvar[i]->value));
      }
    }
    h = layers[i].apply(t, h);
    if (i + 1 < layers.size()) h = activate(h, act);
  }
  return h;
}

Array Mlp::apply_plain(const Array& x) const {
  Array h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (batchnorm)
      h = k_batchnorm_eval(h, bn_gamma[i]->value, bn_beta[i]->value,
                           bn_rmean[i]->value, bn_rvar[i]->value);
    h = layers[i].apply_plain(h);
    if (i + 1 < layers.size()) h = activate_plain(h, act);
  }
  return h;
}

std::vector<Parameter*> Mlp::trainable() const {
  std::vector<Parameter*> out;
  for (const Linear& l : layers) {
    out.push_back(l.W);
    out.push_back(l.b);
  }
  for (Parameter* p : bn_gamma) out.push_back(p);
  for (Parameter* p : bn_beta) out.push_back(p);
  return out;
}

GruCell::GruCell(ParamStore& store, const std::string& prefix, size_t in,
                 size_t hidden, Rng& rng) {
  auto wi = [&](const char* n) {
    return store.add(prefix + "." + n, init_linear_weight(in, hidden, rng));
  };
  auto wh = [&](const char* n) {
    return store.add(prefix + "." + n, init_linear_weight(hidden, hidden, rng));
  };
  auto bias = [&](const char* n) {
    return store.add(prefix + "." + n, Array::zeros({hidden}));
  };
  Wir = wi("w_ir"); Wiz = wi("w_iz"); Win = wi("w_in");
  Whr = wh("w_hr"); Whz = wh("w_hz"); Whn = wh("w_hn");
  bir = bias("b_ir"); biz = bias("b_iz"); bin = bias("b_in");
  bhr = bias("b_hr"); bhz = bias("b_hz"); bhn = bias("b_hn");
}

Var GruCell::step(Tape& t, Var x, Var h) const {
  if (x.val().rows() != h.val().rows())
    throw std::invalid_argument("GruCell::step: batch mismatch " +
                                x.val().shape_str() + " vs " + h.val().shape_str());
  Var r = sigmoid_v(add(add_rowvec(matmul(x, t.leaf(Wir)), t.leaf(bir)),
                        add_rowvec(matmul(h, t.leaf(Whr)), t.leaf(bhr))));
  Var z = sigmoid_v(add(add_rowvec(matmul(x, t.leaf(Wiz)), t.leaf(biz)),
                        add_rowvec(matmul(h, t.leaf(Whz)), t.leaf(bhz))));
  Var n = tanh_v(add(add_rowvec(matmul(x, t.leaf(Win)), t.leaf(bin)),
                     mul(r, add_rowvec(matmul(h, t.leaf(Whn)), t.leaf(bhn)))));
  // (1 - z) * n + z * h == n + z * (h - n)
  return add(n, mul(z, sub(h, n)));
}

Array GruCell::step_plain(const Array& x, const Array& h) const {
  Array r = k_sigmoid(k_add(k_add_rowvec(k_gemm(x, Wir->value), bir->value),
                            k_add_rowvec(k_gemm(h, Whr->value), bhr->value)));
  Array z = k_sigmoid(k_add(k_add_rowvec(k_gemm(x, Wiz->value), biz->value),
                            k_add_rowvec(k_gemm(h, Whz->value), bhz->value)));
  Array n = k_tanh(k_add(k_add_rowvec(k_gemm(x, Win->value), bin->value),
                         k_mul(r, k_add_rowvec(k_gemm(h, Whn->value), bhn->value))));
  return k_add(n, k_mul(z, k_sub(h, n)));
}

TransformerStack::TransformerStack(ParamStore& store, const std::string& prefix,
                                   const TransformerConfig& c, Rng& rng)
    : cfg(c) {
  if (cfg.d_model % cfg.n_head != 0)
    throw std::invalid_argument("TransformerStack: d_model not divisible by n_head");
  for (size_t l = 0; l < cfg.n_layer; ++l) {
    std::string bp = prefix + ".h" + std::to_string(l);
    Block blk;
    blk.ln1_g = store.add(bp + ".ln1.gamma", Array::full({cfg.d_model}, 1.0));
    blk.ln1_b = store.add(bp + ".ln1.beta", Array::zeros({cfg.d_model}));
    blk.wq = Linear(store, bp + ".attn.q", cfg.d_model, cfg.d_model, rng);
    blk.wk = Linear(store, bp + ".attn.k", cfg.d_model, cfg.d_model, rng);
    blk.wv = Linear(store, bp + ".attn.v", cfg.d_model, cfg.d_model, rng);
    blk.wo = Linear(store, bp + ".attn.o", cfg.d_model, cfg.d_model, rng);
    blk.ln2_g = store.add(bp + ".ln2.gamma", Array::full({cfg.d_model}, 1.0));
    blk.ln2_b = store.add(bp + ".ln2.beta", Array::zeros({cfg.d_model}));
    blk.fc1 = Linear(store, bp + ".mlp.fc1", cfg.d_model, cfg.d_ff(), rng);
    blk.fc2 = Linear(store, bp + ".mlp.fc2", cfg.d_ff(), cfg.d_model, rng);
    blocks.push_back(blk);
  }
  lnf_g = store.add(prefix + ".lnf.gamma", Array::full({cfg.d_model}, 1.0));
  lnf_b = store.add(prefix + ".lnf.beta", Array::zeros({cfg.d_model}));
}

Var TransformerStack::forward_seq(Tape& t, Var x) const {
  size_t L = x.val().rows();
  size_t d = cfg.d_model;
  if (x.val().cols() != d)
    throw std::invalid_argument("TransformerStack: input width " +
                                x.val().shape_str() + " vs d_model " +
                                std::to_string(d));
  if (L > cfg.max_len)
    throw std::invalid_argument("TransformerStack: sequence length " +
                                std::to_string(L) + " exceeds max " +
                                std::to_string(cfg.max_len));
  size_t dh = d / cfg.n_head;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Var h = x;
  for (const Block& blk : blocks) {
    Var xn = layernorm_rows(h, t.leaf(blk.ln1_g), t.leaf(blk.ln1_b));
    Var q = blk.wq.apply(t, xn);
    Var k = blk.wk.apply(t, xn);
    Var v = blk.wv.apply(t, xn);
    std::vector<Var> heads;
    heads.reserve(cfg.n_head);
    for (size_t hd = 0; hd < cfg.n_head; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(k, hd * dh, dh);
      Var vh = slice_cols(v, hd * dh, dh);
      Var att = softmax_rows(scale(matmul(qh, kh, false, true), sc), true);
      heads.push_back(matmul(att, vh));
    }
    h = add(h, blk.wo.apply(t, concat_cols(heads)));
    Var hn = layernorm_rows(h, t.leaf(blk.ln2_g), t.leaf(blk.ln2_b));
    h = add(h, blk.fc2.apply(t, gelu(blk.fc1.apply(t, hn))));
  }
  return layernorm_rows(h, t.leaf(lnf_g), t.leaf(lnf_b));
}

Array TransformerStack::forward_seq_plain(const Array& x) const {
  size_t L = x.rows();
  size_t d = cfg.d_model;
  if (x.cols() != d || L > cfg.max_len)
    throw std::invalid_argument("TransformerStack: bad plain input " +
                                x.shape_str());
  size_t dh = d / cfg.n_head;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Array h = x;
  for (const Block& blk : blocks) {
    Array xn = k_layernorm_rows(h, blk.ln1_g->value, blk.ln1_b->value);
    Array q = blk.wq.apply_plain(xn);
    Array k = blk.wk.apply_plain(xn);
    Array v = blk.wv.apply_plain(xn);
    std::vector<Array> heads;
    for (size_t hd = 0; hd < cfg.n_head; ++hd) {
      Array qh = k_slice_cols(q, hd * dh, dh);
      Array kh = k_slice_cols(k, hd * dh, dh);
      Array vh = k_slice_cols(v, hd * dh, dh);
      Array att = k_softmax_rows(k_scale(k_gemm(qh, kh, false, true), sc), true);
      heads.push_back(k_gemm(att, vh));
    }
    h = k_add(h, blk.wo.apply_plain(k_concat_cols(heads)));
    Array hn = k_layernorm_rows(h, blk.ln2_g->value, blk.ln2_b->value);
    h = k_add(h, blk.fc2.apply_plain(k_gelu(blk.fc1.apply_plain(hn))));
  }
  return k_layernorm_rows(h, lnf_g->value, lnf_b->value);
}

Var TransformerStack::step(Tape& t, Var x, KvCache& cache) const {
  size_t d = cfg.d_model;
  if (x.val().rows() != 1 || x.val().cols() != d)
    throw std::invalid_argument("TransformerStack::step: expected {1, d_model}, got " +
                                x.val().shape_str());
  if (cache.k.empty()) {
    cache.k.resize(cfg.n_layer);
    cache.v.resize(cfg.n_layer);
  }
  size_t have = cache.k[0].valid() ? cache.k[0].val().rows() : 0;
  if (have + 1 > cfg.max_len)
    throw std::invalid_argument("TransformerStack::step: cache exceeds max length");
  size_t dh = d / cfg.n_head;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Var h = x;
  for (size_t l = 0; l < blocks.size(); ++l) {
    const Block& blk = blocks[l];
    Var xn = layernorm_rows(h, t.leaf(blk.ln1_g), t.leaf(blk.ln1_b));
    Var q = blk.wq.apply(t, xn);
    Var k = blk.wk.apply(t, xn);
    Var v = blk.wv.apply(t, xn);
    cache.k[l] = cache.k[l].valid() ? concat_rows(cache.k[l], k) : k;
    cache.v[l] = cache.v[l].valid() ? concat_rows(cache.v[l], v) : v;
    std::vector<Var> heads;
    heads.reserve(cfg.n_head);
    for (size_t hd = 0; hd < cfg.n_head; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(cache.k[l], hd * dh, dh);
      Var vh = slice_cols(cache.v[l], hd * dh, dh);
      // All cached positions are past-or-present, so no causal mask needed.
      Var att = softmax_rows(scale(matmul(qh, kh, false, true), sc), false);
      heads.push_back(matmul(att, vh));
    }
    h = add(h, blk.wo.apply(t, concat_cols(heads)));
    Var hn = layernorm_rows(h, t.leaf(blk.ln2_g), t.leaf(blk.ln2_b));
    h = add(h, blk.fc2.apply(t, gelu(blk.fc1.apply(t, hn))));
  }
  return layernorm_rows(h, t.leaf(lnf_g), t.leaf(lnf_b));
}

Var TransformerStack::step_batch(Tape& t, Var x, KvBatch& cache) const {
  size_t d = cfg.d_model;
  size_t B = x.val().rows();
  if (x.val().cols() != d || B == 0)
    throw std::invalid_argument("TransformerStack::step_batch: expected {B, d_model}, got " +
                                x.val().shape_str());
  if (cache.k.empty()) {
    cache.batch = B;
    cache.k.resize(cfg.n_layer);
    cache.v.resize(cfg.n_layer);
  }
  if (cache.batch != B)
    throw std::invalid_argument("TransformerStack::step_batch: batch changed mid-stream");
  size_t have = cache.len();
  if (have + 1 > cfg.max_len)
    throw std::invalid_argument("TransformerStack::step_batch: cache exceeds max length");
  size_t dh = d / cfg.n_head;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Array m = Array::zeros({B, (have + 1) * B});
  for (size_t r = 0; r < B; ++r)
    for (size_t c = 0; c < m.cols(); ++c)
      if (c % B != r) m.at(r, c) = -1e30;
  Var mask = t.constant(std::move(m));
  Var h = x;
  for (size_t l = 0; l < blocks.size(); ++l) {
    const Block& blk = blocks[l];
    Var xn = layernorm_rows(h, t.leaf(blk.ln1_g), t.leaf(blk.ln1_b));
    Var q = blk.wq.apply(t, xn);
    Var k = blk.wk.apply(t, xn);
    Var v = blk.wv.apply(t, xn);
    cache.k[l] = cache.k[l].valid() ? concat_rows(cache.k[l], k) : k;
    cache.v[l] = cache.v[l].valid() ? concat_rows(cache.v[l], v) : v;
    std::vector<Var> heads;
    heads.reserve(cfg.n_head);
    for (size_t hd = 0; hd < cfg.n_head; ++hd) {
      Var qh = slice_cols(q, hd * dh, dh);
      Var kh = slice_cols(cache.k[l], hd * dh, dh);
      Var vh = slice_cols(cache.v[l], hd * dh, dh);
      Var att = softmax_rows(add(scale(matmul(qh, kh, false, true), sc), mask),
                             false);
      heads.push_back(matmul(att, vh));
    }
    h = add(h, blk.wo.apply(t, concat_cols(heads)));
    Var hn = layernorm_rows(h, t.leaf(blk.ln2_g), t.leaf(blk.ln2_b));
    h = add(h, blk.fc2.apply(t, gelu(blk.fc1.apply(t, hn))));
  }
  return layernorm_rows(h, t.leaf(lnf_g), t.leaf(lnf_b));
}

Array TransformerStack::step_plain(const Array& x, KvCacheArr& cache) const {
  size_t d = cfg.d_model;
  if (x.rows() != 1 || x.cols() != d)
    throw std::invalid_argument("TransformerStack::step_plain: expected {1, d_model}");
  if (cache.k.empty()) {
    cache.k.assign(cfg.n_layer, Array{});
    cache.v.assign(cfg.n_layer, Array{});
  }
  if (cache.len() + 1 > cfg.max_len)
    throw std::invalid_argument("TransformerStack::step_plain: cache exceeds max length");
  size_t dh = d / cfg.n_head;
  double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Array h = x;
  for (size_t l = 0; l < blocks.size(); ++l) {
    const Block& blk = blocks[l];
    Array xn = k_layernorm_rows(h, blk.ln1_g->value, blk.ln1_b->value);
    Array q = blk.wq.apply_plain(xn);
    Array k = blk.wk.apply_plain(xn);
    Array v = blk.wv.apply_plain(xn);
    cache.k[l] = cache.k[l].data.empty() ? k : k_concat_rows(cache.k[l], k);
    cache.v[l] = cache.v[l].data.empty() ? v : k_concat_rows(cache.v[l], v);
    std::vector<Array> heads;
    for (size_t hd = 0; hd < cfg.n_head; ++hd) {
      Array qh = k_slice_cols(q, hd * dh, dh);
      Array kh = k_slice_cols(cache.k[l], hd * dh, dh);
      Array vh = k_slice_cols(cache.v[l], hd * dh, dh);
      Array att = k_softmax_rows(k_scale(k_gemm(qh, kh, false, true), sc), false);
      heads.push_back(k_gemm(att, vh));
    }
    h = k_add(h, blk.wo.apply_plain(k_concat_cols(heads)));
    Array hn = k_layernorm_rows(h, blk.ln2_g->value, blk.ln2_b->value);
    h = k_add(h, blk.fc2.apply_plain(k_gelu(blk.fc1.apply_plain(hn))));
  }
  return k_layernorm_rows(h, lnf_g->value, lnf_b->value);
}

}  // namespace ec2lab::num
