#include "ec2lab/numerics/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ec2lab::num {

const Array& Var::val() const {
  if (!valid()) throw std::invalid_argument("Var: unbound handle");
  return tape->value_of(idx);
}

Var Tape::emit(Array value, BwdFn bwd) {
  nodes_.push_back({std::move(value), std::move(bwd)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Array value) { return emit(std::move(value), nullptr); }

Var Tape::leaf(Parameter* p) {
  auto it = leaf_cache_.find(p);
  if (it != leaf_cache_.end()) return Var{this, it->second};
  Var v = emit(p->value, [p](Tape&, int, const Array& g) {
    if (!g.same_shape(p->grad))
      throw std::invalid_argument("leaf backward: grad shape mismatch for " + p->name);
    for (size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
  });
  leaf_cache_[p] = v.idx;
  return v;
}

void Tape::accum(int idx, const Array& g) {
  Array& slot = grads_[idx];
  if (slot.data.empty()) {
    slot = g;
  } else {
    if (!slot.same_shape(g))
      throw std::invalid_argument("Tape::accum: inconsistent grad shapes");
    for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
  }
}

void Tape::accum_scaled(int idx, const Array& g, double s) {
  Array& slot = grads_[idx];
  if (slot.data.empty()) {
    slot = Array::zeros(g.shape);
  } else if (!slot.same_shape(g)) {
    throw std::invalid_argument("Tape::accum_scaled: inconsistent grad shapes");
  }
  for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += s * g.data[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("Tape::backward: foreign Var");
  if (!nodes_[loss.idx].value.is_scalar())
    throw std::invalid_argument("Tape::backward: loss must be scalar, got " +
                                nodes_[loss.idx].value.shape_str());
  if (!nodes_[loss.idx].value.all_finite())
    throw NumericError("Tape::backward: loss is not finite");
  grads_.assign(nodes_.size(), Array{});
  accum(loss.idx, Array::full(nodes_[loss.idx].value.shape, 1.0));
  for (int i = loss.idx; i >= 0; --i) {
    if (grads_[i].data.empty() || !nodes_[i].bwd) continue;
    nodes_[i].bwd(*this, i, grads_[i]);
  }
  grads_.clear();
  grads_.shrink_to_fit();
}

static void same_tape(Var a, Var b, const char* who) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument(std::string(who) + ": vars from different tapes");
}

Var add(Var a, Var b) {
  same_tape(a, b, "add");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(k_add(a.val(), b.val()),
                      [ia, ib](Tape& t, int, const Array& g) {
                        t.accum(ia, g);
                        t.accum(ib, g);
                      });
}

Var sub(Var a, Var b) {
  same_tape(a, b, "sub");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(k_sub(a.val(), b.val()),
                      [ia, ib](Tape& t, int, const Array& g) {
                        t.accum(ia, g);
                        t.accum_scaled(ib, g, -1.0);
                      });
}

Var mul(Var a, Var b) {
  same_tape(a, b, "mul");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(k_mul(a.val(), b.val()),
                      [ia, ib](Tape& t, int, const Array& g) {
                        t.accum(ia, k_mul(g, t.value_of(ib)));
                        t.accum(ib, k_mul(g, t.value_of(ia)));
                      });
}

Var scale(Var a, double s) {
  int ia = a.idx;
  return a.tape->emit(k_scale(a.val(), s), [ia, s](Tape& t, int, const Array& g) {
    t.accum_scaled(ia, g, s);
  });
}

Var square(Var a) {
  int ia = a.idx;
  return a.tape->emit(k_mul(a.val(), a.val()), [ia](Tape& t, int, const Array& g) {
    Array ga = k_mul(g, t.value_of(ia));
    t.accum(ia, k_scale(ga, 2.0));
  });
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  same_tape(a, b, "matmul");
  int ia = a.idx, ib = b.idx;
  return a.tape->emit(
      k_gemm(a.val(), b.val(), trans_a, trans_b),
      [ia, ib, trans_a, trans_b](Tape& t, int, const Array& g) {
        const Array& av = t.value_of(ia);
        const Array& bv = t.value_of(ib);
        if (!trans_a && !trans_b) {
          t.accum(ia, k_gemm(g, bv, false, true));
          t.accum(ib, k_gemm(av, g, true, false));
        } else if (trans_a && !trans_b) {
          t.accum(ia, k_gemm(bv, g, false, true));
          t.accum(ib, k_gemm(av, g, false, false));
        } else if (!trans_a && trans_b) {
          t.accum(ia, k_gemm(g, bv, false, false));
          t.accum(ib, k_gemm(g, av, true, false));
        } else {
          t.accum(ia, k_gemm(bv, g, true, true));
          t.accum(ib, k_gemm(g, av, true, true));
        }
      });
}

Var add_rowvec(Var m, Var v) {
  same_tape(m, v, "add_rowvec");
  int im = m.idx, iv = v.idx;
  return m.tape->emit(k_add_rowvec(m.val(), v.val()),
                      [im, iv](Tape& t, int, const Array& g) {
                        t.accum(im, g);
                        Array gv = Array::zeros(t.value_of(iv).shape);
                        size_t r = g.rows(), c = g.cols();
                        for (size_t i = 0; i < r; ++i)
                          for (size_t j = 0; j < c; ++j)
                            gv.data[j] += g.data[i * c + j];
                        t.accum(iv, gv);
                      });
}

Var gelu(Var a) {
  int ia = a.idx;
  return a.tape->emit(k_gelu(a.val()), [ia](Tape& t, int, const Array& g) {
    t.accum(ia, k_mul(g, k_gelu_grad(t.value_of(ia))));
  });
}

Var relu(Var a) {
  int ia = a.idx;
  return a.tape->emit(k_relu(a.val()), [ia](Tape& t, int, const Array& g) {
    const Array& x = t.value_of(ia);
    Array ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i)
      if (x.data[i] <= 0.0) ga.data[i] = 0.0;
    t.accum(ia, ga);
  });
}

Var tanh_v(Var a) {
  int ia = a.idx;
  return a.tape->emit(k_tanh(a.val()), [ia](Tape& t, int self, const Array& g) {
    const Array& y = t.value_of(self);
    Array ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] *= 1.0 - y.data[i] * y.data[i];
    t.accum(ia, ga);
  });
}

Var sigmoid_v(Var a) {
  int ia = a.idx;
  return a.tape->emit(k_sigmoid(a.val()), [ia](Tape& t, int self, const Array& g) {
    const Array& y = t.value_of(self);
    Array ga = g;
    for (size_t i = 0; i < ga.data.size(); ++i)
      ga.data[i] *= y.data[i] * (1.0 - y.data[i]);
    t.accum(ia, ga);
  });
}

Var sum_all(Var a) {
  int ia = a.idx;
  double s = 0.0;
  for (double v : a.val().data) s += v;
  return a.tape->emit(Array::scalar(s), [ia](Tape& t, int, const Array& g) {
    t.accum(ia, Array::full(t.value_of(ia).shape, g.data[0]));
  });
}

Var mean_all(Var a) {
  int ia = a.idx;
  const Array& av = a.val();
  double s = 0.0;
  for (double v : av.data) s += v;
  double n = static_cast<double>(av.numel());
  return a.tape->emit(Array::scalar(s / n), [ia, n](Tape& t, int, const Array& g) {
    t.accum(ia, Array::full(t.value_of(ia).shape, g.data[0] / n));
  });
}

Var reshape(Var a, const std::vector<size_t>& shape) {
  int ia = a.idx;
  Array out = a.val();
  size_t n = 1;
  for (size_t d : shape) n *= d;
  if (n != out.numel())
    throw std::invalid_argument("reshape: numel mismatch, " + out.shape_str() +
                                " cannot become " + std::to_string(n) +
                                " elements");
  out.shape = shape;
  return a.tape->emit(std::move(out), [ia](Tape& t, int, const Array& g) {
    Array ga = g;
    ga.shape = t.value_of(ia).shape;
    t.accum(ia, ga);
  });
}

Var slice_rows(Var a, size_t start, size_t len) {
  int ia = a.idx;
  return a.tape->emit(k_slice_rows(a.val(), start, len),
                      [ia, start, len](Tape& t, int, const Array& g) {
                        Array ga = Array::zeros(t.value_of(ia).shape);
                        size_t c = ga.cols();
                        std::copy(g.data.begin(), g.data.end(),
                                  ga.data.begin() + static_cast<long>(start * c));
                        (void)len;
                        t.accum(ia, ga);
                      });
}

Var slice_cols(Var a, size_t start, size_t len) {
  int ia = a.idx;
  return a.tape->emit(k_slice_cols(a.val(), start, len),
                      [ia, start, len](Tape& t, int, const Array& g) {
                        Array ga = Array::zeros(t.value_of(ia).shape);
                        size_t r = ga.rows(), c = ga.cols();
                        for (size_t i = 0; i < r; ++i)
                          for (size_t j = 0; j < len; ++j)
                            ga.data[i * c + start + j] = g.data[i * len + j];
                        t.accum(ia, ga);
                      });
}

Var concat_rows(Var a, Var b) {
  same_tape(a, b, "concat_rows");
  int ia = a.idx, ib = b.idx;
  size_t ra = a.val().rows();
  return a.tape->emit(k_concat_rows(a.val(), b.val()),
                      [ia, ib, ra](Tape& t, int, const Array& g) {
                        t.accum(ia, k_slice_rows(g, 0, ra));
                        t.accum(ib, k_slice_rows(g, ra, g.rows() - ra));
                      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Tape* tape = parts[0].tape;
  std::vector<Array> vals;
  std::vector<int> idxs;
  std::vector<size_t> widths;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat_cols");
    vals.push_back(p.val());
    idxs.push_back(p.idx);
    widths.push_back(p.val().cols());
  }
  return tape->emit(k_concat_cols(vals),
                    [idxs, widths](Tape& t, int, const Array& g) {
                      size_t off = 0;
                      for (size_t k = 0; k < idxs.size(); ++k) {
                        t.accum(idxs[k], k_slice_cols(g, off, widths[k]));
                        off += widths[k];
                      }
                    });
}

Var softmax_rows(Var a, bool causal) {
  int ia = a.idx;
  return a.tape->emit(k_softmax_rows(a.val(), causal),
                      [ia](Tape& t, int self, const Array& g) {
                        const Array& p = t.value_of(self);
                        size_t r = p.rows(), c = p.cols();
                        Array ga = Array::zeros(p.shape);
                        for (size_t i = 0; i < r; ++i) {
                          double dot = 0.0;
                          for (size_t j = 0; j < c; ++j)
                            dot += g.data[i * c + j] * p.data[i * c + j];
                          for (size_t j = 0; j < c; ++j)
                            ga.data[i * c + j] =
                                p.data[i * c + j] * (g.data[i * c + j] - dot);
                        }
                        t.accum(ia, ga);
                      });
}

Var layernorm_rows(Var x, Var gamma, Var beta) {
  same_tape(x, gamma, "layernorm_rows");
  same_tape(x, beta, "layernorm_rows");
  int ix = x.idx, ig = gamma.idx, ib = beta.idx;
  return x.tape->emit(
      k_layernorm_rows(x.val(), gamma.val(), beta.val()),
      [ix, ig, ib](Tape& t, int, const Array& g) {
        const Array& xv = t.value_of(ix);
        const Array& gv = t.value_of(ig);
        size_t r = xv.rows(), c = xv.cols();
        double cn = static_cast<double>(c);
        Array gx = Array::zeros(xv.shape);
        Array ggamma = Array::zeros(gv.shape);
        Array gbeta = Array::zeros(t.value_of(ib).shape);
        std::vector<double> xhat(c);
        for (size_t i = 0; i < r; ++i) {
          double mean = 0.0;
          for (size_t j = 0; j < c; ++j) mean += xv.data[i * c + j];
          mean /= cn;
          double var = 0.0;
          for (size_t j = 0; j < c; ++j) {
            double d = xv.data[i * c + j] - mean;
            var += d * d;
          }
          var /= cn;
          double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          double sum_gh = 0.0, sum_ghx = 0.0;
          for (size_t j = 0; j < c; ++j) {
            xhat[j] = (xv.data[i * c + j] - mean) * inv;
            double gy = g.data[i * c + j];
            double gh = gy * gv.data[j];
            sum_gh += gh;
            sum_ghx += gh * xhat[j];
            ggamma.data[j] += gy * xhat[j];
            gbeta.data[j] += gy;
          }
          for (size_t j = 0; j < c; ++j) {
            double gh = g.data[i * c + j] * gv.data[j];
            gx.data[i * c + j] =
                inv * (gh - sum_gh / cn - xhat[j] * sum_ghx / cn);
          }
        }
        t.accum(ix, gx);
        t.accum(ig, ggamma);
        t.accum(ib, gbeta);
      });
}

Var embedding_lookup(Var table, const std::vector<size_t>& ids) {
  int it = table.idx;
  const Array& tv = table.val();
  size_t vocab = tv.rows(), d = tv.cols();
  Array out = Array::zeros({ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab)
      throw std::invalid_argument("embedding_lookup: id " + std::to_string(ids[i]) +
                                  " out of range for table of " +
                                  std::to_string(vocab) + " rows");
    std::copy(tv.data.begin() + static_cast<long>(ids[i] * d),
              tv.data.begin() + static_cast<long>((ids[i] + 1) * d),
              out.data.begin() + static_cast<long>(i * d));
  }
  return table.tape->emit(std::move(out),
                          [it, ids, d](Tape& t, int, const Array& g) {
                            Array gt = Array::zeros(t.value_of(it).shape);
                            for (size_t i = 0; i < ids.size(); ++i)
                              for (size_t j = 0; j < d; ++j)
                                gt.data[ids[i] * d + j] += g.data[i * d + j];
                            t.accum(it, gt);
                          });
}

Var ce_with_logits(Var scores, size_t target) {
  int is = scores.idx;
  const Array& sv = scores.val();
  size_t n = sv.numel();
  if (target >= n)
    throw std::invalid_argument("ce_with_logits: target out of range");
  if (!sv.all_finite()) throw NumericError("ce_with_logits: non-finite scores");
  double mx = sv.data[0];
  for (double v : sv.data) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : sv.data) sum += std::exp(v - mx);
  double loss = mx + std::log(sum) - sv.data[target];
  return scores.tape->emit(
      Array::scalar(loss), [is, target](Tape& t, int, const Array& g) {
        const Array& s = t.value_of(is);
        double m = s.data[0];
        for (double v : s.data) m = std::max(m, v);
        double z = 0.0;
        for (double v : s.data) z += std::exp(v - m);
        Array gs = Array::zeros(s.shape);
        for (size_t i = 0; i < s.data.size(); ++i)
          gs.data[i] = g.data[0] * (std::exp(s.data[i] - m) / z -
                                    (i == target ? 1.0 : 0.0));
        t.accum(is, gs);
      });
}

Var inv_clamped(Var a, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("inv_clamped: eps must be > 0");
  int ia = a.idx;
  const Array& av = a.val();
  Array out = av;
  for (double& v : out.data) v = 1.0 / std::max(eps, v);
  return a.tape->emit(std::move(out), [ia, eps](Tape& t, int, const Array& g) {
    const Array& x = t.value_of(ia);
    Array ga = Array::zeros(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i)
      if (x.data[i] > eps) ga.data[i] = -g.data[i] / (x.data[i] * x.data[i]);
    t.accum(ia, ga);
  });
}

Var detach(Var a) { return a.tape->constant(a.val()); }

Var gumbel_softmax_sample(Var logits, double tau, Rng& rng, bool hard) {
  if (tau <= 0.0)
    throw std::invalid_argument("gumbel_softmax_sample: tau must be > 0, got " +
                                std::to_string(tau));
  const Array& lv = logits.val();
  if (!lv.all_finite())
    throw NumericError("gumbel_softmax_sample: non-finite logits");
  size_t n = lv.numel();
  if (n == 0) throw std::invalid_argument("gumbel_softmax_sample: empty logits");
  Array z = lv;
  for (double& v : z.data) v = (v + rng.gumbel()) / tau;
  double mx = z.data[0];
  for (double v : z.data) mx = std::max(mx, v);
  double sum = 0.0;
  Array soft = Array::zeros(lv.shape);
  for (size_t i = 0; i < n; ++i) {
    soft.data[i] = std::exp(z.data[i] - mx);
    sum += soft.data[i];
  }
  for (double& v : soft.data) v /= sum;
  Array out = soft;
  if (hard) {
    size_t best = k_argmax(soft);
    std::fill(out.data.begin(), out.data.end(), 0.0);
    out.data[best] = 1.0;
  }
  int il = logits.idx;
  // Straight-through: both soft and hard variants route the gradient through
  // the soft distribution.
  return logits.tape->emit(std::move(out),
                           [il, tau, soft](Tape& t, int, const Array& g) {
                             double dot = 0.0;
                             for (size_t i = 0; i < soft.data.size(); ++i)
                               dot += g.data[i] * soft.data[i];
                             Array gl = Array::zeros(soft.shape);
                             for (size_t i = 0; i < soft.data.size(); ++i)
                               gl.data[i] =
                                   soft.data[i] * (g.data[i] - dot) / tau;
                             t.accum(il, gl);
                           });
}

Var batchnorm_train(Var x, Var gamma, Var beta, Array& running_mean,
                    Array& running_var, double momentum) {
  same_tape(x, gamma, "batchnorm_train");
  same_tape(x, beta, "batchnorm_train");
  const Array& xv = x.val();
  size_t b = xv.rows(), c = xv.cols();
  if (b < 2)
    throw std::invalid_argument(
        "batchnorm_train: batch statistics need at least 2 rows, got " +
        std::to_string(b));
  if (gamma.val().numel() != c || beta.val().numel() != c)
    throw std::invalid_argument("batchnorm_train: channel count mismatch");
  double bn = static_cast<double>(b);
  Array mean = Array::zeros({c});
  Array var = Array::zeros({c});
  for (size_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (size_t i = 0; i < b; ++i) m += xv.data[i * c + j];
    m /= bn;
    double v = 0.0;
    for (size_t i = 0; i < b; ++i) {
      double d = xv.data[i * c + j] - m;
      v += d * d;
    }
    mean.data[j] = m;
    var.data[j] = v / bn;
  }
  if (running_mean.numel() != c || running_var.numel() != c)
    throw std::invalid_argument("batchnorm_train: running stats size mismatch");
  // Running stats use the unbiased variance, matching the usual convention.
  Array uvar = k_scale(var, bn / (bn - 1.0));
  for (size_t j = 0; j < c; ++j) {
    running_mean.data[j] =
        (1.0 - momentum) * running_mean.data[j] + momentum * mean.data[j];
    running_var.data[j] =
        (1.0 - momentum) * running_var.data[j] + momentum * uvar.data[j];
  }
  Array inv = Array::zeros({c});
  for (size_t j = 0; j < c; ++j)
    inv.data[j] = 1.0 / std::sqrt(var.data[j] + kBatchNormEps);
  Array xhat = Array::zeros({b, c});
  Array out = Array::zeros({b, c});
  const Array& gv = gamma.val();
  const Array& bv = beta.val();
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < c; ++j) {
      xhat.data[i * c + j] = (xv.data[i * c + j] - mean.data[j]) * inv.data[j];
      out.data[i * c + j] = xhat.data[i * c + j] * gv.data[j] + bv.data[j];
    }
  int ix = x.idx, ig = gamma.idx, ib = beta.idx;
  return x.tape->emit(
      std::move(out), [ix, ig, ib, xhat, inv, b, c](Tape& t, int, const Array& g) {
        const Array& gv2 = t.value_of(ig);
        double bn2 = static_cast<double>(b);
        Array gx = Array::zeros({b, c});
        Array ggamma = Array::zeros({c});
        Array gbeta = Array::zeros({c});
        for (size_t j = 0; j < c; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (size_t i = 0; i < b; ++i) {
            double gy = g.data[i * c + j];
            sum_g += gy;
            sum_gx += gy * xhat.data[i * c + j];
          }
          ggamma.data[j] = sum_gx;
          gbeta.data[j] = sum_g;
          double k1 = gv2.data[j] * inv.data[j] / bn2;
          for (size_t i = 0; i < b; ++i)
            gx.data[i * c + j] =
                k1 * (bn2 * g.data[i * c + j] - sum_g -
                      xhat.data[i * c + j] * sum_gx);
        }
        t.accum(ix, gx);
        t.accum(ig, ggamma);
        t.accum(ib, gbeta);
      });
}

}  // namespace ec2lab::num
