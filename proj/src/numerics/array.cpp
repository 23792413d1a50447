#include "ec2lab/numerics/array.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ec2lab::num {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

Array::Array(std::vector<size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  if (n != data.size())
    throw std::invalid_argument("Array: shape " + shape_str() + " does not match " +
                                std::to_string(data.size()) + " elements");
}

Array Array::zeros(std::vector<size_t> shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return Array(std::move(shape), std::vector<double>(n, 0.0));
}

Array Array::full(std::vector<size_t> shape, double value) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return Array({1}, {value}); }

Array Array::vec(std::vector<double> values) {
  size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::matrix(size_t rows, size_t cols, std::vector<double> values) {
  return Array({rows, cols}, std::move(values));
}

Array Array::randn(std::vector<size_t> shape, Rng& rng, double stddev) {
  Array a = zeros(std::move(shape));
  for (double& v : a.data) v = stddev * rng.normal();
  return a;
}

Array Array::rand_uniform(std::vector<size_t> shape, Rng& rng, double bound) {
  Array a = zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(-bound, bound);
  return a;
}

size_t Array::numel() const {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

bool Array::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Array::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

static void check_2d(const Array& a, const char* who) {
  if (a.shape.size() > 2)
    throw std::invalid_argument(std::string(who) + ": rank > 2 not supported, got " +
                                a.shape_str());
}

Array k_gemm(const Array& a, const Array& b, bool trans_a, bool trans_b) {
  check_2d(a, "k_gemm");
  check_2d(b, "k_gemm");
  size_t am = trans_a ? a.cols() : a.rows();
  size_t ak = trans_a ? a.rows() : a.cols();
  size_t bk = trans_b ? b.cols() : b.rows();
  size_t bn = trans_b ? b.rows() : b.cols();
  if (ak != bk)
    throw std::invalid_argument("k_gemm: inner dims mismatch " + a.shape_str() +
                                (trans_a ? "^T" : "") + " x " + b.shape_str() +
                                (trans_b ? "^T" : ""));
  Array c = Array::zeros({am, bn});
  ECMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows()),
           static_cast<Eigen::Index>(a.cols()));
  ECMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows()),
           static_cast<Eigen::Index>(b.cols()));
  EMap mc(c.data.data(), static_cast<Eigen::Index>(am),
          static_cast<Eigen::Index>(bn));
  if (!trans_a && !trans_b)
    mc.noalias() = ma * mb;
  else if (trans_a && !trans_b)
    mc.noalias() = ma.transpose() * mb;
  else if (!trans_a && trans_b)
    mc.noalias() = ma * mb.transpose();
  else
    mc.noalias() = ma.transpose() * mb.transpose();
  return c;
}

static void check_same(const Array& a, const Array& b, const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

Array k_add(const Array& a, const Array& b) {
  check_same(a, b, "k_add");
  Array c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Array k_sub(const Array& a, const Array& b) {
  check_same(a, b, "k_sub");
  Array c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Array k_mul(const Array& a, const Array& b) {
  check_same(a, b, "k_mul");
  Array c = a;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

Array k_scale(const Array& a, double s) {
  Array c = a;
  for (double& v : c.data) v *= s;
  return c;
}

Array k_add_rowvec(const Array& m, const Array& v) {
  if (v.numel() != m.cols())
    throw std::invalid_argument("k_add_rowvec: vector length " + v.shape_str() +
                                " vs matrix " + m.shape_str());
  Array c = m;
  size_t r = m.rows(), cc = m.cols();
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < cc; ++j) c.data[i * cc + j] += v.data[j];
  return c;
}

// tanh-approximation GELU, same form as GPT-2.
static inline double gelu1(double x) {
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

static inline double gelu1_grad(double x) {
  const double c = 0.7978845608028654;
  double u = c * (x + 0.044715 * x * x * x);
  double t = std::tanh(u);
  double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Array k_gelu(const Array& a) {
  Array c = a;
  for (double& v : c.data) v = gelu1(v);
  return c;
}

Array k_gelu_grad(const Array& a) {
  Array c = a;
  for (double& v : c.data) v = gelu1_grad(v);
  return c;
}

Array k_relu(const Array& a) {
  Array c = a;
  for (double& v : c.data) v = v > 0.0 ? v : 0.0;
  return c;
}

Array k_tanh(const Array& a) {
  Array c = a;
  for (double& v : c.data) v = std::tanh(v);
  return c;
}

Array k_sigmoid(const Array& a) {
  Array c = a;
  for (double& v : c.data) v = 1.0 / (1.0 + std::exp(-v));
  return c;
}

Array k_softmax_rows(const Array& a, bool causal) {
  check_2d(a, "k_softmax_rows");
  size_t r = a.rows(), c = a.cols();
  if (causal && r != c)
    throw std::invalid_argument("k_softmax_rows: causal mask needs square matrix, got " +
                                a.shape_str());
  Array out = Array::zeros({r, c});
  for (size_t i = 0; i < r; ++i) {
    size_t lim = causal ? i + 1 : c;
    double mx = a.data[i * c];
    for (size_t j = 1; j < lim; ++j) mx = std::max(mx, a.data[i * c + j]);
    double sum = 0.0;
    for (size_t j = 0; j < lim; ++j) {
      double e = std::exp(a.data[i * c + j] - mx);
      out.data[i * c + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < lim; ++j) out.data[i * c + j] /= sum;
  }
  return out;
}

Array k_layernorm_rows(const Array& x, const Array& gamma, const Array& beta) {
  check_2d(x, "k_layernorm_rows");
  size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c)
    throw std::invalid_argument("k_layernorm_rows: gain/bias length mismatch");
  Array out = Array::zeros({r, c});
  for (size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (size_t j = 0; j < c; ++j) mean += x.data[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (size_t j = 0; j < c; ++j) {
      double d = x.data[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (size_t j = 0; j < c; ++j)
      out.data[i * c + j] =
          (x.data[i * c + j] - mean) * inv * gamma.data[j] + beta.data[j];
  }
  return out;
}

Array k_batchnorm_eval(const Array& x, const Array& gamma, const Array& beta,
                       const Array& running_mean, const Array& running_var) {
  check_2d(x, "k_batchnorm_eval");
  size_t r = x.rows(), c = x.cols();
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c)
    throw std::invalid_argument("k_batchnorm_eval: channel count mismatch");
  Array out = Array::zeros({r, c});
  for (size_t j = 0; j < c; ++j) {
    double inv = 1.0 / std::sqrt(running_var.data[j] + kBatchNormEps);
    for (size_t i = 0; i < r; ++i)
      out.data[i * c + j] =
          (x.data[i * c + j] - running_mean.data[j]) * inv * gamma.data[j] +
          beta.data[j];
  }
  return out;
}

size_t k_argmax(const Array& a) {
  if (a.data.empty()) throw std::invalid_argument("k_argmax: empty array");
  size_t best = 0;
  for (size_t i = 1; i < a.data.size(); ++i)
    if (a.data[i] > a.data[best]) best = i;
  return best;
}

Array k_slice_rows(const Array& a, size_t start, size_t len) {
  check_2d(a, "k_slice_rows");
  size_t r = a.rows(), c = a.cols();
  if (start + len > r)
    throw std::invalid_argument("k_slice_rows: range out of bounds");
  Array out = Array::zeros({len, c});
  std::copy(a.data.begin() + static_cast<long>(start * c),
            a.data.begin() + static_cast<long>((start + len) * c), out.data.begin());
  return out;
}

Array k_slice_cols(const Array& a, size_t start, size_t len) {
  check_2d(a, "k_slice_cols");
  size_t r = a.rows(), c = a.cols();
  if (start + len > c)
    throw std::invalid_argument("k_slice_cols: range out of bounds");
  Array out = Array::zeros({r, len});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < len; ++j) out.data[i * len + j] = a.data[i * c + start + j];
  return out;
}

Array k_concat_rows(const Array& a, const Array& b) {
  check_2d(a, "k_concat_rows");
  check_2d(b, "k_concat_rows");
  if (a.cols() != b.cols())
    throw std::invalid_argument("k_concat_rows: column mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  Array out = Array::zeros({a.rows() + b.rows(), a.cols()});
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<long>(a.data.size()));
  return out;
}

Array k_concat_cols(const std::vector<Array>& parts) {
  if (parts.empty()) throw std::invalid_argument("k_concat_cols: empty input");
  size_t r = parts[0].rows();
  size_t total = 0;
  for (const Array& p : parts) {
    check_2d(p, "k_concat_cols");
    if (p.rows() != r)
      throw std::invalid_argument("k_concat_cols: row mismatch");
    total += p.cols();
  }
  Array out = Array::zeros({r, total});
  size_t off = 0;
  for (const Array& p : parts) {
    size_t pc = p.cols();
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < pc; ++j)
        out.data[i * total + off + j] = p.data[i * pc + j];
    off += pc;
  }
  return out;
}

Array k_transpose(const Array& a) {
  check_2d(a, "k_transpose");
  size_t r = a.rows(), c = a.cols();
  Array out = Array::zeros({c, r});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out.data[j * r + i] = a.data[i * c + j];
  return out;
}

}  // namespace ec2lab::num
