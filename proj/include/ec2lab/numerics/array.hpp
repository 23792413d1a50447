#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ec2lab/numerics/rng.hpp"

namespace ec2lab::num {

// Raised when a computation produces or receives non-finite values. Mapped to
// its own process exit code by the command-line driver.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major array of 64-bit floats. Rank is usually 1 (vectors) or 2
// (matrices); the math kernels below operate on the 2-D view {rows, cols},
// where a rank-1 array of n elements is treated as {1, n}.
struct Array {
  std::vector<size_t> shape;
  std::vector<double> data;

  Array() = default;
  Array(std::vector<size_t> s, std::vector<double> d);

  static Array zeros(std::vector<size_t> shape);
  static Array full(std::vector<size_t> shape, double value);
  static Array scalar(double value);
  static Array vec(std::vector<double> values);
  static Array matrix(size_t rows, size_t cols, std::vector<double> values);
  static Array randn(std::vector<size_t> shape, Rng& rng, double stddev = 1.0);
  // Uniform in [-bound, bound].
  static Array rand_uniform(std::vector<size_t> shape, Rng& rng, double bound);

  size_t numel() const;
  size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  bool is_scalar() const { return numel() == 1; }
  bool same_shape(const Array& o) const { return shape == o.shape; }

  double& at(size_t i) { return data[i]; }
  double at(size_t i) const { return data[i]; }
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }

  bool all_finite() const;
  std::string shape_str() const;
};

// ---- plain kernels ----
// These are the single source of truth for the arithmetic; both the autodiff
// tape and the inference-only forward paths call them, so the two paths agree
// bit-for-bit.

// C = op(A)op(B) with optional transposes; shapes checked.
Array k_gemm(const Array& a, const Array& b, bool trans_a = false,
             bool trans_b = false);
Array k_add(const Array& a, const Array& b);
Array k_sub(const Array& a, const Array& b);
Array k_mul(const Array& a, const Array& b);
Array k_scale(const Array& a, double s);
// Adds a length-c row vector to every row of a {r, c} matrix.
Array k_add_rowvec(const Array& m, const Array& v);
Array k_gelu(const Array& a);
Array k_gelu_grad(const Array& a);  // d gelu / dx, elementwise
Array k_relu(const Array& a);
Array k_tanh(const Array& a);
Array k_sigmoid(const Array& a);
// Row-wise softmax; with causal=true the matrix must be square and entries
// above the diagonal are masked out before normalization.
Array k_softmax_rows(const Array& a, bool causal = false);
// Row-wise layer norm with gain/bias; eps fixed at 1e-5.
Array k_layernorm_rows(const Array& x, const Array& gamma, const Array& beta);
// Batch norm in eval mode: normalize columns by running stats.
Array k_batchnorm_eval(const Array& x, const Array& gamma, const Array& beta,
                       const Array& running_mean, const Array& running_var);
size_t k_argmax(const Array& a);
Array k_slice_rows(const Array& a, size_t start, size_t len);
Array k_slice_cols(const Array& a, size_t start, size_t len);
Array k_concat_rows(const Array& a, const Array& b);
Array k_concat_cols(const std::vector<Array>& parts);
Array k_transpose(const Array& a);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kBatchNormEps = 1e-5;

}  // namespace ec2lab::num
