#include "sgn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sgn/errors.hpp"

namespace sgn::kernels {
namespace {

struct GemmShape {
  std::size_t m, k, n;
};

GemmShape check_gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw ShapeError("gemm inner dimension mismatch: " + a.shape_string() + (trans_a ? "^T" : "") +
                     " * " + b.shape_string() + (trans_b ? "^T" : ""));
  }
  return {m, ka, n};
}

void prepare_output(Matrix& c, const GemmShape& s, bool accumulate) {
  if (accumulate) {
    if (c.rows() != s.m || c.cols() != s.n) throw ShapeError("gemm accumulate target has wrong shape");
  } else {
    if (c.rows() != s.m || c.cols() != s.n) {
      c = Matrix(s.m, s.n);
    } else {
      c.fill(0.0);
    }
  }
}

}  // namespace

void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c, bool accumulate) {
  const GemmShape s = check_gemm(a, trans_a, b, trans_b);
  prepare_output(c, s, accumulate);
  if (s.m == 0 || s.n == 0 || s.k == 0) return;

  // Row-major inner loops want b untransposed.
  Matrix bt;
  const Matrix* bp = &b;
  if (trans_b) {
    bt = b.transposed();
    bp = &bt;
  }
  const double* B = bp->data();
  const double* A = a.data();
  double* C = c.data();
  const std::size_t lda = a.cols();
  const std::size_t n = s.n;
  const std::size_t k = s.k;
  const long m = static_cast<long>(s.m);
  const bool parallel = s.m * s.n * s.k >= kParallelThreshold && s.m > 1;

#pragma omp parallel for schedule(static) if (parallel)
  for (long i = 0; i < m; ++i) {
    double* crow = C + static_cast<std::size_t>(i) * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = trans_a ? A[p * lda + static_cast<std::size_t>(i)]
                                 : A[static_cast<std::size_t>(i) * lda + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void softmax_rows(const Matrix& in, Matrix& out) {
  if (!out.same_shape(in)) out = Matrix(in.rows(), in.cols());
  const long rows = static_cast<long>(in.rows());
  const std::size_t cols = in.cols();
  const bool parallel = in.size() * 8 >= kParallelThreshold && rows > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (long r = 0; r < rows; ++r) {
    const double* x = in.data() + static_cast<std::size_t>(r) * cols;
    double* y = out.data() + static_cast<std::size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) y[c] *= inv;
  }
}

void normalize_rows(const Matrix& in, double eps, Matrix& out, std::vector<double>& inv_std) {
  if (!out.same_shape(in)) out = Matrix(in.rows(), in.cols());
  inv_std.assign(in.rows(), 0.0);
  const long rows = static_cast<long>(in.rows());
  const std::size_t cols = in.cols();
  const bool parallel = in.size() * 4 >= kParallelThreshold && rows > 1;
#pragma omp parallel for schedule(static) if (parallel)
  for (long r = 0; r < rows; ++r) {
    const double* x = in.data() + static_cast<std::size_t>(r) * cols;
    double* y = out.data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += x[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::size_t c = 0; c < cols; ++c) y[c] = (x[c] - mean) * is;
  }
}

namespace serial {

void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c, bool accumulate) {
  const GemmShape s = check_gemm(a, trans_a, b, trans_b);
  prepare_output(c, s, accumulate);
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const double av = trans_a ? a(p, i) : a(i, p);
        const double bv = trans_b ? b(j, p) : b(p, j);
        sum += av * bv;
      }
      c(i, j) += sum;
    }
  }
}

void softmax_rows(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < in.cols(); ++c) mx = std::max(mx, in(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < in.cols(); ++c) sum += std::exp(in(r, c) - mx);
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = std::exp(in(r, c) - mx) / sum;
  }
}

void normalize_rows(const Matrix& in, double eps, Matrix& out, std::vector<double>& inv_std) {
  out = Matrix(in.rows(), in.cols());
  inv_std.assign(in.rows(), 0.0);
  const double n = static_cast<double>(in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    double mean = 0.0;
    for (double v : in.row(r)) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in.row(r)) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = (in(r, c) - mean) * inv_std[r];
  }
}

}  // namespace serial
}  // namespace sgn::kernels
