#pragma once

#include "sgn/tensor.hpp"

// Dense kernels used by the autodiff ops. The default versions split work
// over output rows with OpenMP; the serial namespace keeps straightforward
// reference loops that tests compare against.
namespace sgn::kernels {

// c = op(a) * op(b), or c += op(a) * op(b) when accumulate is set.
// c is resized when not accumulating.
void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c,
          bool accumulate = false);

void softmax_rows(const Matrix& in, Matrix& out);

// Row-wise layer normalisation without affine terms; also returns per-row
// inverse standard deviation for the backward pass.
void normalize_rows(const Matrix& in, double eps, Matrix& out, std::vector<double>& inv_std);

// Work (in multiply-adds) below which kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {
void gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b, Matrix& c,
          bool accumulate = false);
void softmax_rows(const Matrix& in, Matrix& out);
void normalize_rows(const Matrix& in, double eps, Matrix& out, std::vector<double>& inv_std);
}  // namespace serial

}  // namespace sgn::kernels
