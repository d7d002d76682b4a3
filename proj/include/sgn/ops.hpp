#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sgn/autograd.hpp"

// Differentiable operations on Graph nodes. Shapes follow the row-major
// convention: a batch of vectors is a matrix with one row per item.
namespace sgn {

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // adds a 1 x n row to every row of a
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var one_minus(Var a);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var elu(Var a);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
// Softmax restricted to entries where mask(i, j) != 0; other entries are
// exactly zero and receive no gradient. Every row needs one allowed entry.
Var masked_softmax_rows(Var scores, const Matrix& mask);
Var cumsum_rows(Var a);
// Each column of a repeated `times` times in place: [a b] -> [a a b b].
Var repeat_cols(Var a, std::size_t times);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, std::size_t rows, std::size_t cols);  // row-major order kept
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var scale_rows(Var a, std::span<const double> factors);
// Row r is taken from `fresh` when keep[r] != 0, else from `old`.
Var blend_rows(Var fresh, Var old, std::span<const double> keep);

Var sum(Var a);        // 1 x 1
Var mean_rows(Var a);  // 1 x cols

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Sum over rows of -log softmax(logits)[r, targets[r]]. When logprobs is
// non-null it receives the per-row log-probabilities of the targets.
Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::vector<double>* logprobs = nullptr);
// Sum over entries with mask != 0 of the binary cross-entropy between
// sigmoid(logits) and targets (0/1).
Var bce_with_logits(Var logits, const Matrix& targets, const Matrix& mask);

// Multi-head scaled dot-product attention core. q is T x d, k and v are
// S x d, d divisible by heads. With causal set, query t only sees keys <= t.
// When weights is non-null it receives one T x S matrix per head.
Var attention(Var q, Var k, Var v, std::size_t heads, bool causal,
              std::vector<Matrix>* weights = nullptr);

// Patch extraction for convolution: input is channels x (h*w); output is
// (h_out*w_out) x (channels*kernel*kernel) with zero padding.
Var im2col(Var input, std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
           std::size_t pad);
// 2x2 average pooling over a channels x (h*w) map.
Var avg_pool2(Var input, std::size_t height, std::size_t width);

}  // namespace sgn
