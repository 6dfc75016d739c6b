#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "regionedit/nn/autodiff.hpp"

namespace regionedit::nn {

// Flat-index map for gather(): entry k names the source element of output
// element k (row-major), or -1 for a zero.
using IndexMap = std::shared_ptr<const std::vector<std::int32_t>>;

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
// x * w + bias (bias is 1 x out, broadcast over rows).
Var linear(const Var& x, const Var& w, const Var& bias);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
// a + row, with `row` a 1 x cols vector broadcast over rows.
Var add_row(const Var& a, const Var& row);
// Multiplies every element by a 1x1 scalar variable.
Var mul_scalar(const Var& a, const Var& s);

Var relu(const Var& x);
Var silu(const Var& x);
Var gelu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);

Var reshape(const Var& x, Eigen::Index rows, Eigen::Index cols);
Var gather(const Var& x, const IndexMap& map, Eigen::Index rows, Eigen::Index cols);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var slice_rows(const Var& x, Eigen::Index begin, Eigen::Index count);
// Row r of the output is row r / times of the input.
Var repeat_rows(const Var& x, Eigen::Index times);
// Mean over consecutive groups of `group` rows.
Var group_mean_rows(const Var& x, Eigen::Index group);

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Scales every row to unit L2 norm: x / sqrt(|x|^2 + eps).
Var normalize_rows(const Var& x, double eps = 1e-12);
// Row-wise dot product, rows x 1.
Var row_dot(const Var& a, const Var& b);

// Multi-head self attention over `batch` sequences of `tokens` rows each.
// qkv holds [q | k | v] blocks of equal width.
Var attention(const Var& qkv, int batch, int tokens, int heads);

// Mean binary cross entropy on logits.
Var bce_with_logits(const Var& logits, const Mat& targets);
// Mean softmax cross entropy of each row against an integer class.
Var cross_entropy(const Var& logits, const std::vector<int>& targets);

// Index builders -----------------------------------------------------------

// im2col for NHWC rows: output (batch*Ho*Wo) x (k*k*C).
IndexMap im2col_map(int batch, int height, int width, int channels, int kernel, int stride,
                    int pad);
// Splits each image into non-overlapping p x p patches:
// (batch*H*W) x C -> (batch*(H/p)*(W/p)) x (p*p*C).
IndexMap patchify_map(int batch, int height, int width, int channels, int patch);
// Inverse of patchify_map.
IndexMap unpatchify_map(int batch, int height, int width, int channels, int patch);

}  // namespace regionedit::nn
