#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "prismer/tensor.hpp"

// Differentiable operations. Every function records its backward pass when
// any input requires a gradient. Reductions accumulate in double precision
// in a fixed iteration order.
namespace prismer::ops {

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// [m x n] + [n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);

// Slices along `axis` are mapped to probability vectors. Throws NumericError
// on non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);
// Normalises each slice along the last axis, then applies gain and bias ([d]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor relu(const Tensor& x);
// max(x, 0)^2
Tensor squared_relu(const Tensor& x);
// tanh approximation
Tensor gelu(const Tensor& x);

// Cross-correlation of an [H x W x Cin] image with a [3 x 3 x Cin x Cout]
// kernel. Output is [ceil(H/stride) x ceil(W/stride) x Cout] for padding 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding = 1);

// Mean over positions with mask[t] == true of -log softmax(logits[t])[target[t]].
// An empty mask means every position counts.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets,
                     const std::vector<bool>& mask = {});

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
// rows[i] = table[indices[i]]
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);
// out = base; out[r] += table[ids[r]] for every row with ids[r] >= 0.
Tensor add_indexed_rows(const Tensor& base, const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace prismer::ops
