#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "sola/tensor.hpp"

namespace sola {

/// A value together with its vector-Jacobian pullback: the closure maps an
/// output cotangent to the cotangents of the op's inputs (in argument order).
struct Differentiable {
    Tensor value;
    std::function<std::vector<Tensor>(const Tensor&)> pullback;
};

/// Dense affine map. `weight` is [in_dim x out_dim]; bias is optional.
struct LinearProjection {
    Tensor weight;
    std::optional<Tensor> bias;

    std::size_t in_dim() const { return weight.extent(0); }
    std::size_t out_dim() const { return weight.extent(1); }
    std::size_t param_count() const { return weight.size() + (bias ? bias->size() : 0); }

    static LinearProjection init(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng,
                                 bool with_bias = true);
    static LinearProjection zeros(std::size_t in_dim, std::size_t out_dim, bool with_bias = true);
};

// ---- forward-only primitives -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);

/// Row-wise softmax with per-row max subtraction; rows sum to 1.
Tensor softmax_rows(const Tensor& x);

/// Normalizes the trailing axis to zero mean / unit variance, then applies
/// the channel-wise affine (gain, shift).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-6);

Tensor sigmoid(const Tensor& x);
Tensor relu_sq(const Tensor& x);
Tensor gelu(const Tensor& x);

/// Per-channel 3x3 convolution on an HxWxC tensor, zero padding of width 1.
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernel);

/// y = x.W + b. `x` is [N x in_dim].
Tensor linear_apply(const Tensor& x, const LinearProjection& p);

// ---- the same primitives with pullbacks ---------------------------------

Differentiable matmul_vjp(const Tensor& a, const Tensor& b);
Differentiable softmax_rows_vjp(const Tensor& x);
Differentiable layer_norm_vjp(const Tensor& x, const Tensor& gain, const Tensor& shift,
                              double eps = 1e-6);
Differentiable sigmoid_vjp(const Tensor& x);
Differentiable relu_sq_vjp(const Tensor& x);
Differentiable gelu_vjp(const Tensor& x);
Differentiable elementwise_mul_vjp(const Tensor& a, const Tensor& b);
Differentiable depthwise_conv3x3_vjp(const Tensor& x, const Tensor& kernel);
/// pullback returns {g_x, g_weight, g_bias} (g_bias only when bias present).
Differentiable linear_vjp(const Tensor& x, const LinearProjection& p);

}  // namespace sola
