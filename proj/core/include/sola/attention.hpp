#pragma once

#include <functional>
#include <span>

#include "sola/tensor.hpp"

namespace sola {

/// Query/key/value rows for one attention call; all three are [N x d].
struct AttentionInputs {
    Tensor q, k, v;

    std::size_t tokens() const { return q.extent(0); }
    std::size_t dim() const { return q.extent(1); }
    void validate() const;
};

using FeatureMap = std::function<std::vector<double>(std::span<const double>)>;

/// Nonnegative similarity kernel, optionally decomposable into feature maps
/// with evaluate(q, k) = feature_q(q) . feature_k(k).
struct SimilarityKernel {
    std::function<double(std::span<const double>, std::span<const double>)> evaluate;
    FeatureMap feature_q;  // may be empty
    FeatureMap feature_k;
};

SimilarityKernel exp_dot_kernel();
SimilarityKernel constant_kernel(double value = 1.0);
/// elu(x)+1 feature maps (strictly positive) with the induced dot-product kernel.
SimilarityKernel elu_feature_kernel();
FeatureMap elu_feature_map();

struct HiddenState {
    Tensor matrix;  // [m x d]
};

/// exp(q.k)-weighted mean of value rows, normalized per query (no dot-product
/// scaling). Materializes the NxN matrix; this is the quadratic reference.
Tensor softmax_attention(const AttentionInputs& inp);

/// Normalized kernel-weighted mean per token. Throws std::domain_error naming
/// the token when some query's kernel mass is zero.
Tensor kernel_attention(const AttentionInputs& inp, const SimilarityKernel& kernel);

struct LinearAttentionResult {
    Tensor output;       // [N x d]
    HiddenState hidden;  // feature_dim x d accumulator
};

/// Right-grouped decomposable attention: phi(Q) (phi(K)^T V). Never forms the
/// NxN matrix. Unnormalized.
LinearAttentionResult linear_attention(const AttentionInputs& inp, const FeatureMap& phi_q,
                                       const FeatureMap& phi_k);

/// Normalized variant, dividing token t by phi(q_t) . (phi(K)^T 1).
LinearAttentionResult linear_attention_normalized(const AttentionInputs& inp,
                                                  const FeatureMap& phi_q,
                                                  const FeatureMap& phi_k);

/// Distance-decayed hidden state at token t (1-based), by direct summation:
/// H_t = sum_{i != t} decay(|t-i|) phi(k_i)^T v_i + phi(k_t)^T v_t.
/// `decay` maps a positive integer distance to a weight in (0, 1].
HiddenState decayed_state(const Tensor& keys, const Tensor& values, const FeatureMap& phi_k,
                          const std::function<double(std::size_t)>& decay, std::size_t t);

/// Distance at which exp(-w delta) falls to eps: ln(1/eps)/w.
double effective_range(double w, double eps);

}  // namespace sola
