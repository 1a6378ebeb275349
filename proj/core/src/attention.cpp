#include "sola/attention.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sola/ops.hpp"

namespace sola {

namespace {
std::span<const double> row_span(const Tensor& t, std::size_t row) {
    return {t.data() + row * t.extent(1), t.extent(1)};
}

Tensor apply_feature_map(const Tensor& x, const FeatureMap& phi) {
    const std::size_t n = x.extent(0);
    std::vector<double> first = phi(row_span(x, 0));
    const std::size_t m = first.size();
    Tensor out({n, m});
    for (std::size_t j = 0; j < m; ++j) out.at(0, j) = first[j];
    for (std::size_t i = 1; i < n; ++i) {
        const std::vector<double> f = phi(row_span(x, i));
        if (f.size() != m)
            throw std::invalid_argument("feature map produced inconsistent dimensions");
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = f[j];
    }
    return out;
}
}  // namespace

void AttentionInputs::validate() const {
    if (q.rank() != 2 || !q.same_shape(k) || !q.same_shape(v))
        throw std::invalid_argument("attention inputs must be three equal [Nxd] tensors, got q " +
                                    q.shape_str() + ", k " + k.shape_str() + ", v " +
                                    v.shape_str());
}

SimilarityKernel exp_dot_kernel() {
    SimilarityKernel kernel;
    kernel.evaluate = [](std::span<const double> q, std::span<const double> k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * k[i];
        return std::exp(dot);
    };
    return kernel;
}

SimilarityKernel constant_kernel(double value) {
    SimilarityKernel kernel;
    kernel.evaluate = [value](std::span<const double>, std::span<const double>) { return value; };
    return kernel;
}

FeatureMap elu_feature_map() {
    return [](std::span<const double> x) {
        std::vector<double> f(x.size());
        for (std::size_t i = 0; i < x.size(); ++i)
            f[i] = x[i] > 0.0 ? x[i] + 1.0 : std::exp(x[i]);
        return f;
    };
}

SimilarityKernel elu_feature_kernel() {
    SimilarityKernel kernel;
    kernel.feature_q = elu_feature_map();
    kernel.feature_k = elu_feature_map();
    kernel.evaluate = [phi = elu_feature_map()](std::span<const double> q,
                                                std::span<const double> k) {
        const std::vector<double> fq = phi(q);
        const std::vector<double> fk = phi(k);
        double dot = 0.0;
        for (std::size_t i = 0; i < fq.size(); ++i) dot += fq[i] * fk[i];
        return dot;
    };
    return kernel;
}

Tensor softmax_attention(const AttentionInputs& inp) {
    inp.validate();
    const Tensor scores = matmul(inp.q, transpose(inp.k));
    return matmul(softmax_rows(scores), inp.v);
}

Tensor kernel_attention(const AttentionInputs& inp, const SimilarityKernel& kernel) {
    inp.validate();
    const std::size_t n = inp.tokens(), d = inp.dim();
    Tensor out({n, d});
    for (std::size_t t = 0; t < n; ++t) {
        double denom = 0.0;
        std::vector<double> acc(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double w = kernel.evaluate(row_span(inp.q, t), row_span(inp.k, i));
            denom += w;
            const double* vi = inp.v.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) acc[j] += w * vi[j];
        }
        if (denom <= 0.0)
            throw std::domain_error("kernel_attention: degenerate kernel, zero mass at token " +
                                    std::to_string(t + 1));
        for (std::size_t j = 0; j < d; ++j) out.at(t, j) = acc[j] / denom;
    }
    return out;
}

LinearAttentionResult linear_attention(const AttentionInputs& inp, const FeatureMap& phi_q,
                                       const FeatureMap& phi_k) {
    inp.validate();
    const Tensor fq = apply_feature_map(inp.q, phi_q);
    const Tensor fk = apply_feature_map(inp.k, phi_k);
    LinearAttentionResult res;
    res.hidden.matrix = matmul(transpose(fk), inp.v);
    res.output = matmul(fq, res.hidden.matrix);
    return res;
}

LinearAttentionResult linear_attention_normalized(const AttentionInputs& inp,
                                                  const FeatureMap& phi_q,
                                                  const FeatureMap& phi_k) {
    inp.validate();
    const Tensor fq = apply_feature_map(inp.q, phi_q);
    const Tensor fk = apply_feature_map(inp.k, phi_k);
    LinearAttentionResult res;
    res.hidden.matrix = matmul(transpose(fk), inp.v);
    res.output = matmul(fq, res.hidden.matrix);

    const std::size_t n = inp.tokens(), d = inp.dim(), m = fk.extent(1);
    std::vector<double> key_mass(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) key_mass[j] += fk.at(i, j);
    for (std::size_t t = 0; t < n; ++t) {
        double denom = 0.0;
        for (std::size_t j = 0; j < m; ++j) denom += fq.at(t, j) * key_mass[j];
        if (denom <= 0.0)
            throw std::domain_error(
                "linear_attention_normalized: degenerate feature mass at token " +
                std::to_string(t + 1));
        for (std::size_t j = 0; j < d; ++j) res.output.at(t, j) /= denom;
    }
    return res;
}

HiddenState decayed_state(const Tensor& keys, const Tensor& values, const FeatureMap& phi_k,
                          const std::function<double(std::size_t)>& decay, std::size_t t) {
    if (keys.rank() != 2 || values.rank() != 2 || keys.extent(0) != values.extent(0))
        throw std::invalid_argument("decayed_state: keys " + keys.shape_str() + " and values " +
                                    values.shape_str() + " must share token count");
    const std::size_t n = keys.extent(0), d = values.extent(1);
    if (t < 1 || t > n)
        throw std::out_of_range("decayed_state: token index " + std::to_string(t) +
                                " outside [1, " + std::to_string(n) + "]");
    const std::size_t ti = t - 1;
    const Tensor fk = apply_feature_map(keys, phi_k);
    const std::size_t m = fk.extent(1);
    HiddenState state;
    state.matrix = Tensor({m, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double w = (i == ti) ? 1.0
                                   : decay(i > ti ? i - ti : ti - i);
        for (std::size_t a = 0; a < m; ++a) {
            const double fa = fk.at(i, a) * w;
            if (fa == 0.0) continue;
            for (std::size_t b = 0; b < d; ++b) state.matrix.at(a, b) += fa * values.at(i, b);
        }
    }
    return state;
}

double effective_range(double w, double eps) {
    if (w <= 0.0) throw std::invalid_argument("effective_range: decay rate must be positive");
    if (eps <= 0.0 || eps >= 1.0)
        throw std::invalid_argument("effective_range: tolerance must lie in (0, 1)");
    return std::log(1.0 / eps) / w;
}

}  // namespace sola
