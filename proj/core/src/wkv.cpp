#include "sola/wkv.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sola/opcount.hpp"

namespace sola {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void validate_wkv_args(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
    if (k.rank() != 2 || !k.same_shape(v))
        throw std::invalid_argument("wkv: k " + k.shape_str() + " and v " + v.shape_str() +
                                    " must be equal [Nxd] tensors");
    if (w.size() != k.extent(1) || u.size() != k.extent(1))
        throw std::invalid_argument("wkv: decay/bonus must have " + std::to_string(k.extent(1)) +
                                    " channels, got " + w.shape_str() + " and " + u.shape_str());
}
}  // namespace

Tensor wkv_naive(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
    validate_wkv_args(k, v, w, u);
    const std::size_t n = k.extent(0), d = k.extent(1);
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor y({n, d});
    for (std::size_t c = 0; c < d; ++c) {
        const double wc = w[c], uc = u[c];
        for (std::size_t t = 0; t < n; ++t) {
            double num = 0.0, den = 0.0, mx = kNegInf;
            for (std::size_t i = 0; i < n; ++i) {
                const double dist =
                    static_cast<double>(i > t ? i - t : t - i);
                const double x = (i == t) ? uc + k.at(t, c)
                                          : -(dist - 1.0) * inv_n * wc + k.at(i, c);
                if (x <= mx) {
                    const double e = std::exp(x - mx);
                    num += e * v.at(i, c);
                    den += e;
                } else {
                    const double r = std::exp(mx - x);
                    num = num * r + v.at(i, c);
                    den = den * r + 1.0;
                    mx = x;
                }
                opcount::add(1);
            }
            y.at(t, c) = num / den;
        }
    }
    return y;
}

Tensor wkv_scan(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
    validate_wkv_args(k, v, w, u);
    const std::size_t n = k.extent(0), d = k.extent(1);
    const double inv_n = 1.0 / static_cast<double>(n);
    Tensor y({n, d});
    std::vector<double> fnum(n), fden(n), fmax(n), bnum(n), bden(n), bmax(n);
    for (std::size_t c = 0; c < d; ++c) {
        const double a = w[c] * inv_n;  // log-decay per unit distance
        const double uc = u[c];

        double p = 0.0, q = 0.0, m = kNegInf;
        for (std::size_t t = 0; t < n; ++t) {
            fnum[t] = p;
            fden[t] = q;
            fmax[t] = m;
            const double x = k.at(t, c);
            const double nm = std::max(m - a, x);
            const double e1 = std::exp(m - a - nm);
            const double e2 = std::exp(x - nm);
            p = e1 * p + e2 * v.at(t, c);
            q = e1 * q + e2;
            m = nm;
            opcount::add(1);
        }

        p = 0.0;
        q = 0.0;
        m = kNegInf;
        for (std::size_t t = n; t-- > 0;) {
            bnum[t] = p;
            bden[t] = q;
            bmax[t] = m;
            const double x = k.at(t, c);
            const double nm = std::max(m - a, x);
            const double e1 = std::exp(m - a - nm);
            const double e2 = std::exp(x - nm);
            p = e1 * p + e2 * v.at(t, c);
            q = e1 * q + e2;
            m = nm;
            opcount::add(1);
        }

        for (std::size_t t = 0; t < n; ++t) {
            const double bonus = uc + k.at(t, c);
            const double mx = std::max(std::max(fmax[t], bmax[t]), bonus);
            const double ef = std::exp(fmax[t] - mx);
            const double eb = std::exp(bmax[t] - mx);
            const double e0 = std::exp(bonus - mx);
            const double num = fnum[t] * ef + bnum[t] * eb + v.at(t, c) * e0;
            const double den = fden[t] * ef + bden[t] * eb + e0;
            y.at(t, c) = num / den;
            opcount::add(1);
        }
    }
    return y;
}

Differentiable wkv_vjp(const Tensor& k, const Tensor& v, const Tensor& w, const Tensor& u) {
    Differentiable out;
    out.value = wkv_scan(k, v, w, u);
    const Tensor y = out.value;
    out.pullback = [k, v, w, u, y](const Tensor& g) {
        const std::size_t n = k.extent(0), d = k.extent(1);
        const double inv_n = 1.0 / static_cast<double>(n);
        Tensor gk(k.shape()), gv(v.shape()), gw({d}), gu({d});
        std::vector<double> xs(n);
        for (std::size_t c = 0; c < d; ++c) {
            const double wc = w[c], uc = u[c];
            for (std::size_t t = 0; t < n; ++t) {
                const double gt = g.at(t, c);
                double mx = kNegInf;
                for (std::size_t i = 0; i < n; ++i) {
                    const double dist = static_cast<double>(i > t ? i - t : t - i);
                    xs[i] = (i == t) ? uc + k.at(t, c)
                                     : -(dist - 1.0) * inv_n * wc + k.at(i, c);
                    mx = std::max(mx, xs[i]);
                }
                double s = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    xs[i] = std::exp(xs[i] - mx);
                    s += xs[i];
                }
                const double yt = y.at(t, c);
                for (std::size_t i = 0; i < n; ++i) {
                    const double p = xs[i] / s;
                    const double diff = v.at(i, c) - yt;
                    gv.at(i, c) += gt * p;
                    gk.at(i, c) += gt * p * diff;
                    if (i == t) {
                        gu[c] += gt * p * diff;
                    } else {
                        const double dist = static_cast<double>(i > t ? i - t : t - i);
                        gw[c] += gt * p * (-(dist - 1.0) * inv_n) * diff;
                    }
                }
            }
        }
        return std::vector<Tensor>{gk, gv, gw, gu};
    };
    return out;
}

void TokenGrid::validate() const {
    if (tokens.rank() != 2 || tokens.extent(0) != height * width || height == 0 || width == 0)
        throw std::invalid_argument("token grid: tokens " + tokens.shape_str() +
                                    " do not match grid " + std::to_string(height) + "x" +
                                    std::to_string(width));
}

WkvParams WkvParams::init(std::size_t dim, std::mt19937_64& rng) {
    WkvParams p;
    p.norm_gain = Tensor::full({dim}, 1.0);
    p.norm_shift = Tensor({dim});
    p.recept = LinearProjection::init(dim, dim, rng);
    p.key = LinearProjection::init(dim, dim, rng);
    p.value = LinearProjection::init(dim, dim, rng);
    p.out = LinearProjection::init(dim, dim, rng);
    // Ramped decay gives channels heterogeneous interaction ranges.
    p.decay = Tensor({dim});
    for (std::size_t c = 0; c < dim; ++c)
        p.decay[c] = dim > 1 ? 1.0 + 7.0 * static_cast<double>(c) / static_cast<double>(dim - 1)
                             : 1.0;
    p.bonus = Tensor({dim});
    return p;
}

void WkvParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&norm_gain);
    dst.push_back(&norm_shift);
    for (LinearProjection* proj : {&recept, &key, &value, &out}) {
        dst.push_back(&proj->weight);
        if (proj->bias) dst.push_back(&*proj->bias);
    }
    dst.push_back(&decay);
    dst.push_back(&bonus);
}

ChannelMixParams ChannelMixParams::init(std::size_t dim, std::mt19937_64& rng, std::size_t ratio) {
    ChannelMixParams p;
    p.norm_gain = Tensor::full({dim}, 1.0);
    p.norm_shift = Tensor({dim});
    p.recept = LinearProjection::init(dim, dim, rng);
    p.key = LinearProjection::init(dim, dim * ratio, rng);
    p.value = LinearProjection::init(dim * ratio, dim, rng);
    return p;
}

void ChannelMixParams::collect(std::vector<Tensor*>& dst) {
    dst.push_back(&norm_gain);
    dst.push_back(&norm_shift);
    for (LinearProjection* proj : {&recept, &key, &value}) {
        dst.push_back(&proj->weight);
        if (proj->bias) dst.push_back(&*proj->bias);
    }
}

WkvLayerParams WkvLayerParams::init(std::size_t dim, std::mt19937_64& rng) {
    WkvLayerParams p;
    p.spatial = WkvParams::init(dim, rng);
    p.channel = ChannelMixParams::init(dim, rng);
    return p;
}

void WkvLayerParams::collect(std::vector<Tensor*>& dst) {
    spatial.collect(dst);
    channel.collect(dst);
}

Tensor spatial_mix(const TokenGrid& x, const WkvParams& p, Tensor* tap) {
    x.validate();
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor r = linear_apply(h, p.recept);
    const Tensor k = linear_apply(h, p.key);
    const Tensor v = linear_apply(h, p.value);
    const Tensor wkv = wkv_scan(k, v, p.decay, p.bonus);
    if (tap) *tap = wkv;
    const Tensor gated = elementwise_mul(sigmoid(r), wkv);
    return add(linear_apply(gated, p.out), x.tokens);
}

Tensor spatial_mix_train(const TokenGrid& x, const WkvParams& p, SpatialMixCache& cache) {
    x.validate();
    Differentiable ln = layer_norm_vjp(x.tokens, p.norm_gain, p.norm_shift);
    Differentiable r = linear_vjp(ln.value, p.recept);
    Differentiable k = linear_vjp(ln.value, p.key);
    Differentiable v = linear_vjp(ln.value, p.value);
    Differentiable wkv = wkv_vjp(k.value, v.value, p.decay, p.bonus);
    Differentiable gate = sigmoid_vjp(r.value);
    Differentiable mixed = elementwise_mul_vjp(gate.value, wkv.value);
    Differentiable out = linear_vjp(mixed.value, p.out);
    cache.ln = ln.pullback;
    cache.recept = r.pullback;
    cache.key = k.pullback;
    cache.value = v.pullback;
    cache.wkv = wkv.pullback;
    cache.gate = gate.pullback;
    cache.mix = mixed.pullback;
    cache.out = out.pullback;
    cache.wkv_out = wkv.value;
    return add(out.value, x.tokens);
}

namespace {
void accumulate(Tensor& into, const Tensor& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

void accumulate_linear(LinearProjection& grads, const std::vector<Tensor>& pulled) {
    accumulate(grads.weight, pulled[1]);
    if (grads.bias) accumulate(*grads.bias, pulled[2]);
}
}  // namespace

void spatial_mix_backward(const SpatialMixCache& cache, const Tensor& g_y, const Tensor* g_tap,
                          Tensor& g_x, WkvParams& grads) {
    // y = out(mix) + x
    std::vector<Tensor> out_pulled = cache.out(g_y);
    accumulate_linear(grads.out, out_pulled);
    std::vector<Tensor> mix_pulled = cache.mix(out_pulled[0]);
    Tensor g_wkv = std::move(mix_pulled[1]);
    if (g_tap) accumulate(g_wkv, *g_tap);
    std::vector<Tensor> gate_pulled = cache.gate(mix_pulled[0]);
    std::vector<Tensor> wkv_pulled = cache.wkv(g_wkv);
    accumulate(grads.decay, wkv_pulled[2]);
    accumulate(grads.bonus, wkv_pulled[3]);
    std::vector<Tensor> r_pulled = cache.recept(gate_pulled[0]);
    accumulate_linear(grads.recept, r_pulled);
    std::vector<Tensor> k_pulled = cache.key(wkv_pulled[0]);
    accumulate_linear(grads.key, k_pulled);
    std::vector<Tensor> v_pulled = cache.value(wkv_pulled[1]);
    accumulate_linear(grads.value, v_pulled);
    Tensor g_h = add(add(r_pulled[0], k_pulled[0]), v_pulled[0]);
    std::vector<Tensor> ln_pulled = cache.ln(g_h);
    accumulate(grads.norm_gain, ln_pulled[1]);
    accumulate(grads.norm_shift, ln_pulled[2]);
    g_x = add(ln_pulled[0], g_y);  // residual branch
}

Tensor channel_mix(const TokenGrid& x, const ChannelMixParams& p) {
    x.validate();
    const Tensor h = layer_norm(x.tokens, p.norm_gain, p.norm_shift);
    const Tensor r = linear_apply(h, p.recept);
    const Tensor vc = linear_apply(relu_sq(linear_apply(h, p.key)), p.value);
    return add(elementwise_mul(sigmoid(r), vc), x.tokens);
}

Tensor channel_mix_train(const TokenGrid& x, const ChannelMixParams& p, ChannelMixCache& cache) {
    x.validate();
    Differentiable ln = layer_norm_vjp(x.tokens, p.norm_gain, p.norm_shift);
    Differentiable r = linear_vjp(ln.value, p.recept);
    Differentiable kc = linear_vjp(ln.value, p.key);
    Differentiable act = relu_sq_vjp(kc.value);
    Differentiable vc = linear_vjp(act.value, p.value);
    Differentiable gate = sigmoid_vjp(r.value);
    Differentiable mixed = elementwise_mul_vjp(gate.value, vc.value);
    cache.ln = ln.pullback;
    cache.recept = r.pullback;
    cache.key = kc.pullback;
    cache.act = act.pullback;
    cache.value = vc.pullback;
    cache.gate = gate.pullback;
    cache.mix = mixed.pullback;
    return add(mixed.value, x.tokens);
}

void channel_mix_backward(const ChannelMixCache& cache, const Tensor& g_y, Tensor& g_x,
                          ChannelMixParams& grads) {
    std::vector<Tensor> mix_pulled = cache.mix(g_y);
    std::vector<Tensor> gate_pulled = cache.gate(mix_pulled[0]);
    std::vector<Tensor> v_pulled = cache.value(mix_pulled[1]);
    accumulate_linear(grads.value, v_pulled);
    std::vector<Tensor> act_pulled = cache.act(v_pulled[0]);
    std::vector<Tensor> k_pulled = cache.key(act_pulled[0]);
    accumulate_linear(grads.key, k_pulled);
    std::vector<Tensor> r_pulled = cache.recept(gate_pulled[0]);
    accumulate_linear(grads.recept, r_pulled);
    Tensor g_h = add(r_pulled[0], k_pulled[0]);
    std::vector<Tensor> ln_pulled = cache.ln(g_h);
    accumulate(grads.norm_gain, ln_pulled[1]);
    accumulate(grads.norm_shift, ln_pulled[2]);
    g_x = add(ln_pulled[0], g_y);
}

TokenGrid wkv_layer(const TokenGrid& x, const WkvLayerParams& p, Tensor* tap) {
    TokenGrid mid{spatial_mix(x, p.spatial, tap), x.height, x.width};
    return TokenGrid{channel_mix(mid, p.channel), x.height, x.width};
}

TokenGrid wkv_layer_train(const TokenGrid& x, const WkvLayerParams& p, WkvLayerCache& cache) {
    TokenGrid mid{spatial_mix_train(x, p.spatial, cache.spatial), x.height, x.width};
    return TokenGrid{channel_mix_train(mid, p.channel, cache.channel), x.height, x.width};
}

void wkv_layer_backward(const WkvLayerCache& cache, const Tensor& g_y, const Tensor* g_tap,
                        Tensor& g_x, WkvLayerParams& grads) {
    Tensor g_mid;
    channel_mix_backward(cache.channel, g_y, g_mid, grads.channel);
    spatial_mix_backward(cache.spatial, g_mid, g_tap, g_x, grads.spatial);
}

}  // namespace sola
