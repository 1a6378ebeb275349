#include "sola/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sola {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void require_rank2(const Tensor& t, const char* where) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(where) + ": expected rank-2 tensor, got " +
                                    t.shape_str());
}

// Rows = product of leading extents, cols = trailing extent.
std::pair<std::size_t, std::size_t> row_view(const Tensor& t, const char* where) {
    if (t.rank() == 0 || t.size() == 0)
        throw std::invalid_argument(std::string(where) + ": empty axis");
    const std::size_t cols = t.shape().back();
    return {t.size() / cols, cols};
}
}  // namespace

LinearProjection LinearProjection::init(std::size_t in_dim, std::size_t out_dim,
                                        std::mt19937_64& rng, bool with_bias) {
    LinearProjection p;
    p.weight = randn(rng, {in_dim, out_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    if (with_bias) p.bias = Tensor({out_dim});
    return p;
}

LinearProjection LinearProjection::zeros(std::size_t in_dim, std::size_t out_dim, bool with_bias) {
    LinearProjection p;
    p.weight = Tensor({in_dim, out_dim});
    if (with_bias) p.bias = Tensor({out_dim});
    return p;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.extent(1) != b.extent(0))
        throw std::invalid_argument("matmul: inner dimensions differ, " + a.shape_str() + " vs " +
                                    b.shape_str());
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c({m, n});
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = pa[i * k + kk];
            if (aik == 0.0) continue;
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor t({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= s;
    return c;
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "elementwise_mul");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

Tensor softmax_rows(const Tensor& x) {
    auto [rows, cols] = row_view(x, "softmax_rows");
    Tensor y = x;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = y.data() + r * cols;
        double mx = p[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, p[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (std::size_t j = 0; j < cols; ++j) p[j] /= sum;
    }
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    auto [rows, cols] = row_view(x, "layer_norm");
    if (gain.size() != cols || shift.size() != cols)
        throw std::invalid_argument("layer_norm: affine size " + gain.shape_str() +
                                    " does not match channel count of " + x.shape_str());
    Tensor y = x;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = y.data() + r * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += p[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = p[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j)
            p[j] = gain[j] * ((p[j] - mean) * inv) + shift[j];
    }
    return y;
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-y[i]));
    return y;
}

Tensor relu_sq(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = std::max(y[i], 0.0);
        y[i] = r * r;
    }
    return y;
}

Tensor gelu(const Tensor& x) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = 0.5 * y[i] * (1.0 + std::erf(y[i] * kInvSqrt2));
    return y;
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 3)
        throw std::invalid_argument("depthwise_conv3x3: input must be HxWxC, got " + x.shape_str());
    const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (kernel.rank() != 3 || kernel.extent(0) != 3 || kernel.extent(1) != 3 ||
        kernel.extent(2) != c)
        throw std::invalid_argument("depthwise_conv3x3: kernel must be 3x3x" + std::to_string(c) +
                                    ", got " + kernel.shape_str());
    Tensor y({h, w, c});
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t dy = 0; dy < 3; ++dy) {
                const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dy) - 1;
                if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dx = 0; dx < 3; ++dx) {
                    const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dx) - 1;
                    if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* xs = x.data() + (static_cast<std::size_t>(si) * w +
                                                   static_cast<std::size_t>(sj)) * c;
                    const double* ks = kernel.data() + (dy * 3 + dx) * c;
                    double* ys = y.data() + (i * w + j) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) ys[ch] += xs[ch] * ks[ch];
                }
            }
        }
    }
    return y;
}

Tensor linear_apply(const Tensor& x, const LinearProjection& p) {
    Tensor y = matmul(x, p.weight);
    if (p.bias) {
        const std::size_t n = y.extent(0), d = y.extent(1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) += (*p.bias)[j];
    }
    return y;
}

Differentiable matmul_vjp(const Tensor& a, const Tensor& b) {
    Differentiable out;
    out.value = matmul(a, b);
    out.pullback = [a, b](const Tensor& g) {
        return std::vector<Tensor>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    };
    return out;
}

Differentiable softmax_rows_vjp(const Tensor& x) {
    Differentiable out;
    out.value = softmax_rows(x);
    const Tensor y = out.value;
    out.pullback = [y](const Tensor& g) {
        require_same_shape(g, y, "softmax_rows pullback");
        const std::size_t cols = y.shape().back();
        const std::size_t rows = y.size() / cols;
        Tensor gx = g;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* py = y.data() + r * cols;
            double* pg = gx.data() + r * cols;
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += pg[j] * py[j];
            for (std::size_t j = 0; j < cols; ++j) pg[j] = py[j] * (pg[j] - dot);
        }
        return std::vector<Tensor>{gx};
    };
    return out;
}

Differentiable layer_norm_vjp(const Tensor& x, const Tensor& gain, const Tensor& shift,
                              double eps) {
    Differentiable out;
    out.value = layer_norm(x, gain, shift, eps);
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.size() / cols;
    // Cache the normalized activations and per-row inverse stddev.
    Tensor xhat(x.shape());
    std::vector<double> inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = x.data() + r * cols;
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += p[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double d = p[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        inv[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) xhat[r * cols + j] = (p[j] - mean) * inv[r];
    }
    const Tensor gain_copy = gain;
    out.pullback = [xhat, inv, gain_copy, rows, cols, shape = x.shape()](const Tensor& g) {
        Tensor gx(shape);
        Tensor ggain({cols});
        Tensor gshift({cols});
        for (std::size_t r = 0; r < rows; ++r) {
            const double* pg = g.data() + r * cols;
            const double* ph = xhat.data() + r * cols;
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                const double dh = pg[j] * gain_copy[j];
                mean_dh += dh;
                mean_dh_h += dh * ph[j];
                ggain[j] += pg[j] * ph[j];
                gshift[j] += pg[j];
            }
            mean_dh /= static_cast<double>(cols);
            mean_dh_h /= static_cast<double>(cols);
            for (std::size_t j = 0; j < cols; ++j) {
                const double dh = pg[j] * gain_copy[j];
                gx[r * cols + j] = inv[r] * (dh - mean_dh - ph[j] * mean_dh_h);
            }
        }
        return std::vector<Tensor>{gx, ggain, gshift};
    };
    return out;
}

Differentiable sigmoid_vjp(const Tensor& x) {
    Differentiable out;
    out.value = sigmoid(x);
    const Tensor y = out.value;
    out.pullback = [y](const Tensor& g) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
        return std::vector<Tensor>{gx};
    };
    return out;
}

Differentiable relu_sq_vjp(const Tensor& x) {
    Differentiable out;
    out.value = relu_sq(x);
    const Tensor xc = x;
    out.pullback = [xc](const Tensor& g) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 2.0 * std::max(xc[i], 0.0);
        return std::vector<Tensor>{gx};
    };
    return out;
}

Differentiable gelu_vjp(const Tensor& x) {
    Differentiable out;
    out.value = gelu(x);
    const Tensor xc = x;
    out.pullback = [xc](const Tensor& g) {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(xc[i] * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xc[i] * xc[i]);
            gx[i] *= cdf + xc[i] * pdf;
        }
        return std::vector<Tensor>{gx};
    };
    return out;
}

Differentiable elementwise_mul_vjp(const Tensor& a, const Tensor& b) {
    Differentiable out;
    out.value = elementwise_mul(a, b);
    out.pullback = [a, b](const Tensor& g) {
        return std::vector<Tensor>{elementwise_mul(g, b), elementwise_mul(g, a)};
    };
    return out;
}

Differentiable depthwise_conv3x3_vjp(const Tensor& x, const Tensor& kernel) {
    Differentiable out;
    out.value = depthwise_conv3x3(x, kernel);
    out.pullback = [x, kernel](const Tensor& g) {
        const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
        Tensor gx(x.shape());
        Tensor gk(kernel.shape());
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                const double* gs = g.data() + (i * w + j) * c;
                for (std::size_t dy = 0; dy < 3; ++dy) {
                    const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dy) - 1;
                    if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t dx = 0; dx < 3; ++dx) {
                        const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dx) - 1;
                        if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t src =
                            (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * c;
                        const std::size_t kidx = (dy * 3 + dx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            gx[src + ch] += gs[ch] * kernel[kidx + ch];
                            gk[kidx + ch] += gs[ch] * x[src + ch];
                        }
                    }
                }
            }
        }
        return std::vector<Tensor>{gx, gk};
    };
    return out;
}

Differentiable linear_vjp(const Tensor& x, const LinearProjection& p) {
    Differentiable out;
    out.value = linear_apply(x, p);
    const bool has_bias = p.bias.has_value();
    out.pullback = [x, weight = p.weight, has_bias](const Tensor& g) {
        std::vector<Tensor> grads;
        grads.push_back(matmul(g, transpose(weight)));
        grads.push_back(matmul(transpose(x), g));
        if (has_bias) {
            const std::size_t n = g.extent(0), d = g.extent(1);
            Tensor gb({d});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) gb[j] += g.at(i, j);
            grads.push_back(std::move(gb));
        }
        return grads;
    };
    return out;
}

}  // namespace sola
