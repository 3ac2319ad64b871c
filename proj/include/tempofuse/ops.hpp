// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace tempofuse {

namespace detail {

inline Tensor make_op(std::vector<int> shape, std::vector<double> vals,
                      std::vector<Tensor> parents,
                      std::function<void(const Tensor&)> bw) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(vals));
    bool tracked = false;
    for (const Tensor& p : parents) {
        if (track(p)) {
            tracked = true;
            break;
        }
    }
    if (tracked) {
        auto n = std::make_shared<Node>();
        n->parents = std::move(parents);
        n->backward = std::move(bw);
        out.set_node(std::move(n));
    }
    return out;
}

inline void accumulate(Tensor& p, std::size_t i, double v) {
    p.ensure_grad();
    p.grad()[i] += v;
}

inline bool wants_grad(const Tensor& p) { return p.requires_grad() || p.node() != nullptr; }

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
    return detail::make_op(a.shape(), std::move(v), {a, b}, [a, b](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(a, i, g[i]);
        if (detail::wants_grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(b, i, g[i]);
    });
}

inline Tensor sub(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
    return detail::make_op(a.shape(), std::move(v), {a, b}, [a, b](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(a, i, g[i]);
        if (detail::wants_grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(b, i, -g[i]);
    });
}

inline Tensor mul(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
    return detail::make_op(a.shape(), std::move(v), {a, b}, [a, b](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(a, i, g[i] * b.at(i));
        if (detail::wants_grad(b))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(b, i, g[i] * a.at(i));
    });
}

// y = scale * x + shift, elementwise with scalar constants.
inline Tensor affine(Tensor x, double scale, double shift) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = scale * x.at(i) + shift;
    return detail::make_op(x.shape(), std::move(v), {x}, [x, scale](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(x))
            for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(x, i, scale * g[i]);
    });
}

inline Tensor scale(Tensor x, double s) { return affine(std::move(x), s, 0.0); }
inline Tensor neg(Tensor x) { return affine(std::move(x), -1.0, 0.0); }

// ---------------------------------------------------------------------------
// Matrix products (all operands rank-2, row-major)
// ---------------------------------------------------------------------------

namespace detail {
inline void require_rank2(const Tensor& t, const char* op) {
    if (t.shape().size() != 2) throw std::invalid_argument(std::string(op) + ": operand must be rank-2");
}
} // namespace detail

// C = A (m,k) * B (k,n)
inline Tensor matmul(Tensor a, Tensor b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) throw std::invalid_argument("matmul: inner dimensions differ");
    std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a.at(static_cast<std::size_t>(i) * k + p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j)
                v[static_cast<std::size_t>(i) * n + j] += av * b.at(static_cast<std::size_t>(p) * n + j);
        }
    return detail::make_op({m, n}, std::move(v), {a, b}, [a, b, m, k, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    for (int p = 0; p < k; ++p)
                        a.grad()[static_cast<std::size_t>(i) * k + p] += gv * b.at(static_cast<std::size_t>(p) * n + j);
                }
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    const double av = a.at(static_cast<std::size_t>(i) * k + p);
                    if (av == 0.0) continue;
                    for (int j = 0; j < n; ++j)
                        b.grad()[static_cast<std::size_t>(p) * n + j] += av * g[static_cast<std::size_t>(i) * n + j];
                }
        }
    });
}

// C = A (m,k) * B^T, with B stored (n,k)
inline Tensor matmul_nt(Tensor a, Tensor b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (k != b.shape()[1]) throw std::invalid_argument("matmul_nt: inner dimensions differ");
    std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p)
                s += a.at(static_cast<std::size_t>(i) * k + p) * b.at(static_cast<std::size_t>(j) * k + p);
            v[static_cast<std::size_t>(i) * n + j] = s;
        }
    return detail::make_op({m, n}, std::move(v), {a, b}, [a, b, m, k, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    for (int p = 0; p < k; ++p)
                        a.grad()[static_cast<std::size_t>(i) * k + p] += gv * b.at(static_cast<std::size_t>(j) * k + p);
                }
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) {
                    const double gv = g[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    for (int p = 0; p < k; ++p)
                        b.grad()[static_cast<std::size_t>(j) * k + p] += gv * a.at(static_cast<std::size_t>(i) * k + p);
                }
        }
    });
}

// C = A^T * B, with A stored (k,m), B stored (k,n)
inline Tensor matmul_tn(Tensor a, Tensor b) {
    detail::require_rank2(a, "matmul_tn");
    detail::require_rank2(b, "matmul_tn");
    const int k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
    if (k != b.shape()[0]) throw std::invalid_argument("matmul_tn: inner dimensions differ");
    std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
    for (int p = 0; p < k; ++p)
        for (int i = 0; i < m; ++i) {
            const double av = a.at(static_cast<std::size_t>(p) * m + i);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j)
                v[static_cast<std::size_t>(i) * n + j] += av * b.at(static_cast<std::size_t>(p) * n + j);
        }
    return detail::make_op({m, n}, std::move(v), {a, b}, [a, b, k, m, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < n; ++j)
                        s += b.at(static_cast<std::size_t>(p) * n + j) * g[static_cast<std::size_t>(i) * n + j];
                    a.grad()[static_cast<std::size_t>(p) * m + i] += s;
                }
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i)
                        s += a.at(static_cast<std::size_t>(p) * m + i) * g[static_cast<std::size_t>(i) * n + j];
                    b.grad()[static_cast<std::size_t>(p) * n + j] += s;
                }
        }
    });
}

// X (m,n) + row b (1,n) broadcast over rows.
inline Tensor add_rowwise(Tensor x, Tensor b) {
    detail::require_rank2(x, "add_rowwise");
    const int m = x.shape()[0], n = x.shape()[1];
    if (b.numel() != static_cast<std::size_t>(n)) throw std::invalid_argument("add_rowwise: bias width mismatch");
    std::vector<double> v(x.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            v[static_cast<std::size_t>(i) * n + j] = x.at(static_cast<std::size_t>(i) * n + j) + b.at(j);
    return detail::make_op(x.shape(), std::move(v), {x, b}, [x, b, m, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(x)) {
            x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i];
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) b.grad()[j] += g[static_cast<std::size_t>(i) * n + j];
        }
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

// Numerically stable row softmax: subtracts the row max before exponentiating.
inline Tensor softmax_rows(Tensor x) {
    detail::require_rank2(x, "softmax_rows");
    const int m = x.shape()[0], n = x.shape()[1];
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i)
        if (!std::isfinite(x.at(i))) throw std::invalid_argument("softmax_rows: non-finite input");
    for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double mx = x.at(off);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(off + j));
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            v[off + j] = std::exp(x.at(off + j) - mx);
            sum += v[off + j];
        }
        for (int j = 0; j < n; ++j) v[off + j] /= sum;
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [x, m, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        if (!detail::wants_grad(x)) return;
        const auto& g = out.grad();
        const auto& y = out.values();
        x.ensure_grad();
        for (int i = 0; i < m; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * n;
            double dotgy = 0.0;
            for (int j = 0; j < n; ++j) dotgy += g[off + j] * y[off + j];
            for (int j = 0; j < n; ++j) x.grad()[off + j] += y[off + j] * (g[off + j] - dotgy);
        }
    });
}

// Row-wise layer normalization with biased variance and learned gain/bias.
inline Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps = 1e-5) {
    detail::require_rank2(x, "layer_norm");
    const int m = x.shape()[0], n = x.shape()[1];
    if (gain.numel() != static_cast<std::size_t>(n) || bias.numel() != static_cast<std::size_t>(n))
        throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    std::vector<double> v(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += x.at(off + j);
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double c = x.at(off + j) - mu;
            var += c * c;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < n; ++j) {
            (*xhat)[off + j] = (x.at(off + j) - mu) * is;
            v[off + j] = gain.at(j) * (*xhat)[off + j] + bias.at(j);
        }
    }
    return detail::make_op(x.shape(), std::move(v), {x, gain, bias},
                           [x, gain, bias, xhat, inv_std, m, n](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        const bool wx = detail::wants_grad(x);
        const bool wg = detail::wants_grad(gain);
        const bool wb = detail::wants_grad(bias);
        if (wx) x.ensure_grad();
        if (wg) gain.ensure_grad();
        if (wb) bias.ensure_grad();
        for (int i = 0; i < m; ++i) {
            const std::size_t off = static_cast<std::size_t>(i) * n;
            if (wg || wb) {
                for (int j = 0; j < n; ++j) {
                    if (wg) gain.grad()[j] += g[off + j] * (*xhat)[off + j];
                    if (wb) bias.grad()[j] += g[off + j];
                }
            }
            if (wx) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dxh = g[off + j] * gain.at(j);
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * (*xhat)[off + j];
                }
                const double is = (*inv_std)[i];
                for (int j = 0; j < n; ++j) {
                    const double dxh = g[off + j] * gain.at(j);
                    x.grad()[off + j] += is * (dxh - sum_dxhat / n - (*xhat)[off + j] * sum_dxhat_xhat / n);
                }
            }
        }
    });
}

// Exact (erf-based) GELU.
inline Tensor gelu(Tensor x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x.at(i);
        v[i] = 0.5 * xv * (1.0 + std::erf(xv * inv_sqrt2));
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xv = x.at(i);
            const double cdf = 0.5 * (1.0 + std::erf(xv * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * xv * xv);
            x.grad()[i] += g[i] * (cdf + xv * pdf);
        }
    });
}

inline Tensor sigmoid(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double xv = x.at(i);
        v[i] = xv >= 0.0 ? 1.0 / (1.0 + std::exp(-xv)) : std::exp(xv) / (1.0 + std::exp(xv));
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        const auto& y = out.values();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

inline Tensor tanh_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        const auto& y = out.values();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

inline Tensor exp_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        const auto& y = out.values();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * y[i];
    });
}

inline Tensor log_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] / x.at(i);
    });
}

inline Tensor sin_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * std::cos(x.at(i));
    });
}

inline Tensor cos_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::cos(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * (-std::sin(x.at(i)));
    });
}

// Gradient passes through only at strictly interior points.
inline Tensor clamp(Tensor x, double lo, double hi) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(hi, std::max(lo, x.at(i)));
    return detail::make_op(x.shape(), std::move(v), {x}, [x, lo, hi](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xv = x.at(i);
            if (xv > lo && xv < hi) x.grad()[i] += g[i];
        }
    });
}

// x^c elementwise with constant exponent; subgradient 0 at x == 0.
inline Tensor pow_const(Tensor x, double c) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::pow(x.at(i), c);
    return detail::make_op(x.shape(), std::move(v), {x}, [x, c](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xv = x.at(i);
            if (xv == 0.0) continue;
            x.grad()[i] += g[i] * c * std::pow(xv, c - 1.0);
        }
    });
}

// max(0, x) elementwise; subgradient 0 at x == 0.
inline Tensor relu(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x.at(i) > 0.0) x.grad()[i] += g[i];
    });
}

// |x| elementwise; subgradient 0 at x == 0.
inline Tensor abs_op(Tensor x) {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(x.at(i));
    return detail::make_op(x.shape(), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xv = x.at(i);
            if (xv > 0.0)
                x.grad()[i] += g[i];
            else if (xv < 0.0)
                x.grad()[i] -= g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tensor x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i);
    return detail::make_op({1, 1}, {s}, {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const double g = out.grad()[0];
        x.ensure_grad();
        for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += g;
    });
}

inline Tensor mean(Tensor x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i);
    const double n = static_cast<double>(x.numel());
    return detail::make_op({1, 1}, {s / n}, {x}, [x, n](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const double g = out.grad()[0] / n;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += g;
    });
}

// Column means of a matrix: (m,n) -> (1,n).
inline Tensor mean_rows(Tensor x) {
    detail::require_rank2(x, "mean_rows");
    const int m = x.shape()[0], n = x.shape()[1];
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) v[j] += x.at(static_cast<std::size_t>(i) * n + j);
    for (int j = 0; j < n; ++j) v[j] /= m;
    return detail::make_op({1, n}, std::move(v), {x}, [x, m, n](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) x.grad()[static_cast<std::size_t>(i) * n + j] += g[j] / m;
    });
}

// Sum of a list of same-shape tensors as a single graph node.
inline Tensor add_n(std::vector<Tensor> xs) {
    if (xs.empty()) throw std::invalid_argument("add_n: empty operand list");
    for (std::size_t i = 1; i < xs.size(); ++i) detail::check_same_shape(xs[0], xs[i], "add_n");
    std::vector<double> v(xs[0].numel(), 0.0);
    for (const Tensor& t : xs)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += t.at(i);
    std::vector<Tensor> parents = xs;
    return detail::make_op(xs[0].shape(), std::move(v), std::move(parents), [xs](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        for (Tensor& t : xs) {
            if (!detail::wants_grad(t)) continue;
            t.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) t.grad()[i] += g[i];
        }
    });
}

// Euclidean norm with zero subgradient at the origin.
inline Tensor norm_l2(Tensor x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i) * x.at(i);
    const double nrm = std::sqrt(s);
    return detail::make_op({1, 1}, {nrm}, {x}, [x, nrm](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        if (nrm == 0.0) return;
        const double g = out.grad()[0];
        x.ensure_grad();
        for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += g * x.at(i) / nrm;
    });
}

inline Tensor sum_squares(Tensor x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x.at(i) * x.at(i);
    return detail::make_op({1, 1}, {s}, {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const double g = out.grad()[0];
        x.ensure_grad();
        for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += 2.0 * g * x.at(i);
    });
}

inline Tensor dot(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
    return detail::make_op({1, 1}, {s}, {a, b}, [a, b](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const double g = out.grad()[0];
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (std::size_t i = 0; i < a.numel(); ++i) a.grad()[i] += g * b.at(i);
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (std::size_t i = 0; i < b.numel(); ++i) b.grad()[i] += g * a.at(i);
        }
    });
}

// Cosine similarity with the convention that a zero-norm operand yields
// exactly 0 with zero gradient.
inline Tensor cosine_similarity(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "cosine_similarity");
    double dotab = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        dotab += a.at(i) * b.at(i);
        na2 += a.at(i) * a.at(i);
        nb2 += b.at(i) * b.at(i);
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const bool degenerate = (na == 0.0 || nb == 0.0);
    const double c = degenerate ? 0.0 : dotab / (na * nb);
    return detail::make_op({1, 1}, {c}, {a, b}, [a, b, na, nb, c, degenerate](const Tensor& out) mutable {
        if (!out.has_grad() || degenerate) return;
        const double g = out.grad()[0];
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (std::size_t i = 0; i < a.numel(); ++i)
                a.grad()[i] += g * (b.at(i) / (na * nb) - c * a.at(i) / (na * na));
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (std::size_t i = 0; i < b.numel(); ++i)
                b.grad()[i] += g * (a.at(i) / (na * nb) - c * b.at(i) / (nb * nb));
        }
    });
}

// y = x / s with s a scalar tensor.
inline Tensor div_scalar(Tensor x, Tensor s) {
    if (!s.is_scalar()) throw std::invalid_argument("div_scalar: divisor must be scalar");
    const double sv = s.item();
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) / sv;
    return detail::make_op(x.shape(), std::move(v), {x, s}, [x, s, sv](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(x)) {
            x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] / sv;
        }
        if (detail::wants_grad(s)) {
            s.ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.at(i);
            s.grad()[0] += -acc / (sv * sv);
        }
    });
}

// y = x * s with s a scalar tensor broadcast over every element of x.
inline Tensor mul_scalar(Tensor x, Tensor s) {
    if (!s.is_scalar()) throw std::invalid_argument("mul_scalar: factor must be scalar");
    const double sv = s.item();
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * sv;
    return detail::make_op(x.shape(), std::move(v), {x, s}, [x, s, sv](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(x)) {
            x.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * sv;
        }
        if (detail::wants_grad(s)) {
            s.ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x.at(i);
            s.grad()[0] += acc;
        }
    });
}

// y = a / b elementwise for scalar tensors (used for ratio-style losses).
inline Tensor div_elem(Tensor a, Tensor b) {
    detail::check_same_shape(a, b, "div_elem");
    std::vector<double> v(a.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) / b.at(i);
    return detail::make_op(a.shape(), std::move(v), {a, b}, [a, b](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        if (detail::wants_grad(a)) {
            a.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] / b.at(i);
        }
        if (detail::wants_grad(b)) {
            b.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                b.grad()[i] += -g[i] * a.at(i) / (b.at(i) * b.at(i));
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor concat_cols(std::vector<Tensor> xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty operand list");
    const int m = xs[0].shape()[0];
    int total = 0;
    for (const Tensor& t : xs) {
        detail::require_rank2(t, "concat_cols");
        if (t.shape()[0] != m) throw std::invalid_argument("concat_cols: row count mismatch");
        total += t.shape()[1];
    }
    std::vector<double> v(static_cast<std::size_t>(m) * total);
    int base = 0;
    for (const Tensor& t : xs) {
        const int c = t.shape()[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j)
                v[static_cast<std::size_t>(i) * total + base + j] = t.at(static_cast<std::size_t>(i) * c + j);
        base += c;
    }
    std::vector<Tensor> parents = xs;
    return detail::make_op({m, total}, std::move(v), std::move(parents), [xs, m, total](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        int base = 0;
        for (Tensor& t : xs) {
            const int c = t.shape()[1];
            if (detail::wants_grad(t)) {
                t.ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < c; ++j)
                        t.grad()[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i) * total + base + j];
            }
            base += c;
        }
    });
}

inline Tensor concat_rows(std::vector<Tensor> xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty operand list");
    const int n = xs[0].shape()[1];
    int total = 0;
    for (const Tensor& t : xs) {
        detail::require_rank2(t, "concat_rows");
        if (t.shape()[1] != n) throw std::invalid_argument("concat_rows: column count mismatch");
        total += t.shape()[0];
    }
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(total) * n);
    for (const Tensor& t : xs) v.insert(v.end(), t.values().begin(), t.values().end());
    std::vector<Tensor> parents = xs;
    return detail::make_op({total, n}, std::move(v), std::move(parents), [xs](const Tensor& out) mutable {
        if (!out.has_grad()) return;
        const auto& g = out.grad();
        std::size_t base = 0;
        for (Tensor& t : xs) {
            if (detail::wants_grad(t)) {
                t.ensure_grad();
                for (std::size_t i = 0; i < t.numel(); ++i) t.grad()[i] += g[base + i];
            }
            base += t.numel();
        }
    });
}

inline Tensor slice_cols(Tensor x, int c0, int len) {
    detail::require_rank2(x, "slice_cols");
    const int m = x.shape()[0], n = x.shape()[1];
    if (c0 < 0 || len <= 0 || c0 + len > n) throw std::invalid_argument("slice_cols: range out of bounds");
    std::vector<double> v(static_cast<std::size_t>(m) * len);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
            v[static_cast<std::size_t>(i) * len + j] = x.at(static_cast<std::size_t>(i) * n + c0 + j);
    return detail::make_op({m, len}, std::move(v), {x}, [x, c0, len, m, n](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                x.grad()[static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * len + j];
    });
}

inline Tensor slice_rows(Tensor x, int r0, int len) {
    detail::require_rank2(x, "slice_rows");
    const int m = x.shape()[0], n = x.shape()[1];
    if (r0 < 0 || len <= 0 || r0 + len > m) throw std::invalid_argument("slice_rows: range out of bounds");
    std::vector<double> v(x.values().begin() + static_cast<std::size_t>(r0) * n,
                          x.values().begin() + static_cast<std::size_t>(r0 + len) * n);
    return detail::make_op({len, n}, std::move(v), {x}, [x, r0, len, n](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            x.grad()[static_cast<std::size_t>(r0) * n + i] += g[i];
    });
}

inline Tensor row(Tensor x, int i) { return slice_rows(std::move(x), i, 1); }

inline Tensor reshape(Tensor x, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    if (n != x.numel()) throw std::invalid_argument("reshape: element count mismatch");
    std::vector<double> v = x.values();
    return detail::make_op(std::move(shape), std::move(v), {x}, [x](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Training-specific ops
// ---------------------------------------------------------------------------

// Inverted dropout driven by a forked deterministic stream; identity when
// rate <= 0 or evaluation mode is active.
inline Tensor dropout(Tensor x, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
        (*mask)[i] = m;
        v[i] = x.at(i) * m;
    }
    return detail::make_op(x.shape(), std::move(v), {x}, [x, mask](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i] * (*mask)[i];
    });
}

// Gradient reversal: identity forward, multiplies the incoming gradient by
// -alpha on the way back.
inline Tensor gradient_reversal(Tensor x, double alpha) {
    std::vector<double> v = x.values();
    return detail::make_op(x.shape(), std::move(v), {x}, [x, alpha](const Tensor& out) mutable {
        if (!out.has_grad() || !detail::wants_grad(x)) return;
        const auto& g = out.grad();
        x.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += -alpha * g[i];
    });
}

} // namespace tempofuse
