// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace tempofuse {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline void zero_gradients(const ParamList& params) {
    for (const auto& [name, t] : params) Tensor(t).zero_grad();
}

// Euclidean norm of the concatenated gradient; parameters that never received
// a gradient count as zero.
inline double global_grad_norm(const ParamList& params) {
    double ss = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad()) ss += g * g;
    }
    return std::sqrt(ss);
}

// Global-norm clipping: if the joint gradient norm exceeds max_norm, every
// gradient is scaled by max_norm / norm. Returns the pre-clip norm.
inline double clip_gradients(const ParamList& params, double max_norm) {
    if (max_norm <= 0) throw std::invalid_argument("clip_gradients: max_norm must be positive");
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            Tensor handle(t);
            for (double& g : handle.grad()) g *= s;
        }
    }
    return norm;
}

// Adaptive moment estimation with bias correction. Weight decay is absent by
// design: the L2 penalty lives inside the loss, so decay arrives through the
// gradient itself.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step_count = 0;
    std::vector<std::vector<double>> m, v;  // aligned with the parameter list

    Adam() = default;
    Adam(const ParamList& params, double lr_, double b1, double b2, double eps_)
        : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (const auto& [name, t] : params) {
            m.emplace_back(t.numel(), 0.0);
            v.emplace_back(t.numel(), 0.0);
        }
    }

    void step(const ParamList& params) {
        if (params.size() != m.size())
            throw std::invalid_argument("adam: parameter list does not match optimizer state");
        step_count += 1;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor t = params[i].second;
            const bool has = t.has_grad();
            auto& vals = t.values();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double g = has ? t.grad()[j] : 0.0;
                m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g;
                v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g * g;
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                vals[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

} // namespace tempofuse
