// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace tempofuse {

struct GradReport {
    bool loss_finite = true;
    double loss_value = 0.0;
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

// Compares reverse-mode gradients against central finite differences on a
// sample of coordinates from each named parameter. `loss_fn` must be a pure
// function of the current parameter values (any internal randomness must be
// re-seeded identically on every call). Relative error uses
// |a - n| / max(1, |a|, |n|) so near-zero gradients are compared absolutely.
inline GradReport check_gradients(const std::function<Tensor()>& loss_fn,
                                  std::vector<std::pair<std::string, Tensor>> params,
                                  std::size_t samples_per_param, double h, Rng& rng) {
    GradReport report;

    for (auto& [name, p] : params) {
        (void)name;
        p.ensure_grad();
        p.zero_grad();
    }

    Tensor loss = loss_fn();
    report.loss_value = loss.item();
    if (!std::isfinite(report.loss_value)) {
        report.loss_finite = false;
        return report;
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) {
        (void)name;
        analytic.push_back(p.grad());
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& [name, p] = params[pi];
        const std::size_t n = p.numel();
        std::vector<std::size_t> coords;
        if (n <= samples_per_param) {
            coords.resize(n);
            for (std::size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            // Sample distinct coordinates.
            std::vector<std::size_t> all(n);
            for (std::size_t i = 0; i < n; ++i) all[i] = i;
            rng.shuffle(all);
            coords.assign(all.begin(), all.begin() + static_cast<long>(samples_per_param));
        }
        for (std::size_t ci : coords) {
            const double orig = p.at(ci);
            double fp, fm;
            {
                NoGradGuard ng;
                p.at(ci) = orig + h;
                fp = loss_fn().item();
                p.at(ci) = orig - h;
                fm = loss_fn().item();
                p.at(ci) = orig;
            }
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                report.loss_finite = false;
                report.worst_parameter = name;
                report.worst_index = ci;
                return report;
            }
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi][ci];
            const double rel = std::fabs(a - numeric) /
                               std::max({1.0, std::fabs(a), std::fabs(numeric)});
            ++report.coordinates_checked;
            if (rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_parameter = name;
                report.worst_index = ci;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace tempofuse
