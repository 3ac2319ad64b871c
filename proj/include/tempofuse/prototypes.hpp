// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace tempofuse {

// Persistent per-(dataset, class) EMA prototype store. Values are plain
// doubles: the bank lives outside the computation graph and never receives
// gradients. Stored prototypes are NOT renormalized after updates; only the
// derived global class prototypes are unit-normalized.
struct PrototypeBank {
    int n_datasets = 0;
    int d = 0;
    double m = 0.99;  // EMA momentum
    std::vector<std::vector<double>> proto;  // [n_datasets * 2][d]
    std::vector<bool> initialized;           // [n_datasets * 2]

    PrototypeBank() = default;
    PrototypeBank(int datasets, int dim, double momentum = 0.99)
        : n_datasets(datasets), d(dim), m(momentum),
          proto(static_cast<std::size_t>(datasets) * 2, std::vector<double>(static_cast<std::size_t>(dim), 0.0)),
          initialized(static_cast<std::size_t>(datasets) * 2, false) {}

    std::size_t cell(int dataset, int cls) const {
        if (dataset < 0 || dataset >= n_datasets || (cls != 0 && cls != 1))
            throw std::out_of_range("prototype bank: cell out of range");
        return static_cast<std::size_t>(dataset) * 2 + static_cast<std::size_t>(cls);
    }
};

namespace detail {
inline double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
inline void normalize_in_place(std::vector<double>& v) {
    const double n = vec_norm(v);
    if (n == 0.0) return;  // zero vectors stay zero rather than dividing by 0
    for (double& x : v) x /= n;
}
} // namespace detail

// In-batch class-centroid loss: for each class present,
// mean_i (1 - cos(P_i, mu_c)) with mu_c the detached class mean; the class
// terms are summed and halved. Classes absent from the batch contribute 0.
inline Tensor in_batch_proto_loss(const std::vector<Tensor>& P, const std::vector<int>& y) {
    if (P.empty() || P.size() != y.size())
        throw std::invalid_argument("in_batch_proto_loss: empty or misaligned batch");
    const int d = P[0].shape()[1];
    std::vector<Tensor> class_terms;
    for (int c = 0; c < 2; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == c) members.push_back(i);
        if (members.empty()) continue;
        // Detached centroid: gradient flows into the P_i only through the
        // cosine, not through the mean.
        std::vector<double> mu(static_cast<std::size_t>(d), 0.0);
        for (std::size_t i : members)
            for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(j)] += P[i].at(static_cast<std::size_t>(j));
        for (double& x : mu) x /= static_cast<double>(members.size());
        Tensor mu_t = Tensor::from_values({1, d}, mu);
        std::vector<Tensor> dists;
        dists.reserve(members.size());
        for (std::size_t i : members)
            dists.push_back(affine(cosine_similarity(P[i], mu_t), -1.0, 1.0));
        Tensor cls = dists.size() == 1 ? dists[0] : add_n(std::move(dists));
        class_terms.push_back(scale(std::move(cls), 1.0 / static_cast<double>(members.size())));
    }
    if (class_terms.empty()) return Tensor::scalar(0.0);
    Tensor total = class_terms.size() == 1 ? class_terms[0] : add_n(std::move(class_terms));
    return scale(std::move(total), 0.5);
}

// EMA update with detached values. Each member is L2-normalized, the
// per-(dataset, class) means are renormalized to the unit sphere, and an
// uninitialized cell adopts the first observed mean outright.
inline void ema_update(PrototypeBank& bank, const std::vector<Tensor>& P, const std::vector<int>& y,
                       const std::vector<int>& dataset_ids) {
    if (P.size() != y.size() || P.size() != dataset_ids.size())
        throw std::invalid_argument("ema_update: misaligned inputs");
    std::vector<std::vector<double>> sums(bank.proto.size());
    std::vector<int> counts(bank.proto.size(), 0);
    for (std::size_t i = 0; i < P.size(); ++i) {
        const std::size_t cell = bank.cell(dataset_ids[i], y[i]);
        std::vector<double> v = P[i].values();  // detached copy
        detail::normalize_in_place(v);
        if (sums[cell].empty()) sums[cell].assign(static_cast<std::size_t>(bank.d), 0.0);
        for (int j = 0; j < bank.d; ++j) sums[cell][static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(j)];
        counts[cell] += 1;
    }
    for (std::size_t cell = 0; cell < bank.proto.size(); ++cell) {
        if (counts[cell] == 0) continue;
        std::vector<double> mu_hat = sums[cell];
        for (double& x : mu_hat) x /= static_cast<double>(counts[cell]);
        detail::normalize_in_place(mu_hat);
        if (!bank.initialized[cell]) {
            bank.proto[cell] = mu_hat;
            bank.initialized[cell] = true;
        } else {
            for (int j = 0; j < bank.d; ++j)
                bank.proto[cell][static_cast<std::size_t>(j)] =
                    bank.m * bank.proto[cell][static_cast<std::size_t>(j)] +
                    (1.0 - bank.m) * mu_hat[static_cast<std::size_t>(j)];
        }
    }
}

struct GlobalPrototypes {
    std::optional<std::vector<double>> g0, g1;
};

// g_c = normalize(mean over initialized datasets of proto[d][c]); defined only
// when class c has at least one initialized cell and the bank has at least
// two initialized cells overall.
inline GlobalPrototypes global_prototypes(const PrototypeBank& bank) {
    GlobalPrototypes out;
    int total_init = 0;
    for (bool b : bank.initialized) total_init += b ? 1 : 0;
    if (total_init < 2) return out;
    for (int c = 0; c < 2; ++c) {
        std::vector<double> acc(static_cast<std::size_t>(bank.d), 0.0);
        int n = 0;
        for (int ds = 0; ds < bank.n_datasets; ++ds) {
            const std::size_t cell = bank.cell(ds, c);
            if (!bank.initialized[cell]) continue;
            for (int j = 0; j < bank.d; ++j) acc[static_cast<std::size_t>(j)] += bank.proto[cell][static_cast<std::size_t>(j)];
            ++n;
        }
        if (n == 0) continue;
        for (double& x : acc) x /= static_cast<double>(n);
        detail::normalize_in_place(acc);
        if (c == 0)
            out.g0 = std::move(acc);
        else
            out.g1 = std::move(acc);
    }
    return out;
}

// Memory anchoring: sum_i [1 - cos(P_i, g_{y_i}) + max(0, cos(P_i, g_{1-y_i}) - margin)].
// A post contributes each of the two pieces only when the corresponding
// global prototype is defined; with no globals the loss is zero.
inline Tensor memory_proto_loss(const std::vector<Tensor>& P, const std::vector<int>& y,
                                const GlobalPrototypes& globals, double margin) {
    if (P.size() != y.size()) throw std::invalid_argument("memory_proto_loss: misaligned batch");
    const auto as_tensor = [](const std::vector<double>& v) {
        return Tensor::from_values({1, static_cast<int>(v.size())}, v);
    };
    std::optional<Tensor> g0, g1;
    if (globals.g0) g0 = as_tensor(*globals.g0);
    if (globals.g1) g1 = as_tensor(*globals.g1);
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const std::optional<Tensor>& own = y[i] == 1 ? g1 : g0;
        const std::optional<Tensor>& other = y[i] == 1 ? g0 : g1;
        if (own) terms.push_back(affine(cosine_similarity(P[i], *own), -1.0, 1.0));
        if (other) terms.push_back(relu(affine(cosine_similarity(P[i], *other), 1.0, -margin)));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

} // namespace tempofuse
