// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace tempofuse {

inline constexpr double kProbClamp = 1e-7;

// Loss-term weights and shape constants. The numeric defaults are the
// reference configuration of the architecture.
struct LossWeights {
    double align = 0.05;
    double tc = 0.01;
    double match = 0.1;
    double contrast = 0.05;
    double domain = 0.03;
    double proto = 0.05;
    double proto_mem = 0.10;
    double rdrop = 0.5;
    double tc_seq = 0.01;
    double reg = 1e-5;
    double tau = 0.2;        // contrastive temperature
    double rho = 0.9;        // temporal-consistency discount
    double gamma_foc = 2.5;  // focal exponent
    double epsilon = 0.05;   // label smoothing
    double margin = 0.2;     // memory-prototype hinge margin

    void validate() const {
        if (align < 0 || tc < 0 || match < 0 || contrast < 0 || domain < 0 || proto < 0 ||
            proto_mem < 0 || rdrop < 0 || tc_seq < 0 || reg < 0)
            throw std::runtime_error("loss weights must be nonnegative");
        if (tau <= 0) throw std::runtime_error("tau must be positive");
        if (rho <= 0 || rho >= 1) throw std::runtime_error("rho must lie in (0,1)");
        if (epsilon < 0 || epsilon >= 0.5) throw std::runtime_error("epsilon must lie in [0, 0.5)");
        if (gamma_foc < 0) throw std::runtime_error("gamma_foc must be nonnegative");
        if (margin < 0) throw std::runtime_error("margin must be nonnegative");
    }
};

// Every individual term plus the weighted total, reported side by side.
struct LossBreakdown {
    double ce = 0, align = 0, tc = 0, match = 0, contrast = 0, rdrop = 0, domain = 0;
    double proto = 0, proto_mem = 0, tc_seq = 0, l2 = 0;
    double total = 0;
};

// Raised when a loss term evaluates to a non-finite value; carries the name
// of the offending term so the training loop can report it.
struct NumericalAbort : std::runtime_error {
    std::string term;
    explicit NumericalAbort(const std::string& t)
        : std::runtime_error("non-finite loss term: " + t), term(t) {}
};

namespace detail {
// Bernoulli probabilities are clamped on both sides before any logarithm.
inline Tensor bernoulli_clamp(Tensor p) { return clamp(std::move(p), kProbClamp, 1.0 - kProbClamp); }
// Softmax probabilities only need the lower clamp; an exact 1 must keep
// log(1) = 0 so singleton distributions contribute exactly zero.
inline Tensor softmax_log(Tensor p) { return log_op(clamp(std::move(p), kProbClamp, 1.0)); }

inline Tensor bce(const Tensor& p_clamped, double y_target) {
    // -[y ln p + (1-y) ln(1-p)]
    Tensor lp = log_op(p_clamped);
    Tensor lq = log_op(affine(p_clamped, -1.0, 1.0));
    return neg(add(scale(std::move(lp), y_target), scale(std::move(lq), 1.0 - y_target)));
}
} // namespace detail

// Class weights n/(2*count_y) over a label list; the weighted mean over the
// list is 1 by construction. A missing class falls back to weight 1.
inline std::array<double, 2> compute_class_weights(const std::vector<int>& labels) {
    double c0 = 0, c1 = 0;
    for (int y : labels) (y == 1 ? c1 : c0) += 1.0;
    const double n = static_cast<double>(labels.size());
    return {c0 > 0 ? n / (2.0 * c0) : 1.0, c1 > 0 ? n / (2.0 * c1) : 1.0};
}

// Class-weighted focal binary cross-entropy with label smoothing, summed over
// windows. The focal factor uses p_t (the probability assigned to the true
// class); `literal_focal` switches to the plain (1-p_w)^gamma factor for
// comparison runs.
inline Tensor focal_ce(const std::vector<Tensor>& p_w, const std::vector<int>& y,
                       const std::array<double, 2>& class_weights, double gamma, double eps,
                       bool literal_focal = false) {
    if (p_w.empty()) throw std::invalid_argument("focal_ce: empty window set");
    if (p_w.size() != y.size()) throw std::invalid_argument("focal_ce: probability/label count mismatch");
    std::vector<Tensor> terms;
    terms.reserve(p_w.size());
    for (std::size_t i = 0; i < p_w.size(); ++i) {
        Tensor p = detail::bernoulli_clamp(p_w[i]);
        const double smoothed = y[i] == 1 ? 1.0 - eps / 2.0 : eps / 2.0;
        Tensor loss = detail::bce(p, smoothed);
        Tensor p_t = (y[i] == 1 || literal_focal) ? p : affine(p, -1.0, 1.0);
        Tensor factor = pow_const(affine(std::move(p_t), -1.0, 1.0), gamma);
        terms.push_back(scale(mul(std::move(factor), std::move(loss)),
                              class_weights[static_cast<std::size_t>(y[i] == 1 ? 1 : 0)]));
    }
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Sum of (1 - A_i) over the batch.
inline Tensor align_loss(const std::vector<Tensor>& A) {
    if (A.empty()) throw std::invalid_argument("align_loss: empty batch");
    std::vector<Tensor> terms;
    terms.reserve(A.size());
    for (const Tensor& a : A) terms.push_back(affine(a, -1.0, 1.0));
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Discounted temporal consistency: sum_{w>=1} rho^w ||L_w - L_{w-1}||^2.
// The first transition is discounted by rho itself.
inline Tensor tc_loss(const std::vector<Tensor>& L_seq, double rho) {
    if (L_seq.empty()) throw std::invalid_argument("tc_loss: empty sequence");
    if (L_seq.size() == 1) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    double disc = 1.0;
    for (std::size_t w = 1; w < L_seq.size(); ++w) {
        disc *= rho;
        terms.push_back(scale(sum_squares(sub(L_seq[w], L_seq[w - 1])), disc));
    }
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Summed binary cross-entropy of the match head.
inline Tensor match_loss(const std::vector<Tensor>& p_match, const std::vector<int>& y_match) {
    if (p_match.empty()) throw std::invalid_argument("match_loss: empty batch");
    if (p_match.size() != y_match.size())
        throw std::invalid_argument("match_loss: probability/label count mismatch");
    std::vector<Tensor> terms;
    terms.reserve(p_match.size());
    for (std::size_t i = 0; i < p_match.size(); ++i)
        terms.push_back(detail::bce(detail::bernoulli_clamp(p_match[i]),
                                    y_match[i] == 1 ? 1.0 : 0.0));
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Bidirectional InfoNCE over cosine similarities at temperature tau, summed
// over the batch in both retrieval directions.
inline Tensor contrastive_loss(const std::vector<Tensor>& T, const std::vector<Tensor>& I, double tau) {
    if (T.empty() || T.size() != I.size())
        throw std::invalid_argument("contrastive_loss: batch lists must be nonempty and aligned");
    if (tau <= 0) throw std::invalid_argument("contrastive_loss: tau must be positive");
    const int B = static_cast<int>(T.size());
    std::vector<std::vector<Tensor>> sim(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
        sim[static_cast<std::size_t>(i)].reserve(static_cast<std::size_t>(B));
        for (int j = 0; j < B; ++j)
            sim[static_cast<std::size_t>(i)].push_back(
                cosine_similarity(T[static_cast<std::size_t>(i)], I[static_cast<std::size_t>(j)]));
    }
    std::vector<Tensor> terms;
    terms.reserve(2 * static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {  // text -> image retrieval
        Tensor row = B == 1 ? sim[static_cast<std::size_t>(i)][0]
                            : concat_cols(sim[static_cast<std::size_t>(i)]);
        Tensor lp = detail::softmax_log(softmax_rows(scale(std::move(row), 1.0 / tau)));
        terms.push_back(neg(slice_cols(std::move(lp), i, 1)));
    }
    for (int j = 0; j < B; ++j) {  // image -> text retrieval
        std::vector<Tensor> col;
        col.reserve(static_cast<std::size_t>(B));
        for (int i = 0; i < B; ++i) col.push_back(sim[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        Tensor row = B == 1 ? col[0] : concat_cols(col);
        Tensor lp = detail::softmax_log(softmax_rows(scale(std::move(row), 1.0 / tau)));
        terms.push_back(neg(slice_cols(std::move(lp), j, 1)));
    }
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Symmetric Bernoulli KL between the two stochastic forward passes, summed.
inline Tensor rdrop_loss(const std::vector<Tensor>& p1, const std::vector<Tensor>& p2) {
    if (p1.size() != p2.size()) throw std::invalid_argument("rdrop_loss: pass size mismatch");
    if (p1.empty()) throw std::invalid_argument("rdrop_loss: empty prediction list");
    auto kl = [](const Tensor& a, const Tensor& b) {
        // KL(a||b) = a ln(a/b) + (1-a) ln((1-a)/(1-b)) on clamped probabilities.
        Tensor la = log_op(a), lb = log_op(b);
        Tensor lca = log_op(affine(a, -1.0, 1.0)), lcb = log_op(affine(b, -1.0, 1.0));
        Tensor pos = mul(a, sub(std::move(la), std::move(lb)));
        Tensor negp = mul(affine(a, -1.0, 1.0), sub(std::move(lca), std::move(lcb)));
        return add(std::move(pos), std::move(negp));
    };
    std::vector<Tensor> terms;
    terms.reserve(p1.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        Tensor a = detail::bernoulli_clamp(p1[i]);
        Tensor b = detail::bernoulli_clamp(p2[i]);
        terms.push_back(scale(add(kl(a, b), kl(b, a)), 0.5));
    }
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

// Mean multi-class cross-entropy of the domain classifier outputs.
inline Tensor domain_loss(const std::vector<Tensor>& domain_logits, const std::vector<int>& domain_ids) {
    if (domain_logits.empty()) throw std::invalid_argument("domain_loss: empty batch");
    if (domain_logits.size() != domain_ids.size())
        throw std::invalid_argument("domain_loss: logits/id count mismatch");
    std::vector<Tensor> terms;
    terms.reserve(domain_logits.size());
    for (std::size_t i = 0; i < domain_logits.size(); ++i) {
        const int dom = domain_ids[i];
        if (dom < 0 || dom >= domain_logits[i].shape()[1])
            throw std::invalid_argument("domain_loss: domain id out of range");
        Tensor lp = detail::softmax_log(softmax_rows(domain_logits[i]));
        terms.push_back(neg(slice_cols(std::move(lp), dom, 1)));
    }
    Tensor total = terms.size() == 1 ? terms[0] : add_n(std::move(terms));
    return scale(std::move(total), 1.0 / static_cast<double>(domain_logits.size()));
}

// Smoothness of the transformer hidden states: mean over transitions of
// ||H_w - H_{w-1}||^2 * max(cos(H_w, H_{w-1}), 0); zero for W = 1.
inline Tensor tc_seq_loss(const Tensor& H) {
    const int W = H.shape()[0];
    if (W <= 1) return Tensor::scalar(0.0);
    std::vector<Tensor> terms;
    terms.reserve(static_cast<std::size_t>(W - 1));
    for (int w = 1; w < W; ++w) {
        Tensor prev = row(H, w - 1);
        Tensor cur = row(H, w);
        Tensor mag = sum_squares(sub(cur, prev));
        Tensor gate = relu(cosine_similarity(cur, prev));
        terms.push_back(mul(std::move(mag), std::move(gate)));
    }
    Tensor total = terms.size() == 1 ? terms[0] : add_n(std::move(terms));
    return scale(std::move(total), 1.0 / static_cast<double>(W - 1));
}

// All term tensors for one step, pre-weighting.
struct LossParts {
    Tensor ce, align, tc, match, contrast, rdrop, domain, proto, proto_mem, tc_seq, l2;
};

struct TotalLoss {
    Tensor total;
    LossBreakdown breakdown;
};

// Weighted sum of all parts. Any non-finite part aborts with the term named.
inline TotalLoss total_loss(const LossParts& parts, const LossWeights& w) {
    auto check = [](const Tensor& t, const char* name) {
        if (!t.defined()) throw std::invalid_argument(std::string("total_loss: undefined part ") + name);
        if (!std::isfinite(t.item())) throw NumericalAbort(name);
        return t.item();
    };
    TotalLoss out;
    out.breakdown.ce = check(parts.ce, "ce");
    out.breakdown.align = check(parts.align, "align");
    out.breakdown.tc = check(parts.tc, "tc");
    out.breakdown.match = check(parts.match, "match");
    out.breakdown.contrast = check(parts.contrast, "contrast");
    out.breakdown.rdrop = check(parts.rdrop, "rdrop");
    out.breakdown.domain = check(parts.domain, "domain");
    out.breakdown.proto = check(parts.proto, "proto");
    out.breakdown.proto_mem = check(parts.proto_mem, "proto_mem");
    out.breakdown.tc_seq = check(parts.tc_seq, "tc_seq");
    out.breakdown.l2 = check(parts.l2, "l2");

    out.total = add_n({parts.ce, scale(parts.align, w.align), scale(parts.tc, w.tc),
                       scale(parts.match, w.match), scale(parts.contrast, w.contrast),
                       scale(parts.rdrop, w.rdrop), scale(parts.domain, w.domain),
                       scale(parts.proto, w.proto), scale(parts.proto_mem, w.proto_mem),
                       scale(parts.tc_seq, w.tc_seq), scale(parts.l2, w.reg)});
    out.breakdown.total = out.total.item();
    if (!std::isfinite(out.breakdown.total)) throw NumericalAbort("total");
    return out;
}

} // namespace tempofuse
