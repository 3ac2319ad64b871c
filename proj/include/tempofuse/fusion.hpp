// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "encoder.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace tempofuse {

// One expert: linear -> GELU (-> dropout) -> linear with hidden width
// expansion * d.
struct ExpertParams {
    Tensor W1;  // [d x (expansion*d)]
    Tensor b1;  // [1 x (expansion*d)]
    Tensor W2;  // [(expansion*d) x d]
    Tensor b2;  // [1 x d]
};

struct MoEParams {
    Tensor W_gate;  // [K x d]
    std::vector<ExpertParams> experts;
};

struct MoEResult {
    Tensor out;   // [1 x d]
    Tensor gate;  // [1 x K] softmax weights
};

// Dense soft mixture: out = sum_k softmax(W_gate · x)_k · E_k(x).
inline MoEResult moe_forward(const Tensor& x, const MoEParams& p, double dropout_rate, Rng& rng,
                             bool training) {
    const int K = static_cast<int>(p.experts.size());
    if (K < 1) throw std::invalid_argument("moe_forward: need at least one expert");
    MoEResult res;
    res.gate = softmax_rows(matmul_nt(x, p.W_gate));
    std::vector<Tensor> mixed;
    mixed.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const ExpertParams& e = p.experts[static_cast<std::size_t>(k)];
        Tensor h = gelu(add_rowwise(matmul(x, e.W1), e.b1));
        h = dropout(std::move(h), dropout_rate, rng, training);
        Tensor o = add_rowwise(matmul(std::move(h), e.W2), e.b2);
        mixed.push_back(mul_scalar(std::move(o), slice_cols(res.gate, k, 1)));
    }
    res.out = K == 1 ? mixed[0] : add_n(std::move(mixed));
    return res;
}

// Shared query/key/value maps for both attention directions. With single-row
// operands the softmax over one key saturates at exactly 1.0, so the outputs
// are bitwise independent of W_Q and W_K; both matrices are kept as
// parameters anyway to preserve the full attention algebra.
struct CoAttentionParams {
    Tensor W_Q, W_K, W_V;  // [d x d]
    LayerNormParams ln_text, ln_img;
};

inline std::pair<Tensor, Tensor> co_attention(const Tensor& M_text, const Tensor& M_img,
                                              const CoAttentionParams& p) {
    const int d = M_text.shape()[1];
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

    auto attend = [&](const Tensor& query_side, const Tensor& key_value_side) {
        Tensor q = matmul(query_side, p.W_Q);
        Tensor k = matmul(key_value_side, p.W_K);
        Tensor v = matmul(key_value_side, p.W_V);
        Tensor attn = softmax_rows(scale(matmul_nt(q, k), inv_scale));  // [1 x 1], exactly 1
        return matmul(attn, v);
    };

    Tensor Mp_text = layer_norm(add(M_text, attend(M_text, M_img)), p.ln_text);
    Tensor Mp_img = layer_norm(add(M_img, attend(M_img, M_text)), p.ln_img);
    return {Mp_text, Mp_img};
}

struct GatedFusionResult {
    Tensor P_raw;  // [1 x d]
    Tensor A;      // [1 x 1] alignment score, cosine of the co-attended pair
    Tensor gate;   // [1 x d] sigmoid gate
};

// g = sigmoid(W_g · [Mp_text ; Mp_img]); P_raw = g ⊙ Mp_text + (1-g) ⊙ Mp_img.
inline GatedFusionResult gated_fusion(const Tensor& Mp_text, const Tensor& Mp_img, const Tensor& W_g) {
    GatedFusionResult res;
    Tensor cat = concat_cols({Mp_text, Mp_img});
    res.gate = sigmoid(matmul_nt(std::move(cat), W_g));
    res.P_raw = add(mul(res.gate, Mp_text), mul(affine(res.gate, -1.0, 1.0), Mp_img));
    res.A = cosine_similarity(Mp_text, Mp_img);
    return res;
}

struct DiscrepancyResult {
    Tensor P;      // [1 x d] fused representation after the discrepancy branch
    Tensor d_vec;  // [1 x d] discrepancy feature
};

// d_vec = layer_norm(W_disc · [|T−I| ; T⊙I]); P = P_raw + tanh(eta) · d_vec.
// T and I are the post-projection vectors, not the co-attended ones.
inline DiscrepancyResult discrepancy_apply(const Tensor& P_raw, const Tensor& T, const Tensor& I,
                                           const Tensor& W_disc, const LayerNormParams& ln,
                                           const Tensor& eta) {
    DiscrepancyResult res;
    Tensor feats = concat_cols({abs_op(sub(T, I)), mul(T, I)});
    res.d_vec = layer_norm(matmul_nt(std::move(feats), W_disc), ln);
    res.P = add(P_raw, mul_scalar(res.d_vec, tanh_op(eta)));
    return res;
}

// p = sigmoid(W_match · [Mp_text ; Mp_img] + b_match).
inline Tensor match_head(const Tensor& Mp_text, const Tensor& Mp_img, const Tensor& W_match,
                         const Tensor& b_match, double dropout_rate, Rng& rng, bool training) {
    Tensor cat = concat_cols({Mp_text, Mp_img});
    cat = dropout(std::move(cat), dropout_rate, rng, training);
    return sigmoid(add(matmul_nt(std::move(cat), W_match), b_match));
}

struct DomainClassifierParams {
    Tensor W1;  // [d x d]
    Tensor b1;  // [1 x d]
    Tensor W2;  // [d x n_domains]
    Tensor b2;  // [1 x n_domains]
};

// Identity forward through the gradient-reversal layer into a
// linear -> GELU -> linear classifier; the backward pass multiplies the
// gradient flowing into P by -alpha while the classifier's own parameters
// receive unreversed gradients.
inline Tensor domain_adversary(const Tensor& P, double alpha_grl, const DomainClassifierParams& p,
                               double dropout_rate, Rng& rng, bool training) {
    Tensor x = gradient_reversal(P, alpha_grl);
    x = dropout(std::move(x), dropout_rate, rng, training);
    Tensor h = gelu(add_rowwise(matmul(std::move(x), p.W1), p.b1));
    return add_rowwise(matmul(std::move(h), p.W2), p.b2);
}

// Classical domain-adversarial ramp over training progress in [0,1].
inline double grl_schedule(double progress) {
    return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

} // namespace tempofuse
