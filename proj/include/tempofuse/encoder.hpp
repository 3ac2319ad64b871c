// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

#include "attention.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace tempofuse {

struct LayerNormParams {
    Tensor gain;  // [1 x n]
    Tensor bias;  // [1 x n]
};

inline Tensor layer_norm(Tensor x, const LayerNormParams& p, double eps = 1e-5) {
    return layer_norm(std::move(x), p.gain, p.bias, eps);
}

// Per-modality projection and self-attention parameters. Projections are
// stored [d x d_in] and applied as x · Wᵀ.
struct EncoderParams {
    Tensor W_text;  // [d x d_xlmr]
    Tensor W_img;   // [d x d_clip]
    LayerNormParams ln_text_proj, ln_img_proj;
    MhsaParams attn_text, attn_img;
    LayerNormParams ln_text_attn, ln_img_attn;
    int heads = 4;
};

// Per-post state after projection and intra-modal refinement.
struct ProjectedPost {
    Tensor S;        // [L x d] projected token sequence
    Tensor T;        // [1 x d] row 0 of S (sentence vector)
    Tensor I;        // [1 x d] projected image
    Tensor S_hat;    // [L x d] post-attention sequence
    Tensor T_tilde;  // [1 x d] row 0 of S_hat
    Tensor I_tilde;  // [1 x d] post-attention image
};

// S = layer_norm(text_emb · W_textᵀ) row-wise; T = S[0].
inline std::pair<Tensor, Tensor> project_text(Tensor text_emb, const Tensor& W_text,
                                              const LayerNormParams& ln) {
    if (text_emb.shape().size() != 2 || text_emb.shape()[1] != W_text.shape()[1])
        throw std::invalid_argument("project_text: embedding width does not match projection");
    Tensor S = layer_norm(matmul_nt(std::move(text_emb), W_text), ln);
    Tensor T = row(S, 0);
    return {S, T};
}

inline Tensor project_image(Tensor img_emb, const Tensor& W_img, const LayerNormParams& ln) {
    if (img_emb.shape().size() != 2 || img_emb.shape()[0] != 1 ||
        img_emb.shape()[1] != W_img.shape()[1])
        throw std::invalid_argument("project_image: embedding width does not match projection");
    return layer_norm(matmul_nt(std::move(img_emb), W_img), ln);
}

// S_hat = layer_norm(S + MHSA(S)); T_tilde = S_hat[0].
inline std::pair<Tensor, Tensor> intra_text_attention(const Tensor& S, const MhsaParams& attn,
                                                      const LayerNormParams& ln, int heads) {
    MhsaResult res = mhsa(S, attn, heads);
    Tensor S_hat = layer_norm(add(S, res.context), ln);
    Tensor T_tilde = row(S_hat, 0);
    return {S_hat, T_tilde};
}

// The image is a length-one sequence; by the singleton-softmax identity the
// attention context reduces to the value-and-output projection of I.
inline Tensor intra_image_attention(const Tensor& I, const MhsaParams& attn,
                                    const LayerNormParams& ln, int heads) {
    MhsaResult res = mhsa(I, attn, heads);
    return layer_norm(add(I, res.context), ln);
}

inline ProjectedPost encode_post(Tensor text_emb, Tensor img_emb, const EncoderParams& p) {
    ProjectedPost out;
    auto [S, T] = project_text(std::move(text_emb), p.W_text, p.ln_text_proj);
    out.S = S;
    out.T = T;
    out.I = project_image(std::move(img_emb), p.W_img, p.ln_img_proj);
    auto [S_hat, T_tilde] = intra_text_attention(out.S, p.attn_text, p.ln_text_attn, p.heads);
    out.S_hat = S_hat;
    out.T_tilde = T_tilde;
    out.I_tilde = intra_image_attention(out.I, p.attn_img, p.ln_img_attn, p.heads);
    return out;
}

} // namespace tempofuse
