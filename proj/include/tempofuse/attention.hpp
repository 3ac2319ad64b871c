// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace tempofuse {

// Bias-free multi-head self-attention projections: query, key, value, output,
// each a [d x d] matrix applied on the right of row-vector sequences.
struct MhsaParams {
    Tensor W_q, W_k, W_v, W_o;
};

struct MhsaResult {
    Tensor context;                 // [L x d] attention output after W_o (pre-residual)
    std::vector<Tensor> head_attn;  // one [L x L] row-stochastic matrix per head
};

// Standard scaled dot-product self-attention over a row-major sequence
// X [L x d] with per-head scaling 1/sqrt(d/heads).
inline MhsaResult mhsa(Tensor x, const MhsaParams& p, int heads) {
    const int d = x.shape()[1];
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("mhsa: dimension not divisible by head count");
    const int dh = d / heads;
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor q = matmul(x, p.W_q);
    Tensor k = matmul(x, p.W_k);
    Tensor v = matmul(x, p.W_v);

    MhsaResult res;
    std::vector<Tensor> contexts;
    contexts.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul_nt(qh, kh), inv_scale);
        Tensor attn = softmax_rows(scores);
        res.head_attn.push_back(attn);
        contexts.push_back(matmul(attn, vh));
    }
    Tensor ctx = heads == 1 ? contexts[0] : concat_cols(contexts);
    res.context = matmul(ctx, p.W_o);
    return res;
}

} // namespace tempofuse
