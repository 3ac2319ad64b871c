// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "encoder.hpp"
#include "fusion.hpp"
#include "temporal.hpp"

namespace tempofuse {

// The complete trainable state. `params` is the canonical ordered registry:
// checkpoint layout, optimizer slots, and the L2 term all iterate it in this
// single order.
struct Model {
    HyperParams hp;
    EncoderParams encoder;
    MoEParams moe_text, moe_img;
    CoAttentionParams coattn;
    Tensor W_g;  // [d x 2d] fusion gate
    Tensor W_disc;
    LayerNormParams ln_disc;
    Tensor eta;  // [1 x 1] discrepancy strength
    Tensor W_match, b_match;
    DomainClassifierParams domain;
    WindowAttentionParams window_attn;
    Tensor w_head, b_head;  // linear window head over L_bar
    TemporalTransformerParams transformer;  // populated only when enabled

    std::vector<std::pair<std::string, Tensor>> params;
};

namespace detail {

// Uniform(-a, a) with a = sqrt(6 / (rows + cols)): variance-preserving for
// either orientation of the matrix. Each parameter draws from its own named
// fork so the initialization is independent of registry order.
inline Tensor glorot(Rng& master, const std::string& name, int rows, int cols) {
    Rng rng = master.fork(name);
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
    for (double& x : v) x = rng.uniform(-a, a);
    return Tensor::from_values({rows, cols}, std::move(v), true);
}

struct Builder {
    Rng& master;
    std::vector<std::pair<std::string, Tensor>>& reg;

    Tensor matrix(const std::string& name, int rows, int cols) {
        Tensor t = glorot(master, name, rows, cols);
        reg.emplace_back(name, t);
        return t;
    }
    Tensor constant(const std::string& name, int rows, int cols, double value) {
        Tensor t = Tensor::from_values(
            {rows, cols},
            std::vector<double>(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), value),
            true);
        reg.emplace_back(name, t);
        return t;
    }
    LayerNormParams layer_norm(const std::string& name, int width) {
        LayerNormParams p;
        p.gain = constant(name + ".gain", 1, width, 1.0);
        p.bias = constant(name + ".bias", 1, width, 0.0);
        return p;
    }
    MhsaParams mhsa(const std::string& name, int d) {
        MhsaParams p;
        p.W_q = matrix(name + ".W_q", d, d);
        p.W_k = matrix(name + ".W_k", d, d);
        p.W_v = matrix(name + ".W_v", d, d);
        p.W_o = matrix(name + ".W_o", d, d);
        return p;
    }
    ExpertParams expert(const std::string& name, int d, int expansion) {
        ExpertParams e;
        e.W1 = matrix(name + ".W1", d, expansion * d);
        e.b1 = constant(name + ".b1", 1, expansion * d, 0.0);
        e.W2 = matrix(name + ".W2", expansion * d, d);
        e.b2 = constant(name + ".b2", 1, d, 0.0);
        return e;
    }
};

} // namespace detail

inline Model build_model(const HyperParams& hp, Rng master) {
    hp.validate();
    Model m;
    m.hp = hp;
    Rng init = master.fork("init");
    detail::Builder b{init, m.params};
    const int d = hp.d;

    m.encoder.W_text = b.matrix("encoder.W_text", d, hp.d_xlmr);
    m.encoder.W_img = b.matrix("encoder.W_img", d, hp.d_clip);
    m.encoder.ln_text_proj = b.layer_norm("encoder.ln_text_proj", d);
    m.encoder.ln_img_proj = b.layer_norm("encoder.ln_img_proj", d);
    m.encoder.attn_text = b.mhsa("encoder.attn_text", d);
    m.encoder.attn_img = b.mhsa("encoder.attn_img", d);
    m.encoder.ln_text_attn = b.layer_norm("encoder.ln_text_attn", d);
    m.encoder.ln_img_attn = b.layer_norm("encoder.ln_img_attn", d);
    m.encoder.heads = hp.heads;

    for (int side = 0; side < 2; ++side) {
        MoEParams& moe = side == 0 ? m.moe_text : m.moe_img;
        const std::string prefix = side == 0 ? "moe_text" : "moe_img";
        moe.W_gate = b.matrix(prefix + ".W_gate", hp.K, d);
        for (int k = 0; k < hp.K; ++k)
            moe.experts.push_back(b.expert(prefix + ".expert" + std::to_string(k), d, hp.expansion));
    }

    m.coattn.W_Q = b.matrix("coattn.W_Q", d, d);
    m.coattn.W_K = b.matrix("coattn.W_K", d, d);
    m.coattn.W_V = b.matrix("coattn.W_V", d, d);
    m.coattn.ln_text = b.layer_norm("coattn.ln_text", d);
    m.coattn.ln_img = b.layer_norm("coattn.ln_img", d);

    m.W_g = b.matrix("fusion.W_g", d, 2 * d);
    m.W_disc = b.matrix("disc.W", d, 2 * d);
    m.ln_disc = b.layer_norm("disc.ln", d);
    m.eta = b.constant("disc.eta", 1, 1, 0.0);

    m.W_match = b.matrix("match.W", 1, 2 * d);
    m.b_match = b.constant("match.b", 1, 1, 0.0);

    m.domain.W1 = b.matrix("domain.W1", d, d);
    m.domain.b1 = b.constant("domain.b1", 1, d, 0.0);
    m.domain.W2 = b.matrix("domain.W2", d, hp.n_domains);
    m.domain.b2 = b.constant("domain.b2", 1, hp.n_domains, 0.0);

    m.window_attn.W_qk = b.matrix("temporal.W_qk", d, d);
    m.window_attn.W_v = b.matrix("temporal.W_v", d, d);

    m.w_head = b.matrix("head.w", 1, 2 * d + 1);
    m.b_head = b.constant("head.b", 1, 1, 0.0);

    if (hp.transformer_enabled) {
        m.transformer.W_in = b.matrix("transformer.W_in", 2 * d + 1, d);
        m.transformer.b_in = b.constant("transformer.b_in", 1, d, 0.0);
        {
            // Log-uniform frequencies in [1, 100].
            Rng rng = init.fork("transformer.ts.freqs");
            std::vector<double> f(static_cast<std::size_t>(hp.transformer_freqs));
            for (double& x : f) x = std::exp(rng.uniform(0.0, std::log(100.0)));
            m.transformer.ts.freqs = Tensor::from_values({1, hp.transformer_freqs}, std::move(f), true);
            m.params.emplace_back("transformer.ts.freqs", m.transformer.ts.freqs);
        }
        m.transformer.ts.W_ts = b.matrix("transformer.ts.W", 2 * hp.transformer_freqs, d);
        m.transformer.ts.b_ts = b.constant("transformer.ts.b", 1, d, 0.0);
        for (int l = 0; l < hp.transformer_layers; ++l) {
            const std::string pre = "transformer.layer" + std::to_string(l);
            TransformerLayerParams layer;
            layer.ln1 = b.layer_norm(pre + ".ln1", d);
            layer.attn = b.mhsa(pre + ".attn", d);
            layer.ln2 = b.layer_norm(pre + ".ln2", d);
            layer.W_ff1 = b.matrix(pre + ".W_ff1", d, 4 * d);
            layer.b_ff1 = b.constant(pre + ".b_ff1", 1, 4 * d, 0.0);
            layer.W_ff2 = b.matrix(pre + ".W_ff2", 4 * d, d);
            layer.b_ff2 = b.constant(pre + ".b_ff2", 1, d, 0.0);
            m.transformer.layers.push_back(std::move(layer));
        }
        m.transformer.W_head = b.matrix("transformer.W_head", 1, d);
        m.transformer.b_head = b.constant("transformer.b_head", 1, 1, 0.0);
        m.transformer.heads = hp.transformer_heads;
    }
    return m;
}

// Per-post forward state, kept so the loss terms can reach every intermediate.
struct PostForward {
    ProjectedPost enc;
    Tensor M_text, M_img;        // MoE outputs
    Tensor gate_text, gate_img;  // [1 x K]
    Tensor Mp_text, Mp_img;      // co-attended
    Tensor P_raw, A, fusion_gate;
    Tensor d_vec, P;
    Tensor p_match;
    Tensor domain_logits;
};

inline Tensor text_tensor(const PostRecord& rec, const HyperParams& hp) {
    if (static_cast<int>(rec.text_emb.size()) != hp.L * hp.d_xlmr)
        throw std::invalid_argument("model: post '" + rec.id + "' text embedding does not match config dims");
    return Tensor::from_values({hp.L, hp.d_xlmr}, rec.text_emb);
}

inline Tensor image_tensor(const PostRecord& rec, const HyperParams& hp) {
    if (static_cast<int>(rec.img_emb.size()) != hp.d_clip)
        throw std::invalid_argument("model: post '" + rec.id + "' image embedding does not match config dims");
    return Tensor::from_values({1, hp.d_clip}, rec.img_emb);
}

inline PostForward forward_post(const Model& m, const PostRecord& rec, double alpha_grl, Rng& rng,
                                bool training) {
    PostForward f;
    f.enc = encode_post(text_tensor(rec, m.hp), image_tensor(rec, m.hp), m.encoder);

    MoEResult mt = moe_forward(f.enc.T_tilde, m.moe_text, m.hp.dropout, rng, training);
    MoEResult mi = moe_forward(f.enc.I_tilde, m.moe_img, m.hp.dropout, rng, training);
    f.M_text = mt.out;
    f.gate_text = mt.gate;
    f.M_img = mi.out;
    f.gate_img = mi.gate;

    auto [Mp_text, Mp_img] = co_attention(f.M_text, f.M_img, m.coattn);
    f.Mp_text = Mp_text;
    f.Mp_img = Mp_img;

    GatedFusionResult fused = gated_fusion(f.Mp_text, f.Mp_img, m.W_g);
    f.P_raw = fused.P_raw;
    f.A = fused.A;
    f.fusion_gate = fused.gate;

    DiscrepancyResult disc = discrepancy_apply(f.P_raw, f.enc.T, f.enc.I, m.W_disc, m.ln_disc, m.eta);
    f.d_vec = disc.d_vec;
    f.P = disc.P;

    f.p_match = match_head(f.Mp_text, f.Mp_img, m.W_match, m.b_match, m.hp.dropout, rng, training);
    f.domain_logits = domain_adversary(f.P, alpha_grl, m.domain, m.hp.dropout, rng, training);
    return f;
}

// One forward pass over a timestamp-sorted batch: posts, windows, window
// aggregates, drift/momentum, and per-window probabilities (from the
// transformer head when enabled, the linear head otherwise).
struct BatchForward {
    std::vector<PostForward> posts;
    std::vector<WindowSpec> windows;
    std::vector<Tensor> L;       // [1 x d] per window
    std::vector<WindowDynamics> dyn;
    std::vector<Tensor> logits;  // [1 x 1] per window
    std::vector<Tensor> probs;   // [1 x 1] per window
    Tensor H;                    // [W x d] transformer hidden states (undefined when disabled)
    std::vector<int> window_labels;
};

inline BatchForward forward_batch(const Model& m, const std::vector<PostRecord>& batch,
                                  double alpha_grl, Rng& rng, bool training) {
    if (batch.empty()) throw std::invalid_argument("forward_batch: empty batch");
    for (std::size_t i = 1; i < batch.size(); ++i)
        if (post_before(batch[i], batch[i - 1]))
            throw std::invalid_argument("forward_batch: batch must be sorted by (timestamp, id)");

    BatchForward out;
    out.posts.reserve(batch.size());
    std::vector<std::int64_t> ts;
    std::vector<int> labels;
    ts.reserve(batch.size());
    labels.reserve(batch.size());
    for (const PostRecord& rec : batch) {
        out.posts.push_back(forward_post(m, rec, alpha_grl, rng, training));
        ts.push_back(rec.timestamp);
        labels.push_back(rec.label);
    }

    out.windows = build_windows(ts, labels, m.hp.T, m.hp.S);
    out.window_labels.reserve(out.windows.size());
    std::vector<std::int64_t> window_ts;
    window_ts.reserve(out.windows.size());
    for (const WindowSpec& w : out.windows) {
        std::vector<Tensor> members;
        std::vector<std::int64_t> member_ts;
        members.reserve(w.members.size());
        member_ts.reserve(w.members.size());
        for (int i : w.members) {
            members.push_back(out.posts[static_cast<std::size_t>(i)].P);
            member_ts.push_back(ts[static_cast<std::size_t>(i)]);
        }
        out.L.push_back(window_aggregate(members, member_ts, m.window_attn, m.hp.kappa));
        out.window_labels.push_back(w.label);
        window_ts.push_back(w.t_max);
    }

    out.dyn = drift_momentum(out.L, m.hp.beta);

    if (m.hp.transformer_enabled) {
        std::vector<Tensor> l_bars;
        l_bars.reserve(out.dyn.size());
        for (const WindowDynamics& d : out.dyn) l_bars.push_back(d.L_bar);
        TemporalTransformerResult res = temporal_transformer(l_bars, window_ts, m.transformer);
        out.H = res.H;
        for (std::size_t w = 0; w < out.dyn.size(); ++w) {
            Tensor logit = row(res.logits, static_cast<int>(w));
            out.logits.push_back(logit);
            out.probs.push_back(sigmoid(logit));
        }
    } else {
        for (const WindowDynamics& d : out.dyn) {
            auto [logit, prob] = window_logit(d.L_bar, m.w_head, m.b_head);
            out.logits.push_back(logit);
            out.probs.push_back(prob);
        }
    }
    return out;
}

// Sum of squares over every registered parameter — the explicit L2 term.
inline Tensor parameter_l2(const Model& m) {
    std::vector<Tensor> terms;
    terms.reserve(m.params.size());
    for (const auto& [name, t] : m.params) terms.push_back(sum_squares(t));
    return terms.size() == 1 ? terms[0] : add_n(std::move(terms));
}

} // namespace tempofuse
