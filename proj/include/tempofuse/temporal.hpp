// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "attention.hpp"
#include "encoder.hpp"
#include "ops.hpp"
#include "tensor.hpp"

namespace tempofuse {

inline constexpr double kSecondsPerDay = 86400.0;

// Window membership over a chronologically sorted post list.
struct WindowSpec {
    std::vector<int> members;   // indices into the sorted post list
    int label = 0;              // inherited from the chronologically latest member
    std::int64_t t_max = 0;     // timestamp of the latest member
};

// Windows start at indices 0, S, 2S, ... while the start lies inside the
// list; each covers up to T consecutive posts, so a final shorter window
// catches the tail. The inputs must already be sorted by (timestamp, id);
// the latest member is then simply the last one.
inline std::vector<WindowSpec> build_windows(const std::vector<std::int64_t>& timestamps,
                                             const std::vector<int>& labels, int T, int S) {
    const int n = static_cast<int>(timestamps.size());
    if (n == 0) throw std::invalid_argument("build_windows: empty post list");
    if (labels.size() != timestamps.size())
        throw std::invalid_argument("build_windows: label/timestamp count mismatch");
    if (T < 1 || S < 1 || S > T) throw std::invalid_argument("build_windows: need 1 <= S <= T");
    std::vector<WindowSpec> out;
    for (int start = 0; start < n; start += S) {
        WindowSpec w;
        const int end = std::min(start + T, n);
        w.members.reserve(static_cast<std::size_t>(end - start));
        for (int i = start; i < end; ++i) w.members.push_back(i);
        w.label = labels[static_cast<std::size_t>(end - 1)];
        w.t_max = timestamps[static_cast<std::size_t>(end - 1)];
        out.push_back(std::move(w));
    }
    return out;
}

// Exponential recency decay, with the gap measured in days.
inline double decay_lambda(std::int64_t t_max, std::int64_t t_j, double kappa) {
    return std::exp(-kappa * (static_cast<double>(t_max - t_j) / kSecondsPerDay));
}

struct WindowAttentionParams {
    Tensor W_qk;  // [d x d] shared query/key map
    Tensor W_v;   // [d x d] value map
};

// Time-decayed attention aggregate of one window:
//   q = mean(P_j) · W_qk, k_j = P_j · W_qk, score_j = q·k_j / sqrt(d),
//   weights ∝ lambda_j * softmax(score)_j (normalized to sum 1),
//   L_w = sum_j weights_j * (P_j · W_v).
inline Tensor window_aggregate(const std::vector<Tensor>& members,
                               const std::vector<std::int64_t>& member_ts,
                               const WindowAttentionParams& p, double kappa) {
    if (members.empty()) throw std::invalid_argument("window_aggregate: empty window");
    if (member_ts.size() != members.size())
        throw std::invalid_argument("window_aggregate: timestamp count mismatch");
    const int n = static_cast<int>(members.size());
    const int d = members[0].shape()[1];

    Tensor stack = n == 1 ? members[0] : concat_rows(members);
    Tensor q = matmul(mean_rows(stack), p.W_qk);           // [1 x d]
    Tensor k = matmul(stack, p.W_qk);                      // [n x d]
    Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor attn = softmax_rows(scores);                    // [1 x n]

    std::int64_t t_max = member_ts[0];
    for (std::int64_t t : member_ts) t_max = std::max(t_max, t);
    std::vector<double> lam(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) lam[static_cast<std::size_t>(j)] = decay_lambda(t_max, member_ts[static_cast<std::size_t>(j)], kappa);
    Tensor lam_t = Tensor::from_values({1, n}, lam);

    Tensor combined = mul(attn, lam_t);
    Tensor weights = div_scalar(combined, sum(combined));  // [1 x n]
    return matmul(weights, matmul(stack, p.W_v));          // [1 x d]
}

struct WindowDynamics {
    Tensor delta;     // [1 x d]
    Tensor momentum;  // [1 x 1]
    Tensor L_bar;     // [1 x (2d+1)]
};

// Drift and momentum along the window axis. Boundary conditions: the first
// drift is a constant zero vector (L_{-1} := L_0) and M_{-1} := 0, so M_0 = 0.
inline std::vector<WindowDynamics> drift_momentum(const std::vector<Tensor>& L_seq, double beta) {
    if (L_seq.empty()) throw std::invalid_argument("drift_momentum: empty sequence");
    const int d = L_seq[0].shape()[1];
    std::vector<WindowDynamics> out;
    out.reserve(L_seq.size());
    Tensor m_prev = Tensor::scalar(0.0);
    for (std::size_t w = 0; w < L_seq.size(); ++w) {
        WindowDynamics dyn;
        if (w == 0) {
            dyn.delta = Tensor::zeros({1, d});
            dyn.momentum = Tensor::scalar(0.0);
        } else {
            dyn.delta = sub(L_seq[w], L_seq[w - 1]);
            dyn.momentum = add(scale(m_prev, beta), scale(norm_l2(dyn.delta), 1.0 - beta));
        }
        m_prev = dyn.momentum;
        dyn.L_bar = concat_cols({L_seq[w], dyn.delta, dyn.momentum});
        out.push_back(std::move(dyn));
    }
    return out;
}

// Affine map then sigmoid: one probability per window.
inline std::pair<Tensor, Tensor> window_logit(const Tensor& L_bar, const Tensor& w, const Tensor& b) {
    Tensor logit = add(matmul_nt(L_bar, w), b);
    return {logit, sigmoid(logit)};
}

struct TimestampEncodingParams {
    Tensor freqs;  // [1 x F] learnable frequencies
    Tensor W_ts;   // [2F x d]
    Tensor b_ts;   // [1 x d]
};

// Normalizes window timestamps to [0,1] within the sequence (0 on a
// degenerate range), expands each through sin/cos at the learnable
// frequencies, and projects to d.
inline Tensor timestamp_encoding(const std::vector<std::int64_t>& window_ts,
                                 const TimestampEncodingParams& p) {
    if (window_ts.empty()) throw std::invalid_argument("timestamp_encoding: empty sequence");
    std::int64_t t_min = window_ts[0], t_max = window_ts[0];
    for (std::int64_t t : window_ts) {
        t_min = std::min(t_min, t);
        t_max = std::max(t_max, t);
    }
    std::vector<Tensor> rows;
    rows.reserve(window_ts.size());
    for (std::int64_t t : window_ts) {
        const double tau = t_max > t_min
                               ? static_cast<double>(t - t_min) / static_cast<double>(t_max - t_min)
                               : 0.0;
        Tensor phases = scale(p.freqs, tau);
        Tensor feats = concat_cols({sin_op(phases), cos_op(phases)});  // [1 x 2F]
        rows.push_back(add_rowwise(matmul(std::move(feats), p.W_ts), p.b_ts));
    }
    return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

struct TransformerLayerParams {
    LayerNormParams ln1, ln2;
    MhsaParams attn;
    Tensor W_ff1;  // [d x 4d]
    Tensor b_ff1;  // [1 x 4d]
    Tensor W_ff2;  // [4d x d]
    Tensor b_ff2;  // [1 x d]
};

struct TemporalTransformerParams {
    Tensor W_in;  // [(2d+1) x d]
    Tensor b_in;  // [1 x d]
    TimestampEncodingParams ts;
    std::vector<TransformerLayerParams> layers;
    Tensor W_head;  // [1 x d]
    Tensor b_head;  // [1 x 1]
    int heads = 4;
};

struct TemporalTransformerResult {
    Tensor logits;  // [W x 1]
    Tensor H;       // [W x d] hidden states after the final layer
};

// Pre-norm encoder over the window sequence: x += MHSA(LN(x)); x += FFN(LN(x)).
// With zero layers the head reads the projected-plus-encoded inputs directly.
inline TemporalTransformerResult temporal_transformer(const std::vector<Tensor>& L_bars,
                                                      const std::vector<std::int64_t>& window_ts,
                                                      const TemporalTransformerParams& p) {
    if (L_bars.empty()) throw std::invalid_argument("temporal_transformer: empty sequence");
    std::vector<Tensor> proj;
    proj.reserve(L_bars.size());
    for (const Tensor& lb : L_bars) proj.push_back(matmul(lb, p.W_in));
    Tensor x = proj.size() == 1 ? proj[0] : concat_rows(proj);
    x = add_rowwise(std::move(x), p.b_in);
    x = add(std::move(x), timestamp_encoding(window_ts, p.ts));

    for (const TransformerLayerParams& layer : p.layers) {
        Tensor a = mhsa(layer_norm(x, layer.ln1), layer.attn, p.heads).context;
        x = add(std::move(x), std::move(a));
        Tensor h = gelu(add_rowwise(matmul(layer_norm(x, layer.ln2), layer.W_ff1), layer.b_ff1));
        Tensor f = add_rowwise(matmul(std::move(h), layer.W_ff2), layer.b_ff2);
        x = add(std::move(x), std::move(f));
    }

    TemporalTransformerResult res;
    res.H = x;
    res.logits = add_rowwise(matmul_nt(x, p.W_head), p.b_head);  // [W x 1]
    return res;
}

struct PostAggregate {
    std::vector<double> scores;  // mean window probability per post
    std::vector<int> classes;    // majority vote over window decisions
};

// score_i = mean of p_w over windows containing i; class_i = majority over
// window decisions (p_w >= threshold), ties broken by score_i >= threshold.
inline PostAggregate post_aggregate(const std::vector<double>& window_probs,
                                    const std::vector<WindowSpec>& windows, int n_posts,
                                    double threshold) {
    if (window_probs.size() != windows.size())
        throw std::invalid_argument("post_aggregate: probability/window count mismatch");
    PostAggregate out;
    out.scores.assign(static_cast<std::size_t>(n_posts), 0.0);
    out.classes.assign(static_cast<std::size_t>(n_posts), 0);
    std::vector<int> containing(static_cast<std::size_t>(n_posts), 0);
    std::vector<int> votes_pos(static_cast<std::size_t>(n_posts), 0);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const double pw = window_probs[w];
        const int decision = pw >= threshold ? 1 : 0;
        for (int i : windows[w].members) {
            out.scores[static_cast<std::size_t>(i)] += pw;
            containing[static_cast<std::size_t>(i)] += 1;
            votes_pos[static_cast<std::size_t>(i)] += decision;
        }
    }
    for (int i = 0; i < n_posts; ++i) {
        const std::size_t ui = static_cast<std::size_t>(i);
        if (containing[ui] == 0) throw std::logic_error("post_aggregate: post belongs to no window");
        out.scores[ui] /= containing[ui];
        const int pos = votes_pos[ui], neg = containing[ui] - votes_pos[ui];
        if (pos > neg)
            out.classes[ui] = 1;
        else if (pos < neg)
            out.classes[ui] = 0;
        else
            out.classes[ui] = out.scores[ui] >= threshold ? 1 : 0;
    }
    return out;
}

} // namespace tempofuse
