// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "objective.hpp"
#include "optimizer.hpp"
#include "prototypes.hpp"

namespace tempofuse {

inline std::vector<PostRecord> sorted_by_time(std::vector<PostRecord> posts) {
    std::sort(posts.begin(), posts.end(), post_before);
    return posts;
}

// Window labels of a chronologically sorted record list — the population the
// focal class weights are computed from.
inline std::vector<int> window_labels_of(const std::vector<PostRecord>& sorted, int T, int S) {
    std::vector<std::int64_t> ts;
    std::vector<int> labels;
    ts.reserve(sorted.size());
    labels.reserve(sorted.size());
    for (const PostRecord& r : sorted) {
        ts.push_back(r.timestamp);
        labels.push_back(r.label);
    }
    std::vector<int> out;
    for (const WindowSpec& w : build_windows(ts, labels, T, S)) out.push_back(w.label);
    return out;
}

// Deterministic no-dropout scoring of a post list: one forward over the whole
// list in timestamp order, then window-to-post aggregation.
struct SplitScores {
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::vector<int> domains;
    std::vector<int> vote_classes;  // majority-vote classes at the given threshold
    std::vector<double> scores;     // mean window probability per post
};

inline SplitScores score_posts(const Model& m, std::vector<PostRecord> posts,
                               double vote_threshold = 0.5) {
    if (posts.empty()) throw std::invalid_argument("score_posts: empty split");
    std::sort(posts.begin(), posts.end(), post_before);
    NoGradGuard guard;
    Rng unused(0);  // evaluation draws nothing: dropout is inactive
    BatchForward fwd = forward_batch(m, posts, 0.0, unused, false);
    std::vector<double> probs;
    probs.reserve(fwd.probs.size());
    for (const Tensor& p : fwd.probs) probs.push_back(p.item());
    PostAggregate agg =
        post_aggregate(probs, fwd.windows, static_cast<int>(posts.size()), vote_threshold);
    SplitScores out;
    out.scores = std::move(agg.scores);
    out.vote_classes = std::move(agg.classes);
    out.ids.reserve(posts.size());
    out.labels.reserve(posts.size());
    out.domains.reserve(posts.size());
    for (const PostRecord& r : posts) {
        out.ids.push_back(r.id);
        out.labels.push_back(r.label);
        out.domains.push_back(r.domain_id);
    }
    return out;
}

namespace detail {

inline Tensor average_pair(Tensor a, Tensor b) { return scale(add(std::move(a), std::move(b)), 0.5); }

// All eleven loss parts for one step. Task terms are averaged over the two
// stochastic passes, the R-Drop term couples them, and the L2 penalty is
// counted once.
inline LossParts assemble_parts(const Model& m, const std::vector<PostRecord>& batch,
                                const BatchForward& p1, const BatchForward& p2,
                                const std::array<double, 2>& class_weights,
                                const GlobalPrototypes& globals) {
    const LossWeights& w = m.hp.loss;
    LossParts parts;

    auto task_pair = [&](const BatchForward& a, const BatchForward& b, auto&& term) {
        return average_pair(term(a), term(b));
    };

    parts.ce = task_pair(p1, p2, [&](const BatchForward& f) {
        return focal_ce(f.probs, f.window_labels, class_weights, w.gamma_foc, w.epsilon);
    });
    parts.align = task_pair(p1, p2, [&](const BatchForward& f) {
        std::vector<Tensor> A;
        A.reserve(f.posts.size());
        for (const PostForward& pf : f.posts) A.push_back(pf.A);
        return align_loss(A);
    });
    parts.tc = task_pair(p1, p2, [&](const BatchForward& f) { return tc_loss(f.L, w.rho); });
    parts.match = task_pair(p1, p2, [&](const BatchForward& f) {
        std::vector<Tensor> pm;
        std::vector<int> ym;
        pm.reserve(f.posts.size());
        ym.reserve(f.posts.size());
        for (std::size_t i = 0; i < f.posts.size(); ++i) {
            pm.push_back(f.posts[i].p_match);
            ym.push_back(batch[i].match_label);
        }
        return match_loss(pm, ym);
    });
    parts.contrast = task_pair(p1, p2, [&](const BatchForward& f) {
        std::vector<Tensor> T, I;
        T.reserve(f.posts.size());
        I.reserve(f.posts.size());
        for (const PostForward& pf : f.posts) {
            T.push_back(pf.enc.T);
            I.push_back(pf.enc.I);
        }
        return contrastive_loss(T, I, w.tau);
    });
    parts.rdrop = rdrop_loss(p1.probs, p2.probs);
    parts.domain = task_pair(p1, p2, [&](const BatchForward& f) {
        std::vector<Tensor> logits;
        std::vector<int> ids;
        logits.reserve(f.posts.size());
        ids.reserve(f.posts.size());
        for (std::size_t i = 0; i < f.posts.size(); ++i) {
            logits.push_back(f.posts[i].domain_logits);
            ids.push_back(batch[i].domain_id);
        }
        return domain_loss(logits, ids);
    });

    std::vector<int> post_labels;
    post_labels.reserve(batch.size());
    for (const PostRecord& r : batch) post_labels.push_back(r.label);
    auto P_of = [](const BatchForward& f) {
        std::vector<Tensor> P;
        P.reserve(f.posts.size());
        for (const PostForward& pf : f.posts) P.push_back(pf.P);
        return P;
    };
    parts.proto = task_pair(p1, p2, [&](const BatchForward& f) {
        return in_batch_proto_loss(P_of(f), post_labels);
    });
    parts.proto_mem = task_pair(p1, p2, [&](const BatchForward& f) {
        return memory_proto_loss(P_of(f), post_labels, globals, w.margin);
    });
    parts.tc_seq = m.hp.transformer_enabled
                       ? task_pair(p1, p2, [&](const BatchForward& f) { return tc_seq_loss(f.H); })
                       : Tensor::scalar(0.0);
    parts.l2 = parameter_l2(m);
    return parts;
}

} // namespace detail

struct StepRecord {
    long long step = 0;
    int epoch = 0;
    double alpha = 0.0;
    double grad_norm = 0.0;
    LossBreakdown parts;
};

struct EpochSummary {
    int epoch = 0;
    double mean_total = 0.0;
    double val_macro_f1 = 0.0;
    double val_threshold = 0.5;
    bool improved = false;
};

struct TrainResult {
    Model model;  // best-validation parameters restored
    PrototypeBank bank;
    GeneratorState gen;
    int best_epoch = -1;
    double best_val_macro_f1 = -1.0;
    std::vector<EpochSummary> epochs;
};

// Full training loop. Per epoch: seeded shuffle, batches of B sorted by
// timestamp, two stochastic forward passes, one optimizer step, one prototype
// bank update (from the first pass, after the step). Early stopping tracks
// validation Macro-F1 at the validation-calibrated threshold; the best
// parameters and bank are restored on exit.
inline TrainResult train_model(const HyperParams& hp, const std::vector<PostRecord>& train_set,
                               const std::vector<PostRecord>& val_set,
                               std::ostream* step_log = nullptr, std::ostream* info = nullptr) {
    hp.validate();
    if (train_set.empty()) throw std::invalid_argument("train_model: empty training split");
    if (val_set.empty()) throw std::invalid_argument("train_model: empty validation split");

    Rng master(hp.seed);
    TrainResult result;
    result.model = build_model(hp, master);
    result.bank = PrototypeBank(hp.n_domains, hp.d, hp.proto_momentum);
    Model& model = result.model;

    Adam opt(model.params, hp.lr, hp.adam_beta1, hp.adam_beta2, hp.adam_eps);

    const std::array<double, 2> class_weights =
        compute_class_weights(window_labels_of(sorted_by_time(train_set), hp.T, hp.S));

    const std::size_t n = train_set.size();
    const std::size_t B = static_cast<std::size_t>(hp.batch_size);
    const std::size_t steps_per_epoch = (n + B - 1) / B;
    const double total_steps = static_cast<double>(steps_per_epoch) * hp.epochs;

    std::vector<std::vector<double>> best_values;
    PrototypeBank best_bank = result.bank;
    GeneratorState best_gen{hp.seed, 0, 0};
    int epochs_without_improvement = 0;
    long long global_step = 0;

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        master.fork("shuffle", static_cast<std::uint64_t>(epoch)).shuffle(order);

        double total_sum = 0.0;
        for (std::size_t start = 0; start < n; start += B) {
            const std::size_t end = std::min(start + B, n);
            std::vector<PostRecord> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
            std::sort(batch.begin(), batch.end(), post_before);

            const double alpha = grl_schedule(static_cast<double>(global_step) / total_steps);
            Rng step_rng = master.fork("step", static_cast<std::uint64_t>(global_step));
            const GlobalPrototypes globals = global_prototypes(result.bank);

            BatchForward p1 = forward_batch(model, batch, alpha, step_rng, true);
            BatchForward p2 = forward_batch(model, batch, alpha, step_rng, true);
            LossParts parts = detail::assemble_parts(model, batch, p1, p2, class_weights, globals);
            TotalLoss tl = total_loss(parts, hp.loss);

            zero_gradients(model.params);
            tl.total.backward();
            const double grad_norm = clip_gradients(model.params, hp.clip_norm);
            opt.step(model.params);

            {
                std::vector<Tensor> P;
                std::vector<int> y, dom;
                P.reserve(batch.size());
                y.reserve(batch.size());
                dom.reserve(batch.size());
                for (std::size_t i = 0; i < batch.size(); ++i) {
                    P.push_back(p1.posts[i].P);
                    y.push_back(batch[i].label);
                    dom.push_back(batch[i].domain_id);
                }
                ema_update(result.bank, P, y, dom);
            }

            total_sum += tl.breakdown.total;
            if (step_log) {
                nlohmann::ordered_json line;
                line["step"] = global_step;
                line["epoch"] = epoch;
                line["alpha"] = alpha;
                line["grad_norm"] = grad_norm;
                line["ce"] = tl.breakdown.ce;
                line["align"] = tl.breakdown.align;
                line["tc"] = tl.breakdown.tc;
                line["match"] = tl.breakdown.match;
                line["contrast"] = tl.breakdown.contrast;
                line["rdrop"] = tl.breakdown.rdrop;
                line["domain"] = tl.breakdown.domain;
                line["proto"] = tl.breakdown.proto;
                line["proto_mem"] = tl.breakdown.proto_mem;
                line["tc_seq"] = tl.breakdown.tc_seq;
                line["l2"] = tl.breakdown.l2;
                line["total"] = tl.breakdown.total;
                (*step_log) << line.dump() << "\n";
            }
            global_step += 1;
        }
        if (step_log) step_log->flush();

        SplitScores val = score_posts(model, val_set);
        const ThresholdResult thr = calibrate_threshold(val.labels, val.scores);
        const MetricReport rep = evaluate_scores(val.labels, val.scores, thr.threshold);

        EpochSummary summary;
        summary.epoch = epoch;
        summary.mean_total = total_sum / static_cast<double>(steps_per_epoch);
        summary.val_macro_f1 = rep.macro_f1;
        summary.val_threshold = thr.threshold;
        summary.improved = rep.macro_f1 > result.best_val_macro_f1;
        result.epochs.push_back(summary);
        if (info)
            (*info) << "epoch " << epoch << ": mean_total=" << summary.mean_total
                    << " val_macro_f1=" << summary.val_macro_f1 << (summary.improved ? " *" : "")
                    << "\n";

        if (summary.improved) {
            result.best_val_macro_f1 = rep.macro_f1;
            result.best_epoch = epoch;
            best_values.clear();
            best_values.reserve(model.params.size());
            for (const auto& [name, t] : model.params) best_values.push_back(t.values());
            best_bank = result.bank;
            best_gen = GeneratorState{hp.seed, static_cast<std::uint32_t>(epoch + 1),
                                      static_cast<std::uint64_t>(global_step)};
            epochs_without_improvement = 0;
        } else {
            epochs_without_improvement += 1;
            if (epochs_without_improvement >= hp.patience) break;
        }
    }

    if (!best_values.empty()) {
        for (std::size_t i = 0; i < model.params.size(); ++i) {
            Tensor handle = model.params[i].second;
            handle.values() = best_values[i];
        }
        result.bank = best_bank;
    }
    result.gen = best_gen;
    return result;
}

} // namespace tempofuse
