// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <vector>

namespace tempofuse {

struct ConfusionCounts {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline ConfusionCounts confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size())
        throw std::invalid_argument("confusion: label/prediction length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] != 0 && y_true[i] != 1) throw std::invalid_argument("confusion: labels must be 0/1");
        if (y_pred[i] != 0 && y_pred[i] != 1) throw std::invalid_argument("confusion: predictions must be 0/1");
        if (y_true[i] == 1)
            (y_pred[i] == 1 ? c.tp : c.fn) += 1;
        else
            (y_pred[i] == 1 ? c.fp : c.tn) += 1;
    }
    return c;
}

// Ratio conventions: 0/0 -> 0 for precision/recall/specificity/F1 so the
// metrics stay defined on degenerate splits.
inline double accuracy(const ConfusionCounts& c) {
    const long long n = c.tp + c.fp + c.tn + c.fn;
    if (n == 0) throw std::invalid_argument("accuracy: empty evaluation set");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}
inline double precision(const ConfusionCounts& c) {
    const long long den = c.tp + c.fp;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}
inline double recall(const ConfusionCounts& c) {
    const long long den = c.tp + c.fn;
    return den == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}
inline double specificity(const ConfusionCounts& c) {
    const long long den = c.tn + c.fp;
    return den == 0 ? 0.0 : static_cast<double>(c.tn) / static_cast<double>(den);
}
inline double f1(const ConfusionCounts& c) {
    const double p = precision(c), r = recall(c);
    return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}
// Macro-F1 over both classes: F1 of the positive class plus F1 of the
// negative class (confusion with roles swapped), divided by two.
inline double macro_f1(const ConfusionCounts& c) {
    const ConfusionCounts swapped{c.tn, c.fn, c.tp, c.fp};
    return 0.5 * (f1(c) + f1(swapped));
}

// ROC-AUC by direct pair counting: over all (positive, negative) pairs the
// fraction where score(pos) > score(neg), with ties worth 1/2. The counts are
// exact integers scaled by 2, so equal-score structures produce exact halves.
// Undefined (nullopt) when either class is absent.
inline std::optional<double> auc(const std::vector<int>& y_true, const std::vector<double>& scores) {
    if (y_true.size() != scores.size()) throw std::invalid_argument("auc: label/score length mismatch");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] != 0 && y_true[i] != 1) throw std::invalid_argument("auc: labels must be 0/1");
        if (!std::isfinite(scores[i])) throw std::invalid_argument("auc: non-finite score");
        (y_true[i] == 1 ? pos : neg).push_back(scores[i]);
    }
    if (pos.empty() || neg.empty()) return std::nullopt;
    long long twice_wins = 0;
    for (double p : pos)
        for (double n : neg) {
            if (p > n)
                twice_wins += 2;
            else if (p == n)
                twice_wins += 1;
        }
    return static_cast<double>(twice_wins) /
           (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// Matthews correlation. Any single zero factor in the denominator with a
// nonzero numerator cannot occur; when a factor is zero the numerator is also
// zero and the score is 0 by convention. Undefined (nullopt) when the set
// contains a single true class only.
inline std::optional<double> mcc(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0 || c.tn + c.fp == 0) return std::nullopt;
    const double num = static_cast<double>(c.tp) * static_cast<double>(c.tn) -
                       static_cast<double>(c.fp) * static_cast<double>(c.fn);
    const double d1 = static_cast<double>(c.tp + c.fp);
    const double d2 = static_cast<double>(c.tp + c.fn);
    const double d3 = static_cast<double>(c.tn + c.fp);
    const double d4 = static_cast<double>(c.tn + c.fn);
    if (d1 == 0.0 || d2 == 0.0 || d3 == 0.0 || d4 == 0.0) return 0.0;
    return num / std::sqrt(d1 * d2 * d3 * d4);
}

struct ThresholdResult {
    double threshold = 0.5;
    double f1 = 0.0;
    bool degenerate = false;  // all scores identical; threshold defaulted
};

// Decision-threshold calibration: candidate thresholds are the midpoints of
// consecutive distinct sorted scores; the candidate maximizing F1 wins, ties
// resolved toward the threshold closest to 0.5 (equidistant -> the smaller).
inline ThresholdResult calibrate_threshold(const std::vector<int>& y_true, const std::vector<double>& scores) {
    if (y_true.size() != scores.size() || y_true.empty())
        throw std::invalid_argument("calibrate_threshold: empty or misaligned inputs");
    bool any_pos = false, any_neg = false;
    for (int y : y_true) (y == 1 ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg)
        throw std::invalid_argument("calibrate_threshold: validation set must contain both classes");
    std::vector<double> uniq = scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    ThresholdResult best;
    if (uniq.size() < 2) {
        best.degenerate = true;
        best.threshold = 0.5;
        std::vector<int> pred(y_true.size());
        for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= best.threshold ? 1 : 0;
        best.f1 = f1(confusion(y_true, pred));
        return best;
    }
    bool have = false;
    for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
        const double thr = 0.5 * (uniq[k] + uniq[k + 1]);
        std::vector<int> pred(y_true.size());
        for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= thr ? 1 : 0;
        const double score = f1(confusion(y_true, pred));
        const bool better =
            !have || score > best.f1 ||
            (score == best.f1 && (std::abs(thr - 0.5) < std::abs(best.threshold - 0.5) ||
                                  (std::abs(thr - 0.5) == std::abs(best.threshold - 0.5) && thr < best.threshold)));
        if (better) {
            best.threshold = thr;
            best.f1 = score;
            have = true;
        }
    }
    return best;
}

struct MetricReport {
    ConfusionCounts counts;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, macro_f1 = 0.0, specificity = 0.0;
    std::optional<double> auc, mcc;
    double threshold = 0.5;
};

inline MetricReport evaluate_scores(const std::vector<int>& y_true, const std::vector<double>& scores,
                                    double threshold) {
    std::vector<int> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
    MetricReport r;
    r.counts = confusion(y_true, pred);
    r.accuracy = accuracy(r.counts);
    r.precision = precision(r.counts);
    r.recall = recall(r.counts);
    r.f1 = f1(r.counts);
    r.macro_f1 = macro_f1(r.counts);
    r.specificity = specificity(r.counts);
    r.auc = auc(y_true, scores);
    r.mcc = mcc(r.counts);
    r.threshold = threshold;
    return r;
}

} // namespace tempofuse
