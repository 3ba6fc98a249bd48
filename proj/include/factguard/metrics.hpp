#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"

namespace factguard {

// Fake news is the positive class throughout.
struct ConfusionMatrix {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
};

// A prediction counts as fake when p >= threshold.
inline ConfusionMatrix confusion(const std::vector<Real>& preds, const std::vector<int>& labels,
                                 Real threshold = Real(0.5)) {
    if (preds.size() != labels.size())
        throw ArgumentError("got " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool called_fake = preds[i] >= threshold;
        const bool is_fake = labels[i] == 1;
        if (called_fake && is_fake)
            ++cm.tp;
        else if (called_fake && !is_fake)
            ++cm.fp;
        else if (!called_fake && is_fake)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

struct MetricsReport {
    Real acc = 0, f1_real = 0, f1_fake = 0, macf1 = 0;
};

namespace detail {
// Any 0/0 ratio in precision/recall/F1 is defined as 0 so reports stay total.
inline Real safe_ratio(Real num, Real den) { return den == 0 ? Real(0) : num / den; }

inline Real f1(Real precision, Real recall) {
    return safe_ratio(2 * precision * recall, precision + recall);
}
} // namespace detail

// Macro F1 is the unweighted mean of the two per-class F1 scores.
inline Real macro_f1(Real f1_real, Real f1_fake) { return (f1_real + f1_fake) / 2; }

inline MetricsReport metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ArgumentError("metrics over an empty confusion matrix");
    MetricsReport r;
    r.acc = Real(cm.tp + cm.tn) / Real(cm.total());
    const Real prec_fake = detail::safe_ratio(Real(cm.tp), Real(cm.tp + cm.fp));
    const Real rec_fake = detail::safe_ratio(Real(cm.tp), Real(cm.tp + cm.fn));
    r.f1_fake = detail::f1(prec_fake, rec_fake);
    const Real prec_real = detail::safe_ratio(Real(cm.tn), Real(cm.tn + cm.fn));
    const Real rec_real = detail::safe_ratio(Real(cm.tn), Real(cm.tn + cm.fp));
    r.f1_real = detail::f1(prec_real, rec_real);
    r.macf1 = macro_f1(r.f1_real, r.f1_fake);
    return r;
}

inline MetricsReport evaluate_predictions(const std::vector<Real>& preds,
                                          const std::vector<int>& labels,
                                          Real threshold = Real(0.5)) {
    return metrics(confusion(preds, labels, threshold));
}

// Per-class histogram of prediction confidence. Equal-width bins over [0,1];
// every bin is [lo, hi) except the last, which includes 1.0.
struct ConfidenceHistogram {
    std::size_t bins = 10;
    std::vector<std::size_t> count_real; // y = 0
    std::vector<std::size_t> count_fake; // y = 1

    Real bin_lo(std::size_t k) const { return Real(k) / Real(bins); }
    Real bin_hi(std::size_t k) const { return Real(k + 1) / Real(bins); }
};

inline ConfidenceHistogram confidence_histogram(const std::vector<Real>& preds,
                                                const std::vector<int>& labels,
                                                std::size_t bins = 10) {
    if (bins < 2) throw ArgumentError("confidence histogram needs at least 2 bins");
    if (preds.size() != labels.size())
        throw ArgumentError("prediction/label count mismatch in confidence histogram");
    ConfidenceHistogram h;
    h.bins = bins;
    h.count_real.assign(bins, 0);
    h.count_fake.assign(bins, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Real p = std::min(std::max(preds[i], Real(0)), Real(1));
        std::size_t k = std::min(static_cast<std::size_t>(p * Real(bins)), bins - 1);
        if (labels[i] == 1)
            ++h.count_fake[k];
        else
            ++h.count_real[k];
    }
    return h;
}

// Probability that a random positive outranks a random negative, with ties
// counted half. Rank-sum formulation.
inline Real auc(const std::vector<Real>& scores, const std::vector<int>& positives) {
    if (scores.size() != positives.size())
        throw ArgumentError("score/flag count mismatch in auc");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::size_t n_pos = 0, n_neg = 0;
    Real rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const Real avg_rank = (Real(i + 1) + Real(j)) / 2; // 1-based, ties averaged
        for (std::size_t k = i; k < j; ++k) {
            if (positives[order[k]] == 1) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            } else {
                ++n_neg;
            }
        }
        i = j;
    }
    if (n_pos == 0 || n_neg == 0)
        throw ArgumentError("auc needs both positive and negative examples");
    return (rank_sum_pos - Real(n_pos) * Real(n_pos + 1) / 2) / (Real(n_pos) * Real(n_neg));
}

} // namespace factguard
