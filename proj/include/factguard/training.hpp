#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factguard/dataset.hpp"
#include "factguard/errors.hpp"
#include "factguard/metrics.hpp"
#include "factguard/model.hpp"

namespace factguard {

struct TrainConfig {
    Real alpha = Real(0.4);
    Real beta = Real(0.16);
    Real learning_rate = Real(2e-4);
    Real weight_decay = Real(5e-5);
    std::size_t patience = 5;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 50;
    std::uint64_t seed = 3759;

    void validate() const {
        if (alpha < 0 || beta < 0) throw ConfigError("loss weights alpha/beta must be >= 0");
        if (learning_rate <= 0) throw ConfigError("learning rate must be positive");
        if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    }
};

// --- loss terms -------------------------------------------------------------

inline Value loss_cls(GradientTape& t, Value y_hat, int y) {
    if (y != 0 && y != 1) throw ArgumentError("label must be 0 or 1");
    (void)t;
    return ops::bce_loss(y_hat, Real(y));
}

// Branch 1 is pushed toward ignoring the direct judgment (target 0); branch 2
// is supervised by the advisor's own verdict.
inline Value loss_usability(GradientTape& t, Value w_hat1, Value w_hat2, const LlmJudgment& j) {
    (void)t;
    return ops::add(ops::bce_loss(w_hat1, Real(0)), ops::bce_loss(w_hat2, j.binary_target));
}

inline Value loss_text(GradientTape& t, Value content_logits, Value rationale_logits, int y,
                       const LlmJudgment& j) {
    (void)t;
    if (y != 0 && y != 1) throw ArgumentError("label must be 0 or 1");
    return ops::add(ops::cross_entropy_logits(content_logits, static_cast<std::size_t>(y)),
                    ops::cross_entropy_logits(rationale_logits, j.class_index));
}

// l_total = l_cls + alpha * l_usability / 2 + beta * l_text / 2. Each of the
// auxiliary terms is itself a sum over two sub-losses; the /2 makes the
// weights act on their means.
inline Value loss_total(GradientTape& t, Value l_cls, Value l_usability, Value l_text, Real alpha,
                        Real beta) {
    (void)t;
    if (alpha < 0 || beta < 0) throw ConfigError("loss weights alpha/beta must be >= 0");
    return ops::add(l_cls, ops::add(ops::scale(l_usability, alpha / 2),
                                    ops::scale(l_text, beta / 2)));
}

inline Real loss_total_eval(Real l_cls, Real l_usability, Real l_text, Real alpha, Real beta) {
    if (alpha < 0 || beta < 0) throw ConfigError("loss weights alpha/beta must be >= 0");
    return l_cls + alpha * l_usability / 2 + beta * l_text / 2;
}

struct LossBreakdown {
    Real l_cls = 0;
    Real l_usability = 0;
    Real l_text = 0;
    Real l_total = 0;
};

// Builds the full per-record objective on the tape and reports the component
// values alongside the differentiable total.
inline std::pair<Value, LossBreakdown> record_loss(GradientTape& t, FactGuardModel& model,
                                                   const NewsRecord& rec, Real alpha, Real beta) {
    ModelTrace trace = model.forward(t, model.tokenize_record(rec));
    const LlmJudgment j = rec.judgment();
    Value l_cls = loss_cls(t, trace.fusion.y_hat, rec.y);
    Value l_us = loss_usability(t, trace.fusion.w_hat[0], trace.fusion.w_hat[1], j);
    Value l_txt = loss_text(t, trace.content_logits, trace.rationale_logits, rec.y, j);
    Value total = loss_total(t, l_cls, l_us, l_txt, alpha, beta);
    LossBreakdown parts;
    parts.l_cls = t.value(l_cls)(0, 0);
    parts.l_usability = t.value(l_us)(0, 0);
    parts.l_text = t.value(l_txt)(0, 0);
    parts.l_total = t.value(total)(0, 0);
    return {total, parts};
}

// --- optimizer ---------------------------------------------------------------

// Adam with decoupled weight decay. State is keyed by tensor identity, so one
// optimizer must outlive and track a fixed parameter set.
class AdamW {
public:
    AdamW(Real learning_rate, Real weight_decay, Real beta1 = Real(0.9), Real beta2 = Real(0.999),
          Real eps = Real(1e-8))
        : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const ParamList& params,
              const std::unordered_map<const RealMatrix*, RealMatrix>& grads) {
        ++t_;
        const Real bc1 = Real(1) - std::pow(beta1_, Real(t_));
        const Real bc2 = Real(1) - std::pow(beta2_, Real(t_));
        for (const ParamRef& p : params) {
            auto git = grads.find(p.tensor);
            if (git == grads.end()) continue;
            const RealMatrix& g = git->second;
            Slot& slot = state_.try_emplace(p.tensor, Slot{RealMatrix(g.rows(), g.cols()),
                                                           RealMatrix(g.rows(), g.cols())})
                             .first->second;
            RealMatrix& w = *p.tensor;
            for (std::size_t i = 0; i < w.size(); ++i) {
                slot.m[i] = beta1_ * slot.m[i] + (Real(1) - beta1_) * g[i];
                slot.v[i] = beta2_ * slot.v[i] + (Real(1) - beta2_) * g[i] * g[i];
                const Real m_hat = slot.m[i] / bc1;
                const Real v_hat = slot.v[i] / bc2;
                w[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + wd_ * w[i]);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

private:
    struct Slot {
        RealMatrix m;
        RealMatrix v;
    };
    Real lr_, wd_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::unordered_map<const RealMatrix*, Slot> state_;
};

// --- training loop -----------------------------------------------------------

struct HistoryRow {
    std::size_t epoch = 0;
    LossBreakdown train;
    MetricsReport val;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;   // 1-based epoch whose weights were kept
    Real best_val_macf1 = 0;
    std::size_t epochs_run = 0;
};

namespace detail {

inline std::vector<RealMatrix> copy_tensors(const ParamList& params) {
    std::vector<RealMatrix> out;
    out.reserve(params.size());
    for (const ParamRef& p : params) out.push_back(*p.tensor);
    return out;
}

inline void restore_tensors(const ParamList& params, const std::vector<RealMatrix>& saved) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = saved[i];
}

} // namespace detail

// Works for any model exposing predict(record) with a y_hat field.
template <typename Model>
MetricsReport evaluate_model(Model& model, const std::vector<NewsRecord>& records) {
    if (records.empty()) throw ArgumentError("cannot evaluate on an empty record set");
    std::vector<Real> preds;
    std::vector<int> labels;
    preds.reserve(records.size());
    labels.reserve(records.size());
    for (const NewsRecord& rec : records) {
        preds.push_back(model.predict(rec).y_hat);
        labels.push_back(rec.y);
    }
    return evaluate_predictions(preds, labels);
}

// Minibatch training with early stopping on validation macro F1 (strict
// improvement) and restoration of the best-epoch weights. Deterministic for
// a fixed config: the shuffle is the only randomness and is seeded. Works
// for any model with params() and a record_loss overload.
template <typename Model>
TrainResult train(Model& model, const std::vector<NewsRecord>& train_records,
                  const std::vector<NewsRecord>& val_records, const TrainConfig& cfg) {
    cfg.validate();
    if (train_records.empty()) throw ArgumentError("training split is empty");
    if (val_records.empty()) throw ArgumentError("validation split is empty");

    ParamList params = model.params();
    AdamW optimizer(cfg.learning_rate, cfg.weight_decay);
    Rng shuffle_rng(cfg.seed);

    TrainResult result;
    std::vector<RealMatrix> best_tensors = detail::copy_tensors(params);
    Real best_macf1 = -1;
    std::size_t since_improvement = 0;

    std::vector<std::size_t> order(train_records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        deterministic_shuffle(order, shuffle_rng);

        LossBreakdown epoch_sum;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            GradientTape tape;
            Value batch_total{};
            for (std::size_t k = start; k < end; ++k) {
                const NewsRecord& rec = train_records[order[k]];
                auto [total, parts] = record_loss(tape, model, rec, cfg.alpha, cfg.beta);
                epoch_sum.l_cls += parts.l_cls;
                epoch_sum.l_usability += parts.l_usability;
                epoch_sum.l_text += parts.l_text;
                epoch_sum.l_total += parts.l_total;
                batch_total = batch_total.valid() ? ops::add(batch_total, total) : total;
            }
            Value batch_mean = ops::scale(batch_total, Real(1) / Real(end - start));
            const Real batch_loss = tape.value(batch_mean)(0, 0);
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite training loss " + std::to_string(batch_loss) +
                                   " in epoch " + std::to_string(epoch) + ", batch at record " +
                                   std::to_string(start));
            tape.backward(batch_mean);
            std::unordered_map<const RealMatrix*, RealMatrix> grads;
            for (const ParamRef& p : params) grads.emplace(p.tensor, tape.grad_for(*p.tensor));
            optimizer.step(params, grads);
        }

        const Real inv_n = Real(1) / Real(train_records.size());
        HistoryRow row;
        row.epoch = epoch;
        row.train.l_cls = epoch_sum.l_cls * inv_n;
        row.train.l_usability = epoch_sum.l_usability * inv_n;
        row.train.l_text = epoch_sum.l_text * inv_n;
        row.train.l_total = epoch_sum.l_total * inv_n;
        row.val = evaluate_model(model, val_records);
        result.history.push_back(row);
        result.epochs_run = epoch;

        if (row.val.macf1 > best_macf1) {
            best_macf1 = row.val.macf1;
            best_tensors = detail::copy_tensors(params);
            result.best_epoch = epoch;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement >= cfg.patience) break;
        }
    }

    detail::restore_tensors(params, best_tensors);
    result.best_val_macf1 = best_macf1;
    return result;
}

// history.csv with one row per epoch, written with round-trip float precision
// so reruns are byte-comparable.
inline void write_history_csv(const std::vector<HistoryRow>& history,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write history file " + path.string());
    out << "epoch,l_cls,l_usability,l_text,l_total,val_acc,val_macf1,val_f1_real,val_f1_fake\n";
    char buf[512];
    for (const HistoryRow& row : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      row.epoch, double(row.train.l_cls), double(row.train.l_usability),
                      double(row.train.l_text), double(row.train.l_total), double(row.val.acc),
                      double(row.val.macf1), double(row.val.f1_real), double(row.val.f1_fake));
        out << buf;
    }
}

} // namespace factguard
