#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factguard/model.hpp"
#include "factguard/training.hpp"

namespace factguard {

// The news-only student: it keeps the teacher's news encoder and final
// classifier verbatim and learns only the feature simulator in between, a
// stack of self-attention blocks whose pooled output is projected up to the
// width of the teacher's fused classification feature.
struct StudentParams {
    ModelDims dims;
    Vocabulary vocab;
    ToyEncoderParams news_encoder; // copied from the teacher, frozen by default
    std::vector<TransformerBlockParams> simulator_blocks;
    TokenAttentionParams simulator_pool;
    LinearParams simulator_out; // d -> 3d
    MLPParams classifier;       // copied from the teacher, frozen

    static StudentParams init(const FactGuardModel& teacher, std::uint64_t seed,
                              std::size_t simulator_layers = 4) {
        StudentParams s;
        s.dims = teacher.dims;
        s.vocab = teacher.vocab;
        s.news_encoder = teacher.news_encoder;
        s.classifier = teacher.fusion.classifier;
        Rng rng(seed);
        const std::size_t d = s.dims.d;
        for (std::size_t i = 0; i < simulator_layers; ++i)
            s.simulator_blocks.push_back(TransformerBlockParams::init(
                d, s.dims.heads, 2 * d, s.dims.activation, rng));
        s.simulator_pool = TokenAttentionParams::init(d, rng);
        s.simulator_out = LinearParams::init(d, 3 * d, rng);
        return s;
    }

    ParamList simulator_params() {
        ParamList out;
        for (std::size_t i = 0; i < simulator_blocks.size(); ++i)
            simulator_blocks[i].collect("simulator.block" + std::to_string(i + 1), out);
        simulator_pool.collect("simulator.pool", out);
        simulator_out.collect("simulator.out", out);
        return out;
    }

    ParamList frozen_params() {
        ParamList out;
        news_encoder.collect("news_encoder", out);
        classifier.collect("classifier", out);
        return out;
    }

    ParamList params() {
        ParamList out;
        news_encoder.collect("news_encoder", out);
        for (std::size_t i = 0; i < simulator_blocks.size(); ++i)
            simulator_blocks[i].collect("simulator.block" + std::to_string(i + 1), out);
        simulator_pool.collect("simulator.pool", out);
        simulator_out.collect("simulator.out", out);
        classifier.collect("classifier", out);
        return out;
    }
};

struct DistillConfig {
    Real lambda = Real(8);
    // The initialization-from-teacher line freezes the student encoder; this
    // switch lets it train anyway for experiments.
    bool train_encoder = false;
    TrainConfig base;

    void validate() const {
        if (lambda < 0) throw ConfigError("distillation weight lambda must be >= 0");
        base.validate();
    }
};

// Runs the simulator stack over an encoded news sequence and returns the
// imitation feature, shaped like the teacher's fused vector.
inline Value simulate_features(GradientTape& t, Value news_seq, StudentParams& s) {
    Value x = news_seq;
    for (TransformerBlockParams& blk : s.simulator_blocks) x = transformer_block(t, x, blk);
    return linear(t, linear_token_attention(t, x, s.simulator_pool), s.simulator_out);
}

struct StudentTrace {
    Value features; // [1 x 3d]
    Value y_hat;    // [1 x 1]
};

inline StudentTrace student_forward(GradientTape& t, const TokenSequence& news,
                                    StudentParams& s) {
    StudentTrace trace;
    trace.features = simulate_features(t, encode(t, news, s.news_encoder), s);
    trace.y_hat = ops::sigmoid(mlp(t, trace.features, s.classifier));
    return trace;
}

// Prediction from the news text alone. No topic-content or rationale input
// exists on this path by construction.
inline Real student_infer(const std::string& n, StudentParams& s) {
    GradientTape t;
    StudentTrace trace = student_forward(t, tokenize(n, s.vocab, s.dims.max_len), s);
    return t.value(trace.y_hat)(0, 0);
}

struct DistillLossParts {
    Value l_cls;
    Value l_distill;
    Value l_fgd;
};

inline DistillLossParts distill_loss(GradientTape& t, Value f_d, Value f_t, Value y_hat, int y,
                                     Real lambda) {
    (void)t;
    if (lambda < 0) throw ConfigError("distillation weight lambda must be >= 0");
    if (y != 0 && y != 1) throw ArgumentError("label must be 0 or 1");
    DistillLossParts parts;
    parts.l_cls = ops::bce_loss(y_hat, Real(y));
    parts.l_distill = ops::mse_loss(f_d, f_t);
    parts.l_fgd = ops::add(parts.l_cls, ops::scale(parts.l_distill, lambda));
    return parts;
}

struct StudentLossBreakdown {
    Real l_cls = 0;
    Real l_distill = 0;
    Real l_fgd = 0;
};

struct DistillHistoryRow {
    std::size_t epoch = 0;
    StudentLossBreakdown train;
    MetricsReport val;
    Real val_mse = 0; // held-out feature imitation error
};

struct DistillResult {
    std::vector<DistillHistoryRow> history;
    Real baseline_val_mse = 0; // before any simulator update
    std::size_t best_epoch = 0;
    Real best_val_macf1 = 0;
    std::size_t epochs_run = 0;
};

namespace detail {

// The teacher is frozen, so its fused feature for a record never changes;
// compute each target once and reuse it for every epoch.
inline std::vector<RealMatrix> teacher_targets(FactGuardModel& teacher,
                                               const std::vector<NewsRecord>& records) {
    std::vector<RealMatrix> targets;
    targets.reserve(records.size());
    for (const NewsRecord& rec : records) targets.push_back(teacher.predict(rec).f_cls);
    return targets;
}

inline std::pair<MetricsReport, Real> student_validation(StudentParams& student,
                                                         const std::vector<NewsRecord>& records,
                                                         const std::vector<RealMatrix>& targets) {
    std::vector<Real> preds;
    std::vector<int> labels;
    Real mse_sum = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        GradientTape t;
        StudentTrace trace =
            student_forward(t, tokenize(records[i].n, student.vocab, student.dims.max_len),
                            student);
        preds.push_back(t.value(trace.y_hat)(0, 0));
        labels.push_back(records[i].y);
        mse_sum += t.value(ops::mse_loss(trace.features, t.constant(targets[i])))(0, 0);
    }
    return {evaluate_predictions(preds, labels), mse_sum / Real(records.size())};
}

} // namespace detail

// Held-out evaluation of a student: classification metrics from news text
// alone, plus the feature MSE against the teacher's fused features.
inline std::pair<MetricsReport, Real> evaluate_student(FactGuardModel& teacher,
                                                       StudentParams& student,
                                                       const std::vector<NewsRecord>& records) {
    if (records.empty()) throw ArgumentError("cannot evaluate a student on an empty record list");
    return detail::student_validation(student, records, detail::teacher_targets(teacher, records));
}

// Metrics-only student evaluation for when no teacher is on hand.
inline MetricsReport evaluate_student_metrics(StudentParams& student,
                                              const std::vector<NewsRecord>& records) {
    if (records.empty()) throw ArgumentError("cannot evaluate a student on an empty record list");
    std::vector<Real> preds;
    std::vector<int> labels;
    for (const NewsRecord& rec : records) {
        preds.push_back(student_infer(rec.n, student));
        labels.push_back(rec.y);
    }
    return evaluate_predictions(preds, labels);
}

// Feature distillation loop. Teacher features are fixed targets; only the
// simulator (optionally also the encoder) receives optimizer updates, and the
// frozen tensors are byte-identical before and after.
inline DistillResult distill_train(FactGuardModel& teacher, StudentParams& student,
                                   const std::vector<NewsRecord>& train_records,
                                   const std::vector<NewsRecord>& val_records,
                                   const DistillConfig& cfg) {
    cfg.validate();
    if (train_records.empty()) throw ArgumentError("training split is empty");
    if (val_records.empty()) throw ArgumentError("validation split is empty");
    if (teacher.dims.d != student.dims.d)
        throw ConfigError("teacher width " + std::to_string(teacher.dims.d) +
                          " does not match student width " + std::to_string(student.dims.d));
    if (!(teacher.vocab == student.vocab))
        throw ConfigError("teacher and student vocabularies differ");

    ParamList trainable = student.simulator_params();
    if (cfg.train_encoder) student.news_encoder.collect("news_encoder", trainable);
    AdamW optimizer(cfg.base.learning_rate, cfg.base.weight_decay);
    Rng shuffle_rng(cfg.base.seed);

    const std::vector<RealMatrix> train_targets = detail::teacher_targets(teacher, train_records);
    const std::vector<RealMatrix> val_targets = detail::teacher_targets(teacher, val_records);

    DistillResult result;
    {
        auto [report, mse] = detail::student_validation(student, val_records, val_targets);
        (void)report;
        result.baseline_val_mse = mse;
    }

    std::vector<RealMatrix> best_tensors = detail::copy_tensors(trainable);
    Real best_macf1 = -1;
    std::size_t since_improvement = 0;

    std::vector<std::size_t> order(train_records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.base.max_epochs; ++epoch) {
        deterministic_shuffle(order, shuffle_rng);

        StudentLossBreakdown epoch_sum;
        for (std::size_t start = 0; start < order.size(); start += cfg.base.batch_size) {
            const std::size_t end = std::min(start + cfg.base.batch_size, order.size());
            GradientTape tape;
            Value batch_total{};
            for (std::size_t k = start; k < end; ++k) {
                const NewsRecord& rec = train_records[order[k]];
                StudentTrace trace = student_forward(
                    tape, tokenize(rec.n, student.vocab, student.dims.max_len), student);
                DistillLossParts parts =
                    distill_loss(tape, trace.features, tape.constant(train_targets[order[k]]),
                                 trace.y_hat, rec.y, cfg.lambda);
                epoch_sum.l_cls += tape.value(parts.l_cls)(0, 0);
                epoch_sum.l_distill += tape.value(parts.l_distill)(0, 0);
                epoch_sum.l_fgd += tape.value(parts.l_fgd)(0, 0);
                batch_total = batch_total.valid() ? ops::add(batch_total, parts.l_fgd)
                                                  : parts.l_fgd;
            }
            Value batch_mean = ops::scale(batch_total, Real(1) / Real(end - start));
            const Real batch_loss = tape.value(batch_mean)(0, 0);
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite distillation loss in epoch " +
                                   std::to_string(epoch) + ", batch at record " +
                                   std::to_string(start));
            tape.backward(batch_mean);
            std::unordered_map<const RealMatrix*, RealMatrix> grads;
            for (const ParamRef& p : trainable) grads.emplace(p.tensor, tape.grad_for(*p.tensor));
            optimizer.step(trainable, grads);
        }

        const Real inv_n = Real(1) / Real(train_records.size());
        DistillHistoryRow row;
        row.epoch = epoch;
        row.train.l_cls = epoch_sum.l_cls * inv_n;
        row.train.l_distill = epoch_sum.l_distill * inv_n;
        row.train.l_fgd = epoch_sum.l_fgd * inv_n;
        auto [report, mse] = detail::student_validation(student, val_records, val_targets);
        row.val = report;
        row.val_mse = mse;
        result.history.push_back(row);
        result.epochs_run = epoch;

        if (row.val.macf1 > best_macf1) {
            best_macf1 = row.val.macf1;
            best_tensors = detail::copy_tensors(trainable);
            result.best_epoch = epoch;
            since_improvement = 0;
        } else {
            ++since_improvement;
            if (since_improvement >= cfg.base.patience) break;
        }
    }

    detail::restore_tensors(trainable, best_tensors);
    result.best_val_macf1 = best_macf1;
    return result;
}

inline void write_distill_history_csv(const std::vector<DistillHistoryRow>& history,
                                      const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write history file " + path.string());
    out << "epoch,l_cls,l_distill,l_fgd,val_acc,val_macf1,val_f1_real,val_f1_fake,val_mse\n";
    char buf[512];
    for (const DistillHistoryRow& row : history) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      row.epoch, double(row.train.l_cls), double(row.train.l_distill),
                      double(row.train.l_fgd), double(row.val.acc), double(row.val.macf1),
                      double(row.val.f1_real), double(row.val.f1_fake), double(row.val_mse));
        out << buf;
    }
}

// --- student checkpoint io ---------------------------------------------------

inline const char* kStudentCheckpointTag = "FGD1";

inline void save_student_checkpoint(StudentParams& student, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write checkpoint " + path.string());
    nlohmann::json header = detail::dims_header(student.dims, student.vocab);
    header["simulator_layers"] = student.simulator_blocks.size();
    detail::write_checkpoint_payload(out, kStudentCheckpointTag, std::move(header),
                                     student.params());
}

inline StudentParams load_student_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LookupError("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    nlohmann::json header = detail::read_checkpoint_header(in, kStudentCheckpointTag, what);
    ModelDims dims = detail::dims_from_header(header);
    Vocabulary vocab = detail::vocab_from_header(header, what);
    const std::size_t layers = header.at("simulator_layers").get<std::size_t>();
    FactGuardModel skeleton = FactGuardModel::init(dims, vocab, 0);
    StudentParams student = StudentParams::init(skeleton, 0, layers);
    detail::read_checkpoint_tensors(in, header, student.params(), what);
    return student;
}

} // namespace factguard
