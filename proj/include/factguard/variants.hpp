#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "factguard/model.hpp"
#include "factguard/training.hpp"

namespace factguard {

// Structural ablations of the full model. Groups: single-stream baselines
// (one encoder, one token attention, one classifier head), leave-one-out
// variants (one input stream removed, classifier narrowed to 2d), and the
// usability knockout (wiring identical to full, fusion weights pinned to 1).
enum class AblationVariant {
    Full,
    NewsOnly,
    TopicContentOnly,
    CommonsenseOnly,
    WoNews,
    WoTopicContent,
    WoCommonsense,
    WoLlmUsability,
};

inline const char* variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::Full: return "full";
        case AblationVariant::NewsOnly: return "news_only";
        case AblationVariant::TopicContentOnly: return "topic_content_only";
        case AblationVariant::CommonsenseOnly: return "commonsense_only";
        case AblationVariant::WoNews: return "wo_news";
        case AblationVariant::WoTopicContent: return "wo_topic_content";
        case AblationVariant::WoCommonsense: return "wo_commonsense";
        case AblationVariant::WoLlmUsability: return "wo_llm_usability";
    }
    throw ArgumentError("unreachable variant");
}

inline AblationVariant variant_from_name(const std::string& name) {
    for (AblationVariant v :
         {AblationVariant::Full, AblationVariant::NewsOnly, AblationVariant::TopicContentOnly,
          AblationVariant::CommonsenseOnly, AblationVariant::WoNews,
          AblationVariant::WoTopicContent, AblationVariant::WoCommonsense,
          AblationVariant::WoLlmUsability})
        if (name == variant_name(v)) return v;
    throw ConfigError("unknown ablation variant '" + name + "'");
}

inline std::vector<AblationVariant> all_variants() {
    return {AblationVariant::Full,         AblationVariant::NewsOnly,
            AblationVariant::TopicContentOnly, AblationVariant::CommonsenseOnly,
            AblationVariant::WoNews,       AblationVariant::WoTopicContent,
            AblationVariant::WoCommonsense, AblationVariant::WoLlmUsability};
}

inline bool variant_is_single_stream(AblationVariant v) {
    return v == AblationVariant::NewsOnly || v == AblationVariant::TopicContentOnly ||
           v == AblationVariant::CommonsenseOnly;
}

inline bool variant_uses_full_params(AblationVariant v) {
    return v == AblationVariant::Full || v == AblationVariant::WoLlmUsability;
}

// Expected width of the classification feature per variant family.
inline std::size_t variant_classifier_width(AblationVariant v, std::size_t d) {
    if (variant_uses_full_params(v)) return 3 * d;
    if (variant_is_single_stream(v)) return d;
    return 2 * d;
}

namespace detail {
// Keeps the auxiliary parameter draws distinct from the core model's seed
// stream without disturbing it.
inline constexpr std::uint64_t kVariantSalt = 0x9e3779b97f4a7c15ULL;
} // namespace detail

// One ablation wiring plus its parameters. Full and wo_llm_usability carry
// the complete parameter set (identical initialization for identical seeds);
// leave-one-out variants add a 2d-input classifier; single-stream variants
// use their own compact stack and leave the core untouched.
struct VariantModel {
    AblationVariant variant = AblationVariant::Full;
    ModelDims dims;
    Vocabulary vocab;

    FactGuardModel core;          // used by everything except single-stream
    MLPParams narrow_classifier;  // 2d -> d -> 1, leave-one-out variants only

    ToyEncoderParams solo_encoder; // single-stream variants only
    TokenAttentionParams solo_pool;
    MLPParams solo_classifier; // d -> d -> 1

    static VariantModel init(AblationVariant variant, const ModelDims& dims, Vocabulary vocab,
                             std::uint64_t seed) {
        dims.validate();
        VariantModel m;
        m.variant = variant;
        m.dims = dims;
        m.vocab = vocab;
        if (variant_is_single_stream(variant)) {
            Rng rng(seed);
            m.solo_encoder = ToyEncoderParams::init(m.vocab.size(), dims.d, dims.max_len,
                                                    dims.layers, dims.heads, dims.activation, rng);
            m.solo_pool = TokenAttentionParams::init(dims.d, rng);
            m.solo_classifier = MLPParams::init({dims.d, dims.d, 1}, dims.activation, rng);
            if (m.solo_classifier.layers.front().in_dim() != variant_classifier_width(variant, dims.d))
                throw ShapeError("single-stream classifier width mismatch");
        } else {
            m.core = FactGuardModel::init(dims, std::move(vocab), seed);
            if (!variant_uses_full_params(variant)) {
                Rng rng(seed ^ detail::kVariantSalt);
                m.narrow_classifier = MLPParams::init({2 * dims.d, dims.d, 1}, dims.activation, rng);
                if (m.narrow_classifier.layers.front().in_dim() !=
                    variant_classifier_width(variant, dims.d))
                    throw ShapeError("leave-one-out classifier width mismatch");
            } else if (m.core.fusion.classifier.layers.front().in_dim() !=
                       variant_classifier_width(variant, dims.d)) {
                throw ShapeError("full classifier width mismatch");
            }
        }
        return m;
    }

    ParamList params() {
        ParamList out;
        switch (variant) {
            case AblationVariant::Full:
            case AblationVariant::WoLlmUsability:
                return core.params();
            case AblationVariant::NewsOnly:
            case AblationVariant::TopicContentOnly:
            case AblationVariant::CommonsenseOnly:
                solo_encoder.collect("solo_encoder", out);
                solo_pool.collect("solo_pool", out);
                solo_classifier.collect("solo_classifier", out);
                return out;
            case AblationVariant::WoNews:
                core.llm_encoder.collect("llm_encoder", out);
                core.fusion.branches[0].collect("fusion.branch1", out);
                core.fusion.branches[1].collect("fusion.branch2", out);
                core.fusion.usability[0].collect("fusion.usability1", out);
                core.fusion.usability[1].collect("fusion.usability2", out);
                core.aux.collect("aux", out);
                narrow_classifier.collect("narrow_classifier", out);
                return out;
            case AblationVariant::WoTopicContent:
                core.news_encoder.collect("news_encoder", out);
                core.llm_encoder.collect("llm_encoder", out);
                core.fusion.branches[0].collect("fusion.branch1", out);
                core.fusion.branches[1].collect("fusion.branch2", out);
                core.fusion.usability[0].collect("fusion.usability1", out);
                core.fusion.usability[1].collect("fusion.usability2", out);
                core.fusion.news_attention[0].collect("fusion.news_attention1", out);
                core.fusion.news_attention[1].collect("fusion.news_attention2", out);
                core.aux.rationale_pool.collect("aux.rationale_pool", out);
                core.aux.rationale_head.collect("aux.rationale_head", out);
                narrow_classifier.collect("narrow_classifier", out);
                return out;
            case AblationVariant::WoCommonsense:
                core.news_encoder.collect("news_encoder", out);
                core.llm_encoder.collect("llm_encoder", out);
                core.fusion.branches[0].collect("fusion.branch1", out);
                core.fusion.branches[1].collect("fusion.branch2", out);
                core.fusion.usability[0].collect("fusion.usability1", out);
                core.fusion.usability[1].collect("fusion.usability2", out);
                core.fusion.news_attention[0].collect("fusion.news_attention1", out);
                core.fusion.news_attention[1].collect("fusion.news_attention2", out);
                core.aux.content_pool.collect("aux.content_pool", out);
                core.aux.content_head.collect("aux.content_head", out);
                narrow_classifier.collect("narrow_classifier", out);
                return out;
        }
        throw ArgumentError("unreachable variant");
    }

    struct Outputs {
        Real y_hat = 0;
        std::array<Real, 2> w{};
        std::array<Real, 2> w_hat{};
        bool has_usability = false;
    };

    Outputs predict(const NewsRecord& rec);
};

// Differentiable trace of one variant forward pass. Absent pieces stay
// invalid Values; record_loss only touches what the variant produces.
struct VariantTrace {
    Value y_hat;
    std::array<Value, 2> w{};
    std::array<Value, 2> w_hat{};
    Value content_logits;
    Value rationale_logits;
    bool has_usability = false;
};

namespace detail {

// Leave-one-out interactor: with one LLM stream gone, both branches read the
// survivor through self-attention, and the two weighted branch features are
// averaged into a single d-wide feature (mirroring the dual news attention)
// so the classifier input stays 2d. The original interactor has no single
// stream mode, so this wiring is a reconstruction chosen for this codebase.
inline std::pair<Value, VariantTrace> collapsed_interactor(GradientTape& t, Value survivor,
                                                           FusionParams& fusion) {
    VariantTrace trace;
    trace.has_usability = true;
    std::array<Value, 2> feat;
    for (std::size_t i = 0; i < 2; ++i) {
        feat[i] = avg_pool(
            multi_head_attention(t, survivor, survivor, fusion.branches[i].content_to_rationale));
        Value gate_in = avg_pool(
            multi_head_attention(t, survivor, survivor, fusion.branches[i].rationale_to_content));
        auto [w, w_hat] = usability_weight(t, gate_in, feat[i], fusion.usability[i]);
        trace.w[i] = w;
        trace.w_hat[i] = w_hat;
    }
    Value fused = ops::scale(ops::add(ops::scale_by(feat[0], trace.w[0]),
                                      ops::scale_by(feat[1], trace.w[1])),
                             Real(0.5));
    return {fused, std::move(trace)};
}

inline Value aux_logits(GradientTape& t, Value seq, TokenAttentionParams& pool, MLPParams& head) {
    return mlp(t, linear_token_attention(t, seq, pool), head);
}

} // namespace detail

inline VariantTrace variant_forward(GradientTape& t, VariantModel& m, const NewsRecord& rec) {
    const std::size_t max_len = m.dims.max_len;
    switch (m.variant) {
        case AblationVariant::Full:
        case AblationVariant::WoLlmUsability: {
            RecordStreams streams = m.core.tokenize_record(rec);
            Value news = encode(t, streams.news, m.core.news_encoder);
            Value content = encode(t, streams.content, m.core.llm_encoder);
            Value rationale = encode(t, streams.rationale, m.core.llm_encoder);
            VariantTrace trace;
            trace.has_usability = true;
            std::array<Value, 2> feat;
            for (std::size_t i = 0; i < 2; ++i) {
                auto [f_cr, f_rc] = interact(t, content, rationale, m.core.fusion.branches[i]);
                feat[i] = f_cr;
                auto [w, w_hat] = usability_weight(t, f_rc, f_cr, m.core.fusion.usability[i]);
                trace.w[i] = w;
                trace.w_hat[i] = w_hat;
            }
            Value f_llm;
            if (m.variant == AblationVariant::WoLlmUsability) {
                // Usability knockout: both fusion weights pinned to one, so
                // the raw branch features pass through unscaled.
                f_llm = ops::concat_cols({feat[0], feat[1]});
            } else {
                f_llm = fuse_llm(t, trace.w, feat);
            }
            Value f_news = news_features(t, news, m.core.fusion);
            Value f_cls = ops::concat_cols({f_news, f_llm});
            trace.y_hat = ops::sigmoid(mlp(t, f_cls, m.core.fusion.classifier));
            trace.content_logits =
                detail::aux_logits(t, content, m.core.aux.content_pool, m.core.aux.content_head);
            trace.rationale_logits = detail::aux_logits(t, rationale, m.core.aux.rationale_pool,
                                                        m.core.aux.rationale_head);
            return trace;
        }
        case AblationVariant::NewsOnly:
        case AblationVariant::TopicContentOnly:
        case AblationVariant::CommonsenseOnly: {
            const std::string& text = m.variant == AblationVariant::NewsOnly ? rec.n
                                      : m.variant == AblationVariant::TopicContentOnly ? rec.c
                                                                                       : rec.r;
            Value seq = encode(t, tokenize(text, m.vocab, max_len), m.solo_encoder);
            VariantTrace trace;
            trace.y_hat = ops::sigmoid(
                mlp(t, linear_token_attention(t, seq, m.solo_pool), m.solo_classifier));
            return trace;
        }
        case AblationVariant::WoNews: {
            Value content = encode(t, tokenize(rec.c, m.vocab, max_len), m.core.llm_encoder);
            Value rationale = encode(t, tokenize(rec.r, m.vocab, max_len), m.core.llm_encoder);
            VariantTrace trace;
            trace.has_usability = true;
            std::array<Value, 2> feat;
            for (std::size_t i = 0; i < 2; ++i) {
                auto [f_cr, f_rc] = interact(t, content, rationale, m.core.fusion.branches[i]);
                feat[i] = f_cr;
                auto [w, w_hat] = usability_weight(t, f_rc, f_cr, m.core.fusion.usability[i]);
                trace.w[i] = w;
                trace.w_hat[i] = w_hat;
            }
            Value f_llm = fuse_llm(t, trace.w, feat);
            trace.y_hat = ops::sigmoid(mlp(t, f_llm, m.narrow_classifier));
            trace.content_logits =
                detail::aux_logits(t, content, m.core.aux.content_pool, m.core.aux.content_head);
            trace.rationale_logits = detail::aux_logits(t, rationale, m.core.aux.rationale_pool,
                                                        m.core.aux.rationale_head);
            return trace;
        }
        case AblationVariant::WoTopicContent: {
            Value news = encode(t, tokenize(rec.n, m.vocab, max_len), m.core.news_encoder);
            Value rationale = encode(t, tokenize(rec.r, m.vocab, max_len), m.core.llm_encoder);
            auto [fused, trace] = detail::collapsed_interactor(t, rationale, m.core.fusion);
            Value f_news = news_features(t, news, m.core.fusion);
            trace.y_hat =
                ops::sigmoid(mlp(t, ops::concat_cols({f_news, fused}), m.narrow_classifier));
            trace.rationale_logits = detail::aux_logits(t, rationale, m.core.aux.rationale_pool,
                                                        m.core.aux.rationale_head);
            return trace;
        }
        case AblationVariant::WoCommonsense: {
            Value news = encode(t, tokenize(rec.n, m.vocab, max_len), m.core.news_encoder);
            Value content = encode(t, tokenize(rec.c, m.vocab, max_len), m.core.llm_encoder);
            auto [fused, trace] = detail::collapsed_interactor(t, content, m.core.fusion);
            Value f_news = news_features(t, news, m.core.fusion);
            trace.y_hat =
                ops::sigmoid(mlp(t, ops::concat_cols({f_news, fused}), m.narrow_classifier));
            trace.content_logits =
                detail::aux_logits(t, content, m.core.aux.content_pool, m.core.aux.content_head);
            return trace;
        }
    }
    throw ArgumentError("unreachable variant");
}

inline VariantModel::Outputs VariantModel::predict(const NewsRecord& rec) {
    GradientTape t;
    VariantTrace trace = variant_forward(t, *this, rec);
    Outputs out;
    out.y_hat = t.value(trace.y_hat)(0, 0);
    out.has_usability = trace.has_usability;
    if (trace.has_usability)
        for (std::size_t i = 0; i < 2; ++i) {
            out.w[i] = variant == AblationVariant::WoLlmUsability ? Real(1)
                                                                  : t.value(trace.w[i])(0, 0);
            out.w_hat[i] = t.value(trace.w_hat[i])(0, 0);
        }
    return out;
}

// Variant counterpart of the full-model objective. Streams a variant does
// not consume contribute nothing: their loss terms are dropped, not merely
// zero-weighted.
inline std::pair<Value, LossBreakdown> record_loss(GradientTape& t, VariantModel& m,
                                                   const NewsRecord& rec, Real alpha, Real beta) {
    VariantTrace trace = variant_forward(t, m, rec);
    const LlmJudgment j = rec.judgment();
    Value l_cls = loss_cls(t, trace.y_hat, rec.y);

    // Usability knockout removes the usability supervision regardless of the
    // configured alpha.
    if (m.variant == AblationVariant::WoLlmUsability) alpha = 0;

    Value l_us;
    if (trace.has_usability) l_us = loss_usability(t, trace.w_hat[0], trace.w_hat[1], j);

    Value l_txt;
    if (trace.content_logits.valid() && trace.rationale_logits.valid())
        l_txt = loss_text(t, trace.content_logits, trace.rationale_logits, rec.y, j);
    else if (trace.content_logits.valid())
        l_txt = ops::cross_entropy_logits(trace.content_logits, static_cast<std::size_t>(rec.y));
    else if (trace.rationale_logits.valid())
        l_txt = ops::cross_entropy_logits(trace.rationale_logits, j.class_index);

    Value total = l_cls;
    LossBreakdown parts;
    parts.l_cls = t.value(l_cls)(0, 0);
    if (l_us.valid() && l_txt.valid()) {
        total = loss_total(t, l_cls, l_us, l_txt, alpha, beta);
        parts.l_usability = t.value(l_us)(0, 0);
        parts.l_text = t.value(l_txt)(0, 0);
    } else if (l_us.valid()) {
        total = ops::add(l_cls, ops::scale(l_us, alpha / 2));
        parts.l_usability = t.value(l_us)(0, 0);
    } else if (l_txt.valid()) {
        total = ops::add(l_cls, ops::scale(l_txt, beta / 2));
        parts.l_text = t.value(l_txt)(0, 0);
    }
    parts.l_total = t.value(total)(0, 0);
    return {total, parts};
}

} // namespace factguard
