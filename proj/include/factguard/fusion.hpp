#pragma once

#include <array>
#include <string>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"
#include "factguard/nn.hpp"

namespace factguard {

// One interaction branch: cross attention in both directions between the
// topic-content sequence C and the rationale sequence R.
struct InteractorBranchParams {
    AttentionParams content_to_rationale; // queries C, keys/values R
    AttentionParams rationale_to_content; // queries R, keys/values C

    static InteractorBranchParams init(std::size_t d, std::size_t heads, Rng& rng) {
        InteractorBranchParams p;
        p.content_to_rationale = AttentionParams::init(d, heads, rng);
        p.rationale_to_content = AttentionParams::init(d, heads, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        content_to_rationale.collect(prefix + ".content_to_rationale", out);
        rationale_to_content.collect(prefix + ".rationale_to_content", out);
    }
};

// Per-branch weighting heads. The weight mapper turns the rationale-aware
// feature into the fusion weight used at inference; the supervision head
// reads the advice feature itself and is trained against the branch's
// usability target, shaping that feature during training.
struct UsabilityParams {
    MLPParams weight_mapper;    // d -> d -> d/2 -> 1
    MLPParams supervision_head; // d -> 1

    static UsabilityParams init(std::size_t d, Activation act, Rng& rng) {
        UsabilityParams p;
        p.weight_mapper = MLPParams::init({d, d, std::max<std::size_t>(1, d / 2), 1}, act, rng);
        p.supervision_head = MLPParams::init({d, 1}, act, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        weight_mapper.collect(prefix + ".weight_mapper", out);
        supervision_head.collect(prefix + ".supervision_head", out);
    }
};

struct FusionParams {
    std::array<InteractorBranchParams, 2> branches;
    std::array<UsabilityParams, 2> usability;
    std::array<TokenAttentionParams, 2> news_attention;
    MLPParams classifier; // 3d -> d -> 1

    static FusionParams init(std::size_t d, std::size_t heads, Activation act, Rng& rng) {
        FusionParams p;
        for (auto& b : p.branches) b = InteractorBranchParams::init(d, heads, rng);
        for (auto& u : p.usability) u = UsabilityParams::init(d, act, rng);
        for (auto& a : p.news_attention) a = TokenAttentionParams::init(d, rng);
        p.classifier = MLPParams::init({3 * d, d, 1}, act, rng);
        return p;
    }

    std::size_t dim() const { return news_attention[0].weight.cols(); }

    void collect(const std::string& prefix, ParamList& out) {
        for (std::size_t i = 0; i < 2; ++i)
            branches[i].collect(prefix + ".branch" + std::to_string(i + 1), out);
        for (std::size_t i = 0; i < 2; ++i)
            usability[i].collect(prefix + ".usability" + std::to_string(i + 1), out);
        for (std::size_t i = 0; i < 2; ++i)
            news_attention[i].collect(prefix + ".news_attention" + std::to_string(i + 1), out);
        classifier.collect(prefix + ".classifier", out);
    }
};

// Everything the forward pass produces, kept as tape values so the training
// losses can attach to any of them.
struct FusionTrace {
    std::array<Value, 2> f_content_to_rationale;
    std::array<Value, 2> f_rationale_to_content;
    std::array<Value, 2> w;     // fusion weights, used at inference
    std::array<Value, 2> w_hat; // supervised estimates, training only
    Value f_llm; // [1 x 2d]
    Value f_news; // [1 x d]
    Value f_cls;  // [1 x 3d]
    Value y_hat;  // [1 x 1]
};

// Plain-number snapshot of a trace for inference and analysis paths.
struct FusionOutputs {
    std::array<Real, 2> w;
    std::array<Real, 2> w_hat;
    RealMatrix f_llm;
    RealMatrix f_news;
    RealMatrix f_cls;
    Real y_hat = 0;
};

// Cross-attends the two LLM-derived sequences both ways and pools each
// direction to a single vector.
inline std::pair<Value, Value> interact(GradientTape& t, Value content, Value rationale,
                                        InteractorBranchParams& branch) {
    Value f_cr = avg_pool(multi_head_attention(t, content, rationale, branch.content_to_rationale));
    Value f_rc = avg_pool(multi_head_attention(t, rationale, content, branch.rationale_to_content));
    return {f_cr, f_rc};
}

inline std::pair<Value, Value> usability_weight(GradientTape& t, Value f_rationale_to_content,
                                                Value f_content_to_rationale,
                                                UsabilityParams& u) {
    Value w = ops::sigmoid(mlp(t, f_rationale_to_content, u.weight_mapper));
    Value w_hat = ops::sigmoid(mlp(t, f_content_to_rationale, u.supervision_head));
    return {w, w_hat};
}

// [w1 * f1 ; w2 * f2], a 2d-wide feature.
inline Value fuse_llm(GradientTape&, std::array<Value, 2> w, std::array<Value, 2> f) {
    return ops::concat_cols({ops::scale_by(f[0], w[0]), ops::scale_by(f[1], w[1])});
}

// Two independently parameterized token attentions over the news sequence,
// averaged.
inline Value news_features(GradientTape& t, Value news, FusionParams& p) {
    Value a1 = linear_token_attention(t, news, p.news_attention[0]);
    Value a2 = linear_token_attention(t, news, p.news_attention[1]);
    return ops::scale(ops::add(a1, a2), Real(0.5));
}

// Full forward pass over encoded sequences. The classifier reads the news
// part first: f_cls = [f_news ; f_llm].
inline FusionTrace fusion_forward(GradientTape& t, Value news, Value content, Value rationale,
                                  FusionParams& p) {
    const std::size_t d = p.dim();
    if (t.value(news).cols() != d || t.value(content).cols() != d ||
        t.value(rationale).cols() != d)
        throw ShapeError("fusion expects width " + std::to_string(d) + " sequences, got " +
                         t.value(news).shape_str() + ", " + t.value(content).shape_str() + ", " +
                         t.value(rationale).shape_str());
    FusionTrace trace;
    for (std::size_t i = 0; i < 2; ++i) {
        auto [f_cr, f_rc] = interact(t, content, rationale, p.branches[i]);
        trace.f_content_to_rationale[i] = f_cr;
        trace.f_rationale_to_content[i] = f_rc;
        auto [w, w_hat] = usability_weight(t, f_rc, f_cr, p.usability[i]);
        trace.w[i] = w;
        trace.w_hat[i] = w_hat;
    }
    trace.f_llm = fuse_llm(t, trace.w, trace.f_content_to_rationale);
    trace.f_news = news_features(t, news, p);
    trace.f_cls = ops::concat_cols({trace.f_news, trace.f_llm});
    trace.y_hat = ops::sigmoid(mlp(t, trace.f_cls, p.classifier));
    return trace;
}

inline FusionOutputs snapshot(const GradientTape& t, const FusionTrace& trace) {
    FusionOutputs out;
    for (std::size_t i = 0; i < 2; ++i) {
        out.w[i] = t.value(trace.w[i])(0, 0);
        out.w_hat[i] = t.value(trace.w_hat[i])(0, 0);
    }
    out.f_llm = t.value(trace.f_llm);
    out.f_news = t.value(trace.f_news);
    out.f_cls = t.value(trace.f_cls);
    out.y_hat = t.value(trace.y_hat)(0, 0);
    return out;
}

inline FusionOutputs fusion_eval(const RealMatrix& news, const RealMatrix& content,
                                 const RealMatrix& rationale, FusionParams& p) {
    GradientTape t;
    FusionTrace trace =
        fusion_forward(t, t.constant(news), t.constant(content), t.constant(rationale), p);
    return snapshot(t, trace);
}

} // namespace factguard
