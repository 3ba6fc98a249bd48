#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"
#include "factguard/tape.hpp"

namespace factguard {

enum class Activation { Tanh, Relu, Gelu, Identity };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Gelu: return "gelu";
        case Activation::Identity: return "identity";
    }
    throw ArgumentError("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "gelu") return Activation::Gelu;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation '" + s + "'");
}

inline Value apply_activation(Value x, Activation act) {
    switch (act) {
        case Activation::Tanh: return ops::tanh_act(x);
        case Activation::Relu: return ops::relu(x);
        case Activation::Gelu: return ops::gelu(x);
        case Activation::Identity: return x;
    }
    throw ArgumentError("unknown activation");
}

// y = x W^T + b with W stored [out x in], bias [1 x out].
struct LinearParams {
    RealMatrix weight;
    RealMatrix bias;

    static LinearParams init(std::size_t in, std::size_t out, Rng& rng) {
        LinearParams p;
        p.weight = xavier_uniform(out, in, in, out, rng);
        p.bias = RealMatrix(1, out);
        return p;
    }

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", &weight});
        out.push_back({prefix + ".bias", &bias});
    }
};

inline Value linear(GradientTape& t, Value x, LinearParams& p) {
    if (t.value(x).cols() != p.in_dim())
        throw ShapeError("linear input " + t.value(x).shape_str() + " vs weight " +
                         p.weight.shape_str());
    Value w = t.param(p.weight);
    Value b = t.param(p.bias);
    return ops::add_rowvec(ops::matmul(x, ops::transpose(w)), b);
}

// Stack of linear layers with a shared activation between them; the final
// layer's output is returned raw so heads can attach their own nonlinearity.
struct MLPParams {
    std::vector<LinearParams> layers;
    Activation activation = Activation::Tanh;

    static MLPParams init(const std::vector<std::size_t>& dims, Activation act, Rng& rng) {
        if (dims.size() < 2) throw ArgumentError("mlp needs at least input and output dims");
        MLPParams p;
        p.activation = act;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            p.layers.push_back(LinearParams::init(dims[i], dims[i + 1], rng));
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    }
};

inline Value mlp(GradientTape& t, Value x, MLPParams& p) {
    Value h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        h = linear(t, h, p.layers[i]);
        if (i + 1 < p.layers.size()) h = apply_activation(h, p.activation);
    }
    return h;
}

// Multi-head attention projections, all [d x d]. The projections carry no
// biases: a key bias shifts every score for a given query by the same amount,
// which softmax cancels exactly, and the value/output biases would be
// absorbed by the layer norms around each block anyway.
struct AttentionParams {
    RealMatrix wq, wk, wv, wo;
    std::size_t heads = 1;

    static AttentionParams init(std::size_t d, std::size_t heads, Rng& rng) {
        if (heads == 0 || d % heads != 0)
            throw ConfigError("head count " + std::to_string(heads) + " must divide width " +
                              std::to_string(d));
        AttentionParams p;
        p.heads = heads;
        p.wq = xavier_uniform(d, d, d, d, rng);
        p.wk = xavier_uniform(d, d, d, d, rng);
        p.wv = xavier_uniform(d, d, d, d, rng);
        p.wo = xavier_uniform(d, d, d, d, rng);
        return p;
    }

    std::size_t dim() const { return wq.rows(); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".wq", &wq});
        out.push_back({prefix + ".wk", &wk});
        out.push_back({prefix + ".wv", &wv});
        out.push_back({prefix + ".wo", &wo});
    }
};

// Scaled dot-product attention where queries come from `q_in` [Tq x d] and
// keys/values from `kv_in` [Tkv x d]. Self-attention is the q_in == kv_in
// case. Returns [Tq x d].
inline Value multi_head_attention(GradientTape& t, Value q_in, Value kv_in, AttentionParams& p) {
    const std::size_t d = p.dim();
    if (t.value(q_in).cols() != d || t.value(kv_in).cols() != d)
        throw ShapeError("attention inputs must have width " + std::to_string(d));
    const std::size_t dk = d / p.heads;
    const Real inv_sqrt_dk = Real(1) / std::sqrt(Real(dk));

    Value q = ops::matmul(q_in, ops::transpose(t.param(p.wq)));
    Value k = ops::matmul(kv_in, ops::transpose(t.param(p.wk)));
    Value v = ops::matmul(kv_in, ops::transpose(t.param(p.wv)));

    std::vector<Value> heads;
    heads.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Value qh = ops::slice_cols(q, h * dk, dk);
        Value kh = ops::slice_cols(k, h * dk, dk);
        Value vh = ops::slice_cols(v, h * dk, dk);
        Value scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt_dk);
        heads.push_back(ops::matmul(ops::softmax_rows(scores), vh));
    }
    Value merged = heads.size() == 1 ? heads[0] : ops::concat_cols(heads);
    return ops::matmul(merged, ops::transpose(t.param(p.wo)));
}

// Mean over the token axis: [T x d] -> [1 x d].
inline Value avg_pool(Value x) { return ops::mean_rows(x); }

// Learned scalar score per token, softmax over tokens, weighted sum of rows.
// score = X w^T with w [1 x d]; returns [1 x d]. No score bias: a uniform
// shift across tokens is cancelled by the softmax.
struct TokenAttentionParams {
    RealMatrix weight; // [1 x d]

    static TokenAttentionParams init(std::size_t d, Rng& rng) {
        TokenAttentionParams p;
        p.weight = xavier_uniform(1, d, d, 1, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", &weight});
    }
};

inline Value linear_token_attention(GradientTape& t, Value x, TokenAttentionParams& p) {
    if (t.value(x).cols() != p.weight.cols())
        throw ShapeError("token attention input " + t.value(x).shape_str() + " vs weight " +
                         p.weight.shape_str());
    Value scores = ops::matmul(x, ops::transpose(t.param(p.weight))); // [T x 1]
    Value weights = ops::softmax_rows(ops::transpose(scores));        // [1 x T]
    return ops::matmul(weights, x);
}

struct LayerNormParams {
    RealMatrix gain;
    RealMatrix bias;

    static LayerNormParams init(std::size_t d) {
        LayerNormParams p;
        p.gain = RealMatrix(1, d, Real(1));
        p.bias = RealMatrix(1, d);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".gain", &gain});
        out.push_back({prefix + ".bias", &bias});
    }
};

inline Value layer_norm(GradientTape& t, Value x, LayerNormParams& p) {
    return ops::layer_norm_rows(x, t.param(p.gain), t.param(p.bias));
}

// Post-norm transformer block: x = LN1(x + SelfAttn(x)); x = LN2(x + FFN(x)).
struct TransformerBlockParams {
    AttentionParams attn;
    LinearParams ff1, ff2;
    LayerNormParams ln1, ln2;
    Activation activation = Activation::Tanh;

    static TransformerBlockParams init(std::size_t d, std::size_t heads, std::size_t ff_dim,
                                       Activation act, Rng& rng) {
        TransformerBlockParams p;
        p.attn = AttentionParams::init(d, heads, rng);
        p.ff1 = LinearParams::init(d, ff_dim, rng);
        p.ff2 = LinearParams::init(ff_dim, d, rng);
        p.ln1 = LayerNormParams::init(d);
        p.ln2 = LayerNormParams::init(d);
        p.activation = act;
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        attn.collect(prefix + ".attn", out);
        ff1.collect(prefix + ".ff1", out);
        ff2.collect(prefix + ".ff2", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
    }
};

inline Value transformer_block(GradientTape& t, Value x, TransformerBlockParams& p) {
    Value attended = multi_head_attention(t, x, x, p.attn);
    x = layer_norm(t, ops::add(x, attended), p.ln1);
    Value ff = linear(t, apply_activation(linear(t, x, p.ff1), p.activation), p.ff2);
    return layer_norm(t, ops::add(x, ff), p.ln2);
}

// --- pure (no-gradient) evaluation helpers -------------------------------
//
// Forward-only paths reuse the tape machinery with constant leaves so the
// arithmetic is guaranteed identical to the differentiable path.

template <typename Builder>
RealMatrix tape_eval(Builder build) {
    GradientTape t;
    Value out = build(t);
    return t.value(out);
}

inline RealMatrix linear_eval(const RealMatrix& x, LinearParams& p) {
    return tape_eval([&](GradientTape& t) { return linear(t, t.constant(x), p); });
}

inline RealMatrix mlp_eval(const RealMatrix& x, MLPParams& p) {
    return tape_eval([&](GradientTape& t) { return mlp(t, t.constant(x), p); });
}

inline RealMatrix softmax_eval(const RealMatrix& x) {
    return tape_eval([&](GradientTape& t) { return ops::softmax_rows(t.constant(x)); });
}

inline RealMatrix sigmoid_eval(const RealMatrix& x) {
    return tape_eval([&](GradientTape& t) { return ops::sigmoid(t.constant(x)); });
}

inline Real bce_eval(Real p, Real target) {
    return tape_eval([&](GradientTape& t) {
        return ops::bce_loss(t.constant(RealMatrix(1, 1, p)), target);
    })(0, 0);
}

inline Real cross_entropy_eval(const RealMatrix& logits, std::size_t cls) {
    return tape_eval([&](GradientTape& t) {
        return ops::cross_entropy_logits(t.constant(logits), cls);
    })(0, 0);
}

inline Real mse_eval(const RealMatrix& a, const RealMatrix& b) {
    return tape_eval([&](GradientTape& t) {
        return ops::mse_loss(t.constant(a), t.constant(b));
    })(0, 0);
}

} // namespace factguard
