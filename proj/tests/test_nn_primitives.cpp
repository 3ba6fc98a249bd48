#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "factguard/gradcheck.hpp"
#include "factguard/nn.hpp"

using namespace factguard;

namespace {

RealMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, Real lo = -1, Real hi = 1) {
    RealMatrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

// Weights the output by a fixed random matrix before summing so symmetric
// mistakes in the backward pass cannot cancel out.
Value weighted_sum(GradientTape& t, Value out, const RealMatrix& weights) {
    return ops::sum_all(ops::mul(out, t.constant(weights)));
}

} // namespace

TEST_CASE("matrix basics") {
    RealMatrix m{{1, 2}, {3, 4}};
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 2);
    REQUIRE(m(1, 0) == 3);
    REQUIRE_THROWS_AS((RealMatrix{{1, 2}, {3}}), ShapeError);

    RealMatrix a{{1, 0}, {0, 1}};
    REQUIRE(matmul(a, m) == m);
    REQUIRE(transpose(m)(0, 1) == 3);
    REQUIRE_THROWS_AS(matmul(m, RealMatrix(3, 2)), ShapeError);
    REQUIRE(max_abs_diff(m, m) == 0);
}

TEST_CASE("linear layer oracle") {
    // W = [[1,2],[0,1]], b = [1,0], x = [1,1]:
    // row0: 1*1 + 2*1 + 1 = 4, row1: 0*1 + 1*1 + 0 = 1.
    LinearParams p;
    p.weight = RealMatrix{{1, 2}, {0, 1}};
    p.bias = RealMatrix{{1, 0}};
    RealMatrix y = linear_eval(RealMatrix{{1, 1}}, p);
    REQUIRE(y.rows() == 1);
    REQUIRE(y.cols() == 2);
    REQUIRE(y(0, 0) == 4);
    REQUIRE(y(0, 1) == 1);
    REQUIRE_THROWS_AS(linear_eval(RealMatrix{{1, 2, 3}}, p), ShapeError);
}

TEST_CASE("softmax oracle") {
    RealMatrix s = softmax_eval(RealMatrix{{std::log(Real(1)), std::log(Real(3))}});
    REQUIRE(std::abs(s(0, 0) - 0.25) < 1e-12);
    REQUIRE(std::abs(s(0, 1) - 0.75) < 1e-12);

    // Max subtraction keeps huge logits finite.
    RealMatrix big = softmax_eval(RealMatrix{{1000.0, 1000.0}});
    REQUIRE(std::abs(big(0, 0) - 0.5) < 1e-12);

    // Rows normalize independently.
    RealMatrix two = softmax_eval(RealMatrix{{0, 0}, {0, std::log(Real(3))}});
    REQUIRE(std::abs(two(0, 0) - 0.5) < 1e-12);
    REQUIRE(std::abs(two(1, 1) - 0.75) < 1e-12);
}

TEST_CASE("loss oracles") {
    // bce(0.8, 0.5) = -(0.5 ln 0.8 + 0.5 ln 0.2) = -0.5 ln 0.16.
    REQUIRE(std::abs(bce_eval(0.8, 0.5) - 0.916290731874155) < 1e-12);
    // bce at a hard label.
    REQUIRE(std::abs(bce_eval(0.9, 1.0) + std::log(0.9)) < 1e-12);
    // Clamping keeps p=0 and p=1 finite.
    REQUIRE(std::isfinite(bce_eval(0.0, 1.0)));
    REQUIRE(std::isfinite(bce_eval(1.0, 0.0)));
    REQUIRE_THROWS_AS(bce_eval(0.5, 1.5), ArgumentError);

    // CE([ln 9, 0], class 0): softmax = [0.9, 0.1], loss = -ln 0.9.
    REQUIRE(std::abs(cross_entropy_eval(RealMatrix{{std::log(Real(9)), 0}}, 0) -
                     0.105360515657826) < 1e-12);
    REQUIRE_THROWS_AS(cross_entropy_eval(RealMatrix{{1.0, 2.0}}, 2), ArgumentError);

    // mse([2,0],[0,2]) = (4 + 4) / 2.
    REQUIRE(mse_eval(RealMatrix{{2, 0}}, RealMatrix{{0, 2}}) == 4.0);
    REQUIRE_THROWS_AS(mse_eval(RealMatrix(1, 2), RealMatrix(2, 1)), ShapeError);
}

TEST_CASE("activation spot values") {
    RealMatrix x{{0.0, 1.0, -2.0}};
    RealMatrix s = sigmoid_eval(x);
    REQUIRE(std::abs(s(0, 0) - 0.5) < 1e-12);
    REQUIRE(std::abs(s(0, 1) - 1.0 / (1.0 + std::exp(-1.0))) < 1e-12);

    RealMatrix g = tape_eval([&](GradientTape& t) { return ops::gelu(t.constant(x)); });
    REQUIRE(std::abs(g(0, 1) - 0.841344746068543) < 1e-12);
    RealMatrix r = tape_eval([&](GradientTape& t) { return ops::relu(t.constant(x)); });
    REQUIRE(r(0, 2) == 0.0);
    REQUIRE(r(0, 1) == 1.0);
}

TEST_CASE("average pooling") {
    RealMatrix pooled =
        tape_eval([&](GradientTape& t) { return avg_pool(t.constant(RealMatrix{{1, 2}, {3, 4}})); });
    REQUIRE(pooled.rows() == 1);
    REQUIRE(pooled(0, 0) == 2.0);
    REQUIRE(pooled(0, 1) == 3.0);
}

TEST_CASE("token attention oracle") {
    // Unit-row input makes the scores equal the score weights: w = [ln 3, 0]
    // gives token weights [0.75, 0.25], so the pool is [0.75, 0.25].
    TokenAttentionParams p;
    p.weight = RealMatrix{{std::log(Real(3)), 0}};
    RealMatrix out = tape_eval([&](GradientTape& t) {
        return linear_token_attention(t, t.constant(RealMatrix{{1, 0}, {0, 1}}), p);
    });
    REQUIRE(std::abs(out(0, 0) - 0.75) < 1e-12);
    REQUIRE(std::abs(out(0, 1) - 0.25) < 1e-12);
}

TEST_CASE("uniform cross attention averages values") {
    // Zero q/k projections give equal scores, so each output row is the mean
    // of the value rows (wv = wo = identity).
    AttentionParams p;
    p.heads = 1;
    p.wq = RealMatrix(2, 2);
    p.wk = RealMatrix(2, 2);
    p.wv = RealMatrix::identity(2);
    p.wo = RealMatrix::identity(2);

    RealMatrix kv{{1, 3}, {3, 1}};
    RealMatrix q{{5, 7}, {0, 0}, {-1, 2}};
    RealMatrix out = tape_eval([&](GradientTape& t) {
        return multi_head_attention(t, t.constant(q), t.constant(kv), p);
    });
    REQUIRE(out.rows() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        REQUIRE(std::abs(out(r, 0) - 2.0) < 1e-12);
        REQUIRE(std::abs(out(r, 1) - 2.0) < 1e-12);
    }
}

TEST_CASE("attention head count must divide width") {
    Rng rng(1);
    REQUIRE_THROWS_AS(AttentionParams::init(6, 4, rng), ConfigError);
    REQUIRE_NOTHROW(AttentionParams::init(8, 4, rng));
}

TEST_CASE("layer norm oracle") {
    LayerNormParams p = LayerNormParams::init(2);
    RealMatrix out = tape_eval([&](GradientTape& t) {
        return layer_norm(t, t.constant(RealMatrix{{1, 3}}), p);
    });
    // Row mean 2, variance 1: normalized to +-1/sqrt(1 + 1e-5).
    const Real expect = 1.0 / std::sqrt(1.0 + 1e-5);
    REQUIRE(std::abs(out(0, 0) + expect) < 1e-14);
    REQUIRE(std::abs(out(0, 1) - expect) < 1e-14);
}

TEST_CASE("tape accumulates fan-out gradients") {
    RealMatrix x{{3.0}};
    GradientTape t;
    Value vx = t.param(x);
    // loss = x*x + x has gradient 2x + 1 = 7.
    Value loss = ops::sum_all(ops::add(ops::mul(vx, vx), vx));
    t.backward(loss);
    REQUIRE(std::abs(t.grad_for(x)(0, 0) - 7.0) < 1e-12);

    RealMatrix unbound(2, 2, 5.0);
    RealMatrix g = t.grad_for(unbound);
    REQUIRE(g.rows() == 2);
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == 0.0);
}

TEST_CASE("tape rejects misuse") {
    GradientTape t;
    Value m = t.param(*new RealMatrix(2, 2)); // leaked on purpose, test-local
    REQUIRE_THROWS_AS(t.backward(m), ShapeError);

    GradientTape other;
    RealMatrix a(1, 1, 1.0);
    Value va = t.param(a);
    Value vb = other.constant(RealMatrix(1, 1, 2.0));
    REQUIRE_THROWS_AS(ops::add(va, vb), ArgumentError);
}

TEST_CASE("param binding is stable within a tape") {
    RealMatrix w(1, 1, 2.0);
    GradientTape t;
    Value a = t.param(w);
    Value b = t.param(w);
    REQUIRE(a.id == b.id);
}

TEST_CASE("embedding gather accumulates repeated ids") {
    RealMatrix table{{1, 0}, {0, 1}, {2, 2}};
    GradientTape t;
    Value rows = ops::gather_rows(t.param(table), {0, 2, 0});
    REQUIRE(t.value(rows).rows() == 3);
    REQUIRE(t.value(rows)(2, 0) == 1.0);
    Value loss = ops::sum_all(rows);
    t.backward(loss);
    RealMatrix g = t.grad_for(table);
    REQUIRE(g(0, 0) == 2.0); // id 0 used twice
    REQUIRE(g(1, 0) == 0.0);
    REQUIRE(g(2, 1) == 1.0);
    REQUIRE_THROWS_AS(ops::gather_rows(t.param(table), {3}), ArgumentError);
}

TEST_CASE("seeded init is reproducible") {
    Rng a(42), b(42), c(43);
    RealMatrix ma = xavier_uniform(4, 3, 3, 4, a);
    RealMatrix mb = xavier_uniform(4, 3, 3, 4, b);
    RealMatrix mc = xavier_uniform(4, 3, 3, 4, c);
    REQUIRE(ma == mb);
    REQUIRE(!(ma == mc));
    const Real limit = std::sqrt(6.0 / 7.0);
    for (std::size_t i = 0; i < ma.size(); ++i) REQUIRE(std::abs(ma[i]) <= limit);
}

TEST_CASE("gradcheck agrees with finite differences per op") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const std::size_t d = 4, T = 3;

        SECTION("linear chain, seed " + std::to_string(seed)) {
            LinearParams lin = LinearParams::init(d, 2, rng);
            RealMatrix x = random_matrix(T, d, rng);
            RealMatrix wsum = random_matrix(T, 2, rng);
            ParamList params;
            lin.collect("lin", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, ops::tanh_act(linear(t, t.param(x), lin)), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("mlp, seed " + std::to_string(seed)) {
            MLPParams m = MLPParams::init({d, 3, 1}, Activation::Tanh, rng);
            RealMatrix x = random_matrix(1, d, rng);
            ParamList params;
            m.collect("mlp", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return ops::sum_all(ops::sigmoid(mlp(t, t.param(x), m)));
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("softmax, seed " + std::to_string(seed)) {
            RealMatrix x = random_matrix(2, d, rng);
            RealMatrix wsum = random_matrix(2, d, rng);
            ParamList params{{"x", &x}};
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, ops::softmax_rows(t.param(x)), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("cross attention, seed " + std::to_string(seed)) {
            AttentionParams attn = AttentionParams::init(d, 2, rng);
            RealMatrix q = random_matrix(2, d, rng);
            RealMatrix kv = random_matrix(T, d, rng);
            RealMatrix wsum = random_matrix(2, d, rng);
            ParamList params;
            attn.collect("attn", params);
            params.push_back({"q", &q});
            params.push_back({"kv", &kv});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, multi_head_attention(t, t.param(q), t.param(kv), attn),
                                    wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("token attention pool, seed " + std::to_string(seed)) {
            TokenAttentionParams p = TokenAttentionParams::init(d, rng);
            RealMatrix x = random_matrix(T, d, rng);
            RealMatrix wsum = random_matrix(1, d, rng);
            ParamList params;
            p.collect("pool", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, linear_token_attention(t, t.param(x), p), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("layer norm, seed " + std::to_string(seed)) {
            LayerNormParams p = LayerNormParams::init(d);
            Rng shake(seed * 7 + 1);
            for (std::size_t i = 0; i < p.gain.size(); ++i) p.gain[i] = shake.uniform(0.5, 1.5);
            for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] = shake.uniform(-0.5, 0.5);
            RealMatrix x = random_matrix(T, d, rng);
            RealMatrix wsum = random_matrix(T, d, rng);
            ParamList params;
            p.collect("ln", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, layer_norm(t, t.param(x), p), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("transformer block, seed " + std::to_string(seed)) {
            TransformerBlockParams blk =
                TransformerBlockParams::init(d, 2, 2 * d, Activation::Tanh, rng);
            RealMatrix x = random_matrix(T, d, rng);
            RealMatrix wsum = random_matrix(T, d, rng);
            ParamList params;
            blk.collect("blk", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, transformer_block(t, t.param(x), blk), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("losses, seed " + std::to_string(seed)) {
            LinearParams head = LinearParams::init(d, 1, rng);
            LinearParams logits = LinearParams::init(d, 3, rng);
            RealMatrix x = random_matrix(1, d, rng);
            RealMatrix target = random_matrix(1, d, rng);
            ParamList params;
            head.collect("head", params);
            logits.collect("logits", params);
            params.push_back({"x", &x});
            auto report = gradcheck(params, [&](GradientTape& t) {
                Value vx = t.param(x);
                Value p = ops::sigmoid(linear(t, vx, head));
                Value l1 = ops::bce_loss(p, Real(1));
                Value l2 = ops::cross_entropy_logits(linear(t, vx, logits), 2);
                Value l3 = ops::mse_loss(vx, t.constant(target));
                return ops::add(ops::add(l1, l2), l3);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("embedding gather, seed " + std::to_string(seed)) {
            RealMatrix table = random_matrix(5, d, rng);
            RealMatrix wsum = random_matrix(3, d, rng);
            ParamList params{{"table", &table}};
            auto report = gradcheck(params, [&](GradientTape& t) {
                return weighted_sum(t, ops::gather_rows(t.param(table), {1, 4, 1}), wsum);
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }

        SECTION("relu and gelu, seed " + std::to_string(seed)) {
            // Keep inputs away from the relu kink so finite differences make
            // sense there.
            RealMatrix x(2, d);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const Real mag = rng.uniform(0.1, 1.0);
                x[i] = rng.bernoulli(0.5) ? mag : -mag;
            }
            RealMatrix wsum = random_matrix(2, d, rng);
            ParamList params{{"x", &x}};
            auto report = gradcheck(params, [&](GradientTape& t) {
                Value v = t.param(x);
                return ops::add(weighted_sum(t, ops::relu(v), wsum),
                                weighted_sum(t, ops::gelu(v), wsum));
            });
            INFO(report.describe());
            REQUIRE(report.pass);
        }
    }
}

TEST_CASE("gradcheck rejects a corrupted gradient") {
    RealMatrix x{{0.7, -0.3}};
    ParamList params{{"x", &x}};
    auto report = gradcheck(params, [&](GradientTape& t) {
        Value v = t.param(x);
        // Forward is sum(x) but the backward deliberately doubles the
        // gradient; the checker has to flag it.
        const int ix = v.id;
        RealMatrix s(1, 1);
        s(0, 0) = t.value(v)(0, 0) + t.value(v)(0, 1);
        return t.make(std::move(s), {v}, [ix](GradientTape& t, int self) {
            const Real g = t.grad_ref(self)(0, 0);
            t.accum(ix, RealMatrix(1, 2, Real(2) * g));
        });
    });
    REQUIRE(!report.pass);
    REQUIRE(report.max_rel_err > 0.3);
}
