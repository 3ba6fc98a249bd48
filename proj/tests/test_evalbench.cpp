#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "factguard/sweeps.hpp"
#include "factguard/synthetic.hpp"
#include "factguard/variants.hpp"

using namespace factguard;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ModelDims tiny_dims(std::size_t d, std::size_t heads, std::size_t layers) {
    ModelDims dims;
    dims.d = d;
    dims.heads = heads;
    dims.layers = layers;
    dims.max_len = 16;
    dims.vocab_limit = 256;
    return dims;
}

// --- matrix-level reference forward, written without the tape ----------------

void hand_softmax_rows(RealMatrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        Real mx = m(r, 0);
        for (std::size_t c = 1; c < m.cols(); ++c) mx = std::max(mx, m(r, c));
        Real sum = 0;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(r, c) = std::exp(m(r, c) - mx);
            sum += m(r, c);
        }
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) /= sum;
    }
}

RealMatrix hand_layer_norm(const RealMatrix& x, const RealMatrix& gain, const RealMatrix& bias) {
    RealMatrix out(x.rows(), x.cols());
    const Real eps = 1e-5;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        Real mean = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
        mean /= Real(x.cols());
        Real var = 0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const Real d = x(r, c) - mean;
            var += d * d;
        }
        var /= Real(x.cols());
        const Real inv_std = Real(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < x.cols(); ++c)
            out(r, c) = gain(0, c) * (x(r, c) - mean) * inv_std + bias(0, c);
    }
    return out;
}

RealMatrix hand_cols(const RealMatrix& m, std::size_t first, std::size_t count) {
    RealMatrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, first + c);
    return out;
}

RealMatrix hand_attention(const RealMatrix& x, const AttentionParams& p) {
    const std::size_t d = p.wq.rows();
    const std::size_t dk = d / p.heads;
    RealMatrix q = matmul(x, transpose(p.wq));
    RealMatrix k = matmul(x, transpose(p.wk));
    RealMatrix v = matmul(x, transpose(p.wv));
    RealMatrix merged(x.rows(), d);
    for (std::size_t h = 0; h < p.heads; ++h) {
        RealMatrix scores = matmul(hand_cols(q, h * dk, dk), transpose(hand_cols(k, h * dk, dk)));
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] /= std::sqrt(Real(dk));
        hand_softmax_rows(scores);
        RealMatrix head = matmul(scores, hand_cols(v, h * dk, dk));
        for (std::size_t r = 0; r < head.rows(); ++r)
            for (std::size_t c = 0; c < dk; ++c) merged(r, h * dk + c) = head(r, c);
    }
    return matmul(merged, transpose(p.wo));
}

RealMatrix hand_linear(const RealMatrix& x, const LinearParams& p) {
    RealMatrix out = matmul(x, transpose(p.weight));
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += p.bias(0, c);
    return out;
}

RealMatrix hand_block(const RealMatrix& x_in, const TransformerBlockParams& blk) {
    RealMatrix x = add(x_in, hand_attention(x_in, blk.attn));
    x = hand_layer_norm(x, blk.ln1.gain, blk.ln1.bias);
    RealMatrix h = hand_linear(x, blk.ff1);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i]);
    RealMatrix ff = hand_linear(h, blk.ff2);
    x = add(x, ff);
    return hand_layer_norm(x, blk.ln2.gain, blk.ln2.bias);
}

Real hand_sigmoid(Real z) {
    if (z >= 0) return Real(1) / (Real(1) + std::exp(-z));
    const Real e = std::exp(z);
    return e / (Real(1) + e);
}

// Full reference forward for the single-stream model: embedding plus
// positions, transformer blocks, scored token pooling, two-layer head.
Real hand_single_stream_forward(const std::string& text, VariantModel& m) {
    TokenSequence tokens = tokenize(text, m.vocab, m.dims.max_len);
    const std::size_t T = tokens.ids.size();
    const std::size_t d = m.dims.d;
    RealMatrix x(T, d);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d; ++c)
            x(t, c) = m.solo_encoder.embedding(tokens.ids[t], c) + m.solo_encoder.positional(t, c);
    for (const TransformerBlockParams& blk : m.solo_encoder.blocks) x = hand_block(x, blk);

    RealMatrix scores = matmul(x, transpose(m.solo_pool.weight)); // [T x 1]
    RealMatrix row(1, T);
    for (std::size_t t = 0; t < T; ++t) row(0, t) = scores(t, 0);
    hand_softmax_rows(row);
    RealMatrix pooled(1, d);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < d; ++c) pooled(0, c) += row(0, t) * x(t, c);

    RealMatrix h = hand_linear(pooled, m.solo_classifier.layers[0]);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i]);
    RealMatrix logit = hand_linear(h, m.solo_classifier.layers[1]);
    return hand_sigmoid(logit(0, 0));
}

} // namespace

TEST_CASE("confusion matches a brute force counter on random instances") {
    Rng rng(2024);
    for (int round = 0; round < 1000; ++round) {
        const std::size_t n = 1 + rng.index(40);
        std::vector<Real> preds(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Mix in exact grid points so the >= 0.5 boundary is exercised.
            preds[i] = rng.bernoulli(0.3) ? Real(rng.index(21)) / 20 : rng.unit();
            labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        }
        ConfusionMatrix cm = confusion(preds, labels);
        std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool call_fake = preds[i] >= Real(0.5);
            if (call_fake && labels[i] == 1) ++tp;
            if (call_fake && labels[i] == 0) ++fp;
            if (!call_fake && labels[i] == 1) ++fn;
            if (!call_fake && labels[i] == 0) ++tn;
        }
        REQUIRE(cm.tp == tp);
        REQUIRE(cm.tn == tn);
        REQUIRE(cm.fp == fp);
        REQUIRE(cm.fn == fn);
        REQUIRE(cm.total() == n);

        MetricsReport rep = metrics(cm);
        auto ratio = [](Real num, Real den) { return den == 0 ? Real(0) : num / den; };
        const Real pf = ratio(Real(tp), Real(tp + fp));
        const Real rf = ratio(Real(tp), Real(tp + fn));
        const Real pr = ratio(Real(tn), Real(tn + fn));
        const Real rr = ratio(Real(tn), Real(tn + fp));
        REQUIRE(rep.acc == Real(tp + tn) / Real(n));
        REQUIRE(rep.f1_fake == ratio(2 * pf * rf, pf + rf));
        REQUIRE(rep.f1_real == ratio(2 * pr * rr, pr + rr));
        REQUIRE(rep.macf1 == (rep.f1_real + rep.f1_fake) / 2);
    }
}

TEST_CASE("confusion and metrics hand examples") {
    ConfusionMatrix cm = confusion({0.9, 0.1}, {1, 0});
    CHECK(cm.tp == 1);
    CHECK(cm.tn == 1);
    CHECK(cm.fp == 0);
    CHECK(cm.fn == 0);
    MetricsReport perfect = metrics(cm);
    CHECK(perfect.acc == 1.0);
    CHECK(perfect.macf1 == 1.0);

    SECTION("half probability counts as a fake call") {
        ConfusionMatrix b = confusion({0.5}, {1});
        CHECK(b.tp == 1);
        CHECK(b.fn == 0);
    }

    SECTION("published macro average") {
        CHECK(macro_f1(0.824, 0.777) == Catch::Approx(0.8005).margin(1e-12));
    }

    SECTION("imbalanced example") {
        MetricsReport rep = metrics(ConfusionMatrix{50, 40, 10, 0});
        CHECK(rep.acc == Catch::Approx(0.9).margin(1e-12));
        CHECK(rep.f1_fake == Catch::Approx(10.0 / 11.0).margin(1e-12));
    }

    SECTION("zero denominators collapse to zero") {
        MetricsReport rep = metrics(ConfusionMatrix{0, 5, 0, 0});
        CHECK(rep.f1_fake == 0.0);
        CHECK(rep.f1_real == 1.0);
        CHECK(rep.macf1 == 0.5);
    }

    SECTION("empty and mismatched inputs") {
        CHECK_THROWS_AS(metrics(ConfusionMatrix{}), ArgumentError);
        CHECK_THROWS_AS(confusion({0.5}, {1, 0}), ArgumentError);
    }
}

TEST_CASE("confidence histogram bins and conserves counts") {
    SECTION("confident fake mass lands in the top bin") {
        ConfidenceHistogram h = confidence_histogram({0.95, 0.95, 0.95}, {1, 1, 1});
        CHECK(h.count_fake[9] == 3);
        CHECK(h.count_real[9] == 0);
    }

    SECTION("constructed grid fills bins exactly") {
        std::vector<Real> preds;
        std::vector<int> labels;
        for (int i = 0; i < 10; ++i) {
            preds.push_back(Real(i) / 10 + 0.05);
            labels.push_back(0);
        }
        ConfidenceHistogram h = confidence_histogram(preds, labels);
        for (std::size_t k = 0; k < 10; ++k) CHECK(h.count_real[k] == 1);
    }

    SECTION("boundary values") {
        ConfidenceHistogram h = confidence_histogram({0.0, 0.5, 1.0}, {0, 0, 0});
        CHECK(h.count_real[0] == 1);
        CHECK(h.count_real[5] == 1);
        CHECK(h.count_real[9] == 1); // 1.0 belongs to the final right-closed bin
    }

    SECTION("csv round trip conserves the sample count") {
        Rng rng(8);
        std::vector<Real> preds;
        std::vector<int> labels;
        for (int i = 0; i < 137; ++i) {
            preds.push_back(rng.unit());
            labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
        }
        fs::path dir = temp_dir("factguard_conf_csv");
        write_confidence_csv(confidence_histogram(preds, labels), dir / "confidence.csv");
        std::ifstream in(dir / "confidence.csv");
        std::string line;
        std::getline(in, line);
        CHECK(line == "bin_lo,bin_hi,count_real,count_fake");
        std::size_t total = 0;
        while (std::getline(in, line)) {
            const auto p1 = line.rfind(',');
            const auto p2 = line.rfind(',', p1 - 1);
            total += std::stoul(line.substr(p1 + 1));
            total += std::stoul(line.substr(p2 + 1, p1 - p2 - 1));
        }
        CHECK(total == 137);
    }

    SECTION("too few bins") {
        CHECK_THROWS_AS(confidence_histogram({0.5}, {0}, 1), ArgumentError);
    }
}

TEST_CASE("auc ranks positives over negatives") {
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
    CHECK(auc({0.7, 0.7, 0.7, 0.7}, {1, 0, 1, 0}) == 0.5);
    CHECK(auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == Catch::Approx(0.75).margin(1e-12));
    CHECK_THROWS_AS(auc({0.5, 0.6}, {1, 1}), ArgumentError);
}

TEST_CASE("synthetic generator honors its probabilities") {
    SECTION("perfectly reliable advice") {
        SyntheticSpec spec;
        spec.size = 200;
        spec.advice_reliability = 1.0;
        for (const NewsRecord& rec : make_synthetic(spec, 1))
            CHECK(rec.y_llm == (rec.y == 1 ? LlmVerdict::Fake : LlmVerdict::Real));
    }

    SECTION("coin flip advice matches about half the time") {
        SyntheticSpec spec;
        spec.size = 1000;
        spec.advice_reliability = 0.5;
        std::size_t matches = 0;
        for (const NewsRecord& rec : make_synthetic(spec, 2))
            if (rec.y_llm == (rec.y == 1 ? LlmVerdict::Fake : LlmVerdict::Real)) ++matches;
        CHECK(matches >= 450);
        CHECK(matches <= 550);
    }

    SECTION("same seed gives an identical corpus") {
        SyntheticSpec spec;
        spec.size = 64;
        std::vector<NewsRecord> a = make_synthetic(spec, 9);
        std::vector<NewsRecord> b = make_synthetic(spec, 9);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].id == b[i].id);
            CHECK(a[i].n == b[i].n);
            CHECK(a[i].c == b[i].c);
            CHECK(a[i].r == b[i].r);
            CHECK(a[i].y == b[i].y);
            CHECK(a[i].y_llm == b[i].y_llm);
            CHECK(a[i].split == b[i].split);
        }
        std::vector<NewsRecord> c = make_synthetic(spec, 10);
        bool any_diff = false;
        for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i].n != c[i].n;
        CHECK(any_diff);
    }

    SECTION("splits partition seventy fifteen fifteen") {
        SyntheticSpec spec;
        spec.size = 1000;
        std::size_t train = 0, val = 0, test = 0;
        for (const NewsRecord& rec : make_synthetic(spec, 4)) {
            if (rec.split == "train") ++train;
            if (rec.split == "val") ++val;
            if (rec.split == "test") ++test;
        }
        CHECK(train == 700);
        CHECK(val == 150);
        CHECK(test == 150);
    }

    SECTION("stream composition") {
        SyntheticSpec spec;
        spec.size = 20;
        for (const NewsRecord& rec : make_synthetic(spec, 6)) {
            // Topic-content tokens are exactly the event tokens, all of which
            // also appear in the news text alongside style tokens.
            for (const std::string& tok : split_tokens(rec.c)) {
                CHECK(tok.rfind("evt", 0) == 0);
                CHECK(rec.n.find(tok) != std::string::npos);
            }
            CHECK(rec.n.find("sty") != std::string::npos);
            const std::vector<std::string> r_toks = split_tokens(rec.r);
            REQUIRE(!r_toks.empty());
            CHECK(r_toks[0] == (rec.y_llm == LlmVerdict::Fake ? "advfake" : "advreal"));
        }
    }

    SECTION("invalid specs are rejected") {
        SyntheticSpec bad;
        bad.size = 0;
        CHECK_THROWS_AS(make_synthetic(bad, 1), ConfigError);
        SyntheticSpec bad2;
        bad2.advice_reliability = 1.5;
        CHECK_THROWS_AS(make_synthetic(bad2, 1), ConfigError);
        SyntheticSpec bad3;
        bad3.event_ambiguity = -0.1;
        CHECK_THROWS_AS(make_synthetic(bad3, 1), ConfigError);
    }

    SECTION("event ambiguity swaps in class-neutral event words") {
        SyntheticSpec spec;
        spec.size = 1000;

        spec.event_ambiguity = 0;
        for (const NewsRecord& rec : make_synthetic(spec, 31))
            CHECK(rec.c.find("evtn") == std::string::npos);

        spec.event_ambiguity = 1;
        for (const NewsRecord& rec : make_synthetic(spec, 31)) {
            for (const std::string& tok : split_tokens(rec.c)) CHECK(tok.rfind("evtn", 0) == 0);
            // The advice stays intact, so these records are still labellable.
            CHECK(split_tokens(rec.r)[0] ==
                  (rec.y_llm == LlmVerdict::Fake ? "advfake" : "advreal"));
        }

        spec.event_ambiguity = 0.5;
        std::size_t neutral = 0;
        for (const NewsRecord& rec : make_synthetic(spec, 31))
            if (rec.c.find("evtn") != std::string::npos) ++neutral;
        CHECK(neutral > 450);
        CHECK(neutral < 550);
    }
}

TEST_CASE("synthetic bundle stores per stream latent encodings") {
    SyntheticSpec spec;
    spec.size = 5;
    spec.d = 6;
    std::vector<NewsRecord> records = make_synthetic(spec, 12);
    fs::path dir = temp_dir("factguard_syn_bundle");
    write_synthetic_bundle(records, spec, dir / "bundle", 12);

    EmbeddingBundle bundle = EmbeddingBundle::open(dir / "bundle");
    for (const NewsRecord& rec : records) {
        RealMatrix news = bundle.load(rec.id, "news", 6).matrix;
        CHECK(news.cols() == 6);
        CHECK(news.rows() == split_tokens(rec.n).size());
        RealMatrix content = bundle.load(rec.id, "topic_content", 6).matrix;
        CHECK(content.rows() == split_tokens(rec.c).size());
        bundle.load(rec.id, "rationale", 6);
    }

    // Rewriting with the same seed reproduces the bytes.
    write_synthetic_bundle(records, spec, dir / "bundle2", 12);
    EmbeddingBundle second = EmbeddingBundle::open(dir / "bundle2");
    CHECK(second.load(records[0].id, "news", 6).matrix ==
          bundle.load(records[0].id, "news", 6).matrix);
}

TEST_CASE("variant names round trip and unknown names are rejected") {
    for (AblationVariant v : all_variants()) CHECK(variant_from_name(variant_name(v)) == v);
    CHECK_THROWS_AS(variant_from_name("bogus"), ConfigError);
    CHECK(variant_classifier_width(AblationVariant::Full, 32) == 96);
    CHECK(variant_classifier_width(AblationVariant::WoNews, 32) == 64);
    CHECK(variant_classifier_width(AblationVariant::WoTopicContent, 32) == 64);
    CHECK(variant_classifier_width(AblationVariant::NewsOnly, 32) == 32);
}

TEST_CASE("single stream forward matches a hand built reference") {
    SyntheticSpec spec;
    spec.size = 8;
    std::vector<NewsRecord> records = make_synthetic(spec, 42);
    ModelDims dims = tiny_dims(4, 2, 1);
    Vocabulary vocab = build_vocabulary(records, dims.vocab_limit);

    for (AblationVariant v : {AblationVariant::NewsOnly, AblationVariant::TopicContentOnly,
                              AblationVariant::CommonsenseOnly}) {
        VariantModel m = VariantModel::init(v, dims, vocab, 2718);
        for (const NewsRecord& rec : records) {
            const std::string& text = v == AblationVariant::NewsOnly ? rec.n
                                      : v == AblationVariant::TopicContentOnly ? rec.c
                                                                               : rec.r;
            const Real reference = hand_single_stream_forward(text, m);
            const Real actual = m.predict(rec).y_hat;
            CHECK(std::abs(actual - reference) <= 1e-12);
        }
    }
}

TEST_CASE("variant wiring consumes exactly the declared inputs") {
    SyntheticSpec spec;
    spec.size = 6;
    std::vector<NewsRecord> records = make_synthetic(spec, 55);
    ModelDims dims = tiny_dims(8, 2, 1);
    Vocabulary vocab = build_vocabulary(records, dims.vocab_limit);
    NewsRecord rec = records[0];

    auto perturbed = [&](const NewsRecord& base, int which) {
        NewsRecord out = base;
        const std::string junk = records[1].n + " " + records[2].r;
        if (which == 0) out.n = junk;
        if (which == 1) out.c = junk;
        if (which == 2) out.r = junk;
        return out;
    };

    SECTION("wo_news ignores the news text") {
        VariantModel m = VariantModel::init(AblationVariant::WoNews, dims, vocab, 3);
        CHECK(m.predict(perturbed(rec, 0)).y_hat == m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 1)).y_hat != m.predict(rec).y_hat);
        for (const ParamRef& p : m.params()) CHECK(p.name.rfind("news_encoder", 0) != 0);
    }

    SECTION("wo_topic_content ignores the topic content") {
        VariantModel m = VariantModel::init(AblationVariant::WoTopicContent, dims, vocab, 3);
        CHECK(m.predict(perturbed(rec, 1)).y_hat == m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 0)).y_hat != m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 2)).y_hat != m.predict(rec).y_hat);
    }

    SECTION("wo_commonsense ignores the rationale") {
        VariantModel m = VariantModel::init(AblationVariant::WoCommonsense, dims, vocab, 3);
        CHECK(m.predict(perturbed(rec, 2)).y_hat == m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 0)).y_hat != m.predict(rec).y_hat);
    }

    SECTION("news_only ignores both llm streams") {
        VariantModel m = VariantModel::init(AblationVariant::NewsOnly, dims, vocab, 3);
        CHECK(m.predict(perturbed(rec, 1)).y_hat == m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 2)).y_hat == m.predict(rec).y_hat);
        CHECK(m.predict(perturbed(rec, 0)).y_hat != m.predict(rec).y_hat);
    }

    SECTION("full consumes every stream") {
        VariantModel m = VariantModel::init(AblationVariant::Full, dims, vocab, 3);
        for (int which : {0, 1, 2})
            CHECK(m.predict(perturbed(rec, which)).y_hat != m.predict(rec).y_hat);
    }
}

TEST_CASE("usability knockout keeps full parameters but pins weights to one") {
    SyntheticSpec spec;
    spec.size = 6;
    std::vector<NewsRecord> records = make_synthetic(spec, 77);
    ModelDims dims = tiny_dims(8, 2, 1);
    Vocabulary vocab = build_vocabulary(records, dims.vocab_limit);

    VariantModel full = VariantModel::init(AblationVariant::Full, dims, vocab, 91);
    VariantModel knockout = VariantModel::init(AblationVariant::WoLlmUsability, dims, vocab, 91);

    ParamList fp = full.params();
    ParamList kp = knockout.params();
    REQUIRE(fp.size() == kp.size());
    for (std::size_t i = 0; i < fp.size(); ++i) {
        CHECK(fp[i].name == kp[i].name);
        CHECK(*fp[i].tensor == *kp[i].tensor);
    }

    VariantModel::Outputs out = knockout.predict(records[0]);
    CHECK(out.w[0] == 1.0);
    CHECK(out.w[1] == 1.0);
    CHECK(full.predict(records[0]).y_hat != out.y_hat);

    SECTION("usability gradients vanish even with a nonzero alpha") {
        GradientTape t;
        auto [total, parts] = record_loss(t, knockout, records[0], 0.4, 0.16);
        (void)parts;
        t.backward(total);
        std::size_t gated = 0;
        for (const ParamRef& p : knockout.params()) {
            if (p.name.find("supervision_head") != std::string::npos ||
                p.name.find("weight_mapper") != std::string::npos) {
                ++gated;
                CHECK(t.grad_for(*p.tensor).max_abs() == 0.0);
            }
        }
        CHECK(gated > 0);
    }
}

TEST_CASE("single stream loss is pure classification") {
    SyntheticSpec spec;
    spec.size = 4;
    std::vector<NewsRecord> records = make_synthetic(spec, 88);
    ModelDims dims = tiny_dims(8, 2, 1);
    VariantModel m = VariantModel::init(AblationVariant::CommonsenseOnly, dims,
                                        build_vocabulary(records, 256), 14);
    GradientTape t;
    auto [total, parts] = record_loss(t, m, records[0], 0.4, 0.16);
    CHECK(parts.l_usability == 0.0);
    CHECK(parts.l_text == 0.0);
    CHECK(parts.l_total == parts.l_cls);
    t.backward(total); // differentiable end to end
}

TEST_CASE("leave one out variants train through the shared loop") {
    SyntheticSpec spec;
    spec.size = 10;
    std::vector<NewsRecord> records = make_synthetic(spec, 123);
    ModelDims dims = tiny_dims(8, 2, 1);
    Vocabulary vocab = build_vocabulary(records, dims.vocab_limit);

    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 2;
    cfg.patience = 10;
    cfg.batch_size = 4;

    for (AblationVariant v : {AblationVariant::WoNews, AblationVariant::WoTopicContent,
                              AblationVariant::NewsOnly, AblationVariant::WoLlmUsability}) {
        VariantModel m = VariantModel::init(v, dims, vocab, 200);
        TrainResult result = train(m, records, records, cfg);
        CHECK(result.epochs_run == 2);
        CHECK(result.history.size() == 2);
    }
}

TEST_CASE("grid search visits cells in order and respects singletons") {
    std::vector<std::pair<Real, Real>> seen;
    auto fit = [&](Real alpha, Real beta) {
        seen.emplace_back(alpha, beta);
        MetricsReport r;
        r.acc = alpha;
        r.macf1 = beta;
        return r;
    };

    std::vector<SurfaceRow> rows = grid_search({0.1, 0.2}, {0.3, 0.4}, fit);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].alpha == Real(0.1));
    CHECK(rows[0].beta == Real(0.3));
    CHECK(rows[1].beta == Real(0.4));
    CHECK(rows[3].alpha == Real(0.2));
    CHECK(seen.size() == 4);

    std::vector<SurfaceRow> single = grid_search({0.5}, {0.1, 0.2, 0.3}, fit);
    for (const SurfaceRow& r : single) CHECK(r.alpha == Real(0.5));

    CHECK_THROWS_AS(grid_search({}, {0.1}, fit), ArgumentError);

    SECTION("default grids") {
        std::vector<Real> fine = default_fine_grid();
        REQUIRE(fine.size() == 11);
        CHECK(fine.front() == 0.0);
        CHECK(fine.back() == 1.0);
        std::vector<Real> coarse = default_coarse_grid();
        REQUIRE(coarse.size() == 11);
        CHECK(coarse.front() == 0.0);
        CHECK(coarse.back() == 10.0);
        CHECK(std::find(coarse.begin(), coarse.end(), Real(8)) != coarse.end());
    }
}

TEST_CASE("lambda sweep runs one distillation per grid point") {
    std::vector<Real> seen;
    auto fit = [&](Real lambda) {
        seen.push_back(lambda);
        LambdaOutcome out;
        out.val_mse = lambda * 2;
        return out;
    };
    std::vector<LambdaRow> rows = lambda_sweep({0.0}, fit);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].lambda == 0.0);

    rows = lambda_sweep(default_coarse_grid(), fit);
    CHECK(rows.size() == 11);
    CHECK(rows[8].lambda == 8.0);
    CHECK(rows[8].val_mse == 16.0);
    CHECK_THROWS_AS(lambda_sweep({}, fit), ArgumentError);
}

TEST_CASE("csv reports have pinned headers and formats") {
    fs::path dir = temp_dir("factguard_csv_reports");

    MetricsReport rep;
    rep.acc = 0.75;
    rep.macf1 = 0.5;
    rep.f1_real = 1.0;
    rep.f1_fake = 0.0625;
    write_metrics_csv(rep, dir / "metrics.csv");
    CHECK(slurp(dir / "metrics.csv") == "acc,macf1,f1_real,f1_fake\n0.75,0.5,1,0.0625\n");

    SurfaceRow srow;
    srow.alpha = 0.5;
    srow.beta = 0.25;
    srow.report = rep;
    write_surface_csv({srow}, dir / "surface.csv");
    CHECK(slurp(dir / "surface.csv") ==
          "alpha,beta,macf1,acc,f1_real,f1_fake\n0.5,0.25,0.5,0.75,1,0.0625\n");

    LambdaRow lrow;
    lrow.lambda = 8;
    lrow.report = rep;
    lrow.val_mse = 0.125;
    write_lambda_csv({lrow}, dir / "lambda.csv");
    CHECK(slurp(dir / "lambda.csv") ==
          "lambda,macf1,acc,f1_real,f1_fake,val_mse\n8,0.5,0.75,1,0.0625,0.125\n");
}
