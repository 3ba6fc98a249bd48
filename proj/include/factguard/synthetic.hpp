#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "factguard/dataset.hpp"
#include "factguard/encoder.hpp"
#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"

namespace factguard {

// Controls for the generated toy corpus. Event words are perfectly tied to
// the true label; style words follow the label only with the confound
// probability; the rationale carries an advice word that matches the label
// with the reliability probability and sets y_llm. With event_ambiguity > 0
// that fraction of records draws class-neutral event words instead, leaving
// the advice as their only class signal, which gives the advice-weighting
// machinery records where the LLM's verdict genuinely matters.
struct SyntheticSpec {
    std::size_t size = 256;
    std::size_t d = 16; // width of the latent vectors in emitted bundles
    Real class_balance = Real(0.5);
    Real advice_reliability = Real(0.9);
    Real style_confound = Real(0.8);
    Real event_ambiguity = Real(0);
    std::size_t event_tokens = 4;
    std::size_t style_tokens = 3;
    std::size_t event_vocab_per_class = 6;
    std::size_t style_vocab_per_class = 4;

    void validate() const {
        if (size == 0) throw ConfigError("synthetic size must be positive");
        if (d == 0) throw ConfigError("synthetic d must be positive");
        for (Real p : {class_balance, advice_reliability, style_confound, event_ambiguity})
            if (p < 0 || p > 1) throw ConfigError("synthetic probabilities must lie in [0,1]");
        if (event_tokens == 0 || event_vocab_per_class == 0)
            throw ConfigError("synthetic event token settings must be positive");
    }
};

namespace detail {

inline std::string event_word(int cls, std::size_t idx) {
    return "evt" + std::to_string(cls) + "x" + std::to_string(idx);
}

inline std::string neutral_event_word(std::size_t idx) { return "evtnx" + std::to_string(idx); }

inline std::string style_word(int cls, std::size_t idx) {
    return "sty" + std::to_string(cls) + "x" + std::to_string(idx);
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

} // namespace detail

// Deterministic toy dataset. Splits are assigned 70/15/15 after a seeded
// shuffle.
inline std::vector<NewsRecord> make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<NewsRecord> records;
    records.reserve(spec.size);

    for (std::size_t i = 0; i < spec.size; ++i) {
        NewsRecord rec;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "syn-%05zu", i);
        rec.id = idbuf;
        rec.lang = "en";
        rec.y = rng.bernoulli(spec.class_balance) ? 1 : 0;

        // The extra bernoulli draw is skipped when the knob is off so default
        // specs reproduce the token streams they produced before the knob
        // existed.
        const bool ambiguous = spec.event_ambiguity > 0 && rng.bernoulli(spec.event_ambiguity);
        std::vector<std::string> events;
        for (std::size_t k = 0; k < spec.event_tokens; ++k) {
            const std::size_t idx = rng.index(spec.event_vocab_per_class);
            events.push_back(ambiguous ? detail::neutral_event_word(idx)
                                       : detail::event_word(rec.y, idx));
        }

        const int style_cls = rng.bernoulli(spec.style_confound) ? rec.y : 1 - rec.y;
        std::vector<std::string> news_words = events;
        for (std::size_t k = 0; k < spec.style_tokens; ++k)
            news_words.push_back(
                detail::style_word(style_cls, rng.index(spec.style_vocab_per_class)));
        deterministic_shuffle(news_words, rng);

        const bool advice_fake = rng.bernoulli(spec.advice_reliability) ? (rec.y == 1)
                                                                        : (rec.y == 0);
        rec.y_llm = advice_fake ? LlmVerdict::Fake : LlmVerdict::Real;

        std::vector<std::string> rationale_words;
        rationale_words.push_back(advice_fake ? "advfake" : "advreal");
        rationale_words.push_back(advice_fake ? "contradicts" : "consistent");
        for (const std::string& w : events) rationale_words.push_back(w);

        rec.n = detail::join_words(news_words);
        rec.c = detail::join_words(events);
        rec.r = detail::join_words(rationale_words);
        records.push_back(std::move(rec));
    }

    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    deterministic_shuffle(order, rng);
    const std::size_t n_train = (records.size() * 70) / 100;
    const std::size_t n_val = (records.size() * 15) / 100;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k < n_train)
            records[order[k]].split = "train";
        else if (k < n_train + n_val)
            records[order[k]].split = "val";
        else
            records[order[k]].split = "test";
    }
    return records;
}

// Writes latent per-token encodings for every record and role into a bundle.
// Each distinct word maps to one fixed vector derived from its hash mixed
// with the seed, so the encodings are reproducible without any model.
inline void write_synthetic_bundle(const std::vector<NewsRecord>& records,
                                   const SyntheticSpec& spec,
                                   const std::filesystem::path& dir, std::uint64_t seed) {
    spec.validate();
    EmbeddingBundle bundle = EmbeddingBundle::create(dir, spec.d);
    auto word_vector = [&](const std::string& word) {
        Rng word_rng(fnv1a64(word) ^ seed);
        RealMatrix row(1, spec.d);
        for (std::size_t j = 0; j < spec.d; ++j) row[j] = word_rng.normal(0, 1);
        return row;
    };
    auto encode_words = [&](const std::string& text) {
        const std::vector<std::string> words = split_tokens(text);
        RealMatrix m(words.empty() ? 1 : words.size(), spec.d);
        for (std::size_t t = 0; t < words.size(); ++t) {
            RealMatrix row = word_vector(words[t]);
            for (std::size_t j = 0; j < spec.d; ++j) m(t, j) = row[j];
        }
        return m;
    };
    for (const NewsRecord& rec : records) {
        bundle.add(rec.id, "news", encode_words(rec.n));
        bundle.add(rec.id, "topic_content", encode_words(rec.c));
        bundle.add(rec.id, "rationale", encode_words(rec.r));
    }
    bundle.close();
}

} // namespace factguard
