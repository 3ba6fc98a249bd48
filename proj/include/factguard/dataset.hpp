#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"
#include "factguard/serialize.hpp"
#include "factguard/text.hpp"

namespace factguard {

enum class LlmVerdict { Real, Fake, Other };

inline const char* verdict_name(LlmVerdict v) {
    switch (v) {
        case LlmVerdict::Real: return "real";
        case LlmVerdict::Fake: return "fake";
        case LlmVerdict::Other: return "other";
    }
    throw ArgumentError("unknown verdict");
}

inline LlmVerdict verdict_from_string(const std::string& s) {
    if (s == "real") return LlmVerdict::Real;
    if (s == "fake") return LlmVerdict::Fake;
    if (s == "other") return LlmVerdict::Other;
    throw ParseError("unknown verdict '" + s + "', expected real/fake/other");
}

// The advisor signal derived from the LLM's verdict: a (possibly soft) binary
// target for the usability supervision and a class index for the rationale
// text classifier.
struct LlmJudgment {
    LlmVerdict raw = LlmVerdict::Other;
    Real binary_target = Real(0.5);
    std::size_t class_index = 2;

    static LlmJudgment from_verdict(LlmVerdict v) {
        switch (v) {
            case LlmVerdict::Real: return {v, Real(0), 0};
            case LlmVerdict::Fake: return {v, Real(1), 1};
            case LlmVerdict::Other: return {v, Real(0.5), 2};
        }
        throw ArgumentError("unknown verdict");
    }
};

struct NewsRecord {
    std::string id;
    std::string n; // news text
    std::string c; // topic-content extraction
    std::string r; // commonsense rationale
    int y = 0;     // 1 = fake
    LlmVerdict y_llm = LlmVerdict::Other;
    std::string lang = "zh";  // zh | en
    std::string split = "train"; // train | val | test
    nlohmann::json extra;        // unknown input fields, preserved on save

    LlmJudgment judgment() const { return LlmJudgment::from_verdict(y_llm); }
};

// Hash of the news text after tokenizer normalization, used for exact
// deduplication.
inline std::uint64_t normalized_text_hash(const std::string& text) {
    std::string joined;
    for (const std::string& tok : split_tokens(text)) {
        joined += tok;
        joined += '\x1f';
    }
    return fnv1a64(joined);
}

struct DatasetLoad {
    std::vector<NewsRecord> records;
    std::size_t dedup_dropped = 0;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    if (!obj.contains(key))
        throw ParseError("missing field '" + std::string(key) + "'", line);
    if (!obj.at(key).is_string())
        throw ParseError("field '" + std::string(key) + "' must be a string", line);
    return obj.at(key).get<std::string>();
}

} // namespace detail

// Reads a line-delimited record file. Required fields: id, n, y, lang.
// Optional: c, r, y_llm, split. Anything else is kept in `extra` and noted
// as a warning. Exact duplicates of the normalized news text are dropped.
inline DatasetLoad load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open dataset file " + path.string());

    DatasetLoad out;
    std::unordered_set<std::uint64_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
        }
        if (!obj.is_object()) throw ParseError("line is not a JSON object", line_no);

        NewsRecord rec;
        rec.id = detail::require_string(obj, "id", line_no);
        rec.n = detail::require_string(obj, "n", line_no);
        if (rec.n.empty()) throw ParseError("field 'n' must be nonempty", line_no);
        if (!obj.contains("y")) throw ParseError("missing field 'y'", line_no);
        if (!obj.at("y").is_number_integer() ||
            (obj.at("y").get<int>() != 0 && obj.at("y").get<int>() != 1))
            throw ParseError("field 'y' must be 0 or 1", line_no);
        rec.y = obj.at("y").get<int>();
        rec.lang = detail::require_string(obj, "lang", line_no);
        if (rec.lang != "zh" && rec.lang != "en")
            throw ParseError("field 'lang' must be zh or en", line_no);

        if (obj.contains("c")) rec.c = detail::require_string(obj, "c", line_no);
        if (obj.contains("r")) rec.r = detail::require_string(obj, "r", line_no);
        if (obj.contains("y_llm")) {
            try {
                rec.y_llm = verdict_from_string(obj.at("y_llm").get<std::string>());
            } catch (const ParseError& e) {
                throw ParseError(e.what(), line_no);
            }
        }
        if (obj.contains("split")) {
            rec.split = detail::require_string(obj, "split", line_no);
            if (rec.split != "train" && rec.split != "val" && rec.split != "test")
                throw ParseError("field 'split' must be train, val, or test", line_no);
        }

        static const std::unordered_set<std::string> known{"id", "n",     "c",    "r",
                                                           "y",  "y_llm", "lang", "split"};
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (!known.count(it.key())) {
                rec.extra[it.key()] = it.value();
                out.warnings.push_back("line " + std::to_string(line_no) + ": unknown field '" +
                                       it.key() + "' preserved");
            }
        }

        const std::uint64_t h = normalized_text_hash(rec.n);
        if (!seen.insert(h).second) {
            ++out.dedup_dropped;
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline void save_dataset(const std::vector<NewsRecord>& records,
                         const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write dataset file " + path.string());
    for (const NewsRecord& rec : records) {
        nlohmann::json obj;
        if (rec.extra.is_object()) obj = rec.extra;
        obj["id"] = rec.id;
        obj["n"] = rec.n;
        obj["c"] = rec.c;
        obj["r"] = rec.r;
        obj["y"] = rec.y;
        obj["y_llm"] = verdict_name(rec.y_llm);
        obj["lang"] = rec.lang;
        obj["split"] = rec.split;
        out << obj.dump() << "\n";
    }
}

// Sorts by the numeric `timestamp` extra field and assigns splits in time
// order with the given fractions, so validation and test always postdate
// training data.
inline void split_by_timestamp(std::vector<NewsRecord>& records, Real train_frac = Real(0.5715),
                               Real val_frac = Real(0.21425)) {
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1)
        throw ConfigError("invalid split fractions");
    for (const NewsRecord& rec : records)
        if (!rec.extra.is_object() || !rec.extra.contains("timestamp") ||
            !rec.extra.at("timestamp").is_number())
            throw ArgumentError("record '" + rec.id + "' lacks a numeric timestamp");
    std::stable_sort(records.begin(), records.end(), [](const NewsRecord& a, const NewsRecord& b) {
        return a.extra.at("timestamp").get<double>() < b.extra.at("timestamp").get<double>();
    });
    const std::size_t n = records.size();
    const std::size_t n_train = static_cast<std::size_t>(Real(n) * train_frac + Real(0.5));
    const std::size_t n_val = static_cast<std::size_t>(Real(n) * val_frac + Real(0.5));
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train)
            records[i].split = "train";
        else if (i < n_train + n_val)
            records[i].split = "val";
        else
            records[i].split = "test";
    }
}

inline std::vector<NewsRecord> filter_split(const std::vector<NewsRecord>& records,
                                            const std::string& split) {
    std::vector<NewsRecord> out;
    for (const NewsRecord& rec : records)
        if (rec.split == split) out.push_back(rec);
    return out;
}

} // namespace factguard
