#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"
#include "factguard/nn.hpp"
#include "factguard/serialize.hpp"
#include "factguard/text.hpp"

namespace factguard {

struct EncodedSequence {
    RealMatrix matrix; // [T x d]
    std::string source_role; // news, topic_content, rationale
};

inline const std::vector<std::string>& known_roles() {
    static const std::vector<std::string> roles{"news", "topic_content", "rationale"};
    return roles;
}

// Fills [max_len x d] with the usual sin/cos position code. Used as the
// starting point of the learned positional table so initialization needs no
// randomness.
inline RealMatrix sinusoidal_positions(std::size_t max_len, std::size_t d) {
    RealMatrix pos(max_len, d);
    for (std::size_t t = 0; t < max_len; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            const Real exponent = Real(2 * (i / 2)) / Real(d);
            const Real rate = std::pow(Real(10000), exponent);
            const Real angle = Real(t) / rate;
            pos(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pos;
}

// Small trainable stand-in for a pretrained text encoder: embedding lookup
// plus positional table, then L self-attention blocks.
struct ToyEncoderParams {
    RealMatrix embedding;  // [|V| x d]
    RealMatrix positional; // [max_len x d]
    std::vector<TransformerBlockParams> blocks;

    static ToyEncoderParams init(std::size_t vocab_size, std::size_t d, std::size_t max_len,
                                 std::size_t layers, std::size_t heads, Activation act,
                                 Rng& rng) {
        ToyEncoderParams p;
        p.embedding = xavier_uniform(vocab_size, d, d, d, rng);
        p.positional = sinusoidal_positions(max_len, d);
        for (std::size_t l = 0; l < layers; ++l)
            p.blocks.push_back(TransformerBlockParams::init(d, heads, 2 * d, act, rng));
        return p;
    }

    std::size_t dim() const { return embedding.cols(); }
    std::size_t max_len() const { return positional.rows(); }
    std::size_t vocab_size() const { return embedding.rows(); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".embedding", &embedding});
        out.push_back({prefix + ".positional", &positional});
        for (std::size_t l = 0; l < blocks.size(); ++l)
            blocks[l].collect(prefix + ".block" + std::to_string(l), out);
    }
};

inline Value encode(GradientTape& t, const TokenSequence& tokens, ToyEncoderParams& p) {
    if (tokens.ids.empty()) throw ArgumentError("cannot encode an empty token sequence");
    if (tokens.ids.size() > p.max_len())
        throw ArgumentError("sequence length " + std::to_string(tokens.ids.size()) +
                            " exceeds positional table length " + std::to_string(p.max_len()));
    for (std::size_t id : tokens.ids)
        if (id >= p.vocab_size())
            throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(p.vocab_size()));
    std::vector<std::size_t> positions(tokens.ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    Value x = ops::add(ops::gather_rows(t.param(p.embedding), tokens.ids),
                       ops::gather_rows(t.param(p.positional), positions));
    for (TransformerBlockParams& blk : p.blocks) x = transformer_block(t, x, blk);
    return x;
}

inline RealMatrix encode_eval(const TokenSequence& tokens, ToyEncoderParams& p) {
    return tape_eval([&](GradientTape& t) { return encode(t, tokens, p); });
}

// --- precomputed-embedding bundle -----------------------------------------
//
// Directory layout: manifest.json plus one .bin per (record, role) named by
// a 64-bit hash of "id \x1f role". Each .bin is one tensor in the layout
// from serialize.hpp.

inline std::string bundle_entry_name(const std::string& record_id, const std::string& role) {
    return hex64(fnv1a64(record_id + '\x1f' + role)) + ".bin";
}

class EmbeddingBundle {
public:
    // Opens an existing bundle directory and validates its manifest.
    static EmbeddingBundle open(const std::filesystem::path& dir) {
        const auto manifest_path = dir / "manifest.json";
        std::ifstream in(manifest_path);
        if (!in) throw LookupError("no embedding bundle manifest at " + manifest_path.string());
        nlohmann::json manifest;
        try {
            in >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("bad bundle manifest: " + std::string(e.what()));
        }
        EmbeddingBundle b;
        b.dir_ = dir;
        b.d_ = manifest.at("d").get<std::size_t>();
        b.count_ = manifest.at("count").get<std::size_t>();
        for (const auto& r : manifest.at("roles")) b.roles_.insert(r.get<std::string>());
        return b;
    }

    // Creates a fresh bundle; entries are added with add() and the manifest
    // is finalized by close().
    static EmbeddingBundle create(const std::filesystem::path& dir, std::size_t d) {
        std::filesystem::create_directories(dir);
        EmbeddingBundle b;
        b.dir_ = dir;
        b.d_ = d;
        return b;
    }

    void add(const std::string& record_id, const std::string& role, const RealMatrix& matrix) {
        if (matrix.cols() != d_)
            throw ShapeError("bundle dimension " + std::to_string(d_) + " vs matrix " +
                             matrix.shape_str());
        const auto path = dir_ / bundle_entry_name(record_id, role);
        std::ofstream out(path, std::ios::binary);
        if (!out) throw PipelineError("cannot write bundle entry " + path.string());
        write_tensor(out, matrix);
        roles_.insert(role);
        ++count_;
    }

    void close() const {
        nlohmann::json manifest;
        manifest["d"] = d_;
        manifest["count"] = count_;
        manifest["roles"] = std::vector<std::string>(roles_.begin(), roles_.end());
        std::ofstream out(dir_ / "manifest.json");
        out << manifest.dump(2) << "\n";
    }

    std::size_t dim() const { return d_; }
    std::size_t count() const { return count_; }

    // Loads one stored sequence, checking the width against what the caller's
    // model expects.
    EncodedSequence load(const std::string& record_id, const std::string& role,
                         std::size_t expected_d) const {
        if (d_ != expected_d)
            throw ConfigError("bundle stores d=" + std::to_string(d_) +
                              " but the model is configured for d=" + std::to_string(expected_d));
        const auto path = dir_ / bundle_entry_name(record_id, role);
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw LookupError("no stored encoding for record '" + record_id + "' role '" + role +
                              "'");
        EncodedSequence seq;
        seq.matrix = read_tensor(in);
        seq.source_role = role;
        if (seq.matrix.cols() != d_)
            throw ParseError("bundle entry " + path.string() + " has width " +
                             std::to_string(seq.matrix.cols()) + ", manifest says " +
                             std::to_string(d_));
        return seq;
    }

private:
    std::filesystem::path dir_;
    std::size_t d_ = 0;
    std::size_t count_ = 0;
    std::set<std::string> roles_;
};

} // namespace factguard
