#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "factguard/dataset.hpp"
#include "factguard/encoder.hpp"
#include "factguard/errors.hpp"
#include "factguard/fusion.hpp"
#include "factguard/serialize.hpp"
#include "factguard/text.hpp"

namespace factguard {

struct ModelDims {
    std::size_t d = 32;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t max_len = 64;
    std::size_t vocab_limit = 8192;
    Activation activation = Activation::Tanh;

    void validate() const {
        if (d == 0 || heads == 0 || max_len == 0)
            throw ConfigError("model dimensions must be positive");
        if (d % heads != 0)
            throw ConfigError("hidden width " + std::to_string(d) + " not divisible by " +
                              std::to_string(heads) + " heads");
    }
};

// Auxiliary text classifiers used only during training: each head pools its
// sequence with token attention and maps to class logits. The content head
// separates real/fake; the rationale head also gets an "other" class.
struct AuxClassifierParams {
    TokenAttentionParams content_pool;
    MLPParams content_head; // d -> d -> 2
    TokenAttentionParams rationale_pool;
    MLPParams rationale_head; // d -> d -> 3

    static AuxClassifierParams init(std::size_t d, Activation act, Rng& rng) {
        AuxClassifierParams p;
        p.content_pool = TokenAttentionParams::init(d, rng);
        p.content_head = MLPParams::init({d, d, 2}, act, rng);
        p.rationale_pool = TokenAttentionParams::init(d, rng);
        p.rationale_head = MLPParams::init({d, d, 3}, act, rng);
        return p;
    }

    void collect(const std::string& prefix, ParamList& out) {
        content_pool.collect(prefix + ".content_pool", out);
        content_head.collect(prefix + ".content_head", out);
        rationale_pool.collect(prefix + ".rationale_pool", out);
        rationale_head.collect(prefix + ".rationale_head", out);
    }
};

// Builds a vocabulary from every text stream of a record set, capped at the
// configured size.
inline Vocabulary build_vocabulary(const std::vector<NewsRecord>& records, std::size_t limit) {
    std::vector<std::string> corpus;
    corpus.reserve(records.size() * 3);
    for (const NewsRecord& rec : records) {
        corpus.push_back(rec.n);
        corpus.push_back(rec.c);
        corpus.push_back(rec.r);
    }
    return Vocabulary::build(corpus, limit);
}

// Tokenized views of one record's three text streams.
struct RecordStreams {
    TokenSequence news;
    TokenSequence content;
    TokenSequence rationale;
};

// Everything the forward pass of the full model exposes for loss attachment.
struct ModelTrace {
    Value news_seq;      // [T_n x d]
    Value content_seq;   // [T_c x d]
    Value rationale_seq; // [T_r x d]
    FusionTrace fusion;
    Value content_logits;   // [1 x 2]
    Value rationale_logits; // [1 x 3]
};

// The trainable teacher: two toy encoders (news; topic-content and rationale
// share the second), the interaction/fusion stack, and the auxiliary heads.
struct FactGuardModel {
    ModelDims dims;
    Vocabulary vocab;
    ToyEncoderParams news_encoder;
    ToyEncoderParams llm_encoder;
    FusionParams fusion;
    AuxClassifierParams aux;

    static FactGuardModel init(const ModelDims& dims, Vocabulary vocab, std::uint64_t seed) {
        dims.validate();
        FactGuardModel m;
        m.dims = dims;
        m.vocab = std::move(vocab);
        Rng rng(seed);
        m.news_encoder = ToyEncoderParams::init(m.vocab.size(), dims.d, dims.max_len, dims.layers,
                                                dims.heads, dims.activation, rng);
        m.llm_encoder = ToyEncoderParams::init(m.vocab.size(), dims.d, dims.max_len, dims.layers,
                                               dims.heads, dims.activation, rng);
        m.fusion = FusionParams::init(dims.d, dims.heads, dims.activation, rng);
        m.aux = AuxClassifierParams::init(dims.d, dims.activation, rng);
        return m;
    }

    ParamList params() {
        ParamList out;
        news_encoder.collect("news_encoder", out);
        llm_encoder.collect("llm_encoder", out);
        fusion.collect("fusion", out);
        aux.collect("aux", out);
        return out;
    }

    RecordStreams tokenize_record(const NewsRecord& rec) const {
        RecordStreams s;
        s.news = tokenize(rec.n, vocab, dims.max_len);
        s.content = tokenize(rec.c, vocab, dims.max_len);
        s.rationale = tokenize(rec.r, vocab, dims.max_len);
        return s;
    }

    ModelTrace forward(GradientTape& t, const RecordStreams& streams) {
        ModelTrace trace;
        trace.news_seq = encode(t, streams.news, news_encoder);
        trace.content_seq = encode(t, streams.content, llm_encoder);
        trace.rationale_seq = encode(t, streams.rationale, llm_encoder);
        trace.fusion =
            fusion_forward(t, trace.news_seq, trace.content_seq, trace.rationale_seq, fusion);
        trace.content_logits =
            mlp(t, linear_token_attention(t, trace.content_seq, aux.content_pool),
                aux.content_head);
        trace.rationale_logits =
            mlp(t, linear_token_attention(t, trace.rationale_seq, aux.rationale_pool),
                aux.rationale_head);
        return trace;
    }

    FusionOutputs predict(const NewsRecord& rec) {
        GradientTape t;
        ModelTrace trace = forward(t, tokenize_record(rec));
        return snapshot(t, trace.fusion);
    }

    FusionOutputs predict_texts(const std::string& n, const std::string& c,
                                const std::string& r) {
        NewsRecord rec;
        rec.n = n;
        rec.c = c;
        rec.r = r;
        return predict(rec);
    }
};

// --- checkpoint io ---------------------------------------------------------
//
// Layout: an ASCII tag line, one JSON header line (dims, vocabulary, tensor
// table), then each tensor in the binary layout from serialize.hpp, in the
// header's order.

inline const char* kTeacherCheckpointTag = "FG1";

inline std::uint64_t vocab_hash(const Vocabulary& vocab) {
    std::string joined;
    for (const std::string& tok : vocab.tokens()) {
        joined += tok;
        joined += '\x1f';
    }
    return fnv1a64(joined);
}

namespace detail {

inline void write_checkpoint_payload(std::ostream& out, const std::string& tag,
                                     nlohmann::json header, const ParamList& params) {
    header["format"] = tag;
    nlohmann::json tensors = nlohmann::json::array();
    for (const ParamRef& p : params) {
        tensors.push_back({{"name", p.name},
                           {"rows", p.tensor->rows()},
                           {"cols", p.tensor->cols()}});
    }
    header["tensors"] = tensors;
    out << tag << "\n" << header.dump() << "\n";
    for (const ParamRef& p : params) write_tensor(out, *p.tensor);
}

inline nlohmann::json read_checkpoint_header(std::istream& in, const std::string& tag,
                                             const std::string& what) {
    std::string line;
    if (!std::getline(in, line) || line != tag)
        throw ParseError(what + " does not start with the '" + tag + "' tag");
    if (!std::getline(in, line)) throw ParseError(what + " is missing its header line");
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(what + " header is invalid JSON: " + e.what());
    }
}

inline void read_checkpoint_tensors(std::istream& in, const nlohmann::json& header,
                                    const ParamList& params, const std::string& what) {
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size())
        throw ParseError(what + " lists " + std::to_string(tensors.size()) + " tensors, model has " +
                         std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = tensors.at(i);
        if (entry.at("name").get<std::string>() != params[i].name)
            throw ParseError(what + " tensor " + std::to_string(i) + " is '" +
                             entry.at("name").get<std::string>() + "', expected '" +
                             params[i].name + "'");
        RealMatrix m = read_tensor(in);
        if (m.rows() != entry.at("rows").get<std::size_t>() ||
            m.cols() != entry.at("cols").get<std::size_t>())
            throw ParseError(what + " tensor '" + params[i].name + "' has shape " + m.shape_str() +
                             ", header disagrees");
        if (!params[i].tensor->same_shape(m))
            throw ConfigError(what + " tensor '" + params[i].name + "' shape " + m.shape_str() +
                              " does not fit the configured model");
        *params[i].tensor = std::move(m);
    }
}

inline nlohmann::json dims_header(const ModelDims& dims, const Vocabulary& vocab) {
    nlohmann::json header;
    header["d"] = dims.d;
    header["heads"] = dims.heads;
    header["layers"] = dims.layers;
    header["max_len"] = dims.max_len;
    header["vocab_limit"] = dims.vocab_limit;
    header["activation"] = activation_name(dims.activation);
    header["vocab"] = vocab.tokens();
    header["vocab_hash"] = hex64(vocab_hash(vocab));
    return header;
}

inline ModelDims dims_from_header(const nlohmann::json& header) {
    ModelDims dims;
    dims.d = header.at("d").get<std::size_t>();
    dims.heads = header.at("heads").get<std::size_t>();
    dims.layers = header.at("layers").get<std::size_t>();
    dims.max_len = header.at("max_len").get<std::size_t>();
    dims.vocab_limit = header.at("vocab_limit").get<std::size_t>();
    dims.activation = activation_from_name(header.at("activation").get<std::string>());
    return dims;
}

inline Vocabulary vocab_from_header(const nlohmann::json& header, const std::string& what) {
    Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
    if (hex64(vocab_hash(vocab)) != header.at("vocab_hash").get<std::string>())
        throw ParseError(what + " vocabulary does not match its recorded hash");
    return vocab;
}

} // namespace detail

inline void save_checkpoint(FactGuardModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write checkpoint " + path.string());
    detail::write_checkpoint_payload(out, kTeacherCheckpointTag,
                                     detail::dims_header(model.dims, model.vocab),
                                     model.params());
}

inline FactGuardModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LookupError("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    nlohmann::json header = detail::read_checkpoint_header(in, kTeacherCheckpointTag, what);
    ModelDims dims = detail::dims_from_header(header);
    Vocabulary vocab = detail::vocab_from_header(header, what);
    FactGuardModel model = FactGuardModel::init(dims, std::move(vocab), 0);
    detail::read_checkpoint_tensors(in, header, model.params(), what);
    return model;
}

} // namespace factguard
