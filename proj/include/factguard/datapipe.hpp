#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "factguard/dataset.hpp"
#include "factguard/encoder.hpp"
#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"
#include "factguard/text.hpp"

namespace factguard {

// --- provider plumbing ------------------------------------------------------

struct ProviderRequest {
    std::string prompt;
    std::string role; // "extract" or "rationale"; a routing hint, mocks key on it
    std::size_t max_tokens = 512;
    Real temperature = 0;
};

struct ProviderResponse {
    std::string completion;
    double latency_ms = 0;
};

// A completion backend. complete() validates the request and stamps the
// latency; subclasses implement fetch().
class Provider {
public:
    virtual ~Provider() = default;

    ProviderResponse complete(const ProviderRequest& req) {
        if (req.prompt.empty()) throw ArgumentError("provider request with an empty prompt");
        const auto start = std::chrono::steady_clock::now();
        ProviderResponse resp = fetch(req);
        resp.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                .count();
        return resp;
    }

    virtual std::string name() const = 0;

private:
    virtual ProviderResponse fetch(const ProviderRequest& req) = 0;
};

// Wraps a plain function as a provider. The completion must be a pure
// function of the request for pipeline runs to be reproducible.
class FunctionProvider : public Provider {
public:
    using Fn = std::function<std::string(const ProviderRequest&)>;

    explicit FunctionProvider(Fn fn, std::string name = "mock")
        : fn_(std::move(fn)), name_(std::move(name)) {}

    std::string name() const override { return name_; }

private:
    ProviderResponse fetch(const ProviderRequest& req) override {
        ProviderResponse resp;
        resp.completion = fn_(req);
        return resp;
    }

    Fn fn_;
    std::string name_;
};

// One scripted response rule. A request matches when the rule's role is
// empty or equal to the request role, and `match` occurs in the prompt.
// `completions` is indexed by how many times this rule has already fired
// for the same prompt, the last entry repeating, so a retry loop can be
// scripted as ["too short", "good extraction"].
struct ScriptEntry {
    std::string role;
    std::string match;
    std::vector<std::string> completions;
};

// Deterministic provider driven by a response script. Attempt counters are
// keyed per (rule, prompt), so concurrent records never steal each other's
// scripted retries and output stays reproducible under any thread schedule.
class ScriptedProvider : public Provider {
public:
    explicit ScriptedProvider(std::vector<ScriptEntry> entries) : entries_(std::move(entries)) {
        for (const ScriptEntry& e : entries_)
            if (e.completions.empty())
                throw ConfigError("script entry matching '" + e.match + "' has no completions");
    }

    // Loads a script as JSON lines: {"match": "...", "completions": [...]}
    // with optional "role". A plain string "completion" is accepted as a
    // one-element list.
    static ScriptedProvider load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw LookupError("cannot open provider script " + path.string());
        std::vector<ScriptEntry> entries;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json obj;
            try {
                obj = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("invalid script JSON: ") + e.what(), line_no);
            }
            ScriptEntry entry;
            if (obj.contains("role")) entry.role = obj.at("role").get<std::string>();
            if (!obj.contains("match") || !obj.at("match").is_string())
                throw ParseError("script entry needs a string 'match'", line_no);
            entry.match = obj.at("match").get<std::string>();
            if (obj.contains("completion"))
                entry.completions.push_back(obj.at("completion").get<std::string>());
            else if (obj.contains("completions"))
                for (const auto& c : obj.at("completions"))
                    entry.completions.push_back(c.get<std::string>());
            if (entry.completions.empty())
                throw ParseError("script entry needs 'completion' or 'completions'", line_no);
            entries.push_back(std::move(entry));
        }
        return ScriptedProvider(std::move(entries));
    }

    std::string name() const override { return "scripted"; }

private:
    ProviderResponse fetch(const ProviderRequest& req) override {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const ScriptEntry& e = entries_[i];
            if (!e.role.empty() && e.role != req.role) continue;
            if (req.prompt.find(e.match) == std::string::npos) continue;
            std::size_t hit;
            {
                std::lock_guard<std::mutex> lock(mutex_);
                hit = counters_[{i, fnv1a64(req.prompt)}]++;
            }
            ProviderResponse resp;
            resp.completion = e.completions[std::min(hit, e.completions.size() - 1)];
            return resp;
        }
        throw PipelineError("script has no response for role '" + req.role + "' prompt starting '" +
                            req.prompt.substr(0, 40) + "'");
    }

    std::vector<ScriptEntry> entries_;
    std::mutex mutex_;
    std::map<std::pair<std::size_t, std::uint64_t>, std::size_t> counters_;
};

// --- HTTP transport ----------------------------------------------------------

// Plain-HTTP JSON completion endpoint. The request body is
// {"model", "prompt", "role", "max_tokens", "temperature"} and the reply
// must be a JSON object with a string "completion".
struct HttpProviderConfig {
    std::string endpoint; // http://host[:port]/path
    std::string model;
    std::string token_env = "FACTGUARD_PROVIDER_TOKEN";
    std::size_t max_tokens = 512;
    Real temperature = 0;
    std::size_t timeout_seconds = 30;

    void validate() const {
        if (endpoint.rfind("http://", 0) != 0)
            throw ConfigError("provider endpoint must start with http:// (got '" + endpoint +
                              "'); TLS endpoints are not supported by this build");
        if (model.empty()) throw ConfigError("provider config needs a model name");
    }
};

inline HttpProviderConfig http_provider_config_from_json(const nlohmann::json& obj) {
    if (!obj.is_object()) throw ConfigError("provider config must be a JSON object");
    HttpProviderConfig cfg;
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "endpoint")
            cfg.endpoint = it.value().get<std::string>();
        else if (key == "model")
            cfg.model = it.value().get<std::string>();
        else if (key == "token_env")
            cfg.token_env = it.value().get<std::string>();
        else if (key == "max_tokens")
            cfg.max_tokens = it.value().get<std::size_t>();
        else if (key == "temperature")
            cfg.temperature = it.value().get<Real>();
        else if (key == "timeout_seconds")
            cfg.timeout_seconds = it.value().get<std::size_t>();
        else if (key != "fallback") // handled by the caller
            throw ConfigError("unknown provider config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::string rest = cfg_.endpoint.substr(7);
        const std::size_t slash = rest.find('/');
        host_ = slash == std::string::npos ? rest : rest.substr(0, slash);
        path_ = slash == std::string::npos ? "/" : rest.substr(slash);
        port_ = 80;
        const std::size_t colon = host_.find(':');
        if (colon != std::string::npos) {
            try {
                port_ = std::stoi(host_.substr(colon + 1));
            } catch (const std::exception&) {
                throw ConfigError("bad port in endpoint '" + cfg_.endpoint + "'");
            }
            host_ = host_.substr(0, colon);
        }
        if (host_.empty()) throw ConfigError("no host in endpoint '" + cfg_.endpoint + "'");
    }

    std::string name() const override { return "http:" + cfg_.model; }

private:
    ProviderResponse fetch(const ProviderRequest& req) override {
        nlohmann::json body;
        body["model"] = cfg_.model;
        body["prompt"] = req.prompt;
        body["role"] = req.role;
        body["max_tokens"] = req.max_tokens;
        body["temperature"] = req.temperature;

        // One client per call: httplib clients are not safe to share across
        // the pipeline's worker threads.
        httplib::Client client(host_, port_);
        client.set_connection_timeout(static_cast<time_t>(cfg_.timeout_seconds));
        client.set_read_timeout(static_cast<time_t>(cfg_.timeout_seconds));
        httplib::Headers headers;
        if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);

        auto result = client.Post(path_, headers, body.dump(), "application/json");
        if (!result)
            throw PipelineError("provider " + name() + " unreachable: " +
                                httplib::to_string(result.error()));
        if (result->status != 200)
            throw PipelineError("provider " + name() + " returned status " +
                                std::to_string(result->status));
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(result->body);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("provider reply is not JSON: " + std::string(e.what()));
        }
        if (!reply.is_object() || !reply.contains("completion") ||
            !reply.at("completion").is_string())
            throw ParseError("provider reply lacks a string 'completion'");
        ProviderResponse resp;
        resp.completion = reply.at("completion").get<std::string>();
        return resp;
    }

    HttpProviderConfig cfg_;
    std::string host_;
    std::string path_;
    int port_ = 80;
};

// --- prompt templates --------------------------------------------------------

// Per-language prompt assets loaded from a directory: extract_{zh,en}.txt and
// rationale_{zh,en}.txt, each containing a {news} placeholder, plus an
// optional VERSION file so runs can pin the wording they used.
class PromptLibrary {
public:
    static PromptLibrary load(const std::filesystem::path& dir) {
        PromptLibrary lib;
        for (const char* lang : {"zh", "en"}) {
            lib.extract_[lang] = read_template(dir / (std::string("extract_") + lang + ".txt"));
            lib.rationale_[lang] = read_template(dir / (std::string("rationale_") + lang + ".txt"));
        }
        std::ifstream version(dir / "VERSION");
        if (version) {
            std::getline(version, lib.version_);
            while (!lib.version_.empty() && (lib.version_.back() == '\r' || lib.version_.back() == ' '))
                lib.version_.pop_back();
        }
        if (lib.version_.empty()) lib.version_ = "unversioned";
        return lib;
    }

    std::string render_extract(const std::string& lang, const std::string& news) const {
        return render(template_for(extract_, lang), news);
    }

    std::string render_rationale(const std::string& lang, const std::string& news) const {
        return render(template_for(rationale_, lang), news);
    }

    const std::string& version() const { return version_; }

private:
    static std::string read_template(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw LookupError("missing prompt template " + path.string());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (text.find("{news}") == std::string::npos)
            throw ConfigError("prompt template " + path.string() + " has no {news} placeholder");
        return text;
    }

    static const std::string& template_for(const std::unordered_map<std::string, std::string>& set,
                                           const std::string& lang) {
        auto it = set.find(lang);
        if (it == set.end()) throw ArgumentError("no prompt templates for lang '" + lang + "'");
        return it->second;
    }

    static std::string render(const std::string& tmpl, const std::string& news) {
        if (news.empty()) throw ArgumentError("cannot render a prompt for empty news text");
        std::string out = tmpl;
        std::size_t pos = 0;
        while ((pos = out.find("{news}", pos)) != std::string::npos) {
            out.replace(pos, 6, news);
            pos += news.size();
        }
        return out;
    }

    std::unordered_map<std::string, std::string> extract_;
    std::unordered_map<std::string, std::string> rationale_;
    std::string version_;
};

// --- completion post-processing ----------------------------------------------

namespace detail {

inline std::string trim_copy(const std::string& s) {
    std::size_t b = 0, e = s.size();
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return s.substr(b, e - b);
}

// Strips non-letter edges so "fake.", "\"real\"" and "FAKE!" all resolve.
inline std::string letter_core(const std::string& token) {
    std::size_t b = 0, e = token.size();
    auto is_letter = [](char c) { return c >= 'a' && c <= 'z'; };
    while (b < e && !is_letter(token[b])) ++b;
    while (e > b && !is_letter(token[e - 1])) --e;
    return token.substr(b, e - b);
}

} // namespace detail

// Maps the final verdict token of a completion to a judgment; anything
// unparseable is Other. The scan is case-insensitive (tokenization
// lowercases) and runs back to front so the closing verdict line wins over
// verdict words used mid-reasoning.
inline LlmVerdict parse_verdict(const std::string& completion) {
    const std::vector<std::string> tokens = split_tokens(completion);
    for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
        const std::string core = detail::letter_core(*it);
        if (core == "real") return LlmVerdict::Real;
        if (core == "fake") return LlmVerdict::Fake;
        if (core == "other") return LlmVerdict::Other;
    }
    return LlmVerdict::Other;
}

// Asks the provider for a style-stripped topic and content rewrite of n.
// Returns the trimmed completion verbatim; gating happens in the caller.
inline std::string extract_topic_content(const std::string& n, const std::string& lang,
                                         Provider& provider, const PromptLibrary& prompts) {
    ProviderRequest req;
    req.prompt = prompts.render_extract(lang, n);
    req.role = "extract";
    return detail::trim_copy(provider.complete(req).completion);
}

// Asks the provider for a commonsense analysis of n and parses the closing
// verdict out of it.
inline std::pair<std::string, LlmVerdict> commonsense_rationale(const std::string& n,
                                                                const std::string& lang,
                                                                Provider& provider,
                                                                const PromptLibrary& prompts) {
    ProviderRequest req;
    req.prompt = prompts.render_rationale(lang, n);
    req.role = "rationale";
    const std::string r = detail::trim_copy(provider.complete(req).completion);
    return {r, parse_verdict(r)};
}

// --- similarity and entropy ----------------------------------------------------

// Cosine of two equal-shape tensors viewed as flat vectors, clamped into
// [-1, 1] so downstream threshold checks never see rounding spill.
inline Real cosine_similarity(const RealMatrix& a, const RealMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeError("cosine of " + a.shape_str() + " vs " + b.shape_str());
    Real dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) throw ArgumentError("cosine similarity of a zero vector");
    const Real sim = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::min(Real(1), std::max(Real(-1), sim));
}

// Bits per symbol of the text's character distribution. Symbols are Unicode
// code points taken as-is (whitespace included), which needs no segmenter
// and treats both supported languages identically.
inline Real shannon_entropy(const std::string& text, const std::string& lang) {
    if (lang != "zh" && lang != "en")
        throw ArgumentError("entropy lang must be zh or en, got '" + lang + "'");
    if (text.empty()) throw ArgumentError("entropy of empty text");
    std::unordered_map<char32_t, std::size_t> freq;
    std::size_t total = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        ++freq[next_codepoint(text, i)];
        ++total;
    }
    Real h = 0;
    for (const auto& [cp, count] : freq) {
        (void)cp;
        const Real p = Real(count) / Real(total);
        h -= p * std::log2(p);
    }
    return h;
}

// Mean-pooled encoder representation of a text, the embedding used for the
// extraction gate. Shared encoder parameters are only read, so one embedder
// can serve all pipeline workers.
using Embedder = std::function<RealMatrix(const std::string&)>;

inline Embedder make_pooled_embedder(ToyEncoderParams& encoder, const Vocabulary& vocab,
                                     std::size_t max_len) {
    return [&encoder, &vocab, max_len](const std::string& text) {
        const RealMatrix seq = encode_eval(tokenize(text, vocab, max_len), encoder);
        RealMatrix pooled(1, seq.cols());
        for (std::size_t r = 0; r < seq.rows(); ++r)
            for (std::size_t c = 0; c < seq.cols(); ++c) pooled(0, c) += seq(r, c);
        for (std::size_t c = 0; c < seq.cols(); ++c) pooled(0, c) /= Real(seq.rows());
        return pooled;
    };
}

// --- extraction gate -----------------------------------------------------------

struct GateConfig {
    Real threshold_zh = Real(0.8);
    Real threshold_en = Real(0.9);
    std::size_t max_retries = 3;    // regenerations after the first attempt
    std::size_t backoff_base_ms = 250; // doubled per retry; 0 disables waiting

    Real threshold_for(const std::string& lang) const {
        if (lang == "zh") return threshold_zh;
        if (lang == "en") return threshold_en;
        throw ArgumentError("gate lang must be zh or en, got '" + lang + "'");
    }

    void validate() const {
        for (Real th : {threshold_zh, threshold_en})
            if (!(th >= -1 && th <= 1))
                throw ConfigError("gate thresholds must lie in [-1, 1]");
    }
};

// Acceptance is a pure function of the score and the threshold; the boundary
// itself passes.
inline bool gate_accepts(Real similarity, Real threshold) { return similarity >= threshold; }

struct GateReport {
    std::string id;
    Real similarity = -1;
    Real threshold = 0;
    Real entropy_original = 0;
    Real entropy_extracted = 0;
    std::size_t attempts = 0;
    bool accepted = false;
};

// Scores one (news, extraction) pair without any retry machinery. An empty
// extraction scores -1, below every legal threshold.
inline GateReport gate_once(const std::string& n, const std::string& c, const std::string& lang,
                            const Embedder& embed, const GateConfig& cfg = {}) {
    cfg.validate();
    GateReport report;
    report.threshold = cfg.threshold_for(lang);
    report.attempts = 1;
    report.entropy_original = shannon_entropy(n, lang);
    if (!c.empty()) {
        report.similarity = cosine_similarity(embed(n), embed(c));
        report.entropy_extracted = shannon_entropy(c, lang);
    }
    report.accepted = gate_accepts(report.similarity, report.threshold);
    return report;
}

struct GatedExtraction {
    std::string c;
    GateReport report;
    std::string last_error; // empty unless a provider call failed
};

// Runs the extraction loop for one record: ask, score, and on rejection ask
// again with exponential backoff, switching to the fallback provider (the
// "advanced" model) for regenerations when one is configured. Provider
// failures and empty completions count as rejected attempts. The report
// describes the final attempt.
inline GatedExtraction gated_extract(const std::string& n, const std::string& lang,
                                     const Embedder& embed, Provider& primary, Provider* fallback,
                                     const PromptLibrary& prompts, const GateConfig& cfg = {}) {
    cfg.validate();
    GatedExtraction out;
    for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        Provider& provider = (attempt == 0 || fallback == nullptr) ? primary : *fallback;
        std::string candidate;
        try {
            candidate = extract_topic_content(n, lang, provider, prompts);
            out.last_error.clear();
        } catch (const std::exception& e) {
            out.last_error = e.what();
        }
        out.c = candidate;
        out.report = gate_once(n, candidate, lang, embed, cfg);
        out.report.attempts = attempt + 1;
        if (out.report.accepted) break;
        if (attempt < cfg.max_retries && cfg.backoff_base_ms > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(cfg.backoff_base_ms << attempt));
    }
    return out;
}

struct RationaleResult {
    std::string r;
    LlmVerdict verdict = LlmVerdict::Other;
    std::size_t attempts = 0;
    bool ok = false;
    std::string last_error;
};

// Retry wrapper for the rationale call, same ladder as the gate: empty
// completions and provider failures trigger backoff and fallback escalation.
inline RationaleResult robust_rationale(const std::string& n, const std::string& lang,
                                        Provider& primary, Provider* fallback,
                                        const PromptLibrary& prompts, const GateConfig& cfg = {}) {
    RationaleResult out;
    for (std::size_t attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        Provider& provider = (attempt == 0 || fallback == nullptr) ? primary : *fallback;
        out.attempts = attempt + 1;
        try {
            auto [r, verdict] = commonsense_rationale(n, lang, provider, prompts);
            if (!r.empty()) {
                out.r = r;
                out.verdict = verdict;
                out.ok = true;
                out.last_error.clear();
                return out;
            }
            out.last_error = "empty rationale completion";
        } catch (const std::exception& e) {
            out.last_error = e.what();
        }
        if (attempt < cfg.max_retries && cfg.backoff_base_ms > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(cfg.backoff_base_ms << attempt));
    }
    return out;
}

// --- record pipeline -------------------------------------------------------------

struct PipelineConfig {
    GateConfig gate;
    std::size_t parallelism = 4; // provider calls in flight

    void validate() const {
        gate.validate();
        if (parallelism == 0) throw ConfigError("pipeline parallelism must be at least 1");
    }
};

struct RecordIssue {
    std::string id;
    std::string message;
};

struct PipelineResult {
    std::vector<NewsRecord> records; // committed in record-id order
    std::vector<GateReport> reports; // aligned with records
    std::vector<RecordIssue> issues;
    std::size_t gate_failures = 0;
};

// A record takes part in training only if its LLM augmentations came through
// cleanly; flagged records stay in the file for audit but are skipped when
// the training split is assembled.
inline bool training_eligible(const NewsRecord& rec) {
    if (rec.split != "train") return false;
    if (rec.extra.is_object()) {
        if (rec.extra.contains("gate_failed") && rec.extra.at("gate_failed").get<bool>())
            return false;
        if (rec.extra.contains("rationale_failed") && rec.extra.at("rationale_failed").get<bool>())
            return false;
    }
    return true;
}

// Fills c, r, and y_llm for every input record. Records are processed by a
// small worker pool but committed in record-id order, so the output is
// byte-stable no matter how the workers interleave.
inline PipelineResult prepare_records(std::vector<NewsRecord> input, const Embedder& embed,
                                      Provider& primary, Provider* fallback,
                                      const PromptLibrary& prompts, const PipelineConfig& cfg = {}) {
    cfg.validate();
    std::stable_sort(input.begin(), input.end(),
                     [](const NewsRecord& a, const NewsRecord& b) { return a.id < b.id; });

    struct Slot {
        NewsRecord record;
        GateReport report;
        std::vector<RecordIssue> issues;
        bool gate_failed = false;
    };
    std::vector<Slot> slots(input.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= input.size()) return;
            Slot& slot = slots[idx];
            slot.record = std::move(input[idx]);
            NewsRecord& rec = slot.record;

            GatedExtraction ext =
                gated_extract(rec.n, rec.lang, embed, primary, fallback, prompts, cfg.gate);
            rec.c = ext.c;
            slot.report = ext.report;
            slot.report.id = rec.id;
            if (!ext.report.accepted) {
                slot.gate_failed = true;
                rec.extra["gate_failed"] = true;
                std::string msg = "gate failed after " +
                                  std::to_string(ext.report.attempts) + " attempts";
                if (!ext.last_error.empty()) msg += "; last error: " + ext.last_error;
                slot.issues.push_back({rec.id, msg});
            }

            RationaleResult rat =
                robust_rationale(rec.n, rec.lang, primary, fallback, prompts, cfg.gate);
            rec.r = rat.r;
            rec.y_llm = rat.verdict;
            if (!rat.ok) {
                rec.extra["rationale_failed"] = true;
                std::string msg = "rationale failed after " + std::to_string(rat.attempts) +
                                  " attempts";
                if (!rat.last_error.empty()) msg += "; last error: " + rat.last_error;
                slot.issues.push_back({rec.id, msg});
            }
        }
    };

    std::vector<std::thread> pool;
    const std::size_t n_workers = std::min(cfg.parallelism, std::max<std::size_t>(input.size(), 1));
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();

    PipelineResult result;
    for (Slot& slot : slots) {
        result.records.push_back(std::move(slot.record));
        result.reports.push_back(std::move(slot.report));
        for (RecordIssue& issue : slot.issues) result.issues.push_back(std::move(issue));
        if (slot.gate_failed) ++result.gate_failures;
    }
    return result;
}

inline void write_gate_report_csv(const std::vector<GateReport>& reports,
                                  const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write gate report " + path.string());
    out << "id,similarity,attempts,accepted,entropy_original,entropy_extracted\n";
    char buf[64];
    auto fmt = [&buf](Real v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const GateReport& r : reports)
        out << r.id << ',' << fmt(r.similarity) << ',' << r.attempts << ','
            << (r.accepted ? 1 : 0) << ',' << fmt(r.entropy_original) << ','
            << fmt(r.entropy_extracted) << "\n";
}

} // namespace factguard
