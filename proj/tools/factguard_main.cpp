// Command-line front end. Every subcommand is a thin orchestration over the
// library headers:
//
//   synth         generate a synthetic dataset (optionally with encodings)
//   prepare-data  fill c/r/y_llm via an LLM provider and gate the extractions
//   train         train the full model, write checkpoint + history + metrics
//   eval          evaluate a checkpoint on one split
//   infer         print one probability + label per input
//   distill       train the news-only student from a teacher checkpoint
//   ablate        train one ablation variant
//   grid-search   alpha x beta sensitivity surface
//   lambda-sweep  distillation weight sweep
//   gradcheck     finite-difference check of the full model's gradients
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error. Logs go
// to stderr; stdout carries only `infer` output. Primary artifacts (CSV,
// checkpoints, datasets) contain no timestamps; wall-clock metadata lives in
// each run's meta.json.

#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "factguard/datapipe.hpp"
#include "factguard/distill.hpp"
#include "factguard/gradcheck.hpp"
#include "factguard/model.hpp"
#include "factguard/sweeps.hpp"
#include "factguard/synthetic.hpp"
#include "factguard/training.hpp"
#include "factguard/variants.hpp"

namespace fs = std::filesystem;
using namespace factguard;

namespace {

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

std::string now_iso8601() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// The one artifact allowed to differ between identical runs.
void write_meta(const fs::path& dir, const std::string& command, nlohmann::json details) {
    details["command"] = command;
    details["created_at"] = now_iso8601();
    std::ofstream out(dir / "meta.json");
    if (!out) throw PipelineError("cannot write " + (dir / "meta.json").string());
    out << details.dump(2) << "\n";
}

fs::path ensure_out_dir(const std::string& out_dir) {
    fs::path dir(out_dir);
    fs::create_directories(dir);
    return dir;
}

// --- configuration -----------------------------------------------------------

struct RunConfig {
    std::uint64_t seed = 3759;
    ModelDims dims;
    TrainConfig train;
    Real lambda = Real(8);
    bool train_encoder = false;
    std::size_t simulator_layers = 4;
    PipelineConfig pipeline;
    std::string prompts_dir;
    nlohmann::json provider; // verbatim provider section, resolved on use
};

template <typename T>
T get_as(const nlohmann::json& value, const std::string& key) {
    try {
        return value.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

void apply_dims_section(const nlohmann::json& obj, ModelDims& dims) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "d")
            dims.d = get_as<std::size_t>(it.value(), key);
        else if (key == "heads")
            dims.heads = get_as<std::size_t>(it.value(), key);
        else if (key == "layers")
            dims.layers = get_as<std::size_t>(it.value(), key);
        else if (key == "max_len")
            dims.max_len = get_as<std::size_t>(it.value(), key);
        else if (key == "vocab_limit")
            dims.vocab_limit = get_as<std::size_t>(it.value(), key);
        else if (key == "activation")
            dims.activation = activation_from_name(get_as<std::string>(it.value(), key));
        else
            throw ConfigError("unknown dims config key '" + key + "'");
    }
}

void apply_train_section(const nlohmann::json& obj, TrainConfig& train) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "alpha")
            train.alpha = get_as<Real>(it.value(), key);
        else if (key == "beta")
            train.beta = get_as<Real>(it.value(), key);
        else if (key == "learning_rate")
            train.learning_rate = get_as<Real>(it.value(), key);
        else if (key == "weight_decay")
            train.weight_decay = get_as<Real>(it.value(), key);
        else if (key == "patience")
            train.patience = get_as<std::size_t>(it.value(), key);
        else if (key == "batch_size")
            train.batch_size = get_as<std::size_t>(it.value(), key);
        else if (key == "max_epochs")
            train.max_epochs = get_as<std::size_t>(it.value(), key);
        else
            throw ConfigError("unknown train config key '" + key + "'");
    }
}

void apply_distill_section(const nlohmann::json& obj, RunConfig& cfg) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "lambda")
            cfg.lambda = get_as<Real>(it.value(), key);
        else if (key == "train_encoder")
            cfg.train_encoder = get_as<bool>(it.value(), key);
        else if (key == "simulator_layers")
            cfg.simulator_layers = get_as<std::size_t>(it.value(), key);
        else
            throw ConfigError("unknown distill config key '" + key + "'");
    }
}

void apply_gate_section(const nlohmann::json& obj, PipelineConfig& pipeline) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "threshold_zh")
            pipeline.gate.threshold_zh = get_as<Real>(it.value(), key);
        else if (key == "threshold_en")
            pipeline.gate.threshold_en = get_as<Real>(it.value(), key);
        else if (key == "max_retries")
            pipeline.gate.max_retries = get_as<std::size_t>(it.value(), key);
        else if (key == "backoff_base_ms")
            pipeline.gate.backoff_base_ms = get_as<std::size_t>(it.value(), key);
        else if (key == "parallelism")
            pipeline.parallelism = get_as<std::size_t>(it.value(), key);
        else
            throw ConfigError("unknown gate config key '" + key + "'");
    }
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json obj;
    try {
        in >> obj;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!obj.is_object()) throw ConfigError("config file must hold a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "seed")
            cfg.seed = get_as<std::uint64_t>(it.value(), key);
        else if (key == "dims")
            apply_dims_section(it.value(), cfg.dims);
        else if (key == "train")
            apply_train_section(it.value(), cfg.train);
        else if (key == "distill")
            apply_distill_section(it.value(), cfg);
        else if (key == "gate")
            apply_gate_section(it.value(), cfg.pipeline);
        else if (key == "provider")
            cfg.provider = it.value();
        else if (key == "prompts_dir")
            cfg.prompts_dir = get_as<std::string>(it.value(), key);
        else
            throw ConfigError("unknown config key '" + key + "'");
    }
    cfg.train.seed = cfg.seed;
    return cfg;
}

fs::path resolve_prompts_dir(const RunConfig& cfg) {
    if (!cfg.prompts_dir.empty()) return cfg.prompts_dir;
    if (const char* env = std::getenv("FACTGUARD_PROMPT_DIR"); env && *env) return env;
    return "prompts";
}

// --- dataset helpers -----------------------------------------------------------

struct Splits {
    std::vector<NewsRecord> train;
    std::vector<NewsRecord> val;
    std::vector<NewsRecord> test;
};

Splits load_splits(const std::string& path) {
    DatasetLoad load = load_dataset(path);
    for (const std::string& warning : load.warnings) log_line("warning: " + warning);
    if (load.dedup_dropped > 0)
        log_line("dedup: dropped " + std::to_string(load.dedup_dropped) + " duplicate records");
    Splits s;
    for (NewsRecord& rec : load.records) {
        if (rec.split == "train") {
            if (training_eligible(rec)) s.train.push_back(std::move(rec));
        } else if (rec.split == "val") {
            s.val.push_back(std::move(rec));
        } else {
            s.test.push_back(std::move(rec));
        }
    }
    log_line("splits: train=" + std::to_string(s.train.size()) +
             " val=" + std::to_string(s.val.size()) + " test=" + std::to_string(s.test.size()));
    return s;
}

std::string report_summary(const MetricsReport& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "acc=%.4f macf1=%.4f f1_real=%.4f f1_fake=%.4f",
                  double(r.acc), double(r.macf1), double(r.f1_real), double(r.f1_fake));
    return buf;
}

// --- provider construction -------------------------------------------------------

struct ProviderStack {
    std::unique_ptr<Provider> primary;
    std::unique_ptr<Provider> fallback;
};

ProviderStack build_providers(const std::string& mock_script, const std::string& provider_path,
                              const RunConfig& cfg) {
    ProviderStack stack;
    if (!mock_script.empty() && !provider_path.empty())
        throw ConfigError("--mock and --provider are mutually exclusive");
    if (!mock_script.empty()) {
        // Plain new: the provider holds a mutex, so it can only be built in
        // place from the loader's prvalue, not moved through make_unique.
        stack.primary.reset(new ScriptedProvider(ScriptedProvider::load(mock_script)));
        return stack;
    }
    nlohmann::json provider_cfg = cfg.provider;
    if (!provider_path.empty()) {
        std::ifstream in(provider_path);
        if (!in) throw ConfigError("cannot open provider config " + provider_path);
        try {
            in >> provider_cfg;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("provider config is not valid JSON: " + std::string(e.what()));
        }
    }
    if (provider_cfg.is_null())
        throw ConfigError("prepare-data needs --provider cfg.json or --mock script.jsonl");
    stack.primary = std::make_unique<HttpProvider>(http_provider_config_from_json(provider_cfg));
    if (provider_cfg.contains("fallback"))
        stack.fallback = std::make_unique<HttpProvider>(
            http_provider_config_from_json(provider_cfg.at("fallback")));
    return stack;
}

// --- subcommand payloads ---------------------------------------------------------

struct Options {
    std::string config_path;
    std::uint64_t seed = 3759;
    bool seed_set = false;

    // synth
    SyntheticSpec synth_spec;
    std::string synth_out;
    std::string synth_bundle;

    // prepare-data
    std::string prep_in, prep_out, prep_lang, prep_provider, prep_mock, prep_report;
    bool prep_temporal = false;

    // shared model/data flags
    std::string data_path, out_dir, model_path, teacher_path, student_path;
    std::string split = "test";

    // train overrides
    double alpha = 0.4, beta = 0.16, lr = 2e-4;
    std::size_t max_epochs = 50, batch_size = 16, patience = 5;
    std::size_t d = 32, heads = 4, layers = 2, max_len = 64;
    bool alpha_set = false, beta_set = false, lr_set = false, epochs_set = false;
    bool batch_set = false, patience_set = false;
    bool d_set = false, heads_set = false, layers_set = false, max_len_set = false;

    // distill overrides
    double lambda = 8;
    bool lambda_set = false;
    bool train_encoder = false;
    bool train_encoder_set = false;
    std::size_t simulator_layers = 4;
    bool simulator_layers_set = false;

    // infer
    std::string infer_in, infer_news, infer_content, infer_rationale;

    // ablate
    std::string variant_name_flag;

    // sweeps
    std::string alpha_grid = "fine", beta_grid = "fine", lambda_grid = "coarse";

    // gradcheck
    std::size_t gc_seeds = 5;
    double gc_tol = 1e-4;
};

RunConfig effective_config(const Options& opt) {
    RunConfig cfg = load_run_config(opt.config_path);
    if (opt.seed_set) cfg.seed = opt.seed;
    if (opt.alpha_set) cfg.train.alpha = Real(opt.alpha);
    if (opt.beta_set) cfg.train.beta = Real(opt.beta);
    if (opt.lr_set) cfg.train.learning_rate = Real(opt.lr);
    if (opt.epochs_set) cfg.train.max_epochs = opt.max_epochs;
    if (opt.batch_set) cfg.train.batch_size = opt.batch_size;
    if (opt.patience_set) cfg.train.patience = opt.patience;
    if (opt.d_set) cfg.dims.d = opt.d;
    if (opt.heads_set) cfg.dims.heads = opt.heads;
    if (opt.layers_set) cfg.dims.layers = opt.layers;
    if (opt.max_len_set) cfg.dims.max_len = opt.max_len;
    if (opt.lambda_set) cfg.lambda = Real(opt.lambda);
    if (opt.train_encoder_set) cfg.train_encoder = opt.train_encoder;
    if (opt.simulator_layers_set) cfg.simulator_layers = opt.simulator_layers;
    cfg.train.seed = cfg.seed;
    cfg.dims.validate();
    cfg.train.validate();
    return cfg;
}

nlohmann::json config_echo(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    j["dims"] = {{"d", cfg.dims.d},
                 {"heads", cfg.dims.heads},
                 {"layers", cfg.dims.layers},
                 {"max_len", cfg.dims.max_len},
                 {"vocab_limit", cfg.dims.vocab_limit},
                 {"activation", activation_name(cfg.dims.activation)}};
    j["train"] = {{"alpha", cfg.train.alpha},
                  {"beta", cfg.train.beta},
                  {"learning_rate", cfg.train.learning_rate},
                  {"weight_decay", cfg.train.weight_decay},
                  {"patience", cfg.train.patience},
                  {"batch_size", cfg.train.batch_size},
                  {"max_epochs", cfg.train.max_epochs}};
    return j;
}

// --- subcommands -----------------------------------------------------------------

int cmd_synth(const Options& opt) {
    const std::uint64_t seed = opt.seed_set ? opt.seed : 3759;
    std::vector<NewsRecord> records = make_synthetic(opt.synth_spec, seed);
    save_dataset(records, opt.synth_out);
    log_line("synth: wrote " + std::to_string(records.size()) + " records to " + opt.synth_out);
    if (!opt.synth_bundle.empty()) {
        write_synthetic_bundle(records, opt.synth_spec, opt.synth_bundle, seed);
        log_line("synth: wrote encodings to " + opt.synth_bundle);
    }
    return 0;
}

int cmd_prepare_data(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    DatasetLoad load = load_dataset(opt.prep_in);
    for (const std::string& warning : load.warnings) log_line("warning: " + warning);
    if (load.dedup_dropped > 0)
        log_line("dedup: dropped " + std::to_string(load.dedup_dropped) + " duplicate records");
    if (!opt.prep_lang.empty()) {
        if (opt.prep_lang != "zh" && opt.prep_lang != "en")
            throw ConfigError("--lang must be zh or en");
        for (NewsRecord& rec : load.records) rec.lang = opt.prep_lang;
    }
    if (opt.prep_temporal) split_by_timestamp(load.records);

    ProviderStack providers = build_providers(opt.prep_mock, opt.prep_provider, cfg);
    PromptLibrary prompts = PromptLibrary::load(resolve_prompts_dir(cfg));

    // The gate embeds both texts with a fixed random encoder seeded by the
    // run seed: a stand-in embedding space that makes similarity scores
    // reproducible without any pretrained weights.
    Vocabulary vocab = build_vocabulary(load.records, cfg.dims.vocab_limit);
    Rng rng(cfg.seed);
    ToyEncoderParams encoder =
        ToyEncoderParams::init(vocab.size(), cfg.dims.d, cfg.dims.max_len, cfg.dims.layers,
                               cfg.dims.heads, cfg.dims.activation, rng);
    Embedder embed = make_pooled_embedder(encoder, vocab, cfg.dims.max_len);

    PipelineResult result = prepare_records(std::move(load.records), embed, *providers.primary,
                                            providers.fallback.get(), prompts, cfg.pipeline);
    for (const RecordIssue& issue : result.issues)
        log_line("warning: record " + issue.id + ": " + issue.message);

    save_dataset(result.records, opt.prep_out);
    const fs::path out_path(opt.prep_out);
    const fs::path report_path =
        opt.prep_report.empty() ? out_path.parent_path() / "gate_report.csv" : fs::path(opt.prep_report);
    write_gate_report_csv(result.reports, report_path);

    const fs::path meta_dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
    nlohmann::json details;
    details["input"] = opt.prep_in;
    details["output"] = opt.prep_out;
    details["records"] = result.records.size();
    details["gate_failures"] = result.gate_failures;
    details["prompt_version"] = prompts.version();
    details["provider"] = providers.primary->name();
    details["seed"] = cfg.seed;
    write_meta(meta_dir, "prepare-data", details);

    log_line("prepare-data: " + std::to_string(result.records.size()) + " records, " +
             std::to_string(result.gate_failures) + " gate failures");
    return 0;
}

int cmd_train(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    const fs::path dir = ensure_out_dir(opt.out_dir);
    Splits splits = load_splits(opt.data_path);

    Vocabulary vocab = build_vocabulary(splits.train, cfg.dims.vocab_limit);
    FactGuardModel model = FactGuardModel::init(cfg.dims, std::move(vocab), cfg.seed);
    TrainResult result = train(model, splits.train, splits.val, cfg.train);
    log_line("train: ran " + std::to_string(result.epochs_run) + " epochs, best epoch " +
             std::to_string(result.best_epoch));

    save_checkpoint(model, dir / "model.fg1");
    write_history_csv(result.history, dir / "history.csv");

    const std::vector<NewsRecord>& eval_split = splits.test.empty() ? splits.val : splits.test;
    MetricsReport report = evaluate_model(model, eval_split);
    write_metrics_csv(report, dir / "metrics.csv");
    log_line(std::string("train: ") + (splits.test.empty() ? "val " : "test ") +
             report_summary(report));

    nlohmann::json details;
    details["data"] = opt.data_path;
    details["config"] = config_echo(cfg);
    details["epochs_run"] = result.epochs_run;
    details["best_epoch"] = result.best_epoch;
    write_meta(dir, "train", details);
    return 0;
}

int cmd_eval(const Options& opt) {
    const fs::path dir = ensure_out_dir(opt.out_dir);
    FactGuardModel model = load_checkpoint(opt.model_path);
    DatasetLoad load = load_dataset(opt.data_path);
    std::vector<NewsRecord> records = filter_split(load.records, opt.split);
    if (records.empty())
        throw ArgumentError("split '" + opt.split + "' has no records in " + opt.data_path);

    std::vector<Real> preds;
    std::vector<int> labels;
    for (const NewsRecord& rec : records) {
        preds.push_back(model.predict(rec).y_hat);
        labels.push_back(rec.y);
    }
    MetricsReport report = evaluate_predictions(preds, labels);
    write_metrics_csv(report, dir / "metrics.csv");
    write_confidence_csv(confidence_histogram(preds, labels), dir / "confidence.csv");
    log_line("eval: " + opt.split + " " + report_summary(report));

    nlohmann::json details;
    details["model"] = opt.model_path;
    details["data"] = opt.data_path;
    details["split"] = opt.split;
    details["records"] = records.size();
    write_meta(dir, "eval", details);
    return 0;
}

int cmd_infer(const Options& opt) {
    const bool student_mode = !opt.student_path.empty();
    if (student_mode && !opt.model_path.empty())
        throw ConfigError("pass either --model or --student, not both");
    if (!student_mode && opt.model_path.empty())
        throw ConfigError("infer needs --model model.fg1 or --student student.fgd1");
    if (student_mode && (!opt.infer_content.empty() || !opt.infer_rationale.empty()))
        throw ConfigError(
            "--student predicts from news text alone; --topic-content/--rationale do not apply");

    std::optional<FactGuardModel> teacher;
    std::optional<StudentParams> student;
    if (student_mode)
        student.emplace(load_student_checkpoint(opt.student_path));
    else
        teacher.emplace(load_checkpoint(opt.model_path));

    auto emit = [](Real p) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", double(p));
        std::cout << buf << "\t" << (p >= Real(0.5) ? "fake" : "real") << "\n";
    };

    if (!opt.infer_news.empty()) {
        if (student_mode) {
            emit(student_infer(opt.infer_news, *student));
        } else {
            if (opt.infer_content.empty() || opt.infer_rationale.empty())
                throw ConfigError("full-model infer needs --topic-content and --rationale");
            emit(teacher->predict_texts(opt.infer_news, opt.infer_content, opt.infer_rationale)
                     .y_hat);
        }
        return 0;
    }

    if (opt.infer_in.empty())
        throw ConfigError("infer needs --news (one-shot) or --in file.jsonl (batch)");
    std::ifstream in(opt.infer_in);
    if (!in) throw LookupError("cannot open inference input " + opt.infer_in);
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
        if (!obj.is_object() || !obj.contains("n") || !obj.at("n").is_string())
            throw ParseError("inference line needs a string field 'n'", line_no);
        const std::string n = obj.at("n").get<std::string>();
        if (n.empty()) throw ParseError("field 'n' must be nonempty", line_no);
        if (student_mode) {
            emit(student_infer(n, *student));
        } else {
            if (!obj.contains("c") || !obj.contains("r"))
                throw ParseError("full-model inference line needs 'c' and 'r'", line_no);
            emit(teacher
                     ->predict_texts(n, obj.at("c").get<std::string>(),
                                     obj.at("r").get<std::string>())
                     .y_hat);
        }
    }
    return 0;
}

int cmd_distill(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    const fs::path dir = ensure_out_dir(opt.out_dir);
    FactGuardModel teacher = load_checkpoint(opt.teacher_path);
    Splits splits = load_splits(opt.data_path);

    StudentParams student = StudentParams::init(teacher, cfg.seed, cfg.simulator_layers);
    DistillConfig dcfg;
    dcfg.lambda = cfg.lambda;
    dcfg.train_encoder = cfg.train_encoder;
    dcfg.base = cfg.train;
    DistillResult result = distill_train(teacher, student, splits.train, splits.val, dcfg);
    log_line("distill: ran " + std::to_string(result.epochs_run) + " epochs, best epoch " +
             std::to_string(result.best_epoch));

    save_student_checkpoint(student, dir / "student.fgd1");
    write_distill_history_csv(result.history, dir / "distill_history.csv");

    const std::vector<NewsRecord>& eval_split = splits.test.empty() ? splits.val : splits.test;
    auto [report, mse] = evaluate_student(teacher, student, eval_split);
    write_metrics_csv(report, dir / "metrics.csv");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "feature mse %.6g", double(mse));
    log_line(std::string("distill: ") + (splits.test.empty() ? "val " : "test ") +
             report_summary(report) + ", " + buf);

    nlohmann::json details;
    details["teacher"] = opt.teacher_path;
    details["data"] = opt.data_path;
    details["config"] = config_echo(cfg);
    details["lambda"] = cfg.lambda;
    details["train_encoder"] = cfg.train_encoder;
    details["simulator_layers"] = cfg.simulator_layers;
    details["baseline_val_mse"] = result.baseline_val_mse;
    write_meta(dir, "distill", details);
    return 0;
}

int cmd_ablate(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    const fs::path dir = ensure_out_dir(opt.out_dir);
    const AblationVariant variant = variant_from_name(opt.variant_name_flag);
    Splits splits = load_splits(opt.data_path);

    Vocabulary vocab = build_vocabulary(splits.train, cfg.dims.vocab_limit);
    VariantModel model = VariantModel::init(variant, cfg.dims, std::move(vocab), cfg.seed);
    TrainResult result = train(model, splits.train, splits.val, cfg.train);
    log_line("ablate[" + std::string(variant_name(variant)) + "]: ran " +
             std::to_string(result.epochs_run) + " epochs");

    write_history_csv(result.history, dir / "history.csv");
    const std::vector<NewsRecord>& eval_split = splits.test.empty() ? splits.val : splits.test;
    MetricsReport report = evaluate_model(model, eval_split);
    write_metrics_csv(report, dir / "metrics.csv");
    log_line("ablate[" + std::string(variant_name(variant)) + "]: " + report_summary(report));

    nlohmann::json details;
    details["variant"] = variant_name(variant);
    details["data"] = opt.data_path;
    details["config"] = config_echo(cfg);
    write_meta(dir, "ablate", details);
    return 0;
}

std::vector<Real> named_grid(const std::string& name) {
    if (name == "fine") return default_fine_grid();
    if (name == "coarse") return default_coarse_grid();
    throw ConfigError("grid must be 'fine' or 'coarse', got '" + name + "'");
}

int cmd_grid_search(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    const fs::path dir = ensure_out_dir(opt.out_dir);
    Splits splits = load_splits(opt.data_path);
    Vocabulary vocab = build_vocabulary(splits.train, cfg.dims.vocab_limit);

    auto fit = [&](Real alpha, Real beta) {
        FactGuardModel model = FactGuardModel::init(cfg.dims, vocab, cfg.seed);
        TrainConfig cell = cfg.train;
        cell.alpha = alpha;
        cell.beta = beta;
        train(model, splits.train, splits.val, cell);
        MetricsReport report = evaluate_model(model, splits.val);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "cell alpha=%.3g beta=%.3g macf1=%.4f", double(alpha),
                      double(beta), double(report.macf1));
        log_line(buf);
        return report;
    };
    std::vector<SurfaceRow> rows =
        grid_search(named_grid(opt.alpha_grid), named_grid(opt.beta_grid), fit);
    write_surface_csv(rows, dir / "surface.csv");

    nlohmann::json details;
    details["data"] = opt.data_path;
    details["alpha_grid"] = opt.alpha_grid;
    details["beta_grid"] = opt.beta_grid;
    details["cells"] = rows.size();
    details["config"] = config_echo(cfg);
    write_meta(dir, "grid-search", details);
    log_line("grid-search: wrote " + std::to_string(rows.size()) + " rows");
    return 0;
}

int cmd_lambda_sweep(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    const fs::path dir = ensure_out_dir(opt.out_dir);
    FactGuardModel teacher = load_checkpoint(opt.teacher_path);
    Splits splits = load_splits(opt.data_path);

    auto fit = [&](Real lambda) {
        StudentParams student = StudentParams::init(teacher, cfg.seed, cfg.simulator_layers);
        DistillConfig dcfg;
        dcfg.lambda = lambda;
        dcfg.train_encoder = cfg.train_encoder;
        dcfg.base = cfg.train;
        distill_train(teacher, student, splits.train, splits.val, dcfg);
        LambdaOutcome outcome;
        auto [report, mse] = evaluate_student(teacher, student, splits.val);
        outcome.report = report;
        outcome.val_mse = mse;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "lambda=%.3g macf1=%.4f val_mse=%.6g", double(lambda),
                      double(report.macf1), double(mse));
        log_line(buf);
        return outcome;
    };
    std::vector<LambdaRow> rows = lambda_sweep(named_grid(opt.lambda_grid), fit);
    write_lambda_csv(rows, dir / "lambda.csv");

    nlohmann::json details;
    details["teacher"] = opt.teacher_path;
    details["data"] = opt.data_path;
    details["grid"] = opt.lambda_grid;
    details["config"] = config_echo(cfg);
    write_meta(dir, "lambda-sweep", details);
    log_line("lambda-sweep: wrote " + std::to_string(rows.size()) + " rows");
    return 0;
}

int cmd_gradcheck(const Options& opt) {
    RunConfig cfg = effective_config(opt);
    // Gradcheck dims default small: finite differences touch every parameter
    // entry twice, so the full-size model would take minutes, not seconds.
    ModelDims dims = cfg.dims;
    if (!opt.d_set) dims.d = 8;
    if (!opt.heads_set) dims.heads = 2;
    if (!opt.layers_set) dims.layers = 1;
    if (!opt.max_len_set) dims.max_len = 8;
    dims.validate();

    SyntheticSpec spec;
    spec.size = 2;
    spec.event_tokens = 2;
    spec.style_tokens = 1;

    bool all_pass = true;
    for (std::size_t i = 0; i < opt.gc_seeds; ++i) {
        const std::uint64_t seed = cfg.seed + i;
        std::vector<NewsRecord> records = make_synthetic(spec, seed);
        Vocabulary vocab = build_vocabulary(records, dims.vocab_limit);
        FactGuardModel model = FactGuardModel::init(dims, std::move(vocab), seed);
        GradCheckReport report = gradcheck(
            model.params(),
            [&](GradientTape& t) {
                Value total = t.constant(RealMatrix(1, 1));
                for (const NewsRecord& rec : records) {
                    auto [loss, parts] = record_loss(t, model, rec, cfg.train.alpha,
                                                     cfg.train.beta);
                    (void)parts;
                    total = ops::add(total, loss);
                }
                return total;
            },
            Real(1e-5), Real(opt.gc_tol));
        log_line("gradcheck seed " + std::to_string(seed) + ": " + report.describe());
        all_pass = all_pass && report.pass;
    }
    if (!all_pass) {
        log_line("gradcheck: FAILED");
        return 1;
    }
    log_line("gradcheck: all seeds passed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FactGuard fake-news detection pipeline"};
    app.require_subcommand(1);
    Options opt;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "JSON config file");
        cmd->add_option("--seed", opt.seed, "Random seed")
            ->each([&](const std::string&) { opt.seed_set = true; });
    };
    auto add_train_overrides = [&](CLI::App* cmd) {
        cmd->add_option("--alpha", opt.alpha, "Usability loss weight")
            ->each([&](const std::string&) { opt.alpha_set = true; });
        cmd->add_option("--beta", opt.beta, "Auxiliary text loss weight")
            ->each([&](const std::string&) { opt.beta_set = true; });
        cmd->add_option("--lr", opt.lr, "Learning rate")
            ->each([&](const std::string&) { opt.lr_set = true; });
        cmd->add_option("--max-epochs", opt.max_epochs, "Epoch budget")
            ->each([&](const std::string&) { opt.epochs_set = true; });
        cmd->add_option("--batch-size", opt.batch_size, "Minibatch size")
            ->each([&](const std::string&) { opt.batch_set = true; });
        cmd->add_option("--patience", opt.patience, "Early-stopping patience")
            ->each([&](const std::string&) { opt.patience_set = true; });
    };
    auto add_dims_overrides = [&](CLI::App* cmd) {
        cmd->add_option("--d", opt.d, "Hidden width")
            ->each([&](const std::string&) { opt.d_set = true; });
        cmd->add_option("--heads", opt.heads, "Attention heads")
            ->each([&](const std::string&) { opt.heads_set = true; });
        cmd->add_option("--layers", opt.layers, "Encoder layers")
            ->each([&](const std::string&) { opt.layers_set = true; });
        cmd->add_option("--max-len", opt.max_len, "Token budget per text")
            ->each([&](const std::string&) { opt.max_len_set = true; });
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--out", opt.synth_out, "Output dataset JSONL")->required();
    synth->add_option("--bundle", opt.synth_bundle, "Also write a latent-encoding bundle here");
    synth->add_option("--size", opt.synth_spec.size, "Record count");
    synth->add_option("--d", opt.synth_spec.d, "Latent encoding width");
    synth->add_option("--reliability", opt.synth_spec.advice_reliability,
                      "P(llm verdict matches the label)");
    synth->add_option("--balance", opt.synth_spec.class_balance, "P(fake)");
    synth->add_option("--confound", opt.synth_spec.style_confound,
                      "P(style tokens follow the label)");
    synth->add_option("--seed", opt.seed, "Random seed")
        ->each([&](const std::string&) { opt.seed_set = true; });

    CLI::App* prep = app.add_subcommand("prepare-data",
                                        "Fill topic-content and rationale via a provider");
    prep->add_option("--in", opt.prep_in, "Raw dataset JSONL (id, n, y, lang)")->required();
    prep->add_option("--out", opt.prep_out, "Gated dataset JSONL")->required();
    prep->add_option("--lang", opt.prep_lang, "Force zh or en for every record");
    prep->add_option("--provider", opt.prep_provider, "HTTP provider config JSON");
    prep->add_option("--mock", opt.prep_mock, "Scripted provider JSONL (testing)");
    prep->add_option("--report", opt.prep_report, "Gate report CSV path");
    prep->add_flag("--temporal-split", opt.prep_temporal,
                   "Assign splits by the timestamp extra field");
    add_config(prep);
    add_dims_overrides(prep);

    CLI::App* train_cmd = app.add_subcommand("train", "Train the full model");
    train_cmd->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    train_cmd->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();
    add_config(train_cmd);
    add_train_overrides(train_cmd);
    add_dims_overrides(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval_cmd->add_option("--model", opt.model_path, "Checkpoint (.fg1)")->required();
    eval_cmd->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    eval_cmd->add_option("--split", opt.split, "train, val, or test (default test)");
    eval_cmd->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();

    CLI::App* infer = app.add_subcommand("infer", "Print probability + label per input");
    infer->add_option("--model", opt.model_path, "Full-model checkpoint (.fg1)");
    infer->add_option("--student", opt.student_path, "Student checkpoint (.fgd1)");
    infer->add_option("--in", opt.infer_in, "Batch input JSONL ({n[, c, r]} per line)");
    infer->add_option("--news", opt.infer_news, "One-shot news text");
    infer->add_option("--topic-content", opt.infer_content, "One-shot topic-content text");
    infer->add_option("--rationale", opt.infer_rationale, "One-shot rationale text");

    CLI::App* distill = app.add_subcommand("distill", "Train the news-only student");
    distill->add_option("--teacher", opt.teacher_path, "Teacher checkpoint (.fg1)")->required();
    distill->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    distill->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();
    distill->add_option("--lambda", opt.lambda, "Feature-matching weight")
        ->each([&](const std::string&) { opt.lambda_set = true; });
    distill->add_flag("--train-encoder", opt.train_encoder,
                      "Unfreeze the copied news encoder")
        ->each([&](const std::string&) { opt.train_encoder_set = true; });
    distill->add_option("--simulator-layers", opt.simulator_layers,
                        "Self-attention blocks in the feature simulator")
        ->each([&](const std::string&) { opt.simulator_layers_set = true; });
    add_config(distill);
    add_train_overrides(distill);

    CLI::App* ablate = app.add_subcommand("ablate", "Train one ablation variant");
    ablate->add_option("--variant", opt.variant_name_flag,
                       "full, news_only, topic_content_only, commonsense_only, wo_news, "
                       "wo_topic_content, wo_commonsense, wo_llm_usability")
        ->required();
    ablate->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    ablate->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();
    add_config(ablate);
    add_train_overrides(ablate);
    add_dims_overrides(ablate);

    CLI::App* grid = app.add_subcommand("grid-search", "Alpha x beta sensitivity surface");
    grid->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    grid->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();
    grid->add_option("--alpha-grid", opt.alpha_grid, "fine (0..1 by 0.1) or coarse (0..10 by 1)");
    grid->add_option("--beta-grid", opt.beta_grid, "fine (0..1 by 0.1) or coarse (0..10 by 1)");
    add_config(grid);
    add_train_overrides(grid);
    add_dims_overrides(grid);

    CLI::App* lambda_cmd = app.add_subcommand("lambda-sweep", "Distillation weight sweep");
    lambda_cmd->add_option("--teacher", opt.teacher_path, "Teacher checkpoint (.fg1)")->required();
    lambda_cmd->add_option("--data", opt.data_path, "Dataset JSONL")->required();
    lambda_cmd->add_option("--out-dir", opt.out_dir, "Artifact directory")->required();
    lambda_cmd->add_option("--grid", opt.lambda_grid, "fine or coarse (default coarse)");
    add_config(lambda_cmd);
    add_train_overrides(lambda_cmd);

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of model gradients");
    gradcheck_cmd->add_option("--seeds", opt.gc_seeds, "Number of random seeds to check");
    gradcheck_cmd->add_option("--tol", opt.gc_tol, "Relative error tolerance");
    add_config(gradcheck_cmd);
    add_dims_overrides(gradcheck_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(synth)) return cmd_synth(opt);
        if (app.got_subcommand(prep)) return cmd_prepare_data(opt);
        if (app.got_subcommand(train_cmd)) return cmd_train(opt);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(opt);
        if (app.got_subcommand(infer)) return cmd_infer(opt);
        if (app.got_subcommand(distill)) return cmd_distill(opt);
        if (app.got_subcommand(ablate)) return cmd_ablate(opt);
        if (app.got_subcommand(grid)) return cmd_grid_search(opt);
        if (app.got_subcommand(lambda_cmd)) return cmd_lambda_sweep(opt);
        if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(opt);
    } catch (const ConfigError& e) {
        log_line(std::string("error: ") + e.what());
        return 2;
    } catch (const std::exception& e) {
        log_line(std::string("error: ") + e.what());
        return 1;
    }
    return 0;
}
