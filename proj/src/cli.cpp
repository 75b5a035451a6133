#include "lingbridge/cli.hpp"

#include "lingbridge/backends.hpp"
#include "lingbridge/datasets.hpp"
#include "lingbridge/detector.hpp"
#include "lingbridge/error.hpp"
#include "lingbridge/evaluation.hpp"
#include "lingbridge/hashing.hpp"
#include "lingbridge/pipeline.hpp"
#include "lingbridge/simlab.hpp"
#include "lingbridge/templates.hpp"

#include "CLI11.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

namespace lingbridge {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Settings

const std::vector<std::string>& Settings::known_keys() {
    static const std::vector<std::string> keys = {
        "backend.kind",         "backend.endpoint",   "backend.auth_env",
        "backend.model_id",     "backend.timeout_ms", "backend.max_retries",
        "backend.requests_per_second",                "backend.script",
        "translator.kind",      "translator.endpoint", "translator.auth_env",
        "translator.timeout_ms", "translator.max_retries", "translator.requests_per_second",
        "judge.kind",           "judge.endpoint",     "judge.auth_env",
        "judge.model_id",       "judge.max_ambiguous_rate",
        "pipeline.mode",        "pipeline.languages", "pipeline.parallelism",
        "pipeline.integration_key",                   "pipeline.max_tokens",
        "paths.templates",      "paths.cache_dir",    "paths.languages",
        "run.seed",             "run.log_level"};
    return keys;
}

namespace {

bool is_known(const std::string& key) {
    const auto& keys = Settings::known_keys();
    return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::string env_name(const std::string& key) {
    std::string out = "LINGBRIDGE_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

void Settings::load_ini(const fs::path& path) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("config file: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw Error(ErrorCode::InvalidConfig, "config key '" + section + "' is outside a section");
        for (const auto& [key, value] : body) set(section + "." + key, value.get_value<std::string>());
    }
}

void Settings::apply_env() {
    for (const auto& key : known_keys()) {
        if (const char* v = std::getenv(env_name(key).c_str()); v && *v) values_[key] = v;
    }
}

void Settings::set(const std::string& key, std::string value) {
    if (!is_known(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    values_[key] = std::move(value);
}

std::optional<std::string> Settings::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Settings::get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

long long Settings::get_int(const std::string& key, long long fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const auto n = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return n;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidConfig, key + " must be an integer, got '" + *v + "'");
    }
}

double Settings::get_double(const std::string& key, double fallback) const {
    const auto v = get(key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const auto d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
        return d;
    } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidConfig, key + " must be a number, got '" + *v + "'");
    }
}

json Settings::snapshot() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

// ---------------------------------------------------------------------------
// Manifest

std::string manifest_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
        try {
            t = static_cast<std::time_t>(std::stoll(sde));
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "SOURCE_DATE_EPOCH is not an integer");
        }
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json RunManifest::to_json() const {
    json j{{"command", command},
           {"config", config},
           {"templates", template_hashes},
           {"models", model_hashes},
           {"backends", backends},
           {"outputs", outputs},
           {"timestamp", timestamp}};
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
}

void RunManifest::write(const fs::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

// ---------------------------------------------------------------------------

namespace {

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::UnknownLanguage:
        case ErrorCode::TemplateError:
        case ErrorCode::AuthFailure:
            return kExitConfig;
        case ErrorCode::SchemaViolation:
        case ErrorCode::InvalidInput:
        case ErrorCode::EmptyCorpus:
        case ErrorCode::DegenerateCorpus:
        case ErrorCode::EmptyTestSet:
        case ErrorCode::EmptyText:
        case ErrorCode::MismatchedQuerySets:
        case ErrorCode::UnmappedLanguage:
        case ErrorCode::AmbiguousVerdict:
        case ErrorCode::MissingBinding:
            return kExitValidation;
        default:
            return kExitRuntime;
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto t = trim(item);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Shared flags; each maps onto a settings key.
struct CommonFlags {
    std::string config;
    std::map<std::string, std::string> overrides;  // settings key -> value
    std::vector<std::string> detectors;            // lang=path
};

struct Context {
    Settings settings;
    std::ostream* out = nullptr;
    std::shared_ptr<spdlog::logger> log;
};

std::shared_ptr<const TemplateSet> load_templates(const Settings& s) {
    const auto dir = s.get("paths.templates") ? fs::path(*s.get("paths.templates")) : TemplateSet::default_dir();
    return std::make_shared<const TemplateSet>(TemplateSet::load_dir(dir));
}

std::shared_ptr<ResponseCache> make_cache(const Settings& s, const char* sub) {
    const auto dir = s.get("paths.cache_dir");
    if (!dir) return nullptr;
    return std::make_shared<ResponseCache>(fs::path(*dir) / sub);
}

std::string section_value(const Settings& s, const std::string& section, const std::string& key,
                          const std::string& fallback) {
    if (auto v = s.get(section + "." + key)) return *v;
    if (section == "judge") return s.get_or("backend." + key, fallback);
    return fallback;
}

BackendConfig backend_config(const Settings& s, const std::string& section) {
    BackendConfig c;
    c.endpoint = section_value(s, section, "endpoint", "");
    c.auth_env = section_value(s, section, "auth_env", "");
    c.timeout_ms = static_cast<int>(std::stoll(section_value(s, section, "timeout_ms", "30000")));
    c.max_retries = static_cast<int>(std::stoll(section_value(s, section, "max_retries", "3")));
    c.requests_per_second = std::stod(section_value(s, section, "requests_per_second", "0"));
    c.cache_path = s.get_or("paths.cache_dir", "");
    if (c.timeout_ms <= 0 || c.max_retries < 0 || c.requests_per_second < 0) {
        throw Error(ErrorCode::InvalidConfig, section + ": timeout, retries and rate must be non-negative");
    }
    return c;
}

std::shared_ptr<ChatClient> make_chat(const Settings& s, const std::string& section, std::string* identity) {
    const auto kind = section_value(s, section, "kind", "openai");
    std::shared_ptr<ChatBackend> backend;
    BackendConfig cfg;
    try {
        cfg = backend_config(s, section);
    } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::InvalidConfig, section + ": numeric setting is malformed");
    }
    if (kind == "openai") {
        if (cfg.endpoint.empty()) throw Error(ErrorCode::InvalidConfig, section + ".endpoint is required for openai");
        backend = std::make_shared<HttpChatBackend>(cfg, section_value(s, section, "model_id", ""));
    } else if (kind == "scripted") {
        const auto script = s.get("backend.script");
        if (!script) throw Error(ErrorCode::InvalidConfig, "backend.script is required for the scripted backend");
        backend = std::make_shared<ScriptedBackend>(Script::load(*script), "scripted:" + fs::path(*script).filename().string());
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown backend kind '" + kind + "'");
    }
    if (identity) *identity = backend->identity();
    RetryPolicy retry;
    retry.max_retries = cfg.max_retries;
    std::shared_ptr<RateLimiter> limiter;
    auto clock = std::make_shared<SteadyClock>();
    if (cfg.requests_per_second > 0) limiter = std::make_shared<RateLimiter>(cfg.requests_per_second, clock);
    return std::make_shared<ChatClient>(backend, retry, make_cache(s, "chat"), limiter, clock);
}

std::shared_ptr<TranslationClient> make_translator(const Settings& s, std::string* identity) {
    const auto kind = s.get_or("translator.kind", "mock");
    std::shared_ptr<Translator> translator;
    BackendConfig cfg;
    try {
        cfg = backend_config(s, "translator");
    } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::InvalidConfig, "translator: numeric setting is malformed");
    }
    if (kind == "mock") {
        translator = std::make_shared<MockTranslator>();
    } else if (kind == "http") {
        if (cfg.endpoint.empty()) throw Error(ErrorCode::InvalidConfig, "translator.endpoint is required for http");
        translator = std::make_shared<HttpTranslator>(cfg);
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown translator kind '" + kind + "'");
    }
    if (identity) *identity = translator->identity();
    RetryPolicy retry;
    retry.max_retries = cfg.max_retries;
    auto clock = std::make_shared<SteadyClock>();
    std::shared_ptr<RateLimiter> limiter;
    if (cfg.requests_per_second > 0) limiter = std::make_shared<RateLimiter>(cfg.requests_per_second, clock);
    return std::make_shared<TranslationClient>(translator, retry, make_cache(s, "translate"), limiter, clock);
}

PipelineConfig pipeline_config(const Settings& s) {
    PipelineConfig c;
    c.mode = parse_answer_mode(s.get_or("pipeline.mode", "replace"));
    if (auto langs = s.get("pipeline.languages")) {
        c.languages.clear();
        for (const auto& l : split_list(*langs)) c.languages.push_back(lang(l));
    }
    const auto par = s.get_int("pipeline.parallelism", 1);
    if (par < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
    c.parallelism = static_cast<std::size_t>(par);
    c.integration_key = parse_integration_key(s.get_or("pipeline.integration_key", "output_language"));
    c.max_tokens = static_cast<int>(s.get_int("pipeline.max_tokens", kDefaultMaxTokens));
    c.model_id = s.get_or("backend.model_id", "");
    c.validate();
    return c;
}

std::vector<Query> load_queries(const fs::path& path) {
    IngestOptions opts;
    opts.require_label = false;
    std::vector<Query> out;
    for (auto& r : ingest(path, opts).records) out.push_back(std::move(r.query));
    return out;
}

void write_traces(const fs::path& path, const std::vector<PipelineTrace>& traces) {
    std::string out;
    for (const auto& t : traces) {
        out += json(t).dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<PipelineTrace> read_traces(const fs::path& path) {
    std::vector<PipelineTrace> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            out.push_back(trace_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw Error(ErrorCode::SchemaViolation, path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::shared_ptr<ModelDetector> load_detectors(const std::vector<std::string>& specs, RunManifest& manifest) {
    auto det = std::make_shared<ModelDetector>();
    for (const auto& spec : specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "--detector expects lang=path, got " + spec);
        const fs::path path = spec.substr(eq + 1);
        auto model = std::make_shared<DetectorModel>(DetectorModel::load(path));
        if (model->language() != lang(spec.substr(0, eq))) {
            throw Error(ErrorCode::InvalidConfig, path.string() + " is a " + model->language().value() + " model");
        }
        manifest.model_hashes[path.filename().string()] = sha256_file(path.string());
        det->add(std::move(model));
    }
    return det;
}

fs::path manifest_path(const fs::path& output) {
    auto p = output;
    p += ".manifest.json";
    return p;
}

RunManifest start_manifest(const Context& ctx, const std::string& command) {
    RunManifest m;
    m.command = command;
    m.config = ctx.settings.snapshot();
    m.timestamp = manifest_timestamp();
    if (auto seed = ctx.settings.get("run.seed")) m.seed = static_cast<std::uint64_t>(ctx.settings.get_int("run.seed", 0));
    return m;
}

std::unique_ptr<Judge> make_judge(const Context& ctx, RunManifest& manifest) {
    const auto kind = ctx.settings.get_or("judge.kind", "llm");
    if (kind == "exact") {
        manifest.backends["judge"] = "exact-match";
        return std::make_unique<ExactMatchJudge>();
    }
    if (kind != "llm") throw Error(ErrorCode::InvalidConfig, "judge kind must be llm or exact");
    std::string id;
    auto client = make_chat(ctx.settings, "judge", &id);
    manifest.backends["judge"] = id;
    auto templates = load_templates(ctx.settings);
    manifest.template_hashes = templates->hashes();
    return std::make_unique<LlmJudge>(client, templates, section_value(ctx.settings, "judge", "model_id", ""));
}

int check_ambiguity(const Context& ctx, const EvalReport& report, std::size_t items) {
    const double bound = ctx.settings.get_double("judge.max_ambiguous_rate", 0.05);
    if (items == 0) return kExitOk;
    const double rate = static_cast<double>(std::max(report.ambiguous_original, report.ambiguous_improved)) /
                        static_cast<double>(items);
    if (rate > bound) {
        ctx.log->error("ambiguous judge verdict rate {:.4f} exceeds bound {:.4f}", rate, bound);
        return kExitValidation;
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
    std::string lang = "en";
    std::string corpus;
    std::string out;
    std::string metrics;
    double test_fraction = 0.2;
    int epochs = 12;
    double lr = 0.5;
    double threshold = 0.5;
};

int cmd_detector_train(Context& ctx, const TrainArgs& a) {
    const auto source = lang(a.lang);
    const auto seed = static_cast<std::uint64_t>(ctx.settings.get_int("run.seed", 7));
    const auto corpus = ingest(a.corpus);
    std::vector<std::pair<std::string, KnowledgeLabel>> rows;
    std::vector<int> binary;
    for (const auto& r : corpus.records) {
        if (r.query.source_lang != source) continue;
        rows.emplace_back(r.query.text, *r.label);
        binary.push_back(label_to_binary(*r.label, source));
    }
    if (rows.empty()) throw Error(ErrorCode::EmptyCorpus, "no " + a.lang + " records in " + a.corpus);
    if (!(a.test_fraction >= 0.0 && a.test_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidConfig, "test fraction must be in [0, 1)");
    }
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    if (a.test_fraction > 0.0) {
        std::tie(train_idx, test_idx) = stratified_split(binary, a.test_fraction, seed);
    } else {
        for (std::size_t i = 0; i < rows.size(); ++i) train_idx.push_back(i);
    }
    std::vector<std::pair<std::string, KnowledgeLabel>> train_rows;
    for (auto i : train_idx) train_rows.push_back(rows[i]);
    TrainingConfig tc;
    tc.seed = seed;
    tc.epochs = a.epochs;
    tc.learning_rate = a.lr;
    tc.threshold = a.threshold;
    ctx.log->info("training {} detector on {} records (holding out {})", a.lang, train_rows.size(), test_idx.size());
    const auto model = train(train_rows, source, tc);
    model.save(a.out);

    json result{{"lang", a.lang}, {"train_examples", train_rows.size()}, {"test_examples", test_idx.size()}};
    if (!test_idx.empty()) {
        std::vector<std::pair<std::string, int>> test;
        for (auto i : test_idx) test.emplace_back(rows[i].first, binary[i]);
        result["metrics"] = evaluate(model, test).to_json();
    }
    *ctx.out << result.dump(2) << "\n";
    auto manifest = start_manifest(ctx, "detector-train");
    manifest.seed = seed;
    manifest.config["detector"] = {{"lang", a.lang},       {"test_fraction", a.test_fraction}, {"epochs", a.epochs},
                                   {"learning_rate", a.lr}, {"threshold", a.threshold}};
    manifest.model_hashes[fs::path(a.out).filename().string()] = sha256_file(a.out);
    manifest.model_hashes["corpus:" + fs::path(a.corpus).filename().string()] = sha256_file(a.corpus);
    manifest.outputs = {fs::path(a.out).filename().string()};
    if (!a.metrics.empty()) {
        write_file_atomic(a.metrics, result.dump(2) + "\n");
        manifest.outputs.push_back(fs::path(a.metrics).filename().string());
    }
    manifest.write(manifest_path(a.out));
    return kExitOk;
}

int cmd_detector_eval(Context& ctx, const std::string& model_path, const std::string& corpus_path) {
    const auto model = DetectorModel::load(model_path);
    std::vector<std::pair<std::string, int>> test;
    for (const auto& r : ingest(corpus_path).records) {
        if (r.query.source_lang != model.language()) continue;
        test.emplace_back(r.query.text, label_to_binary(*r.label, model.language()));
    }
    const auto metrics = evaluate(model, test);
    *ctx.out << metrics.to_json().dump(2) << "\n";
    return kExitOk;
}

int cmd_pipeline_run(Context& ctx, const CommonFlags& flags, const std::string& input, const std::string& output) {
    auto manifest = start_manifest(ctx, "pipeline-run");
    auto config = pipeline_config(ctx.settings);
    if (auto ablate = ctx.settings.get("pipeline.ablate")) (void)ablate;
    for (const auto& a : split_list(flags.overrides.count("ablate") ? flags.overrides.at("ablate") : "")) {
        if (a == "no_detector") {
            config.disable_detector = true;
        } else if (a == "no_selection") {
            config.disable_selection = true;
        } else if (a == "direct") {
            config.direct_only = true;
        } else {
            throw Error(ErrorCode::InvalidConfig, "unknown ablation '" + a + "'");
        }
    }
    config.validate();
    std::shared_ptr<const QueryDetector> detector;
    if (!config.disable_detector && !config.direct_only) {
        if (flags.detectors.empty()) throw Error(ErrorCode::InvalidConfig, "--detector lang=path is required");
        detector = load_detectors(flags.detectors, manifest);
    }
    std::string chat_id;
    std::string tr_id;
    auto chat = make_chat(ctx.settings, "backend", &chat_id);
    auto translator = make_translator(ctx.settings, &tr_id);
    auto templates = load_templates(ctx.settings);
    const Pipeline pipeline(config, detector, chat, translator, templates);
    const auto queries = load_queries(input);
    ctx.log->info("running {} queries ({} mode, parallelism {})", queries.size(), to_string(config.mode),
                  config.parallelism);
    const auto batch = pipeline.run_batch(queries);
    write_traces(output, batch.traces);
    for (const auto& t : batch.traces) {
        if (t.error) ctx.log->warn("query {} failed: {}", t.query_id, *t.error);
    }
    *ctx.out << batch.cost.to_json().dump(2) << "\n";

    manifest.config["pipeline"] = config.to_json();
    manifest.template_hashes = templates->hashes();
    manifest.backends = {{"chat", chat_id}, {"translator", tr_id}};
    if (detector) manifest.backends["detector"] = detector->identity();
    manifest.outputs = {fs::path(output).filename().string()};
    manifest.write(manifest_path(output));
    return batch.cost.failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_evaluate(Context& ctx, const std::string& input, const std::string& original, const std::string& improved,
                 const std::string& output) {
    auto manifest = start_manifest(ctx, "evaluate");
    const auto queries = load_queries(input);
    const auto judge = make_judge(ctx, manifest);
    const auto par = static_cast<std::size_t>(std::max<long long>(1, ctx.settings.get_int("pipeline.parallelism", 1)));
    const auto a = read_traces(original);
    const auto b = read_traces(improved);
    auto report = compute_report(judge_traces(queries, a, *judge, par), judge_traces(queries, b, *judge, par));
    report.cost_original = summarize_cost(a);
    report.cost_improved = summarize_cost(b);
    *ctx.out << report.to_table();
    if (!output.empty()) {
        write_file_atomic(output, report.to_json().dump(2) + "\n");
        manifest.outputs = {fs::path(output).filename().string()};
        manifest.write(manifest_path(output));
    }
    return check_ambiguity(ctx, report, queries.size());
}

int cmd_ablate(Context& ctx, const CommonFlags& flags, const std::string& input, const std::string& output) {
    auto manifest = start_manifest(ctx, "ablate");
    auto config = pipeline_config(ctx.settings);
    std::vector<Condition> suite;
    const auto spec = flags.overrides.count("ablate") ? flags.overrides.at("ablate") : "full,no_detector,no_selection";
    for (const auto& c : split_list(spec)) suite.push_back(parse_condition(c));
    const bool needs_detector = std::any_of(suite.begin(), suite.end(), [](Condition c) {
        return c == Condition::full || c == Condition::no_selection;
    });
    std::shared_ptr<const QueryDetector> detector;
    if (needs_detector) {
        if (flags.detectors.empty()) throw Error(ErrorCode::InvalidConfig, "--detector lang=path is required");
        detector = load_detectors(flags.detectors, manifest);
    }
    std::string chat_id;
    std::string tr_id;
    auto chat = make_chat(ctx.settings, "backend", &chat_id);
    auto translator = make_translator(ctx.settings, &tr_id);
    auto templates = load_templates(ctx.settings);
    // Each condition derives its own switches; the base only has to be constructible.
    auto base = config;
    if (!needs_detector) base.disable_detector = true;
    const Pipeline pipeline(base, detector, chat, translator, templates);
    const auto judge = make_judge(ctx, manifest);
    const auto result = run_ablation(suite, load_queries(input), pipeline, *judge);
    *ctx.out << result.to_table();
    manifest.config["pipeline"] = config.to_json();
    manifest.template_hashes = templates->hashes();
    manifest.backends["chat"] = chat_id;
    manifest.backends["translator"] = tr_id;
    if (!output.empty()) {
        write_file_atomic(output, result.to_json().dump(2) + "\n");
        manifest.outputs = {fs::path(output).filename().string()};
        manifest.write(manifest_path(output));
    }
    int code = kExitOk;
    for (const auto& [c, report] : result.reports) {
        code = std::max(code, check_ambiguity(ctx, report, result.baseline.items.size()));
    }
    return code;
}

struct DatagenArgs {
    std::string topics = "all";
    std::string out;
    std::string lang = "zh";
    std::string augment_input;
    std::string augment_target;
};

int cmd_datagen(Context& ctx, const DatagenArgs& a) {
    auto manifest = start_manifest(ctx, "datagen");
    std::vector<LabeledRecord> records;
    std::size_t failures = 0;
    if (!a.augment_input.empty()) {
        if (a.augment_target.empty()) throw Error(ErrorCode::InvalidConfig, "--target is required with --augment");
        std::string tr_id;
        auto translator = make_translator(ctx.settings, &tr_id);
        manifest.backends["translator"] = tr_id;
        const auto par = static_cast<std::size_t>(std::max<long long>(1, ctx.settings.get_int("pipeline.parallelism", 1)));
        auto result = translate_augment(ingest(a.augment_input).records, lang(a.augment_target), *translator, par);
        for (const auto& f : result.failures) ctx.log->warn("translation of {} failed: {}", f.id, f.message);
        failures = result.failures.size();
        records = std::move(result.records);
        *ctx.out << json{{"translated", result.translated}, {"skipped", result.skipped}, {"failed", failures}}.dump()
                 << "\n";
    } else {
        GenerationConfig gc;
        gc.lang = a.lang;
        gc.model_id = ctx.settings.get_or("backend.model_id", "");
        const auto topics = a.topics == "all" ? default_topics() : split_list(a.topics);
        std::string chat_id;
        auto chat = make_chat(ctx.settings, "backend", &chat_id);
        auto templates = load_templates(ctx.settings);
        manifest.backends["chat"] = chat_id;
        manifest.template_hashes = templates->hashes();
        LabelCounts counts;
        for (const auto& topic : topics) {
            try {
                auto gen = generate_synthetic(topic, *chat, *templates, gc);
                if (gen.malformed > 0) ctx.log->warn("topic {}: {} malformed entries dropped", topic, gen.malformed);
                for (auto& r : gen.records) {
                    counts.add(r.label);
                    records.push_back(std::move(r));
                }
            } catch (const Error& e) {
                if (e.code() == ErrorCode::InvalidInput) throw;
                ++failures;
                ctx.log->warn("topic {} failed: {}", topic, e.what());
            }
        }
        *ctx.out << counts.to_json().dump() << "\n";
    }
    write_records(a.out, records);
    manifest.outputs = {fs::path(a.out).filename().string()};
    manifest.write(manifest_path(a.out));
    return failures == 0 ? kExitOk : kExitRuntime;
}

struct LabelArgs {
    std::string input;
    std::string out;
    std::string queue;
    int passes = 2;
    std::string merge_queue;
};

int cmd_label(Context& ctx, const LabelArgs& a) {
    auto manifest = start_manifest(ctx, "label");
    if (!a.merge_queue.empty()) {
        const auto agreed = ingest(a.input).records;
        const auto merged = merge_review(agreed, read_review_queue(a.merge_queue));
        write_records(a.out, merged.records);
        *ctx.out << json{{"records", merged.records.size()},
                         {"resolved", merged.resolved},
                         {"discarded", merged.discarded},
                         {"pending", merged.pending}}
                        .dump()
                 << "\n";
        manifest.outputs = {fs::path(a.out).filename().string()};
        manifest.write(manifest_path(a.out));
        return kExitOk;
    }
    if (a.queue.empty()) throw Error(ErrorCode::InvalidConfig, "--queue is required when labeling");
    IngestOptions opts;
    opts.require_label = false;
    const auto records = ingest(a.input, opts).records;
    std::string chat_id;
    auto chat = make_chat(ctx.settings, "backend", &chat_id);
    auto templates = load_templates(ctx.settings);
    LabelingConfig lc;
    lc.passes = a.passes;
    lc.model_id = ctx.settings.get_or("backend.model_id", "");
    lc.parallelism = static_cast<std::size_t>(std::max<long long>(1, ctx.settings.get_int("pipeline.parallelism", 1)));
    const auto result = llm_label(records, *chat, *templates, lc);
    write_records(a.out, result.agreed);
    write_review_queue(a.queue, result.queue);
    *ctx.out << json{{"input", records.size()}, {"agreed", result.agreed.size()}, {"queued", result.queue.size()}}.dump()
             << "\n";
    manifest.backends["chat"] = chat_id;
    manifest.template_hashes = templates->hashes();
    manifest.config["labeling"] = {{"passes", a.passes}, {"temperature", kLabelingTemperature}};
    manifest.outputs = {fs::path(a.out).filename().string(), fs::path(a.queue).filename().string()};
    manifest.write(manifest_path(a.out));
    return kExitOk;
}

struct SimArgs {
    std::size_t facts = 1000;
    std::string classes = "40,20,40";
    double noise = 0.0;
    std::string conditions = "direct,full";
    std::string third_lang = "ja";
    double overlap = 0.2;
    std::string out;
    std::string save_world;
    std::string world;
};

int cmd_simulate(Context& ctx, const SimArgs& a) {
    const auto seed = static_cast<std::uint64_t>(ctx.settings.get_int("run.seed", 7));
    std::shared_ptr<const SimWorld> world;
    if (!a.world.empty()) {
        world = SimWorld::load(a.world);
    } else {
        SimWorldConfig wc;
        std::vector<std::size_t> weights;
        for (const auto& w : split_list(a.classes)) {
            try {
                weights.push_back(static_cast<std::size_t>(std::stoul(w)));
            } catch (const std::exception&) {
                throw Error(ErrorCode::InvalidConfig, "--classes expects integers, got '" + w + "'");
            }
        }
        if (weights.size() != 3 && weights.size() != 4) {
            throw Error(ErrorCode::InvalidConfig, "--classes expects en,zh,common[,third] weights");
        }
        std::size_t sum = 0;
        for (auto w : weights) sum += w;
        if (sum == 0) throw Error(ErrorCode::InvalidConfig, "--classes weights sum to zero");
        std::vector<std::size_t> counts;
        std::size_t assigned = 0;
        for (auto w : weights) {
            counts.push_back(a.facts * w / sum);
            assigned += counts.back();
        }
        counts[2] += a.facts - assigned;
        wc.en_specific = counts[0];
        wc.zh_specific = counts[1];
        wc.common = counts[2];
        wc.third = weights.size() == 4 ? counts[3] : 0;
        wc.third_lang = a.third_lang;
        wc.noise = a.noise;
        wc.seed = seed;
        wc.overlap = a.overlap;
        world = SimWorld::build(wc);
    }
    if (!a.save_world.empty()) world->save(a.save_world);

    std::vector<Condition> conditions;
    for (const auto& c : split_list(a.conditions)) conditions.push_back(parse_condition(c));
    SimulationOptions opts;
    opts.mode = parse_answer_mode(ctx.settings.get_or("pipeline.mode", "replace"));
    opts.parallelism = static_cast<std::size_t>(std::max<long long>(1, ctx.settings.get_int("pipeline.parallelism", 1)));
    if (auto t = ctx.settings.get("paths.templates")) opts.template_dir = fs::path(*t);
    ctx.log->info("simulating {} facts under {} condition(s)", world->facts().size(), conditions.size());
    const auto result = simulate(*world, conditions, opts);
    *ctx.out << result.to_table();

    if (!a.out.empty()) {
        const fs::path dir = a.out;
        fs::create_directories(dir);
        write_file_atomic(dir / "report.json", result.to_json().dump(2) + "\n");
        write_file_atomic(dir / "report.txt", result.to_table());
        RunManifest m;
        m.command = "simulate";
        m.config = {{"world", world->config().to_json()},
                    {"conditions", a.conditions},
                    {"mode", std::string(to_string(opts.mode))},
                    {"settings", ctx.settings.snapshot()}};
        m.config["settings"].erase("pipeline.parallelism");
        m.template_hashes = TemplateSet::load_dir(opts.template_dir.value_or(TemplateSet::default_dir())).hashes();
        m.model_hashes["world"] = world->sha256();
        m.seed = world->config().seed;
        m.backends = {{"chat", "simlab-scripted"}, {"translator", "mock"}, {"detector", "simlab-oracle-detector"},
                      {"judge", "exact-match"}};
        m.outputs = {"report.json", "report.txt"};
        m.timestamp = manifest_timestamp();
        m.write(dir / "manifest.json");
    }
    if (!result.matches_oracle()) {
        for (const auto& c : result.conditions) {
            for (const auto& mm : c.mismatches) ctx.log->error("{}: {}", to_string(c.condition), mm);
        }
        return kExitValidation;
    }
    return kExitOk;
}

std::shared_ptr<spdlog::logger> make_logger(const std::string& level) {
    auto log = spdlog::get("lingbridge");
    if (!log) {
        log = spdlog::stderr_color_mt("lingbridge");
        log->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%^%l%$] %v");
    }
    log->set_level(spdlog::level::from_str(level));
    return log;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out) {
    CLI::App app{"Cross-lingual answer routing: detector training, pipeline runs and evaluation", "lingbridge"};
    app.require_subcommand(1);
    app.fallthrough();

    CommonFlags flags;
    std::map<std::string, std::string> flag_values;
    app.add_option("--config", flags.config, "INI config file");
    const std::vector<std::pair<std::string, std::string>> mapped = {
        {"--backend", "backend.kind"},         {"--model-id", "backend.model_id"},
        {"--script", "backend.script"},        {"--translator", "translator.kind"},
        {"--judge", "judge.kind"},             {"--mode", "pipeline.mode"},
        {"--parallelism", "pipeline.parallelism"}, {"--seed", "run.seed"},
        {"--cache-dir", "paths.cache_dir"},    {"--templates", "paths.templates"},
        {"--languages-file", "paths.languages"}, {"--log-level", "run.log_level"}};
    for (const auto& [flag, key] : mapped) app.add_option(flag, flag_values[key], "overrides " + key);
    std::string ablate;
    app.add_option("--ablate", ablate, "ablations (no_detector,no_selection) or ablation suite");
    app.add_option("--detector", flags.detectors, "detector model as lang=path (repeatable)");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("detector-train", "train a low-resource knowledge detector");
    train_cmd->add_option("--lang", train_args.lang, "source language")->required();
    train_cmd->add_option("--corpus", train_args.corpus, "labeled JSONL corpus")->required();
    train_cmd->add_option("--out", train_args.out, "model output path")->required();
    train_cmd->add_option("--metrics", train_args.metrics, "write held-out metrics JSON here");
    train_cmd->add_option("--test-fraction", train_args.test_fraction, "stratified held-out fraction");
    train_cmd->add_option("--epochs", train_args.epochs);
    train_cmd->add_option("--lr", train_args.lr);
    train_cmd->add_option("--threshold", train_args.threshold);

    std::string eval_model;
    std::string eval_corpus;
    auto* deval_cmd = app.add_subcommand("detector-eval", "evaluate a detector on a labeled corpus");
    deval_cmd->add_option("--model", eval_model)->required();
    deval_cmd->add_option("--corpus", eval_corpus)->required();

    std::string run_input;
    std::string run_output;
    auto* run_cmd = app.add_subcommand("pipeline-run", "answer queries through the routing pipeline");
    run_cmd->add_option("--input", run_input, "queries JSONL")->required();
    run_cmd->add_option("--out", run_output, "traces JSONL")->required();

    std::string ev_input;
    std::string ev_original;
    std::string ev_improved;
    std::string ev_out;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "judge two trace sets and report accuracy and gaps");
    evaluate_cmd->add_option("--input", ev_input, "queries JSONL with gold answers")->required();
    evaluate_cmd->add_option("--original", ev_original, "baseline traces")->required();
    evaluate_cmd->add_option("--improved", ev_improved, "improved traces")->required();
    evaluate_cmd->add_option("--out", ev_out, "report JSON");

    std::string ab_input;
    std::string ab_out;
    auto* ablate_cmd = app.add_subcommand("ablate", "run the direct baseline and an ablation suite");
    ablate_cmd->add_option("--input", ab_input, "queries JSONL with gold answers")->required();
    ablate_cmd->add_option("--out", ab_out, "report JSON");

    DatagenArgs gen_args;
    auto* datagen_cmd = app.add_subcommand("datagen", "generate labeled questions per topic, or translate a corpus");
    datagen_cmd->add_option("--topics", gen_args.topics, "comma-separated topics or 'all'");
    datagen_cmd->add_option("--out", gen_args.out, "records JSONL")->required();
    datagen_cmd->add_option("--lang", gen_args.lang, "language of generated questions");
    datagen_cmd->add_option("--augment", gen_args.augment_input, "translate this corpus instead of generating");
    datagen_cmd->add_option("--target", gen_args.augment_target, "translation target language");

    LabelArgs label_args;
    auto* label_cmd = app.add_subcommand("label", "two-pass LLM labeling with a review queue");
    label_cmd->add_option("--input", label_args.input, "records JSONL")->required();
    label_cmd->add_option("--out", label_args.out, "agreed (or merged) records JSONL")->required();
    label_cmd->add_option("--queue", label_args.queue, "review queue JSONL");
    label_cmd->add_option("--passes", label_args.passes, "labeling passes");
    label_cmd->add_option("--merge-queue", label_args.merge_queue, "merge a reviewed queue into --input");

    SimArgs sim_args;
    auto* sim_cmd = app.add_subcommand("simulate", "run conditions on a synthetic bilingual world");
    sim_cmd->add_option("--facts", sim_args.facts, "number of facts");
    sim_cmd->add_option("--classes", sim_args.classes, "en,zh,common[,third] weights");
    sim_cmd->add_option("--noise", sim_args.noise, "probability an in-domain answer is wrong");
    sim_cmd->add_option("--condition", sim_args.conditions, "direct,full,no_detector,no_selection");
    sim_cmd->add_option("--third-lang", sim_args.third_lang);
    sim_cmd->add_option("--overlap", sim_args.overlap, "shared-vocabulary probability");
    sim_cmd->add_option("--out", sim_args.out, "output directory");
    sim_cmd->add_option("--save-world", sim_args.save_world, "write the world to this directory");
    sim_cmd->add_option("--world", sim_args.world, "load a saved world instead of building one");

    std::vector<std::string> args(argv.rbegin(), argv.rend());
    if (!args.empty()) args.pop_back();  // program name
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    Context ctx;
    ctx.out = &out;
    std::shared_ptr<spdlog::logger> log;
    try {
        log = make_logger("info");
        if (!flags.config.empty()) ctx.settings.load_ini(flags.config);
        ctx.settings.apply_env();
        for (const auto& [key, value] : flag_values) {
            if (!value.empty()) ctx.settings.set(key, value);
        }
        log->set_level(spdlog::level::from_str(ctx.settings.get_or("run.log_level", "info")));
        ctx.log = log;
        if (auto langs = ctx.settings.get("paths.languages")) LanguageRegistry::install(LanguageRegistry::load(*langs));
        if (!ablate.empty()) flags.overrides["ablate"] = ablate;

        if (*train_cmd) return cmd_detector_train(ctx, train_args);
        if (*deval_cmd) return cmd_detector_eval(ctx, eval_model, eval_corpus);
        if (*run_cmd) return cmd_pipeline_run(ctx, flags, run_input, run_output);
        if (*evaluate_cmd) return cmd_evaluate(ctx, ev_input, ev_original, ev_improved, ev_out);
        if (*ablate_cmd) return cmd_ablate(ctx, flags, ab_input, ab_out);
        if (*datagen_cmd) return cmd_datagen(ctx, gen_args);
        if (*label_cmd) return cmd_label(ctx, label_args);
        if (*sim_cmd) return cmd_simulate(ctx, sim_args);
    } catch (const Error& e) {
        if (log) log->error("{}", e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        if (log) log->error("{}", e.what());
        return kExitRuntime;
    }
    std::cerr << app.help();
    return kExitUsage;
}

int cli_dispatch(const std::vector<std::string>& argv) { return cli_dispatch(argv, std::cout); }

}  // namespace lingbridge
