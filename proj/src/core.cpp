#include "lingbridge/core.hpp"

#include "lingbridge/error.hpp"

#include <algorithm>
#include <fstream>
#include <memory>
#include <mutex>

namespace lingbridge {

using json = nlohmann::json;

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidInput: return "InvalidInput";
        case ErrorCode::UnknownLanguage: return "UnknownLanguage";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::RateLimited: return "RateLimited";
        case ErrorCode::AuthFailure: return "AuthFailure";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::ScriptMiss: return "ScriptMiss";
        case ErrorCode::AmbiguousScript: return "AmbiguousScript";
        case ErrorCode::UnmappedLanguage: return "UnmappedLanguage";
        case ErrorCode::DegenerateCorpus: return "DegenerateCorpus";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::EmptyTestSet: return "EmptyTestSet";
        case ErrorCode::TemplateError: return "TemplateError";
        case ErrorCode::MissingBinding: return "MissingBinding";
        case ErrorCode::AmbiguousVerdict: return "AmbiguousVerdict";
        case ErrorCode::NoScoreFound: return "NoScoreFound";
        case ErrorCode::MismatchedQuerySets: return "MismatchedQuerySets";
        case ErrorCode::SchemaViolation: return "SchemaViolation";
        case ErrorCode::UnparseableGeneration: return "UnparseableGeneration";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

std::string trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    size_t b = 0;
    size_t e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

namespace {

// Lowercase, trim, collapse runs of ASCII whitespace into one space.
std::string alias_key(std::string_view raw) {
    std::string lowered = ascii_lower(trim(raw));
    std::string out;
    bool in_space = false;
    for (char c : lowered) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(c);
    }
    return out;
}

bool is_ascii_alnum(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

bool is_pure_ascii(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

constexpr const char* kBuiltinRegistry = R"json({
  "languages": [
    {"code": "en", "name": "English", "aliases": ["english", "英文", "英语", "anglais", "englisch"]},
    {"code": "zh", "name": "Chinese", "aliases": ["chinese", "中文", "汉语", "漢語", "普通话", "chinese (simplified)", "simplified chinese", "mandarin"]},
    {"code": "ja", "name": "Japanese", "aliases": ["japanese", "日语", "日文", "日本語"]},
    {"code": "ko", "name": "Korean", "aliases": ["korean", "韩语", "韩文", "한국어"]},
    {"code": "fr", "name": "French", "aliases": ["french", "法语", "法文", "français", "francais"]},
    {"code": "de", "name": "German", "aliases": ["german", "德语", "德文", "deutsch"]},
    {"code": "es", "name": "Spanish", "aliases": ["spanish", "西班牙语", "español", "espanol"]},
    {"code": "ru", "name": "Russian", "aliases": ["russian", "俄语", "русский"]},
    {"code": "ar", "name": "Arabic", "aliases": ["arabic", "阿拉伯语", "العربية"]},
    {"code": "tr", "name": "Turkish", "aliases": ["turkish", "土耳其语", "türkçe"]}
  ]
})json";

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::shared_ptr<const LanguageRegistry>& registry_slot() {
    static std::shared_ptr<const LanguageRegistry> slot =
        std::make_shared<const LanguageRegistry>(LanguageRegistry::builtin());
    return slot;
}

}  // namespace

void LanguageRegistry::add(LanguageEntry entry) {
    std::string code = alias_key(entry.code);
    if (code.empty()) throw Error(ErrorCode::InvalidConfig, "language registry entry with empty code");
    if (entries_.count(code)) throw Error(ErrorCode::InvalidConfig, "duplicate language code " + code);
    entry.code = code;
    auto bind = [&](const std::string& alias) {
        std::string key = alias_key(alias);
        if (key.empty()) return;
        auto [it, inserted] = alias_to_code_.emplace(key, code);
        if (!inserted && it->second != code) {
            throw Error(ErrorCode::InvalidConfig, "alias '" + alias + "' maps to both " + it->second + " and " + code);
        }
    };
    bind(code);
    bind(entry.name);
    for (const auto& a : entry.aliases) bind(a);
    entries_.emplace(code, std::move(entry));
}

LanguageRegistry LanguageRegistry::from_json(const json& doc) {
    LanguageRegistry reg;
    if (!doc.contains("languages") || !doc["languages"].is_array()) {
        throw Error(ErrorCode::InvalidConfig, "language registry needs a 'languages' array");
    }
    for (const auto& item : doc["languages"]) {
        LanguageEntry e;
        e.code = item.at("code").get<std::string>();
        e.name = item.value("name", e.code);
        e.aliases = item.value("aliases", std::vector<std::string>{});
        reg.add(std::move(e));
    }
    if (reg.entries_.empty()) throw Error(ErrorCode::InvalidConfig, "language registry is empty");
    return reg;
}

LanguageRegistry LanguageRegistry::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open language registry " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

LanguageRegistry LanguageRegistry::builtin() {
    return from_json(json::parse(kBuiltinRegistry));
}

const LanguageRegistry& LanguageRegistry::active() {
    std::lock_guard lock(registry_mutex());
    return *registry_slot();
}

void LanguageRegistry::install(LanguageRegistry registry) {
    std::lock_guard lock(registry_mutex());
    // Previously handed-out references stay valid for the process lifetime.
    static std::vector<std::shared_ptr<const LanguageRegistry>> retired;
    retired.push_back(registry_slot());
    registry_slot() = std::make_shared<const LanguageRegistry>(std::move(registry));
}

std::optional<LanguageCode> LanguageRegistry::try_normalize(std::string_view raw) const {
    auto it = alias_to_code_.find(alias_key(raw));
    if (it == alias_to_code_.end()) return std::nullopt;
    return LanguageCode(it->second);
}

LanguageCode LanguageRegistry::normalize(std::string_view raw) const {
    if (trim(raw).empty()) throw Error(ErrorCode::UnknownLanguage, "empty language name");
    if (auto code = try_normalize(raw)) return *code;
    throw Error(ErrorCode::UnknownLanguage, "no language matches '" + std::string(raw) + "'");
}

std::optional<LanguageCode> LanguageRegistry::last_mention(std::string_view text) const {
    const std::string hay = ascii_lower(text);
    size_t best_end = 0;
    size_t best_len = 0;
    const std::string* best_code = nullptr;
    for (const auto& [alias, code] : alias_to_code_) {
        if (alias == code && alias.size() <= 3 && is_pure_ascii(alias)) continue;
        const bool ascii_word = is_ascii_alnum(static_cast<unsigned char>(alias.front())) ||
                                is_ascii_alnum(static_cast<unsigned char>(alias.back()));
        size_t pos = hay.rfind(alias);
        while (pos != std::string::npos) {
            size_t end = pos + alias.size();
            bool bounded = true;
            if (ascii_word) {
                if (pos > 0 && is_ascii_alnum(static_cast<unsigned char>(hay[pos - 1]))) bounded = false;
                if (end < hay.size() && is_ascii_alnum(static_cast<unsigned char>(hay[end]))) bounded = false;
            }
            if (bounded) {
                if (end > best_end || (end == best_end && alias.size() > best_len)) {
                    best_end = end;
                    best_len = alias.size();
                    best_code = &code;
                }
                break;
            }
            if (pos == 0) break;
            pos = hay.rfind(alias, pos - 1);
        }
    }
    if (!best_code) return std::nullopt;
    return LanguageCode(*best_code);
}

std::vector<LanguageCode> LanguageRegistry::codes() const {
    std::vector<LanguageCode> out;
    for (const auto& [code, entry] : entries_) out.push_back(LanguageCode(code));
    return out;
}

json LanguageRegistry::to_json() const {
    json langs = json::array();
    for (const auto& [code, e] : entries_) {
        langs.push_back({{"code", e.code}, {"name", e.name}, {"aliases", e.aliases}});
    }
    return {{"languages", langs}};
}

LanguageCode lang(std::string_view raw) { return LanguageRegistry::active().normalize(raw); }

std::string_view to_string(KnowledgeLabel label) {
    switch (label) {
        case KnowledgeLabel::ch_specific: return "ch_specific";
        case KnowledgeLabel::common: return "common";
        case KnowledgeLabel::en_specific: return "en_specific";
    }
    return "common";
}

std::optional<KnowledgeLabel> try_parse_knowledge_label(std::string_view name) {
    if (name == "ch_specific") return KnowledgeLabel::ch_specific;
    if (name == "common") return KnowledgeLabel::common;
    if (name == "en_specific") return KnowledgeLabel::en_specific;
    return std::nullopt;
}

KnowledgeLabel parse_knowledge_label(std::string_view name) {
    if (auto l = try_parse_knowledge_label(name)) return *l;
    throw Error(ErrorCode::InvalidInput, "unknown knowledge label '" + std::string(name) + "'");
}

Query Query::make(std::string id, std::string text, LanguageCode source_lang,
                  std::optional<std::string> gold_answer, std::optional<std::string> dataset) {
    if (trim(text).empty()) throw Error(ErrorCode::InvalidInput, "query '" + id + "' has empty text");
    return Query{std::move(id), std::move(text), std::move(source_lang), std::move(gold_answer),
                 std::move(dataset)};
}

std::string_view to_string(AnswerProvenance p) {
    switch (p) {
        case AnswerProvenance::direct: return "direct";
        case AnswerProvenance::target_lang_raw: return "target_lang_raw";
        case AnswerProvenance::replaced: return "replaced";
        case AnswerProvenance::integrated: return "integrated";
    }
    return "direct";
}

namespace {

AnswerProvenance parse_provenance(std::string_view s) {
    if (s == "direct") return AnswerProvenance::direct;
    if (s == "target_lang_raw") return AnswerProvenance::target_lang_raw;
    if (s == "replaced") return AnswerProvenance::replaced;
    if (s == "integrated") return AnswerProvenance::integrated;
    throw Error(ErrorCode::InvalidInput, "unknown answer provenance '" + std::string(s) + "'");
}

BackendKind parse_backend_kind(std::string_view s) {
    if (s == "llm") return BackendKind::llm;
    if (s == "translator") return BackendKind::translator;
    if (s == "judge") return BackendKind::judge;
    throw Error(ErrorCode::InvalidInput, "unknown backend kind '" + std::string(s) + "'");
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

std::optional<std::string> get_optional_string(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<std::string>();
}

}  // namespace

std::string_view to_string(BackendKind kind) {
    switch (kind) {
        case BackendKind::llm: return "llm";
        case BackendKind::translator: return "translator";
        case BackendKind::judge: return "judge";
    }
    return "llm";
}

void to_json(json& j, const LanguageCode& code) { j = code.value(); }

void to_json(json& j, const KnowledgeLabel& label) { j = std::string(to_string(label)); }
void from_json(const json& j, KnowledgeLabel& label) { label = parse_knowledge_label(j.get<std::string>()); }

void to_json(json& j, const Query& q) {
    j = json{{"id", q.id}, {"text", q.text}, {"lang", q.source_lang.value()}};
    put_optional(j, "gold_answer", q.gold_answer);
    put_optional(j, "dataset", q.dataset);
}

Query query_from_json(const json& j) {
    return Query::make(j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                       lang(j.at("lang").get<std::string>()), get_optional_string(j, "gold_answer"),
                       get_optional_string(j, "dataset"));
}

void to_json(json& j, const Answer& a) {
    j = json{{"text", a.text}, {"lang", a.lang.value()}, {"provenance", std::string(to_string(a.provenance))}};
}

Answer answer_from_json(const json& j) {
    return Answer{j.at("text").get<std::string>(), lang(j.at("lang").get<std::string>()),
                  parse_provenance(j.at("provenance").get<std::string>())};
}

void to_json(json& j, const CallRecord& c) {
    j = json{{"kind", std::string(to_string(c.kind))},
             {"purpose", c.purpose},
             {"latency_ms", c.latency_ms},
             {"cached", c.cached}};
    put_optional(j, "prompt_tokens", c.prompt_tokens);
    put_optional(j, "completion_tokens", c.completion_tokens);
}

CallRecord call_record_from_json(const json& j) {
    CallRecord c;
    c.kind = parse_backend_kind(j.at("kind").get<std::string>());
    c.purpose = j.at("purpose").get<std::string>();
    c.latency_ms = j.value("latency_ms", 0.0);
    c.cached = j.value("cached", false);
    if (j.contains("prompt_tokens")) c.prompt_tokens = j["prompt_tokens"].get<std::int64_t>();
    if (j.contains("completion_tokens")) c.completion_tokens = j["completion_tokens"].get<std::int64_t>();
    return c;
}

void to_json(json& j, const PipelineTrace& t) {
    j = json{{"query_id", t.query_id}, {"detector_verdict", t.detector_verdict},
             {"selection_parse_failed", t.selection_parse_failed}, {"integration_bridged", t.integration_bridged}};
    put_optional(j, "detector_score", t.detector_score);
    if (t.selected_lang) j["selected_lang"] = t.selected_lang->value();
    put_optional(j, "selection_reply", t.selection_reply);
    put_optional(j, "translated_query", t.translated_query);
    if (t.answer_target) j["answer_target"] = *t.answer_target;
    if (t.answer_original) j["answer_original"] = *t.answer_original;
    if (t.answer_final) j["answer_final"] = *t.answer_final;
    j["call_ledger"] = t.call_ledger;
    put_optional(j, "error", t.error);
    j["wall_ms"] = t.wall_ms;
}

PipelineTrace trace_from_json(const json& j) {
    PipelineTrace t;
    t.query_id = j.at("query_id").get<std::string>();
    t.detector_verdict = j.at("detector_verdict").get<int>();
    t.selection_parse_failed = j.value("selection_parse_failed", false);
    t.integration_bridged = j.value("integration_bridged", false);
    if (j.contains("detector_score")) t.detector_score = j["detector_score"].get<double>();
    if (j.contains("selected_lang")) t.selected_lang = lang(j["selected_lang"].get<std::string>());
    t.selection_reply = get_optional_string(j, "selection_reply");
    t.translated_query = get_optional_string(j, "translated_query");
    if (j.contains("answer_target")) t.answer_target = answer_from_json(j["answer_target"]);
    if (j.contains("answer_original")) t.answer_original = answer_from_json(j["answer_original"]);
    if (j.contains("answer_final")) t.answer_final = answer_from_json(j["answer_final"]);
    for (const auto& c : j.value("call_ledger", json::array())) t.call_ledger.push_back(call_record_from_json(c));
    t.error = get_optional_string(j, "error");
    t.wall_ms = j.value("wall_ms", 0.0);
    return t;
}

std::vector<std::string> trace_violations(const PipelineTrace& trace, const Query& query) {
    std::vector<std::string> out;
    if (trace.query_id != query.id) out.push_back("query id mismatch");
    if (trace.detector_verdict != 0 && trace.detector_verdict != 1) out.push_back("verdict not in {0,1}");
    if (trace.error) return out;
    if (!trace.answer_final) {
        out.push_back("missing final answer");
        return out;
    }
    if (trace.answer_final->lang != query.source_lang) out.push_back("final answer not in source language");
    if (trace.detector_verdict == 0) {
        if (trace.selected_lang || trace.translated_query || trace.answer_target) {
            out.push_back("verdict 0 trace carries enhanced-path fields");
        }
        if (trace.call_ledger.size() != 1 || trace.call_ledger.front().kind != BackendKind::llm) {
            out.push_back("verdict 0 trace must hold exactly one llm call");
        }
        if (trace.answer_final->provenance != AnswerProvenance::direct) out.push_back("verdict 0 answer not direct");
    } else {
        if (!trace.selected_lang) out.push_back("verdict 1 trace missing selected language");
        if (!trace.translated_query) out.push_back("verdict 1 trace missing translated query");
        if (trace.answer_final->provenance == AnswerProvenance::direct ||
            trace.answer_final->provenance == AnswerProvenance::target_lang_raw) {
            out.push_back("verdict 1 final answer must be replaced or integrated");
        }
    }
    if (trace.answer_original && trace.answer_original->lang != query.source_lang) {
        out.push_back("original-language answer not in source language");
    }
    return out;
}

}  // namespace lingbridge
