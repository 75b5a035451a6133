#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lingbridge {

class LanguageRegistry;

/// A registry-validated, lowercase language tag such as "en" or "zh".
/// Only the registry mints these, so every instance names a known language.
class LanguageCode {
public:
    const std::string& value() const noexcept { return code_; }
    std::string_view view() const noexcept { return code_; }

    friend bool operator==(const LanguageCode&, const LanguageCode&) = default;
    friend auto operator<=>(const LanguageCode&, const LanguageCode&) = default;

private:
    friend class LanguageRegistry;
    explicit LanguageCode(std::string code) : code_(std::move(code)) {}
    std::string code_;
};

struct LanguageEntry {
    std::string code;
    std::string name;
    std::vector<std::string> aliases;
};

class LanguageRegistry {
public:
    static LanguageRegistry from_json(const nlohmann::json& doc);
    static LanguageRegistry load(const std::filesystem::path& path);

    /// en, zh plus a handful of major languages.
    static LanguageRegistry builtin();

    /// Process-wide registry used when parsing serialized records. Install once at startup.
    static const LanguageRegistry& active();
    static void install(LanguageRegistry registry);

    /// Resolves a code, English name, native name or listed alias. Throws UnknownLanguage.
    LanguageCode normalize(std::string_view raw) const;
    std::optional<LanguageCode> try_normalize(std::string_view raw) const;

    /// The language whose name is mentioned last in `text`. Bare codes are not
    /// scanned because two-letter tags collide with ordinary words.
    std::optional<LanguageCode> last_mention(std::string_view text) const;

    bool contains(std::string_view code) const { return entries_.count(std::string(code)) != 0; }
    const LanguageEntry& entry(const LanguageCode& code) const { return entries_.at(code.value()); }
    std::vector<LanguageCode> codes() const;

    nlohmann::json to_json() const;

private:
    void add(LanguageEntry entry);

    std::map<std::string, LanguageEntry> entries_;
    std::map<std::string, std::string> alias_to_code_;
};

/// Shorthand for LanguageRegistry::active().normalize().
LanguageCode lang(std::string_view raw);

enum class KnowledgeLabel { ch_specific, common, en_specific };

std::string_view to_string(KnowledgeLabel label);
KnowledgeLabel parse_knowledge_label(std::string_view name);
std::optional<KnowledgeLabel> try_parse_knowledge_label(std::string_view name);

struct Query {
    std::string id;
    std::string text;
    LanguageCode source_lang;
    std::optional<std::string> gold_answer;
    std::optional<std::string> dataset;

    /// Validating factory: text must be non-empty after trimming.
    static Query make(std::string id, std::string text, LanguageCode source_lang,
                      std::optional<std::string> gold_answer = std::nullopt,
                      std::optional<std::string> dataset = std::nullopt);
};

enum class AnswerProvenance { direct, target_lang_raw, replaced, integrated };

std::string_view to_string(AnswerProvenance p);

struct Answer {
    std::string text;
    LanguageCode lang;
    AnswerProvenance provenance;
};

enum class BackendKind { llm, translator, judge };

std::string_view to_string(BackendKind kind);

struct CallRecord {
    BackendKind kind = BackendKind::llm;
    std::string purpose;
    double latency_ms = 0.0;
    std::optional<std::int64_t> prompt_tokens;
    std::optional<std::int64_t> completion_tokens;
    bool cached = false;
};

using CallLedger = std::vector<CallRecord>;

struct PipelineTrace {
    std::string query_id;
    int detector_verdict = 0;
    std::optional<double> detector_score;
    std::optional<LanguageCode> selected_lang;
    bool selection_parse_failed = false;
    std::optional<std::string> selection_reply;
    std::optional<std::string> translated_query;
    std::optional<Answer> answer_target;
    std::optional<Answer> answer_original;
    std::optional<Answer> answer_final;
    /// Set when a third-language target answer was bridged into the integration slot language.
    bool integration_bridged = false;
    CallLedger call_ledger;
    std::optional<std::string> error;
    double wall_ms = 0.0;

    bool ok() const { return !error.has_value() && answer_final.has_value(); }
};

/// Structural invariant check of a completed trace; empty result means valid.
std::vector<std::string> trace_violations(const PipelineTrace& trace, const Query& query);

std::string trim(std::string_view s);
std::string ascii_lower(std::string_view s);

void to_json(nlohmann::json& j, const LanguageCode& code);
void to_json(nlohmann::json& j, const KnowledgeLabel& label);
void from_json(const nlohmann::json& j, KnowledgeLabel& label);
void to_json(nlohmann::json& j, const Query& q);
Query query_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const Answer& a);
Answer answer_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const CallRecord& c);
CallRecord call_record_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const PipelineTrace& t);
PipelineTrace trace_from_json(const nlohmann::json& j);

}  // namespace lingbridge
