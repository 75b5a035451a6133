#pragma once

#include "lingbridge/backends.hpp"
#include "lingbridge/core.hpp"
#include "lingbridge/detector.hpp"
#include "lingbridge/templates.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace lingbridge {

// ---------------------------------------------------------------------------
// Detectors as seen by the pipeline

class QueryDetector {
public:
    virtual ~QueryDetector() = default;
    virtual Prediction detect(const Query& query) const = 0;
    virtual std::string identity() const = 0;
};

/// One trained model per source language.
class ModelDetector final : public QueryDetector {
public:
    void add(std::shared_ptr<const DetectorModel> model);
    Prediction detect(const Query& query) const override;
    std::string identity() const override;
    bool has(const LanguageCode& language) const { return models_.count(language.value()) != 0; }

private:
    std::map<std::string, std::shared_ptr<const DetectorModel>> models_;
};

class FunctionDetector final : public QueryDetector {
public:
    using Fn = std::function<int(const Query&)>;
    FunctionDetector(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}
    Prediction detect(const Query& query) const override {
        const int v = fn_(query);
        return Prediction{v, v ? 1.0 : 0.0};
    }
    std::string identity() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------

enum class AnswerMode { replace, integrate };

std::string_view to_string(AnswerMode mode);
AnswerMode parse_answer_mode(std::string_view s);

/// Which integration template is used. The appendix captions are ambiguous; the
/// default keys on the original (output) language.
enum class IntegrationKey { output_language, selected_language };

std::string_view to_string(IntegrationKey key);
IntegrationKey parse_integration_key(std::string_view s);

struct PipelineConfig {
    AnswerMode mode = AnswerMode::replace;
    /// Languages the pipeline routes between; the first two define "opposite language".
    std::vector<LanguageCode> languages{lang("en"), lang("zh")};
    bool disable_detector = false;
    bool disable_selection = false;
    /// Baseline condition: every query goes straight to the model.
    bool direct_only = false;
    IntegrationKey integration_key = IntegrationKey::output_language;
    std::size_t parallelism = 1;
    std::string model_id;
    int max_tokens = kDefaultMaxTokens;

    void validate() const;
    nlohmann::json to_json() const;
};

struct SelectionResult {
    LanguageCode language;
    bool parse_failed = false;
    std::string reply;
};

struct CostSummary {
    std::size_t queries = 0;
    std::size_t failed = 0;
    std::size_t enhanced = 0;
    std::size_t total_calls = 0;
    std::size_t llm_calls = 0;
    std::size_t translator_calls = 0;
    std::size_t cached_calls = 0;
    double total_wall_ms = 0.0;

    double mean_calls_per_query() const;
    double mean_llm_calls_per_query() const;
    double mean_wall_ms_per_query() const;

    nlohmann::json to_json(bool include_timing = true) const;
};

CostSummary summarize_cost(const std::vector<PipelineTrace>& traces);

struct BatchResult {
    std::vector<PipelineTrace> traces;
    CostSummary cost;
};

/// Detect, select a target language, translate, answer, then replace or integrate.
class Pipeline {
public:
    Pipeline(PipelineConfig config, std::shared_ptr<const QueryDetector> detector, std::shared_ptr<ChatClient> llm,
             std::shared_ptr<TranslationClient> translator, std::shared_ptr<const TemplateSet> templates,
             const LanguageRegistry& registry = LanguageRegistry::active());

    SelectionResult select_target_language(const Query& query, CallLedger* ledger) const;
    PipelineTrace run_query(const Query& query) const;
    /// Traces come back in input order; per-query failures never abort the batch.
    BatchResult run_batch(const std::vector<Query>& queries) const;

    /// Same components under a different configuration (used by ablations).
    Pipeline with_config(PipelineConfig config) const;

    const PipelineConfig& config() const { return config_; }
    LanguageCode opposite_language(const LanguageCode& source) const;

private:
    ChatRequest request(std::string prompt) const;
    void run_enhanced(const Query& query, PipelineTrace& trace) const;

    PipelineConfig config_;
    std::shared_ptr<const QueryDetector> detector_;
    std::shared_ptr<ChatClient> llm_;
    std::shared_ptr<TranslationClient> translator_;
    std::shared_ptr<const TemplateSet> templates_;
    const LanguageRegistry* registry_;
};

/// Trace JSON without wall-clock fields, for byte-level determinism checks.
nlohmann::json deterministic_trace_json(const PipelineTrace& trace);

}  // namespace lingbridge
