#pragma once

#include "lingbridge/backends.hpp"
#include "lingbridge/core.hpp"
#include "lingbridge/pipeline.hpp"
#include "lingbridge/templates.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lingbridge {

// ---------------------------------------------------------------------------
// Reply parsing

enum class Verdict { correct, wrong };

std::string_view to_string(Verdict v);

struct JudgeVerdict {
    Verdict value = Verdict::wrong;
    std::string raw_reply;
};

/// Exact "correct"/"wrong" after trim + lowercase; otherwise the single keyword
/// present as a whole word. Both or neither throws AmbiguousVerdict.
JudgeVerdict parse_judge_reply(std::string_view raw);

struct ScoreVerdict {
    int score = 1;
    std::string raw_reply;
};

/// "k/10" maps to k; otherwise the last standalone integer in [1,10]. Throws NoScoreFound.
ScoreVerdict parse_score_reply(std::string_view raw);

// ---------------------------------------------------------------------------
// Judges

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict judge(const std::string& question, const std::string& gold, const std::string& candidate,
                               CallLedger* ledger) const = 0;
    virtual std::string identity() const = 0;
};

/// Renders the judge template and asks the model at temperature 0.
class LlmJudge final : public Judge {
public:
    LlmJudge(std::shared_ptr<ChatClient> client, std::shared_ptr<const TemplateSet> templates, std::string model_id = {});
    JudgeVerdict judge(const std::string& question, const std::string& gold, const std::string& candidate,
                       CallLedger* ledger) const override;
    std::string identity() const override { return "llm-judge:" + client_->backend().identity(); }

private:
    std::shared_ptr<ChatClient> client_;
    std::shared_ptr<const TemplateSet> templates_;
    std::string model_id_;
};

/// Compares the candidate (mock-translation markers stripped, trimmed) to the gold answer.
class ExactMatchJudge final : public Judge {
public:
    JudgeVerdict judge(const std::string& question, const std::string& gold, const std::string& candidate,
                       CallLedger* ledger) const override;
    std::string identity() const override { return "exact-match"; }
};

/// Strips every leading mock-translation marker.
std::string strip_mock_markers(std::string_view text);

class LlmScorer {
public:
    LlmScorer(std::shared_ptr<ChatClient> client, std::shared_ptr<const TemplateSet> templates, std::string model_id = {});
    ScoreVerdict score(const std::string& question, const std::string& candidate, CallLedger* ledger) const;

private:
    std::shared_ptr<ChatClient> client_;
    std::shared_ptr<const TemplateSet> templates_;
    std::string model_id_;
};

// ---------------------------------------------------------------------------
// Exact arithmetic

/// Non-negative rational kept in lowest terms.
class Ratio {
public:
    Ratio() = default;
    Ratio(std::int64_t num, std::int64_t den);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    double value() const { return den_ == 0 ? 0.0 : static_cast<double>(num_) / static_cast<double>(den_); }

    friend bool operator==(const Ratio&, const Ratio&) = default;
    friend std::strong_ordering operator<=>(const Ratio& a, const Ratio& b);

    /// |a - b|
    static Ratio abs_diff(const Ratio& a, const Ratio& b);
    Ratio operator+(const Ratio& o) const;
    /// Requires *this >= o.
    Ratio operator-(const Ratio& o) const;

    std::string to_string() const;

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

// ---------------------------------------------------------------------------
// Reports

struct JudgedItem {
    std::string query_id;
    std::string dataset;
    std::string lang;
    /// 1/0 for correctness; the 1-10 score in scoring runs.
    std::int64_t value = 0;
    /// The judge could not decide; counted as 0.
    bool ambiguous = false;
};

struct CellKey {
    std::string dataset;
    std::string lang;
    friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellResult {
    Ratio original;
    Ratio improved;
    std::size_t items = 0;
    /// +1 improved by more than one point, -1 decreased by more than one point, 0 otherwise.
    int flag = 0;
};

struct DatasetGap {
    std::string dataset;
    std::string lang_a;
    std::string lang_b;
    Ratio before;
    Ratio after;
};

struct EvalReport {
    std::string metric = "accuracy";  // or "score"
    std::map<CellKey, CellResult> cells;
    std::vector<DatasetGap> gaps;
    double mean_gap_before = 0.0;
    double mean_gap_after = 0.0;
    /// Sum of per-cell decreases (improved < original).
    Ratio error_rate;
    std::size_t ambiguous_original = 0;
    std::size_t ambiguous_improved = 0;
    std::optional<CostSummary> cost_original;
    std::optional<CostSummary> cost_improved;

    nlohmann::json to_json(bool include_timing = true) const;
    /// Dataset x language rows with original / improved columns.
    std::string to_table() const;
};

/// Both item sets must cover the same query ids. Throws MismatchedQuerySets.
EvalReport compute_report(const std::vector<JudgedItem>& original, const std::vector<JudgedItem>& improved,
                          std::string metric = "accuracy");

/// Judges every trace; failed traces count as wrong.
std::vector<JudgedItem> judge_traces(const std::vector<Query>& queries, const std::vector<PipelineTrace>& traces,
                                     const Judge& judge, std::size_t parallelism = 1, CallLedger* judge_ledger = nullptr);

// ---------------------------------------------------------------------------
// Ablations

enum class Condition { direct, full, no_detector, no_selection };

std::string_view to_string(Condition c);
Condition parse_condition(std::string_view s);

/// Configuration a condition runs under, derived from a base configuration.
PipelineConfig condition_config(PipelineConfig base, Condition c);

struct ConditionRun {
    Condition condition = Condition::direct;
    BatchResult batch;
    std::vector<JudgedItem> items;
};

struct AblationResult {
    ConditionRun baseline;
    std::vector<ConditionRun> runs;
    /// One report per suite entry, each against the direct baseline.
    std::vector<std::pair<Condition, EvalReport>> reports;

    nlohmann::json to_json(bool include_timing = true) const;
    std::string to_table() const;
};

/// Runs the direct baseline plus each suite condition on identical queries.
/// An empty suite is a configuration error.
AblationResult run_ablation(const std::vector<Condition>& suite, const std::vector<Query>& dataset,
                            const Pipeline& pipeline, const Judge& judge);

}  // namespace lingbridge
