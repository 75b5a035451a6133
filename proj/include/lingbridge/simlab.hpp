#pragma once

#include "lingbridge/backends.hpp"
#include "lingbridge/core.hpp"
#include "lingbridge/datasets.hpp"
#include "lingbridge/evaluation.hpp"
#include "lingbridge/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace lingbridge {

/// Where a simulated fact is well known. `third` facts are low-resource in both en and zh.
enum class SimHome { en, zh, common, third };

std::string_view to_string(SimHome h);
SimHome parse_sim_home(std::string_view s);

struct SimWorldConfig {
    std::size_t en_specific = 400;
    std::size_t zh_specific = 200;
    std::size_t common = 400;
    std::size_t third = 0;
    std::string third_lang = "ja";
    /// Probability that an in-domain answer is still wrong.
    double noise = 0.0;
    std::uint64_t seed = 7;
    std::size_t vocab_per_class = 200;
    std::size_t words_per_question = 6;
    /// Probability that a question word comes from the shared pool instead of its class pool.
    double overlap = 0.2;

    std::size_t total() const { return en_specific + zh_specific + common + third; }
    void validate() const;
    nlohmann::json to_json() const;
    static SimWorldConfig from_json(const nlohmann::json& j);
};

struct SimFact {
    std::string id;  // "[F00042]"
    SimHome home = SimHome::common;
    std::string topic;
    std::string answer;
    std::map<std::string, std::string> question;  // "en" / "zh" surface forms
};

class SimWorld : public std::enable_shared_from_this<SimWorld> {
public:
    static std::shared_ptr<const SimWorld> build(const SimWorldConfig& config);
    static std::shared_ptr<const SimWorld> load(const std::filesystem::path& dir);
    /// world.json plus corpus.<lang>.jsonl for en and zh.
    void save(const std::filesystem::path& dir) const;

    const SimWorldConfig& config() const { return config_; }
    const std::vector<SimFact>& facts() const { return facts_; }
    const SimFact* find(std::string_view fact_id) const;

    /// Language a fact is native to; nullopt for common facts.
    std::optional<std::string> home_language(const SimFact& f) const;
    bool in_domain(const SimFact& f, std::string_view lang) const;
    bool flipped(const SimFact& f, std::string_view lang) const;
    bool answers_correctly(const SimFact& f, std::string_view lang) const;
    std::string wrong_answer(const SimFact& f) const;

    /// One query per fact and language (en, zh), ids "<n>/<lang>", gold = the fact's answer.
    std::vector<Query> queries() const;
    Query query(const SimFact& f, const std::string& lang) const;

    /// Labeled detector corpus in one language; third-language facts have no 3-way label and are left out.
    std::vector<LabeledRecord> corpus(const std::string& lang) const;

    /// Oracle reply to any pipeline prompt.
    std::string respond(const std::string& prompt) const;
    std::shared_ptr<ChatBackend> oracle_backend() const;
    /// Selection rules naming each specific fact's home language; other prompts fall through to the oracle.
    Script selection_script() const;
    std::shared_ptr<ChatBackend> scripted_backend() const;
    /// Verdict 1 iff the fact is specific to a language other than the query's.
    std::shared_ptr<QueryDetector> oracle_detector() const;

    std::string sha256() const;
    nlohmann::json to_json() const;

private:
    SimWorld() = default;

    SimWorldConfig config_;
    std::vector<SimFact> facts_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Enumeration oracle

struct ExpectedQuery {
    std::string query_id;
    std::string lang;
    SimHome home = SimHome::common;
    bool correct = false;
    std::size_t llm_calls = 0;
    std::size_t translator_calls = 0;
    bool enhanced = false;
};

struct ExpectedOutcome {
    Condition condition = Condition::direct;
    AnswerMode mode = AnswerMode::replace;
    std::vector<ExpectedQuery> queries;  // same order as SimWorld::queries()
    CostSummary cost;

    std::vector<JudgedItem> items() const;
};

/// Closed-form outcome of a condition with the oracle detector, scripted selection and
/// mock translation. Only the output-language integration key is modeled.
ExpectedOutcome expected_outcome(const SimWorld& world, Condition condition, AnswerMode mode);

/// Report of `condition` against the direct baseline, from enumeration alone.
EvalReport expected_report(const SimWorld& world, Condition condition, AnswerMode mode = AnswerMode::replace);

// ---------------------------------------------------------------------------
// End-to-end simulation

struct SimConditionResult {
    Condition condition = Condition::direct;
    BatchResult batch;
    std::vector<JudgedItem> items;
    ExpectedOutcome expected;
    EvalReport report;           // against the direct baseline
    EvalReport expected_report;  // same, by enumeration
    std::vector<std::string> mismatches;

    bool matches_oracle() const { return mismatches.empty(); }
};

struct SimulationResult {
    SimWorldConfig config;
    AnswerMode mode = AnswerMode::replace;
    std::vector<SimConditionResult> conditions;

    bool matches_oracle() const;
    /// Deterministic: no wall-clock fields.
    nlohmann::json to_json() const;
    std::string to_table() const;
};

struct SimulationOptions {
    AnswerMode mode = AnswerMode::replace;
    std::size_t parallelism = 1;
    /// Override the template directory (defaults to TemplateSet::default_dir()).
    std::optional<std::filesystem::path> template_dir;
};

/// Runs each condition through the real pipeline and compares with the enumeration oracle.
SimulationResult simulate(const SimWorld& world, const std::vector<Condition>& conditions,
                          const SimulationOptions& options = {});

}  // namespace lingbridge
