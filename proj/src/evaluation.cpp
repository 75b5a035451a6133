#include "lingbridge/evaluation.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/parallel.hpp"

#include <cctype>
#include <cstdio>
#include <exception>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

namespace lingbridge {

using json = nlohmann::json;

std::string_view to_string(Verdict v) { return v == Verdict::correct ? "correct" : "wrong"; }

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

bool has_whole_word(std::string_view text, std::string_view word) {
    for (std::size_t pos = text.find(word); pos != std::string_view::npos; pos = text.find(word, pos + 1)) {
        const bool left = pos == 0 || !is_word_char(text[pos - 1]);
        const std::size_t end = pos + word.size();
        const bool right = end == text.size() || !is_word_char(text[end]);
        if (left && right) return true;
    }
    return false;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

JudgeVerdict parse_judge_reply(std::string_view raw) {
    const auto text = ascii_lower(trim(raw));
    JudgeVerdict v;
    v.raw_reply = std::string(raw);
    if (text == "correct") {
        v.value = Verdict::correct;
        return v;
    }
    if (text == "wrong") {
        v.value = Verdict::wrong;
        return v;
    }
    const bool c = has_whole_word(text, "correct");
    const bool w = has_whole_word(text, "wrong");
    if (c == w) {
        throw Error(ErrorCode::AmbiguousVerdict,
                    std::string(c ? "both keywords" : "no keyword") + " in judge reply '" + std::string(raw) + "'");
    }
    v.value = c ? Verdict::correct : Verdict::wrong;
    return v;
}

ScoreVerdict parse_score_reply(std::string_view raw) {
    ScoreVerdict out;
    out.raw_reply = std::string(raw);
    const std::string text(raw);

    // Fraction form "k/10": k is the score, the 10 is the scale.
    static const std::regex fraction(R"((^|[^0-9.])(\d+)\s*/\s*10(?![0-9.]))");
    std::optional<int> from_fraction;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), fraction); it != std::sregex_iterator(); ++it) {
        const auto& digits = (*it)[2].str();
        if (digits.size() <= 2) {
            const int k = std::stoi(digits);
            if (k >= 1 && k <= 10) from_fraction = k;
        }
    }
    if (from_fraction) {
        out.score = *from_fraction;
        return out;
    }

    std::optional<int> last;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_digit(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_digit(text[j])) ++j;
        const bool after_decimal = i >= 2 && text[i - 1] == '.' && is_digit(text[i - 2]);
        const bool before_decimal = j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1]);
        const bool glued_left = i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]));
        const bool glued_right = j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]));
        if (!after_decimal && !before_decimal && !glued_left && !glued_right && j - i <= 2) {
            const int k = std::stoi(text.substr(i, j - i));
            if (k >= 1 && k <= 10) last = k;
        }
        // Skip the fractional part of a decimal entirely.
        if (before_decimal) {
            j += 1;
            while (j < text.size() && is_digit(text[j])) ++j;
        }
        i = j;
    }
    if (!last) throw Error(ErrorCode::NoScoreFound, "no score in [1,10] in reply '" + text + "'");
    out.score = *last;
    return out;
}

// ---------------------------------------------------------------------------

LlmJudge::LlmJudge(std::shared_ptr<ChatClient> client, std::shared_ptr<const TemplateSet> templates, std::string model_id)
    : client_(std::move(client)), templates_(std::move(templates)), model_id_(std::move(model_id)) {
    if (!client_ || !templates_) throw Error(ErrorCode::InvalidConfig, "judge needs a client and templates");
}

JudgeVerdict LlmJudge::judge(const std::string& question, const std::string& gold, const std::string& candidate,
                             CallLedger* ledger) const {
    const auto& tmpl = templates_->get("judge", lang("en"));
    ChatRequest req;
    req.prompt = tmpl.render({{"[QUESTION]", question}, {"[ANSWER]", gold}, {"[RES]", candidate}});
    req.temperature = kPipelineTemperature;
    req.model_id = model_id_;
    return parse_judge_reply(client_->chat(req, ledger, "judge", BackendKind::judge).text);
}

std::string strip_mock_markers(std::string_view text) {
    while (auto m = parse_mock_marker(text)) text = m->payload;
    return std::string(text);
}

JudgeVerdict ExactMatchJudge::judge(const std::string&, const std::string& gold, const std::string& candidate,
                                    CallLedger*) const {
    JudgeVerdict v;
    v.raw_reply = candidate;
    v.value = trim(strip_mock_markers(trim(candidate))) == trim(gold) ? Verdict::correct : Verdict::wrong;
    return v;
}

LlmScorer::LlmScorer(std::shared_ptr<ChatClient> client, std::shared_ptr<const TemplateSet> templates,
                     std::string model_id)
    : client_(std::move(client)), templates_(std::move(templates)), model_id_(std::move(model_id)) {
    if (!client_ || !templates_) throw Error(ErrorCode::InvalidConfig, "scorer needs a client and templates");
}

ScoreVerdict LlmScorer::score(const std::string& question, const std::string& candidate, CallLedger* ledger) const {
    const auto& tmpl = templates_->get("score", lang("en"));
    ChatRequest req;
    req.prompt = tmpl.render({{"[QUESTION]", question}, {"[RES]", candidate}});
    req.temperature = kPipelineTemperature;
    req.model_id = model_id_;
    return parse_score_reply(client_->chat(req, ledger, "score", BackendKind::judge).text);
}

// ---------------------------------------------------------------------------

Ratio::Ratio(std::int64_t num, std::int64_t den) {
    if (num < 0 || den < 0) throw Error(ErrorCode::InvalidInput, "ratio must be non-negative");
    if (den == 0) {
        if (num != 0) throw Error(ErrorCode::InvalidInput, "ratio with zero denominator");
        return;  // 0/0 reads as 0
    }
    const auto g = std::gcd(num, den);
    num_ = num / g;
    den_ = den / g;
}

std::strong_ordering operator<=>(const Ratio& a, const Ratio& b) {
    const __int128 l = static_cast<__int128>(a.num_) * b.den_;
    const __int128 r = static_cast<__int128>(b.num_) * a.den_;
    return l <=> r;
}

namespace {

__int128 gcd128(__int128 a, __int128 b) {
    while (b != 0) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

Ratio make_reduced(__int128 num, __int128 den) {
    auto g = gcd128(num < 0 ? -num : num, den);
    if (g == 0) g = 1;
    return Ratio(static_cast<std::int64_t>(num / g), static_cast<std::int64_t>(den / g));
}

}  // namespace

Ratio Ratio::operator+(const Ratio& o) const {
    return make_reduced(static_cast<__int128>(num_) * o.den_ + static_cast<__int128>(o.num_) * den_,
                        static_cast<__int128>(den_) * o.den_);
}

Ratio Ratio::operator-(const Ratio& o) const {
    const __int128 n = static_cast<__int128>(num_) * o.den_ - static_cast<__int128>(o.num_) * den_;
    if (n < 0) throw Error(ErrorCode::InvalidInput, "negative ratio difference");
    return make_reduced(n, static_cast<__int128>(den_) * o.den_);
}

Ratio Ratio::abs_diff(const Ratio& a, const Ratio& b) { return a >= b ? a - b : b - a; }

std::string Ratio::to_string() const { return std::to_string(num_) + "/" + std::to_string(den_); }

// ---------------------------------------------------------------------------

namespace {

struct Tally {
    std::int64_t sum = 0;
    std::int64_t count = 0;
};

std::string fmt_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

json ratio_json(const Ratio& r) { return {{"num", r.num()}, {"den", r.den()}, {"value", r.value()}}; }

}  // namespace

EvalReport compute_report(const std::vector<JudgedItem>& original, const std::vector<JudgedItem>& improved,
                          std::string metric) {
    if (metric != "accuracy" && metric != "score") throw Error(ErrorCode::InvalidInput, "unknown metric " + metric);
    std::map<std::string, const JudgedItem*> by_id;
    for (const auto& it : original) {
        if (!by_id.emplace(it.query_id, &it).second) {
            throw Error(ErrorCode::MismatchedQuerySets, "duplicate query id " + it.query_id);
        }
    }
    if (improved.size() != original.size()) {
        throw Error(ErrorCode::MismatchedQuerySets, "original has " + std::to_string(original.size()) +
                                                        " items, improved has " + std::to_string(improved.size()));
    }
    std::set<std::string> seen;
    for (const auto& it : improved) {
        auto f = by_id.find(it.query_id);
        if (f == by_id.end()) throw Error(ErrorCode::MismatchedQuerySets, "query " + it.query_id + " only in improved");
        if (!seen.insert(it.query_id).second) {
            throw Error(ErrorCode::MismatchedQuerySets, "duplicate query id " + it.query_id);
        }
        if (f->second->dataset != it.dataset || f->second->lang != it.lang) {
            throw Error(ErrorCode::MismatchedQuerySets, "query " + it.query_id + " changed dataset or language");
        }
    }

    EvalReport report;
    report.metric = metric;
    std::map<CellKey, std::pair<Tally, Tally>> tallies;
    for (const auto& it : original) {
        auto& t = tallies[{it.dataset, it.lang}].first;
        t.sum += it.value;
        ++t.count;
        if (it.ambiguous) ++report.ambiguous_original;
    }
    for (const auto& it : improved) {
        auto& t = tallies[{it.dataset, it.lang}].second;
        t.sum += it.value;
        ++t.count;
        if (it.ambiguous) ++report.ambiguous_improved;
    }

    // Table 2 colours cells that move by more than one percentage point of the scale.
    const Ratio significant(metric == "accuracy" ? 1 : 10, 100);
    for (const auto& [key, t] : tallies) {
        CellResult cell;
        cell.original = Ratio(t.first.sum, t.first.count);
        cell.improved = Ratio(t.second.sum, t.second.count);
        cell.items = static_cast<std::size_t>(t.first.count);
        if (cell.improved > cell.original && cell.improved - cell.original > significant) cell.flag = 1;
        if (cell.original > cell.improved) {
            const auto drop = cell.original - cell.improved;
            report.error_rate = report.error_rate + drop;
            if (drop > significant) cell.flag = -1;
        }
        report.cells.emplace(key, cell);
    }

    std::map<std::string, std::vector<std::string>> langs_by_dataset;
    for (const auto& [key, cell] : report.cells) langs_by_dataset[key.dataset].push_back(key.lang);
    double before = 0.0;
    double after = 0.0;
    for (const auto& [dataset, langs] : langs_by_dataset) {
        for (std::size_t i = 0; i < langs.size(); ++i) {
            for (std::size_t j = i + 1; j < langs.size(); ++j) {
                const auto& a = report.cells.at({dataset, langs[i]});
                const auto& b = report.cells.at({dataset, langs[j]});
                DatasetGap g{dataset, langs[i], langs[j], Ratio::abs_diff(a.original, b.original),
                             Ratio::abs_diff(a.improved, b.improved)};
                before += g.before.value();
                after += g.after.value();
                report.gaps.push_back(std::move(g));
            }
        }
    }
    if (!report.gaps.empty()) {
        report.mean_gap_before = before / static_cast<double>(report.gaps.size());
        report.mean_gap_after = after / static_cast<double>(report.gaps.size());
    }
    return report;
}

json EvalReport::to_json(bool include_timing) const {
    json cells_j = json::array();
    for (const auto& [key, c] : cells) {
        cells_j.push_back({{"dataset", key.dataset},
                           {"lang", key.lang},
                           {"items", c.items},
                           {"original", ratio_json(c.original)},
                           {"improved", ratio_json(c.improved)},
                           {"flag", c.flag}});
    }
    json gaps_j = json::array();
    for (const auto& g : gaps) {
        gaps_j.push_back({{"dataset", g.dataset},
                          {"langs", {g.lang_a, g.lang_b}},
                          {"before", ratio_json(g.before)},
                          {"after", ratio_json(g.after)}});
    }
    json j{{"metric", metric},
           {"cells", cells_j},
           {"gaps", gaps_j},
           {"mean_gap_before", mean_gap_before},
           {"mean_gap_after", mean_gap_after},
           {"error_rate", ratio_json(error_rate)},
           {"ambiguous_original", ambiguous_original},
           {"ambiguous_improved", ambiguous_improved}};
    if (cost_original) j["cost_original"] = cost_original->to_json(include_timing);
    if (cost_improved) j["cost_improved"] = cost_improved->to_json(include_timing);
    return j;
}

std::string EvalReport::to_table() const {
    const bool pct = metric == "accuracy";
    const auto show = [&](const Ratio& r) { return pct ? fmt_fixed(100.0 * r.value(), 2) + "%" : fmt_fixed(r.value(), 2); };
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %-6s %10s %10s %5s\n", "Dataset", "Lang", "Origi.", "Impro.", "");
    os << line;
    for (const auto& [key, c] : cells) {
        const char* mark = c.flag > 0 ? "+" : (c.flag < 0 ? "-" : "");
        std::snprintf(line, sizeof line, "%-20s %-6s %10s %10s %5s\n", key.dataset.c_str(), key.lang.c_str(),
                      show(c.original).c_str(), show(c.improved).c_str(), mark);
        os << line;
    }
    for (const auto& g : gaps) {
        const std::string pair = g.lang_a + "/" + g.lang_b;
        const std::string b = pct ? fmt_fixed(100.0 * g.before.value(), 2) : fmt_fixed(g.before.value(), 2);
        const std::string a = pct ? fmt_fixed(100.0 * g.after.value(), 2) : fmt_fixed(g.after.value(), 2);
        std::snprintf(line, sizeof line, "gap %-16s %-6s %10s %10s\n", g.dataset.c_str(), pair.c_str(), b.c_str(),
                      a.c_str());
        os << line;
    }
    os << "mean gap: " << fmt_fixed(pct ? 100.0 * mean_gap_before : mean_gap_before, 2) << " -> "
       << fmt_fixed(pct ? 100.0 * mean_gap_after : mean_gap_after, 2) << "\n";
    os << "error rate: " << fmt_fixed(pct ? 100.0 * error_rate.value() : error_rate.value(), 2) << "\n";
    if (cost_original && cost_improved) {
        os << "mean calls/query: " << fmt_fixed(cost_original->mean_calls_per_query(), 4) << " -> "
           << fmt_fixed(cost_improved->mean_calls_per_query(), 4) << "\n";
    }
    return os.str();
}

std::vector<JudgedItem> judge_traces(const std::vector<Query>& queries, const std::vector<PipelineTrace>& traces,
                                     const Judge& judge, std::size_t parallelism, CallLedger* judge_ledger) {
    if (queries.size() != traces.size()) {
        throw Error(ErrorCode::MismatchedQuerySets, "queries and traces differ in length");
    }
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].id != traces[i].query_id) {
            throw Error(ErrorCode::MismatchedQuerySets, "trace " + traces[i].query_id + " out of order");
        }
        if (!queries[i].gold_answer) throw Error(ErrorCode::InvalidInput, "query " + queries[i].id + " has no gold answer");
    }
    std::vector<JudgedItem> items(queries.size());
    std::vector<CallLedger> ledgers(queries.size());
    std::vector<std::exception_ptr> failures(queries.size());
    parallel_for(queries.size(), parallelism, [&](std::size_t i) {
        const auto& q = queries[i];
        auto& item = items[i];
        item.query_id = q.id;
        item.dataset = q.dataset.value_or("default");
        item.lang = q.source_lang.value();
        if (!traces[i].ok()) return;
        try {
            const auto v = judge.judge(q.text, *q.gold_answer, traces[i].answer_final->text, &ledgers[i]);
            item.value = v.value == Verdict::correct ? 1 : 0;
        } catch (const Error& e) {
            if (e.code() == ErrorCode::AmbiguousVerdict) {
                item.ambiguous = true;
            } else {
                failures[i] = std::current_exception();
            }
        } catch (...) {
            failures[i] = std::current_exception();
        }
    });
    for (auto& f : failures) {
        if (f) std::rethrow_exception(f);
    }
    if (judge_ledger) {
        for (auto& l : ledgers) judge_ledger->insert(judge_ledger->end(), l.begin(), l.end());
    }
    return items;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Condition c) {
    switch (c) {
        case Condition::direct: return "direct";
        case Condition::full: return "full";
        case Condition::no_detector: return "no_detector";
        case Condition::no_selection: return "no_selection";
    }
    return "direct";
}

Condition parse_condition(std::string_view s) {
    if (s == "direct") return Condition::direct;
    if (s == "full") return Condition::full;
    if (s == "no_detector") return Condition::no_detector;
    if (s == "no_selection") return Condition::no_selection;
    throw Error(ErrorCode::InvalidConfig, "unknown condition '" + std::string(s) + "'");
}

PipelineConfig condition_config(PipelineConfig base, Condition c) {
    base.direct_only = c == Condition::direct;
    base.disable_detector = c == Condition::no_detector;
    base.disable_selection = c == Condition::no_selection;
    return base;
}

namespace {

ConditionRun run_condition(Condition c, const std::vector<Query>& dataset, const Pipeline& pipeline,
                           const Judge& judge) {
    ConditionRun run;
    run.condition = c;
    const auto p = pipeline.with_config(condition_config(pipeline.config(), c));
    run.batch = p.run_batch(dataset);
    run.items = judge_traces(dataset, run.batch.traces, judge, pipeline.config().parallelism);
    return run;
}

}  // namespace

AblationResult run_ablation(const std::vector<Condition>& suite, const std::vector<Query>& dataset,
                            const Pipeline& pipeline, const Judge& judge) {
    if (suite.empty()) throw Error(ErrorCode::InvalidConfig, "ablation suite is empty");
    AblationResult result;
    result.baseline = run_condition(Condition::direct, dataset, pipeline, judge);
    for (const auto c : suite) {
        auto run = run_condition(c, dataset, pipeline, judge);
        auto report = compute_report(result.baseline.items, run.items);
        report.cost_original = result.baseline.batch.cost;
        report.cost_improved = run.batch.cost;
        result.reports.emplace_back(c, std::move(report));
        result.runs.push_back(std::move(run));
    }
    return result;
}

json AblationResult::to_json(bool include_timing) const {
    json conditions = json::array();
    for (const auto& [c, report] : reports) {
        conditions.push_back({{"condition", std::string(to_string(c))}, {"report", report.to_json(include_timing)}});
    }
    return {{"baseline", "direct"},
            {"baseline_cost", baseline.batch.cost.to_json(include_timing)},
            {"conditions", conditions}};
}

std::string AblationResult::to_table() const {
    std::ostringstream os;
    for (const auto& [c, report] : reports) {
        os << "== direct vs " << to_string(c) << "\n" << report.to_table();
    }
    return os.str();
}

}  // namespace lingbridge
