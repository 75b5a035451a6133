#include "doctest.h"

#include "lingbridge/error.hpp"
#include "lingbridge/evaluation.hpp"

#include <fstream>

using namespace lingbridge;
using json = nlohmann::json;

namespace {

const std::filesystem::path kGolden = LINGBRIDGE_TEST_DATA_DIR;

std::vector<json> read_jsonl(const std::filesystem::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

std::shared_ptr<const TemplateSet> templates() {
    static auto t = std::make_shared<const TemplateSet>(TemplateSet::load_dir(TemplateSet::default_dir()));
    return t;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::Io;
}

JudgedItem item(std::string id, std::string dataset, std::string lang, std::int64_t value) {
    return JudgedItem{std::move(id), std::move(dataset), std::move(lang), value, false};
}

}  // namespace

TEST_CASE("judge reply goldens") {
    const auto cases = read_jsonl(kGolden / "judge_replies.jsonl");
    REQUIRE(cases.size() >= 30);
    for (const auto& c : cases) {
        const auto reply = c.at("reply").get<std::string>();
        const auto expect = c.at("expect").get<std::string>();
        CAPTURE(reply);
        if (expect == "ambiguous") {
            CHECK(code_of([&] { parse_judge_reply(reply); }) == ErrorCode::AmbiguousVerdict);
        } else {
            CHECK(to_string(parse_judge_reply(reply).value) == expect);
        }
    }
}

TEST_CASE("score reply goldens") {
    const auto cases = read_jsonl(kGolden / "score_replies.jsonl");
    REQUIRE(cases.size() >= 20);
    for (const auto& c : cases) {
        const auto reply = c.at("reply").get<std::string>();
        CAPTURE(reply);
        if (c.at("expect").is_string()) {
            CHECK(code_of([&] { parse_score_reply(reply); }) == ErrorCode::NoScoreFound);
        } else {
            CHECK(parse_score_reply(reply).score == c.at("expect").get<int>());
        }
    }
}

TEST_CASE("llm judge renders the template at temperature 0") {
    std::string seen;
    auto backend = std::make_shared<FunctionBackend>(
        [&](const ChatRequest& r) {
            seen = r.prompt;
            CHECK(r.temperature == 0.0);
            return ChatResponse{"Correct.", std::nullopt, std::nullopt};
        },
        "judge-fn");
    const LlmJudge judge(std::make_shared<ChatClient>(backend), templates());
    CallLedger ledger;
    const auto v = judge.judge("Who wrote Hamlet?", "Shakespeare", "William Shakespeare", &ledger);
    CHECK(v.value == Verdict::correct);
    CHECK(seen == templates()->get("judge", lang("en")).render({{"[QUESTION]", "Who wrote Hamlet?"},
                                                                {"[ANSWER]", "Shakespeare"},
                                                                {"[RES]", "William Shakespeare"}}));
    REQUIRE(ledger.size() == 1);
    CHECK(ledger[0].kind == BackendKind::judge);
    CHECK(ledger[0].purpose == "judge");
    CHECK(judge.identity() == "llm-judge:judge-fn");
}

TEST_CASE("scripted llm scorer") {
    Script s;
    s.rules.push_back(ScriptRule::contains("Assistant answer: good", "Solid. Overall score: 8"));
    s.rules.push_back(ScriptRule::contains("Assistant answer: bad", "Poor, 2/10"));
    s.default_reply = "no idea";
    const LlmScorer scorer(std::make_shared<ChatClient>(std::make_shared<ScriptedBackend>(s)), templates());
    CallLedger ledger;
    CHECK(scorer.score("q", "good", &ledger).score == 8);
    CHECK(scorer.score("q", "bad", &ledger).score == 2);
    CHECK(code_of([&] { scorer.score("q", "other", &ledger); }) == ErrorCode::NoScoreFound);
    CHECK(ledger.size() == 3);
    CHECK(ledger[0].purpose == "score");
}

TEST_CASE("exact-match judge strips markers") {
    const ExactMatchJudge j;
    CHECK(j.judge("q", "Paris", "@@en@@@@fr@@ Paris ", nullptr).value == Verdict::correct);
    CHECK(j.judge("q", "Paris", "@@en@@Lyon", nullptr).value == Verdict::wrong);
    CHECK(strip_mock_markers("@@zh@@@@en@@x") == "x");
    CHECK(strip_mock_markers("plain") == "plain");
}

TEST_CASE("ratio arithmetic is exact") {
    CHECK(Ratio(2, 4) == Ratio(1, 2));
    CHECK(Ratio(0, 0) == Ratio(0, 1));
    CHECK(Ratio(1, 3) + Ratio(1, 6) == Ratio(1, 2));
    CHECK(Ratio(1, 2) - Ratio(1, 3) == Ratio(1, 6));
    CHECK(Ratio::abs_diff(Ratio(1, 3), Ratio(1, 2)) == Ratio(1, 6));
    CHECK(Ratio(1914, 10000).to_string() == "957/5000");
    CHECK(Ratio(1, 3) < Ratio(34, 100));
    CHECK(code_of([] { (void)(Ratio(1, 3) - Ratio(1, 2)); }) == ErrorCode::InvalidInput);
    CHECK(code_of([] { Ratio(1, 0); }) == ErrorCode::InvalidInput);
    // Large denominators must not overflow on comparison.
    const std::int64_t big = 3037000499LL;
    CHECK(Ratio(big - 1, big) < Ratio(big, big + 1));
}

TEST_CASE("identical sets give zero error rate and unchanged gaps") {
    std::vector<JudgedItem> items;
    for (int i = 0; i < 10; ++i) items.push_back(item("e" + std::to_string(i), "D", "en", i < 7 ? 1 : 0));
    for (int i = 0; i < 10; ++i) items.push_back(item("z" + std::to_string(i), "D", "zh", i < 4 ? 1 : 0));
    const auto r = compute_report(items, items);
    CHECK(r.error_rate == Ratio(0, 1));
    REQUIRE(r.gaps.size() == 1);
    CHECK(r.gaps[0].before == Ratio(3, 10));
    CHECK(r.gaps[0].after == Ratio(3, 10));
    CHECK(r.cells.at({"D", "en"}).flag == 0);
}

TEST_CASE("report cells, flags and error rate") {
    std::vector<JudgedItem> orig;
    std::vector<JudgedItem> impr;
    // en: 60/100 -> 60/100 ; zh: 30/100 -> 55/100 ; ja: 50/100 -> 49/100 ; fr 50/100 -> 45/100
    auto add = [&](const std::string& lang, int before, int after) {
        for (int i = 0; i < 100; ++i) {
            const auto id = lang + std::to_string(i);
            orig.push_back(item(id, "D", lang, i < before ? 1 : 0));
            impr.push_back(item(id, "D", lang, i < after ? 1 : 0));
        }
    };
    add("en", 60, 60);
    add("zh", 30, 55);
    add("ja", 50, 49);
    add("fr", 50, 45);
    const auto r = compute_report(orig, impr);
    CHECK(r.cells.at({"D", "zh"}).flag == 1);
    CHECK(r.cells.at({"D", "en"}).flag == 0);
    CHECK(r.cells.at({"D", "ja"}).flag == 0);  // exactly one point is not significant
    CHECK(r.cells.at({"D", "fr"}).flag == -1);
    CHECK(r.error_rate == Ratio(6, 100));
    CHECK(r.gaps.size() == 6);
    // Oracle: mean of pairwise absolute gaps computed by hand.
    const double before[] = {0.60, 0.30, 0.50, 0.50};
    const double after[] = {0.60, 0.55, 0.49, 0.45};
    double gb = 0, ga = 0;
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            gb += std::abs(before[i] - before[j]);
            ga += std::abs(after[i] - after[j]);
        }
    }
    CHECK(r.mean_gap_before == doctest::Approx(gb / 6));
    CHECK(r.mean_gap_after == doctest::Approx(ga / 6));

    const auto j = r.to_json(false);
    CHECK(j.at("metric") == "accuracy");
    CHECK(j.at("cells").size() == 4);
    CHECK(j.at("error_rate").at("num") == 3);
    CHECK(j.at("error_rate").at("den") == 50);
    const auto table = r.to_table();
    CHECK(table.find("55.00%") != std::string::npos);
    CHECK(table.find("error rate: 6.00") != std::string::npos);
}

TEST_CASE("score metric uses a tenth of a point as significance") {
    const std::vector<JudgedItem> o{item("a", "D", "en", 6), item("b", "D", "en", 6)};
    const std::vector<JudgedItem> i{item("a", "D", "en", 7), item("b", "D", "en", 6)};
    const auto r = compute_report(o, i, "score");
    CHECK(r.cells.at({"D", "en"}).improved == Ratio(13, 2));
    CHECK(r.cells.at({"D", "en"}).flag == 1);
    CHECK(code_of([&] { compute_report(o, i, "bleu"); }) == ErrorCode::InvalidInput);
}

TEST_CASE("mismatched query sets") {
    const std::vector<JudgedItem> a{item("1", "D", "en", 1), item("2", "D", "en", 0)};
    const std::vector<JudgedItem> b{item("1", "D", "en", 1), item("3", "D", "en", 0)};
    const std::vector<JudgedItem> c{item("1", "D", "en", 1)};
    const std::vector<JudgedItem> d{item("1", "D", "zh", 1), item("2", "D", "en", 0)};
    const std::vector<JudgedItem> dup{item("1", "D", "en", 1), item("1", "D", "en", 0)};
    CHECK(code_of([&] { compute_report(a, b); }) == ErrorCode::MismatchedQuerySets);
    CHECK(code_of([&] { compute_report(a, c); }) == ErrorCode::MismatchedQuerySets);
    CHECK(code_of([&] { compute_report(a, d); }) == ErrorCode::MismatchedQuerySets);
    CHECK(code_of([&] { compute_report(dup, dup); }) == ErrorCode::MismatchedQuerySets);
}

TEST_CASE("judging traces: failures are wrong, ambiguity is counted") {
    std::vector<Query> qs{Query::make("a", "q1", lang("en"), "yes"), Query::make("b", "q2", lang("en"), "yes"),
                          Query::make("c", "q3", lang("zh"), "yes")};
    std::vector<PipelineTrace> ts(3);
    for (int i = 0; i < 3; ++i) ts[i].query_id = qs[i].id;
    ts[0].answer_final = Answer{"good", lang("en"), AnswerProvenance::direct};
    ts[1].error = "backend down";
    ts[2].answer_final = Answer{"unsure", lang("zh"), AnswerProvenance::direct};

    Script s;
    s.rules.push_back(ScriptRule::contains("evaluate: good", "correct"));
    s.rules.push_back(ScriptRule::contains("evaluate: unsure", "hmm, maybe"));
    const LlmJudge judge(std::make_shared<ChatClient>(std::make_shared<ScriptedBackend>(s)), templates());
    CallLedger ledger;
    const auto items = judge_traces(qs, ts, judge, 2, &ledger);
    REQUIRE(items.size() == 3);
    CHECK(items[0].value == 1);
    CHECK(items[1].value == 0);
    CHECK_FALSE(items[1].ambiguous);
    CHECK(items[2].value == 0);
    CHECK(items[2].ambiguous);
    CHECK(items[2].lang == "zh");
    CHECK(items[0].dataset == "default");
    CHECK(ledger.size() == 2);  // the failed trace is not judged

    auto swapped = ts;
    std::swap(swapped[0], swapped[1]);
    CHECK(code_of([&] { judge_traces(qs, swapped, judge); }) == ErrorCode::MismatchedQuerySets);
    auto no_gold = qs;
    no_gold[0].gold_answer.reset();
    CHECK(code_of([&] { judge_traces(no_gold, ts, judge); }) == ErrorCode::InvalidInput);
}

TEST_CASE("ablation runs the baseline plus each condition") {
    auto backend = std::make_shared<FunctionBackend>(
        [](const ChatRequest& r) {
            if (r.prompt.find("most suitable language") != std::string::npos) return ChatResponse{"Chinese", {}, {}};
            // The model only knows the answer when asked in Chinese.
            return ChatResponse{r.prompt.rfind("@@zh@@", 0) == 0 ? "right" : "no", {}, {}};
        },
        "fn");
    auto det = std::make_shared<FunctionDetector>([](const Query& q) { return q.id[0] == 'k' ? 1 : 0; }, "d");
    const Pipeline p({}, det, std::make_shared<ChatClient>(backend),
                     std::make_shared<TranslationClient>(std::make_shared<MockTranslator>()), templates());
    std::vector<Query> qs;
    for (int i = 0; i < 4; ++i) qs.push_back(Query::make("k" + std::to_string(i), "local fact", lang("en"), "right"));
    for (int i = 0; i < 4; ++i) qs.push_back(Query::make("g" + std::to_string(i), "general", lang("en"), "right"));
    const ExactMatchJudge judge;

    CHECK(code_of([&] { run_ablation({}, qs, p, judge); }) == ErrorCode::InvalidConfig);

    const auto r = run_ablation({Condition::full, Condition::no_detector}, qs, p, judge);
    REQUIRE(r.reports.size() == 2);
    CHECK(r.reports[0].second.cells.at({"default", "en"}).original == Ratio(0, 1));
    CHECK(r.reports[0].second.cells.at({"default", "en"}).improved == Ratio(1, 2));
    CHECK(r.reports[1].second.cells.at({"default", "en"}).improved == Ratio(1, 1));
    CHECK(r.baseline.batch.cost.total_calls == 8);
    CHECK(r.runs[0].batch.cost.total_calls == 4 + 4 * 4);
    CHECK(r.runs[1].batch.cost.total_calls == 8 * 4);
    const auto j = r.to_json(false);
    CHECK(j.at("conditions").size() == 2);
    CHECK(j.at("conditions")[1].at("condition") == "no_detector");
    CHECK(r.to_table().find("== direct vs full") != std::string::npos);

    CHECK(parse_condition("no_selection") == Condition::no_selection);
    CHECK(code_of([] { parse_condition("none"); }) == ErrorCode::InvalidConfig);
    const auto c = condition_config({}, Condition::direct);
    CHECK(c.direct_only);
    CHECK_FALSE(c.disable_detector);
}
