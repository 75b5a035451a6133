#include "lingbridge/simlab.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/hashing.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace lingbridge {

using json = nlohmann::json;

std::string_view to_string(SimHome h) {
    switch (h) {
        case SimHome::en: return "en";
        case SimHome::zh: return "zh";
        case SimHome::common: return "common";
        case SimHome::third: return "third";
    }
    return "common";
}

SimHome parse_sim_home(std::string_view s) {
    if (s == "en") return SimHome::en;
    if (s == "zh") return SimHome::zh;
    if (s == "common") return SimHome::common;
    if (s == "third") return SimHome::third;
    throw Error(ErrorCode::InvalidInput, "unknown fact home '" + std::string(s) + "'");
}

void SimWorldConfig::validate() const {
    if (total() == 0) throw Error(ErrorCode::InvalidConfig, "world has no facts");
    if (total() > 99999) throw Error(ErrorCode::InvalidConfig, "world is limited to 99999 facts");
    if (!(noise >= 0.0 && noise < 1.0)) throw Error(ErrorCode::InvalidConfig, "noise must be in [0, 1)");
    if (!(overlap >= 0.0 && overlap <= 1.0)) throw Error(ErrorCode::InvalidConfig, "overlap must be in [0, 1]");
    if (vocab_per_class == 0 || words_per_question == 0) {
        throw Error(ErrorCode::InvalidConfig, "vocabulary and question length must be positive");
    }
    if (third > 0) {
        const auto code = LanguageRegistry::active().try_normalize(third_lang);
        if (!code) throw Error(ErrorCode::InvalidConfig, "third language '" + third_lang + "' is not registered");
        if (code->value() == "en" || code->value() == "zh") {
            throw Error(ErrorCode::InvalidConfig, "third language must differ from en and zh");
        }
    }
}

json SimWorldConfig::to_json() const {
    return {{"en_specific", en_specific},
            {"zh_specific", zh_specific},
            {"common", common},
            {"third", third},
            {"third_lang", third_lang},
            {"noise", noise},
            {"seed", seed},
            {"vocab_per_class", vocab_per_class},
            {"words_per_question", words_per_question},
            {"overlap", overlap}};
}

SimWorldConfig SimWorldConfig::from_json(const json& j) {
    SimWorldConfig c;
    c.en_specific = j.value("en_specific", c.en_specific);
    c.zh_specific = j.value("zh_specific", c.zh_specific);
    c.common = j.value("common", c.common);
    c.third = j.value("third", c.third);
    c.third_lang = j.value("third_lang", c.third_lang);
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
    c.vocab_per_class = j.value("vocab_per_class", c.vocab_per_class);
    c.words_per_question = j.value("words_per_question", c.words_per_question);
    c.overlap = j.value("overlap", c.overlap);
    return c;
}

// ---------------------------------------------------------------------------
// World generation

namespace {

constexpr std::string_view kSelectionEn = "most suitable language";
constexpr std::string_view kSelectionZh = "最适合";

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// Characters that occur in prompt boilerplate the oracle and the selection script key on.
bool reserved_cjk(char32_t cp) {
    static const std::set<char32_t> reserved = {U'最', U'适', U'合', U'中', U'英', U'文', U'答', U'案', U'问', U'题'};
    return reserved.count(cp) != 0;
}

struct Vocab {
    std::vector<std::string> latin;
    std::vector<std::string> cjk;
};

class WordMaker {
public:
    explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {}

    std::string latin() {
        static constexpr std::string_view consonants = "bdfgklmnprstvz";
        static constexpr std::string_view vowels = "aeiou";
        for (;;) {
            std::string w;
            for (int s = 0; s < 3; ++s) {
                w += consonants[rng_() % consonants.size()];
                w += vowels[rng_() % vowels.size()];
            }
            if (used_.insert(w).second) return w;
        }
    }

    std::string cjk() {
        for (;;) {
            std::string w;
            bool ok = true;
            for (int s = 0; s < 2; ++s) {
                const auto cp = static_cast<char32_t>(0x4E00 + rng_() % 0x4E00);
                if (reserved_cjk(cp)) ok = false;
                append_utf8(w, cp);
            }
            if (ok && used_.insert(w).second) return w;
        }
    }

private:
    std::mt19937_64& rng_;
    std::set<std::string> used_;
};

std::string fact_id(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "[F%05zu]", n);
    return buf;
}

std::string answer_token(const std::string& id, bool correct) {
    // "[F00042]" -> "ANS-F00042" / "WRONG-F00042"
    return (correct ? "ANS-" : "WRONG-") + id.substr(1, id.size() - 2);
}

std::string_view find_fact_id(std::string_view text) {
    for (auto pos = text.find("[F"); pos != std::string_view::npos; pos = text.find("[F", pos + 1)) {
        if (pos + 8 > text.size() || text[pos + 7] != ']') continue;
        bool digits = true;
        for (std::size_t k = pos + 2; k < pos + 7; ++k) digits = digits && text[k] >= '0' && text[k] <= '9';
        if (digits) return text.substr(pos, 8);
    }
    return {};
}

std::string_view find_answer_token(std::string_view text) {
    const auto a = text.find("ANS-F");
    const auto w = text.find("WRONG-F");
    const auto pos = std::min(a, w);
    if (pos == std::string_view::npos) return {};
    const std::size_t len = pos == a ? 10 : 12;
    if (pos + len > text.size()) return {};
    return text.substr(pos, len);
}

bool has_non_ascii(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; });
}

std::string chinese_name(const std::string& code) {
    static const std::map<std::string, std::string> names = {
        {"en", "英文"}, {"zh", "中文"}, {"ja", "日语"}, {"ko", "韩语"}, {"fr", "法语"},
        {"de", "德语"}, {"es", "西班牙语"}, {"ru", "俄语"}, {"ar", "阿拉伯语"}, {"tr", "土耳其语"}};
    if (auto it = names.find(code); it != names.end()) return it->second;
    return LanguageRegistry::active().entry(lang(code)).name;
}

std::string opposite(std::string_view l) { return l == "en" ? "zh" : "en"; }

}  // namespace

std::shared_ptr<const SimWorld> SimWorld::build(const SimWorldConfig& config) {
    config.validate();
    std::shared_ptr<SimWorld> world(new SimWorld());
    world->config_ = config;
    if (config.third > 0) world->config_.third_lang = lang(config.third_lang).value();

    std::mt19937_64 rng(splitmix64(config.seed));
    WordMaker maker(rng);
    // Pools: en, zh, common, third, shared.
    std::array<Vocab, 5> pools;
    for (auto& pool : pools) {
        for (std::size_t i = 0; i < config.vocab_per_class; ++i) {
            pool.latin.push_back(maker.latin());
            pool.cjk.push_back(maker.cjk());
        }
    }

    std::vector<SimHome> homes;
    homes.insert(homes.end(), config.en_specific, SimHome::en);
    homes.insert(homes.end(), config.zh_specific, SimHome::zh);
    homes.insert(homes.end(), config.common, SimHome::common);
    homes.insert(homes.end(), config.third, SimHome::third);
    for (std::size_t i = homes.size(); i > 1; --i) std::swap(homes[i - 1], homes[rng() % i]);

    for (std::size_t n = 0; n < homes.size(); ++n) {
        SimFact f;
        f.id = fact_id(n);
        f.home = homes[n];
        f.answer = answer_token(f.id, true);
        const auto& own = pools[static_cast<std::size_t>(f.home)];
        const auto& shared = pools[4];
        std::string en_words;
        std::string zh_words;
        for (std::size_t k = 0; k < config.words_per_question; ++k) {
            const bool from_shared = unit_interval(rng()) < config.overlap;
            const auto& pool = from_shared ? shared : own;
            const auto pick = rng() % pool.latin.size();
            if (k == 0) f.topic = pool.latin[pick];
            if (!en_words.empty()) en_words += ' ';
            en_words += pool.latin[pick];
            zh_words += pool.cjk[pick];
        }
        f.question["en"] = f.id + " What is known about " + en_words + "?";
        f.question["zh"] = f.id + " 关于" + zh_words + "的知识是什么？";
        world->index_[f.id] = world->facts_.size();
        world->facts_.push_back(std::move(f));
    }
    return world;
}

const SimFact* SimWorld::find(std::string_view fact_id) const {
    auto it = index_.find(std::string(fact_id));
    return it == index_.end() ? nullptr : &facts_[it->second];
}

std::optional<std::string> SimWorld::home_language(const SimFact& f) const {
    switch (f.home) {
        case SimHome::en: return std::string("en");
        case SimHome::zh: return std::string("zh");
        case SimHome::third: return config_.third_lang;
        case SimHome::common: return std::nullopt;
    }
    return std::nullopt;
}

bool SimWorld::in_domain(const SimFact& f, std::string_view l) const {
    const auto home = home_language(f);
    return !home || *home == l;
}

bool SimWorld::flipped(const SimFact& f, std::string_view l) const {
    if (config_.noise <= 0.0) return false;
    const auto h = splitmix64(config_.seed ^ fnv1a64(f.id + "|" + std::string(l)));
    return unit_interval(h) < config_.noise;
}

bool SimWorld::answers_correctly(const SimFact& f, std::string_view l) const {
    return in_domain(f, l) && !flipped(f, l);
}

std::string SimWorld::wrong_answer(const SimFact& f) const { return answer_token(f.id, false); }

Query SimWorld::query(const SimFact& f, const std::string& l) const {
    return Query::make(f.id.substr(1, 6) + "/" + l, f.question.at(l), lang(l), f.answer, std::string("simlab"));
}

std::vector<Query> SimWorld::queries() const {
    std::vector<Query> out;
    out.reserve(facts_.size() * 2);
    for (const auto& f : facts_) {
        out.push_back(query(f, "en"));
        out.push_back(query(f, "zh"));
    }
    return out;
}

std::vector<LabeledRecord> SimWorld::corpus(const std::string& l) const {
    std::vector<LabeledRecord> out;
    for (const auto& f : facts_) {
        if (f.home == SimHome::third) continue;
        LabeledRecord r(query(f, l));
        r.label = f.home == SimHome::en   ? KnowledgeLabel::en_specific
                  : f.home == SimHome::zh ? KnowledgeLabel::ch_specific
                                          : KnowledgeLabel::common;
        out.push_back(std::move(r));
    }
    return out;
}

std::string SimWorld::respond(const std::string& prompt) const {
    // Integration prompts: keep the answer from the slot the template says to prioritise,
    // emitted in the template's output language.
    static constexpr std::string_view kChEn = "\n\nChinese answer: ";
    static constexpr std::string_view kEnEn = "\n\nEnglish answer: ";
    static constexpr std::string_view kChZh = "\n\n中文答案：";
    static constexpr std::string_view kEnZh = "\n\n英文答案：";
    const std::string_view p = prompt;
    if (auto a = p.find(kChEn); a != std::string_view::npos) {
        if (auto b = p.find(kEnEn, a); b != std::string_view::npos) {
            const auto slot = p.substr(a + kChEn.size(), b - a - kChEn.size());
            const auto token = find_answer_token(slot);
            return token.empty() ? "I don't know." : mock_mark(lang("en"), token);
        }
    }
    if (auto a = p.find(kChZh); a != std::string_view::npos) {
        if (auto b = p.find(kEnZh, a); b != std::string_view::npos) {
            const auto token = find_answer_token(p.substr(b + kEnZh.size()));
            return token.empty() ? "我不知道。" : mock_mark(lang("zh"), token);
        }
    }
    if (p.find(kSelectionEn) != std::string_view::npos || p.find(kSelectionZh) != std::string_view::npos) {
        return "I considered several options.";
    }

    std::string_view body = p;
    std::string l;
    const auto marker = parse_mock_marker(p);
    if (marker) {
        l = marker->lang;
        body = marker->payload;
    } else {
        l = has_non_ascii(body) ? "zh" : "en";
    }
    const auto id = find_fact_id(body);
    const SimFact* f = id.empty() ? nullptr : find(id);
    if (!f) return l == "zh" ? "我不知道。" : "I don't know.";
    const auto token = answer_token(f->id, answers_correctly(*f, l));
    return marker ? mock_mark(lang(l), token) : token;
}

std::shared_ptr<ChatBackend> SimWorld::oracle_backend() const {
    auto self = shared_from_this();
    return std::make_shared<FunctionBackend>(
        [self](const ChatRequest& req) { return ChatResponse{self->respond(req.prompt), std::nullopt, std::nullopt}; },
        "simlab-oracle");
}

Script SimWorld::selection_script() const {
    Script script;
    for (const auto& f : facts_) {
        const auto home = home_language(f);
        if (!home) continue;
        const auto& name = LanguageRegistry::active().entry(lang(*home)).name;
        script.rules.push_back(ScriptRule::contains_all(
            {f.id, std::string(kSelectionEn)},
            "The background of this question is specific. The most suitable language to answer it is " + name + "."));
        script.rules.push_back(ScriptRule::contains_all(
            {f.id, std::string(kSelectionZh)}, "该问题的背景较为特殊。最适合回答该问题的语言是" + chinese_name(*home) + "。"));
    }
    auto self = shared_from_this();
    script.fallback = [self](const ChatRequest& req) { return self->respond(req.prompt); };
    return script;
}

std::shared_ptr<ChatBackend> SimWorld::scripted_backend() const {
    return std::make_shared<ScriptedBackend>(selection_script(), "simlab-scripted");
}

std::shared_ptr<QueryDetector> SimWorld::oracle_detector() const {
    auto self = shared_from_this();
    return std::make_shared<FunctionDetector>(
        [self](const Query& q) {
            const auto id = find_fact_id(q.text);
            const SimFact* f = id.empty() ? nullptr : self->find(id);
            if (!f) return 0;
            const auto home = self->home_language(*f);
            return home && *home != q.source_lang.value() ? 1 : 0;
        },
        "simlab-oracle-detector");
}

json SimWorld::to_json() const {
    json facts = json::array();
    for (const auto& f : facts_) {
        facts.push_back({{"id", f.id},
                         {"home", std::string(to_string(f.home))},
                         {"topic", f.topic},
                         {"answer", f.answer},
                         {"question", f.question}});
    }
    return {{"config", config_.to_json()}, {"facts", facts}};
}

std::string SimWorld::sha256() const { return sha256_hex(to_json().dump()); }

void SimWorld::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "world.json", to_json().dump(1) + "\n");
    write_records(dir / "corpus.en.jsonl", corpus("en"));
    write_records(dir / "corpus.zh.jsonl", corpus("zh"));
}

std::shared_ptr<const SimWorld> SimWorld::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "world.json", std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + (dir / "world.json").string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("world.json: ") + e.what());
    }
    std::shared_ptr<SimWorld> world(new SimWorld());
    try {
        world->config_ = SimWorldConfig::from_json(j.at("config"));
        for (const auto& fj : j.at("facts")) {
            SimFact f;
            f.id = fj.at("id").get<std::string>();
            f.home = parse_sim_home(fj.at("home").get<std::string>());
            f.topic = fj.at("topic").get<std::string>();
            f.answer = fj.at("answer").get<std::string>();
            f.question = fj.at("question").get<std::map<std::string, std::string>>();
            if (find_fact_id(f.id) != f.id) throw Error(ErrorCode::SchemaViolation, "bad fact id " + f.id);
            world->index_[f.id] = world->facts_.size();
            world->facts_.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("world.json: ") + e.what());
    }
    world->config_.validate();
    return world;
}

// ---------------------------------------------------------------------------
// Enumeration oracle

std::vector<JudgedItem> ExpectedOutcome::items() const {
    std::vector<JudgedItem> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back({q.query_id, "simlab", q.lang, q.correct ? 1 : 0, false});
    return out;
}

ExpectedOutcome expected_outcome(const SimWorld& world, Condition condition, AnswerMode mode) {
    ExpectedOutcome out;
    out.condition = condition;
    out.mode = mode;
    for (const auto& f : world.facts()) {
        const auto home = world.home_language(f);
        for (const std::string l : {"en", "zh"}) {
            ExpectedQuery e;
            e.query_id = f.id.substr(1, 6) + "/" + l;
            e.lang = l;
            e.home = f.home;
            const bool low_resource = home && *home != l;
            e.enhanced = condition == Condition::no_detector || (condition != Condition::direct && low_resource);
            if (!e.enhanced) {
                e.correct = world.answers_correctly(f, l);
                e.llm_calls = 1;
            } else {
                // Scripted selection names the home language; common facts get no parsable
                // answer and fall back to the opposite language, as does no_selection.
                const bool select = condition != Condition::no_selection;
                const std::string target = select && home ? *home : opposite(l);
                e.correct = world.answers_correctly(f, target);
                if (mode == AnswerMode::replace) {
                    e.llm_calls = (select ? 1 : 0) + 1;
                    e.translator_calls = 2;
                } else {
                    e.llm_calls = (select ? 1 : 0) + 3;
                    e.translator_calls = 1 + (target != opposite(l) ? 1 : 0);
                }
            }
            out.cost.queries += 1;
            out.cost.enhanced += e.enhanced ? 1 : 0;
            out.cost.llm_calls += e.llm_calls;
            out.cost.translator_calls += e.translator_calls;
            out.cost.total_calls += e.llm_calls + e.translator_calls;
            out.queries.push_back(std::move(e));
        }
    }
    return out;
}

EvalReport expected_report(const SimWorld& world, Condition condition, AnswerMode mode) {
    const auto base = expected_outcome(world, Condition::direct, mode);
    const auto cond = expected_outcome(world, condition, mode);
    auto report = compute_report(base.items(), cond.items());
    report.cost_original = base.cost;
    report.cost_improved = cond.cost;
    return report;
}

// ---------------------------------------------------------------------------
// Simulation

bool SimulationResult::matches_oracle() const {
    return std::all_of(conditions.begin(), conditions.end(), [](const auto& c) { return c.matches_oracle(); });
}

json SimulationResult::to_json() const {
    json conds = json::array();
    for (const auto& c : conditions) {
        conds.push_back({{"condition", std::string(to_string(c.condition))},
                         {"matches_oracle", c.matches_oracle()},
                         {"mismatches", c.mismatches},
                         {"report", c.report.to_json(false)}});
    }
    return {{"world", config.to_json()},
            {"mode", std::string(to_string(mode))},
            {"matches_oracle", matches_oracle()},
            {"conditions", conds}};
}

std::string SimulationResult::to_table() const {
    std::ostringstream os;
    for (const auto& c : conditions) {
        os << "== direct vs " << to_string(c.condition) << " (" << to_string(mode) << ", oracle "
           << (c.matches_oracle() ? "match" : "MISMATCH") << ")\n"
           << c.report.to_table();
    }
    return os.str();
}

namespace {

BatchResult run_condition(const Pipeline& pipeline, Condition c, const std::vector<Query>& queries) {
    return pipeline.with_config(condition_config(pipeline.config(), c)).run_batch(queries);
}

}  // namespace

SimulationResult simulate(const SimWorld& world, const std::vector<Condition>& conditions,
                          const SimulationOptions& options) {
    if (conditions.empty()) throw Error(ErrorCode::InvalidConfig, "no conditions to simulate");
    auto templates = std::make_shared<const TemplateSet>(
        TemplateSet::load_dir(options.template_dir.value_or(TemplateSet::default_dir())));
    auto chat = std::make_shared<ChatClient>(world.scripted_backend());
    auto translator = std::make_shared<TranslationClient>(std::make_shared<MockTranslator>());
    PipelineConfig base;
    base.mode = options.mode;
    base.parallelism = options.parallelism;
    base.model_id = "simlab";
    const Pipeline pipeline(base, world.oracle_detector(), chat, translator, templates);
    const ExactMatchJudge judge;

    const auto queries = world.queries();
    const auto baseline = run_condition(pipeline, Condition::direct, queries);
    const auto baseline_items = judge_traces(queries, baseline.traces, judge, options.parallelism);
    const auto expected_base = expected_outcome(world, Condition::direct, options.mode);

    SimulationResult result;
    result.config = world.config();
    result.mode = options.mode;
    for (const auto c : conditions) {
        SimConditionResult r;
        r.condition = c;
        r.batch = c == Condition::direct ? baseline : run_condition(pipeline, c, queries);
        r.items = c == Condition::direct ? baseline_items : judge_traces(queries, r.batch.traces, judge, options.parallelism);
        r.expected = expected_outcome(world, c, options.mode);
        r.report = compute_report(baseline_items, r.items);
        r.report.cost_original = baseline.cost;
        r.report.cost_improved = r.batch.cost;
        r.expected_report = compute_report(expected_base.items(), r.expected.items());
        r.expected_report.cost_original = expected_base.cost;
        r.expected_report.cost_improved = r.expected.cost;

        const auto note = [&](std::string m) {
            if (r.mismatches.size() < 20) r.mismatches.push_back(std::move(m));
        };
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const auto& t = r.batch.traces[i];
            const auto& e = r.expected.queries[i];
            if (t.query_id != e.query_id) note("order: " + t.query_id + " vs " + e.query_id);
            if ((r.items[i].value == 1) != e.correct) note(t.query_id + ": correctness differs from enumeration");
            std::size_t llm = 0;
            std::size_t tr = 0;
            for (const auto& call : t.call_ledger) (call.kind == BackendKind::translator ? tr : llm) += 1;
            if (llm != e.llm_calls || tr != e.translator_calls) note(t.query_id + ": call counts differ from enumeration");
            for (const auto& v : trace_violations(t, queries[i])) note(t.query_id + ": " + v);
            if (t.error) note(t.query_id + ": " + *t.error);
        }
        if (r.report.to_json(false) != r.expected_report.to_json(false)) note("report differs from enumeration");
        result.conditions.push_back(std::move(r));
    }
    return result;
}

}  // namespace lingbridge
