#include "lingbridge/datasets.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/parallel.hpp"

#include <atomic>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

namespace lingbridge {

using json = nlohmann::json;

std::string_view to_string(LabelProvenance p) {
    switch (p) {
        case LabelProvenance::llm_agreed: return "llm_agreed";
        case LabelProvenance::human_reviewed: return "human_reviewed";
        case LabelProvenance::generated: return "generated";
    }
    return "llm_agreed";
}

LabelProvenance parse_label_provenance(std::string_view s) {
    if (s == "llm_agreed") return LabelProvenance::llm_agreed;
    if (s == "human_reviewed") return LabelProvenance::human_reviewed;
    if (s == "generated") return LabelProvenance::generated;
    throw Error(ErrorCode::InvalidInput, "unknown label provenance '" + std::string(s) + "'");
}

json record_to_json(const LabeledRecord& r) {
    json j = r.query;
    if (r.label) j["label"] = std::string(to_string(*r.label));
    if (r.label_provenance) j["label_provenance"] = std::string(to_string(*r.label_provenance));
    if (r.pass1) j["pass1"] = *r.pass1;
    if (r.pass2) j["pass2"] = *r.pass2;
    if (r.machine_translated) j["machine_translated"] = true;
    return j;
}

LabeledRecord record_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "record is not a JSON object");
    for (const char* key : {"id", "text", "lang"}) {
        if (!j.contains(key)) throw Error(ErrorCode::SchemaViolation, std::string("missing \"") + key + "\"");
        if (!j[key].is_string()) throw Error(ErrorCode::SchemaViolation, std::string("\"") + key + "\" must be a string");
    }
    for (const char* key : {"gold_answer", "dataset", "label", "label_provenance", "pass1", "pass2"}) {
        if (j.contains(key) && !j[key].is_string() && !j[key].is_null()) {
            throw Error(ErrorCode::SchemaViolation, std::string("\"") + key + "\" must be a string");
        }
    }
    LabeledRecord r{[&] {
        try {
            return query_from_json(j);
        } catch (const Error& e) {
            throw Error(ErrorCode::SchemaViolation, e.what());
        }
    }()};
    if (j.contains("label") && j["label"].is_string()) {
        const auto name = j["label"].get<std::string>();
        r.label = try_parse_knowledge_label(name);
        if (!r.label) throw Error(ErrorCode::SchemaViolation, "unknown label '" + name + "'");
    }
    if (j.contains("label_provenance") && j["label_provenance"].is_string()) {
        try {
            r.label_provenance = parse_label_provenance(j["label_provenance"].get<std::string>());
        } catch (const Error& e) {
            throw Error(ErrorCode::SchemaViolation, e.what());
        }
    }
    if (j.contains("pass1") && j["pass1"].is_string()) r.pass1 = j["pass1"].get<std::string>();
    if (j.contains("pass2") && j["pass2"].is_string()) r.pass2 = j["pass2"].get<std::string>();
    if (j.contains("machine_translated")) {
        if (!j["machine_translated"].is_boolean()) {
            throw Error(ErrorCode::SchemaViolation, "\"machine_translated\" must be a boolean");
        }
        r.machine_translated = j["machine_translated"].get<bool>();
    }
    if (r.label_provenance == LabelProvenance::llm_agreed && r.pass1 != r.pass2) {
        throw Error(ErrorCode::SchemaViolation, "llm_agreed record with differing passes");
    }
    return r;
}

void LabelCounts::add(const std::optional<KnowledgeLabel>& label) {
    if (!label) {
        ++unlabeled;
        return;
    }
    switch (*label) {
        case KnowledgeLabel::ch_specific: ++ch_specific; break;
        case KnowledgeLabel::common: ++common; break;
        case KnowledgeLabel::en_specific: ++en_specific; break;
    }
}

json LabelCounts::to_json() const {
    return {{"ch_specific", ch_specific},
            {"common", common},
            {"en_specific", en_specific},
            {"unlabeled", unlabeled},
            {"total", total()}};
}

IngestResult ingest_text(const std::string& text, const IngestOptions& options) {
    IngestResult out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto where = "line " + std::to_string(line_no) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::SchemaViolation, where + "invalid JSON (" + e.what() + ")");
        }
        LabeledRecord r{Query::make("x", "x", lang("en"))};
        try {
            r = record_from_json(j);
        } catch (const Error& e) {
            throw Error(ErrorCode::SchemaViolation, where + e.what());
        }
        if (options.require_label && !r.label) throw Error(ErrorCode::SchemaViolation, where + "missing \"label\"");
        out.counts.add(r.label);
        out.per_dataset[r.query.dataset.value_or("")].add(r.label);
        out.records.push_back(std::move(r));
    }
    return out;
}

IngestResult ingest(const std::filesystem::path& path, const IngestOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ingest_text(ss.str(), options);
}

std::string records_to_jsonl(const std::vector<LabeledRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error(ErrorCode::Io, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_records(const std::filesystem::path& path, const std::vector<LabeledRecord>& records) {
    write_file_atomic(path, records_to_jsonl(records));
}

// ---------------------------------------------------------------------------

AugmentResult translate_augment(const std::vector<LabeledRecord>& records, const LanguageCode& target,
                                const TranslationClient& translator, std::size_t parallelism) {
    AugmentResult out;
    std::vector<std::optional<LabeledRecord>> translated(records.size());
    std::vector<std::optional<std::string>> errors(records.size());
    parallel_for(records.size(), parallelism, [&](std::size_t i) {
        const auto& r = records[i];
        if (r.query.source_lang == target) return;
        try {
            auto text = translator.translate({r.query.text, target, r.query.source_lang}, nullptr, "augment");
            LabeledRecord t = r;
            t.query = Query::make(r.query.id + "@" + target.value(), std::move(text), target, r.query.gold_answer,
                                  r.query.dataset);
            t.machine_translated = true;
            translated[i] = std::move(t);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    out.records = records;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (translated[i]) {
            out.records.push_back(std::move(*translated[i]));
            ++out.translated;
        } else if (errors[i]) {
            out.failures.push_back({records[i].query.id, *errors[i]});
        } else {
            ++out.skipped;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

std::optional<KnowledgeLabel> parse_category(std::string_view raw) {
    static const std::map<std::string, KnowledgeLabel> table = {
        {"english knowledge", KnowledgeLabel::en_specific},
        {"english background", KnowledgeLabel::en_specific},
        {"questions with an english background", KnowledgeLabel::en_specific},
        {"en_specific", KnowledgeLabel::en_specific},
        {"英文知识", KnowledgeLabel::en_specific},
        {"英语知识", KnowledgeLabel::en_specific},
        {"英文背景", KnowledgeLabel::en_specific},
        {"英语背景", KnowledgeLabel::en_specific},
        {"chinese knowledge", KnowledgeLabel::ch_specific},
        {"chinese background", KnowledgeLabel::ch_specific},
        {"questions with a chinese background", KnowledgeLabel::ch_specific},
        {"ch_specific", KnowledgeLabel::ch_specific},
        {"中文知识", KnowledgeLabel::ch_specific},
        {"中国知识", KnowledgeLabel::ch_specific},
        {"中文背景", KnowledgeLabel::ch_specific},
        {"中国背景", KnowledgeLabel::ch_specific},
        {"knowledge with no specific language", KnowledgeLabel::common},
        {"no specific language", KnowledgeLabel::common},
        {"questions with no specific language", KnowledgeLabel::common},
        {"common", KnowledgeLabel::common},
        {"common knowledge", KnowledgeLabel::common},
        {"通用知识", KnowledgeLabel::common},
        {"无特定语言的知识", KnowledgeLabel::common},
        {"没有特定语言的知识", KnowledgeLabel::common},
        {"无特定语言", KnowledgeLabel::common},
    };
    auto s = ascii_lower(trim(raw));
    // Tolerate surrounding quotes and trailing punctuation.
    while (!s.empty() && (s.back() == '.' || s.back() == '"' || s.back() == '\'' || s.back() == '!')) s.pop_back();
    while (!s.empty() && (s.front() == '"' || s.front() == '\'')) s.erase(s.begin());
    for (const std::string_view prefix : {"category:", "category："}) {
        if (s.rfind(prefix, 0) == 0) s = trim(s.substr(prefix.size()));
    }
    if (s.size() >= 3 && s.compare(s.size() - 3, 3, "。") == 0) s.resize(s.size() - 3);
    auto it = table.find(trim(s));
    if (it == table.end()) return std::nullopt;
    return it->second;
}

std::string_view to_string(ReviewStatus s) {
    switch (s) {
        case ReviewStatus::pending: return "pending";
        case ReviewStatus::resolved: return "resolved";
        case ReviewStatus::discarded: return "discarded";
    }
    return "pending";
}

ReviewStatus parse_review_status(std::string_view s) {
    if (s == "pending") return ReviewStatus::pending;
    if (s == "resolved") return ReviewStatus::resolved;
    if (s == "discarded") return ReviewStatus::discarded;
    throw Error(ErrorCode::SchemaViolation, "unknown review status '" + std::string(s) + "'");
}

json review_item_to_json(const ReviewQueueItem& item) {
    json j{{"id", item.record.query.id},
           {"record", record_to_json(item.record)},
           {"pass1", item.pass1},
           {"pass2", item.pass2},
           {"status", std::string(to_string(item.status))}};
    if (item.resolved_label) j["resolved_label"] = std::string(to_string(*item.resolved_label));
    if (item.note) j["note"] = *item.note;
    return j;
}

ReviewQueueItem review_item_from_json(const json& j) {
    try {
        ReviewQueueItem item{record_from_json(j.at("record")), j.at("pass1").get<std::string>(),
                             j.at("pass2").get<std::string>(), parse_review_status(j.at("status").get<std::string>()),
                             std::nullopt, std::nullopt};
        if (j.contains("resolved_label") && !j["resolved_label"].is_null()) {
            item.resolved_label = parse_knowledge_label(j["resolved_label"].get<std::string>());
        }
        if (j.contains("note") && j["note"].is_string()) item.note = j["note"].get<std::string>();
        if (item.status == ReviewStatus::resolved && !item.resolved_label) {
            throw Error(ErrorCode::SchemaViolation, "resolved item " + item.record.query.id + " has no resolved_label");
        }
        return item;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::SchemaViolation, std::string("review item: ") + e.what());
    }
}

void write_review_queue(const std::filesystem::path& path, const std::vector<ReviewQueueItem>& items) {
    std::string out;
    for (const auto& item : items) {
        out += review_item_to_json(item).dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<ReviewQueueItem> read_review_queue(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::vector<ReviewQueueItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            items.push_back(review_item_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return items;
}

LabelingResult llm_label(const std::vector<LabeledRecord>& records, const ChatClient& labeler,
                         const TemplateSet& templates, const LabelingConfig& config) {
    if (config.passes < 2) throw Error(ErrorCode::InvalidConfig, "labeling needs at least two passes");
    const auto& tmpl = templates.get("label", lang("en"));

    struct Outcome {
        std::vector<std::string> raw;
        std::optional<std::string> error;
        CallLedger ledger;
    };
    std::vector<Outcome> outcomes(records.size());
    parallel_for(records.size(), config.parallelism, [&](std::size_t i) {
        auto& o = outcomes[i];
        try {
            const auto prompt = tmpl.render({{"[QUESTION]", records[i].query.text}});
            for (int pass = 0; pass < config.passes; ++pass) {
                ChatRequest req;
                req.prompt = prompt;
                req.temperature = kLabelingTemperature;
                req.model_id = config.model_id;
                req.sample = static_cast<std::uint32_t>(pass);
                o.raw.push_back(labeler.chat(req, &o.ledger, "label").text);
            }
        } catch (const std::exception& e) {
            o.error = e.what();
        }
    });

    LabelingResult out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& o = outcomes[i];
        out.ledger.insert(out.ledger.end(), o.ledger.begin(), o.ledger.end());
        std::vector<std::optional<KnowledgeLabel>> parsed;
        for (const auto& r : o.raw) parsed.push_back(parse_category(r));
        const bool unanimous = !o.error && parsed.size() == static_cast<std::size_t>(config.passes) && parsed[0] &&
                               std::all_of(parsed.begin(), parsed.end(), [&](const auto& p) { return p == parsed[0]; });
        const auto shown = [&](std::size_t k) -> std::string {
            if (k >= o.raw.size()) return "";
            return parsed[k] ? std::string(to_string(*parsed[k])) : o.raw[k];
        };
        if (unanimous) {
            LabeledRecord r = records[i];
            r.label = parsed[0];
            r.label_provenance = LabelProvenance::llm_agreed;
            r.pass1 = shown(0);
            r.pass2 = shown(1);
            out.agreed.push_back(std::move(r));
        } else {
            ReviewQueueItem item{records[i], shown(0), shown(1), ReviewStatus::pending, std::nullopt, o.error};
            item.record.pass1 = item.pass1;
            item.record.pass2 = item.pass2;
            out.queue.push_back(std::move(item));
        }
    }
    return out;
}

MergeResult merge_review(const std::vector<LabeledRecord>& agreed, const std::vector<ReviewQueueItem>& queue) {
    MergeResult out;
    out.records = agreed;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < out.records.size(); ++i) index[out.records[i].query.id] = i;
    for (const auto& item : queue) {
        switch (item.status) {
            case ReviewStatus::pending: ++out.pending; break;
            case ReviewStatus::discarded: ++out.discarded; break;
            case ReviewStatus::resolved: {
                ++out.resolved;
                LabeledRecord r = item.record;
                r.label = item.resolved_label;
                r.label_provenance = LabelProvenance::human_reviewed;
                r.pass1 = item.pass1;
                r.pass2 = item.pass2;
                if (auto it = index.find(r.query.id); it != index.end()) {
                    out.records[it->second] = std::move(r);
                } else {
                    index[r.query.id] = out.records.size();
                    out.records.push_back(std::move(r));
                }
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& default_topics() {
    static const std::vector<std::string> topics = {
        "History", "Literature", "Science", "Art",
        "Social Sciences", "Technology", "Philosophy", "Geography",
        "Culture", "Health", "Artificial Intelligence", "Machine Learning",
        "Big Data", "Blockchain", "Internet of Things", "Environmental Protection",
        "Sustainable Development", "Energy", "Finance", "Education",
        "Human Genetics", "Artificial Life", "Space Exploration", "Food Science",
        "Sports", "Psychology", "Political Science", "Economics",
        "Sociology", "Law"};
    return topics;
}

namespace {

std::string record_id(const std::string& topic, std::size_t n) {
    std::string slug;
    for (char c : ascii_lower(topic)) slug += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return "gen-" + slug + "-" + std::to_string(n);
}

void add_generated(GenerationResult& out, const std::string& question, const std::string& category,
                   const std::string& topic, const LanguageCode& lang) {
    const auto label = parse_category(category);
    if (!label || trim(question).empty()) {
        ++out.malformed;
        return;
    }
    LabeledRecord r{Query::make(record_id(topic, out.records.size()), trim(question), lang, std::nullopt, "multigen")};
    r.label = label;
    r.label_provenance = LabelProvenance::generated;
    out.records.push_back(std::move(r));
}

}  // namespace

GenerationResult parse_generation_reply(std::string_view reply, const std::string& topic, const LanguageCode& lang) {
    GenerationResult out;
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    const std::string_view body =
        open == std::string_view::npos ? reply
                                       : reply.substr(open, close == std::string_view::npos || close < open
                                                                ? std::string_view::npos
                                                                : close - open + 1);
    bool parsed = false;
    try {
        const auto j = json::parse(body);
        if (j.is_object()) {
            parsed = true;
            for (const auto& [q, cat] : j.items()) {
                if (!cat.is_string()) {
                    ++out.malformed;
                    continue;
                }
                add_generated(out, q, cat.get<std::string>(), topic, lang);
            }
        }
    } catch (const json::exception&) {
    }
    if (!parsed) {
        // Salvage line by line: each entry is "question": "category".
        static const std::regex entry(R"re(^\s*"((?:[^"\\]|\\.)*)"\s*[:：]\s*"((?:[^"\\]|\\.)*)"\s*,?\s*$)re");
        std::string line;
        std::istringstream in{std::string(body)};
        while (std::getline(in, line)) {
            const auto t = trim(line);
            if (t.empty() || t == "{" || t == "}" || t == "...") continue;
            std::smatch m;
            if (!std::regex_match(line, m, entry)) {
                ++out.malformed;
                continue;
            }
            std::string q;
            std::string c;
            try {
                q = json::parse("\"" + m[1].str() + "\"").get<std::string>();
                c = json::parse("\"" + m[2].str() + "\"").get<std::string>();
            } catch (const json::exception&) {
                ++out.malformed;
                continue;
            }
            add_generated(out, q, c, topic, lang);
        }
    }
    if (out.records.empty()) {
        throw Error(ErrorCode::UnparseableGeneration, "no usable entries for topic '" + topic + "'");
    }
    return out;
}

GenerationResult generate_synthetic(const std::string& topic, const ChatClient& generator,
                                    const TemplateSet& templates, const GenerationConfig& config, CallLedger* ledger) {
    if (std::find(config.topics.begin(), config.topics.end(), topic) == config.topics.end()) {
        throw Error(ErrorCode::InvalidInput, "topic '" + topic + "' is not in the configured topic list");
    }
    const auto& tmpl = templates.get("generation", lang("en"));
    ChatRequest req;
    req.prompt = tmpl.render({{"[TOPIC]", topic}});
    req.temperature = kLabelingTemperature;
    req.model_id = config.model_id;
    const auto reply = generator.chat(req, ledger, "generate").text;
    return parse_generation_reply(reply, topic, lang(config.lang));
}

}  // namespace lingbridge
