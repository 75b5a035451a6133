#include "lingbridge/pipeline.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/parallel.hpp"

#include <chrono>

namespace lingbridge {

using json = nlohmann::json;

void ModelDetector::add(std::shared_ptr<const DetectorModel> model) {
    if (!model) throw Error(ErrorCode::InvalidConfig, "null detector model");
    models_.insert_or_assign(model->language().value(), std::move(model));
}

Prediction ModelDetector::detect(const Query& query) const {
    auto it = models_.find(query.source_lang.value());
    if (it == models_.end()) {
        throw Error(ErrorCode::InvalidConfig, "no detector model loaded for " + query.source_lang.value());
    }
    return predict(*it->second, query.text);
}

std::string ModelDetector::identity() const {
    std::string out = "model-detector";
    for (const auto& [code, m] : models_) out += ":" + code + "=" + m->metadata().corpus_sha256.substr(0, 12);
    return out;
}

std::string_view to_string(AnswerMode mode) { return mode == AnswerMode::replace ? "replace" : "integrate"; }

AnswerMode parse_answer_mode(std::string_view s) {
    if (s == "replace") return AnswerMode::replace;
    if (s == "integrate") return AnswerMode::integrate;
    throw Error(ErrorCode::InvalidConfig, "mode must be replace or integrate, got '" + std::string(s) + "'");
}

std::string_view to_string(IntegrationKey key) {
    return key == IntegrationKey::output_language ? "output_language" : "selected_language";
}

IntegrationKey parse_integration_key(std::string_view s) {
    if (s == "output_language") return IntegrationKey::output_language;
    if (s == "selected_language") return IntegrationKey::selected_language;
    throw Error(ErrorCode::InvalidConfig, "integration key must be output_language or selected_language");
}

void PipelineConfig::validate() const {
    if (languages.size() < 2) throw Error(ErrorCode::InvalidConfig, "pipeline needs at least two languages");
    if (disable_selection && languages.size() != 2) {
        throw Error(ErrorCode::InvalidConfig, "disable_selection requires exactly two pipeline languages");
    }
    if (parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
    if (max_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "max_tokens must be positive");
}

json PipelineConfig::to_json() const {
    json langs = json::array();
    for (const auto& l : languages) langs.push_back(l.value());
    return {{"mode", std::string(to_string(mode))},
            {"languages", langs},
            {"disable_detector", disable_detector},
            {"disable_selection", disable_selection},
            {"direct_only", direct_only},
            {"integration_key", std::string(to_string(integration_key))},
            {"parallelism", parallelism},
            {"model_id", model_id},
            {"max_tokens", max_tokens}};
}

// ---------------------------------------------------------------------------

double CostSummary::mean_calls_per_query() const {
    return queries == 0 ? 0.0 : static_cast<double>(total_calls) / static_cast<double>(queries);
}

double CostSummary::mean_llm_calls_per_query() const {
    return queries == 0 ? 0.0 : static_cast<double>(llm_calls) / static_cast<double>(queries);
}

double CostSummary::mean_wall_ms_per_query() const {
    return queries == 0 ? 0.0 : total_wall_ms / static_cast<double>(queries);
}

json CostSummary::to_json(bool include_timing) const {
    json j{{"queries", queries},
           {"failed", failed},
           {"enhanced", enhanced},
           {"total_calls", total_calls},
           {"llm_calls", llm_calls},
           {"translator_calls", translator_calls},
           {"cached_calls", cached_calls},
           {"mean_calls_per_query", mean_calls_per_query()},
           {"mean_llm_calls_per_query", mean_llm_calls_per_query()}};
    if (include_timing) j["mean_wall_ms_per_query"] = mean_wall_ms_per_query();
    return j;
}

CostSummary summarize_cost(const std::vector<PipelineTrace>& traces) {
    CostSummary c;
    c.queries = traces.size();
    for (const auto& t : traces) {
        if (!t.ok()) ++c.failed;
        if (t.detector_verdict == 1) ++c.enhanced;
        c.total_calls += t.call_ledger.size();
        for (const auto& call : t.call_ledger) {
            if (call.kind == BackendKind::llm) ++c.llm_calls;
            if (call.kind == BackendKind::translator) ++c.translator_calls;
            if (call.cached) ++c.cached_calls;
        }
        c.total_wall_ms += t.wall_ms;
    }
    return c;
}

json deterministic_trace_json(const PipelineTrace& trace) {
    json j = trace;
    j.erase("wall_ms");
    for (auto& call : j["call_ledger"]) call.erase("latency_ms");
    return j;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<const QueryDetector> detector,
                   std::shared_ptr<ChatClient> llm, std::shared_ptr<TranslationClient> translator,
                   std::shared_ptr<const TemplateSet> templates, const LanguageRegistry& registry)
    : config_(std::move(config)), detector_(std::move(detector)), llm_(std::move(llm)),
      translator_(std::move(translator)), templates_(std::move(templates)), registry_(&registry) {
    config_.validate();
    if (!llm_ || !translator_ || !templates_) throw Error(ErrorCode::InvalidConfig, "pipeline needs llm, translator and templates");
    if (!detector_ && !config_.disable_detector && !config_.direct_only) {
        throw Error(ErrorCode::InvalidConfig, "pipeline needs a detector unless the detector is disabled");
    }
}

Pipeline Pipeline::with_config(PipelineConfig config) const {
    return Pipeline(std::move(config), detector_, llm_, translator_, templates_, *registry_);
}

ChatRequest Pipeline::request(std::string prompt) const {
    ChatRequest req;
    req.prompt = std::move(prompt);
    req.temperature = kPipelineTemperature;
    req.max_tokens = config_.max_tokens;
    req.model_id = config_.model_id;
    return req;
}

LanguageCode Pipeline::opposite_language(const LanguageCode& source) const {
    for (const auto& l : config_.languages) {
        if (l != source) return l;
    }
    throw Error(ErrorCode::InvalidConfig, "no language other than " + source.value() + " configured");
}

SelectionResult Pipeline::select_target_language(const Query& query, CallLedger* ledger) const {
    const auto& tmpl = templates_->get("selection", query.source_lang);
    const auto prompt = tmpl.render({}) + query.text;
    auto reply = llm_->chat(request(prompt), ledger, "select").text;
    if (auto chosen = registry_->last_mention(reply)) return SelectionResult{*chosen, false, std::move(reply)};
    return SelectionResult{opposite_language(query.source_lang), true, std::move(reply)};
}

void Pipeline::run_enhanced(const Query& query, PipelineTrace& trace) const {
    auto* ledger = &trace.call_ledger;
    const auto& source = query.source_lang;

    LanguageCode target = source;
    if (config_.disable_selection) {
        target = opposite_language(source);
        trace.selected_lang = target;
    } else {
        auto sel = select_target_language(query, ledger);
        target = sel.language;
        trace.selected_lang = target;
        trace.selection_parse_failed = sel.parse_failed;
        trace.selection_reply = std::move(sel.reply);
    }

    trace.translated_query = translator_->translate({query.text, target, source}, ledger, "query");
    const auto a_t = llm_->chat(request(*trace.translated_query), ledger, "target_answer").text;
    trace.answer_target = Answer{a_t, target, AnswerProvenance::target_lang_raw};

    if (config_.mode == AnswerMode::replace) {
        // A foreign-language answer must never pass through; translation errors propagate.
        auto back = translator_->translate({a_t, source, target}, ledger, "back");
        trace.answer_final = Answer{std::move(back), source, AnswerProvenance::replaced};
        return;
    }

    const auto a_o = llm_->chat(request(query.text), ledger, "original_answer").text;
    trace.answer_original = Answer{a_o, source, AnswerProvenance::direct};

    const auto zh = lang("zh");
    const auto en = lang("en");
    if (source != zh && source != en) {
        throw Error(ErrorCode::InvalidConfig, "integration is defined for en and zh sources only");
    }
    // The slot the target answer occupies is the one that is not the source's.
    const LanguageCode other_slot = source == zh ? en : zh;
    std::string target_slot_text = a_t;
    if (target != other_slot) {
        target_slot_text = translator_->translate({a_t, other_slot, target}, ledger, "bridge");
        trace.integration_bridged = true;
    }
    const std::string& ch_res = source == zh ? a_o : target_slot_text;
    const std::string& en_res = source == en ? a_o : target_slot_text;

    const LanguageCode template_lang =
        config_.integration_key == IntegrationKey::output_language ? source : target;
    const auto& tmpl = templates_->get("integration", template_lang);
    const auto prompt = tmpl.render({{"[[Q]]", query.text}, {"[[CH_RES]]", ch_res}, {"[[EN_RES]]", en_res}});
    auto merged = llm_->chat(request(prompt), ledger, "integrate").text;
    if (template_lang != source) merged = translator_->translate({merged, source, template_lang}, ledger, "back");
    trace.answer_final = Answer{std::move(merged), source, AnswerProvenance::integrated};
}

PipelineTrace Pipeline::run_query(const Query& query) const {
    PipelineTrace trace;
    trace.query_id = query.id;
    const auto start = std::chrono::steady_clock::now();
    try {
        if (config_.direct_only) {
            trace.detector_verdict = 0;
        } else if (config_.disable_detector) {
            trace.detector_verdict = 1;
        } else {
            const auto pred = detector_->detect(query);
            trace.detector_verdict = pred.label;
            trace.detector_score = pred.score;
        }
        if (trace.detector_verdict == 0) {
            auto text = llm_->chat(request(query.text), &trace.call_ledger, "direct").text;
            trace.answer_final = Answer{std::move(text), query.source_lang, AnswerProvenance::direct};
        } else {
            run_enhanced(query, trace);
        }
    } catch (const Error& e) {
        trace.error = e.what();
        trace.answer_final.reset();
    } catch (const std::exception& e) {
        trace.error = std::string("unexpected: ") + e.what();
        trace.answer_final.reset();
    }
    trace.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

BatchResult Pipeline::run_batch(const std::vector<Query>& queries) const {
    BatchResult result;
    result.traces.resize(queries.size());
    parallel_for(queries.size(), config_.parallelism, [&](std::size_t i) { result.traces[i] = run_query(queries[i]); });
    result.cost = summarize_cost(result.traces);
    return result;
}

}  // namespace lingbridge
