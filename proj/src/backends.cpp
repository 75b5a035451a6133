#include "lingbridge/backends.hpp"

#include "lingbridge/error.hpp"
#include "lingbridge/hashing.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <thread>

namespace lingbridge {

using json = nlohmann::json;

json response_to_json(const ChatResponse& r) {
    json j{{"text", r.text}};
    if (r.token_logprobs) j["token_logprobs"] = *r.token_logprobs;
    if (r.usage) j["usage"] = {{"prompt_tokens", r.usage->prompt_tokens}, {"completion_tokens", r.usage->completion_tokens}};
    return j;
}

ChatResponse response_from_json(const json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    if (j.contains("token_logprobs")) r.token_logprobs = j["token_logprobs"].get<std::vector<double>>();
    if (j.contains("usage")) {
        r.usage = TokenUsage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                             j["usage"].value("completion_tokens", std::int64_t{0})};
    }
    return r;
}

json BackendConfig::to_json() const {
    return {{"endpoint", endpoint},       {"auth_env", auth_env},
            {"timeout_ms", timeout_ms},   {"max_retries", max_retries},
            {"requests_per_second", requests_per_second}, {"cache_path", cache_path}};
}

namespace {

void validate_logprobs(const ChatResponse& r) {
    if (!r.token_logprobs) return;
    for (double lp : *r.token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) {
            throw Error(ErrorCode::MalformedResponse, "token logprob must be finite and <= 0");
        }
    }
}

template <typename Fn>
auto with_retry(const RetryPolicy& policy, Clock& clock, Fn&& attempt) -> decltype(attempt()) {
    auto backoff = std::chrono::duration_cast<Clock::duration>(policy.base_backoff);
    for (int tries = 0;; ++tries) {
        try {
            return attempt();
        } catch (const Error& e) {
            if (!e.transient() || tries >= policy.max_retries) throw;
        }
        clock.sleep_for(backoff);
        backoff = Clock::duration{static_cast<Clock::duration::rep>(static_cast<double>(backoff.count()) * policy.multiplier)};
    }
}

double elapsed_ms(Clock::duration start, Clock::duration end) {
    return std::chrono::duration<double, std::milli>(end - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------

SteadyClock::duration SteadyClock::now() {
    return std::chrono::duration_cast<duration>(std::chrono::steady_clock::now().time_since_epoch());
}

void SteadyClock::sleep_for(duration d) { std::this_thread::sleep_for(d); }

RateLimiter::RateLimiter(double per_second, std::shared_ptr<Clock> clock)
    : cap_(static_cast<std::size_t>(std::floor(per_second))), clock_(std::move(clock)) {
    if (per_second < 1.0) throw Error(ErrorCode::InvalidConfig, "rate limit must allow at least one request per second");
    if (!clock_) clock_ = std::make_shared<SteadyClock>();
}

Clock::duration RateLimiter::acquire() {
    constexpr Clock::duration kWindow = std::chrono::seconds(1);
    std::lock_guard lock(mu_);
    for (;;) {
        const auto now = clock_->now();
        while (!issued_.empty() && issued_.front() <= now - kWindow) issued_.pop_front();
        if (issued_.size() < cap_) {
            issued_.push_back(now);
            return now;
        }
        clock_->sleep_for(issued_.front() + kWindow - now);
    }
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    std::ifstream in(dir_ / key, std::ios::binary);
    if (!in) return std::nullopt;
    std::string value((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    memo_.emplace(key, value);
    return value;
}

void ResponseCache::put(const std::string& key, const std::string& value) {
    std::lock_guard lock(mu_);
    memo_.emplace(key, value);
    const auto target = dir_ / key;
    if (std::filesystem::exists(target)) return;
    const auto tmp = dir_ / (key + ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::Io, "cannot write cache entry " + tmp.string());
        out << value;
    }
    std::filesystem::rename(tmp, target);
}

// ---------------------------------------------------------------------------

ChatClient::ChatClient(std::shared_ptr<ChatBackend> backend, RetryPolicy retry, std::shared_ptr<ResponseCache> cache,
                       std::shared_ptr<RateLimiter> limiter, std::shared_ptr<Clock> clock)
    : backend_(std::move(backend)), retry_(retry), cache_(std::move(cache)), limiter_(std::move(limiter)),
      clock_(clock ? std::move(clock) : std::make_shared<SteadyClock>()) {
    if (!backend_) throw Error(ErrorCode::InvalidConfig, "chat client needs a backend");
}

std::string ChatClient::cache_key(const ChatRequest& req) const {
    json k{{"kind", "chat"},           {"backend", backend_->identity()}, {"model", req.model_id},
           {"prompt", req.prompt},     {"temperature", req.temperature},  {"max_tokens", req.max_tokens},
           {"sample", req.sample},     {"logprobs", req.want_logprobs}};
    return sha256_hex(k.dump());
}

ChatResponse ChatClient::chat(const ChatRequest& req, CallLedger* ledger, std::string_view purpose,
                              BackendKind kind) const {
    if (req.temperature < 0.0) throw Error(ErrorCode::InvalidInput, "temperature must be >= 0");
    if (req.max_tokens <= 0) throw Error(ErrorCode::InvalidInput, "max_tokens must be positive");
    CallRecord record;
    record.kind = kind;
    record.purpose = std::string(purpose);
    const auto start = clock_->now();
    std::string key;
    if (cache_) {
        key = cache_key(req);
        if (auto hit = cache_->get(key)) {
            ChatResponse r;
            try {
                r = response_from_json(json::parse(*hit));
            } catch (const json::exception& e) {
                throw Error(ErrorCode::MalformedResponse, "corrupt cache entry " + key + ": " + e.what());
            }
            record.cached = true;
            if (r.usage) {
                record.prompt_tokens = r.usage->prompt_tokens;
                record.completion_tokens = r.usage->completion_tokens;
            }
            record.latency_ms = elapsed_ms(start, clock_->now());
            if (ledger) ledger->push_back(std::move(record));
            return r;
        }
    }
    ChatResponse r = with_retry(retry_, *clock_, [&] {
        if (limiter_) limiter_->acquire();
        return backend_->complete(req);
    });
    validate_logprobs(r);
    if (cache_) cache_->put(key, response_to_json(r).dump());
    if (r.usage) {
        record.prompt_tokens = r.usage->prompt_tokens;
        record.completion_tokens = r.usage->completion_tokens;
    }
    record.latency_ms = elapsed_ms(start, clock_->now());
    if (ledger) ledger->push_back(std::move(record));
    return r;
}

TranslationClient::TranslationClient(std::shared_ptr<Translator> translator, RetryPolicy retry,
                                     std::shared_ptr<ResponseCache> cache, std::shared_ptr<RateLimiter> limiter,
                                     std::shared_ptr<Clock> clock)
    : translator_(std::move(translator)), retry_(retry), cache_(std::move(cache)), limiter_(std::move(limiter)),
      clock_(clock ? std::move(clock) : std::make_shared<SteadyClock>()) {
    if (!translator_) throw Error(ErrorCode::InvalidConfig, "translation client needs a translator");
}

std::string TranslationClient::cache_key(const TranslationRequest& req) const {
    json k{{"kind", "translate"},
           {"backend", translator_->identity()},
           {"text", req.text},
           {"source", req.source ? req.source->value() : std::string()},
           {"target", req.target.value()}};
    return sha256_hex(k.dump());
}

std::string TranslationClient::translate(const TranslationRequest& req, CallLedger* ledger,
                                         std::string_view purpose) const {
    if (req.text.empty()) throw Error(ErrorCode::InvalidInput, "translation text is empty");
    CallRecord record;
    record.kind = BackendKind::translator;
    record.purpose = std::string(purpose);
    const auto start = clock_->now();
    std::string key;
    if (cache_) {
        key = cache_key(req);
        if (auto hit = cache_->get(key)) {
            record.cached = true;
            record.latency_ms = elapsed_ms(start, clock_->now());
            if (ledger) ledger->push_back(std::move(record));
            return *hit;
        }
    }
    std::string out = with_retry(retry_, *clock_, [&] {
        if (limiter_) limiter_->acquire();
        return translator_->translate(req);
    });
    if (cache_) cache_->put(key, out);
    record.latency_ms = elapsed_ms(start, clock_->now());
    if (ledger) ledger->push_back(std::move(record));
    return out;
}

// ---------------------------------------------------------------------------

ScriptRule ScriptRule::exact(std::string prompt, std::string reply) {
    return ScriptRule{Match::exact, {std::move(prompt)}, {std::move(reply)}, std::nullopt};
}

ScriptRule ScriptRule::contains(std::string needle, std::string reply) {
    return ScriptRule{Match::contains, {std::move(needle)}, {std::move(reply)}, std::nullopt};
}

ScriptRule ScriptRule::contains_all(std::vector<std::string> needles, std::string reply) {
    return ScriptRule{Match::contains, std::move(needles), {std::move(reply)}, std::nullopt};
}

Script Script::from_json(const json& doc) {
    Script s;
    for (const auto& r : doc.value("rules", json::array())) {
        ScriptRule rule;
        if (r.contains("exact")) {
            rule.match = ScriptRule::Match::exact;
            rule.patterns = {r["exact"].get<std::string>()};
        } else if (r.contains("prompt_sha256")) {
            rule.match = ScriptRule::Match::prompt_sha256;
            rule.patterns = {r["prompt_sha256"].get<std::string>()};
        } else if (r.contains("contains")) {
            rule.match = ScriptRule::Match::contains;
            if (r["contains"].is_array()) {
                rule.patterns = r["contains"].get<std::vector<std::string>>();
            } else {
                rule.patterns = {r["contains"].get<std::string>()};
            }
        } else {
            throw Error(ErrorCode::InvalidConfig, "script rule needs exact, prompt_sha256 or contains");
        }
        if (r.contains("replies")) {
            rule.replies = r["replies"].get<std::vector<std::string>>();
        } else {
            rule.replies = {r.at("reply").get<std::string>()};
        }
        if (r.contains("logprobs")) rule.logprobs = r["logprobs"].get<std::vector<double>>();
        s.rules.push_back(std::move(rule));
    }
    if (doc.contains("default")) s.default_reply = doc["default"].get<std::string>();
    s.probes = doc.value("probes", std::vector<std::string>{});
    return s;
}

Script Script::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open script " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

ScriptedBackend::ScriptedBackend(Script script, std::string name)
    : script_(std::move(script)), name_(std::move(name)), served_(script_.rules.size(), 0) {
    for (std::size_t i = 0; i < script_.rules.size(); ++i) {
        const auto& rule = script_.rules[i];
        if (rule.replies.empty()) throw Error(ErrorCode::InvalidConfig, "script rule without reply");
        if (rule.patterns.empty()) throw Error(ErrorCode::InvalidConfig, "script rule without pattern");
        switch (rule.match) {
            case ScriptRule::Match::exact:
                if (!exact_.emplace(rule.patterns.front(), i).second) {
                    throw Error(ErrorCode::AmbiguousScript, "duplicate exact rule");
                }
                break;
            case ScriptRule::Match::prompt_sha256:
                if (!by_hash_.emplace(ascii_lower(rule.patterns.front()), i).second) {
                    throw Error(ErrorCode::AmbiguousScript, "duplicate prompt hash rule");
                }
                break;
            case ScriptRule::Match::contains:
                substring_rules_.push_back(i);
                break;
        }
    }
    for (const auto& probe : script_.probes) {
        if (substring_matches(probe).size() > 1) {
            throw Error(ErrorCode::AmbiguousScript, "probe matches several substring rules: " + probe.substr(0, 80));
        }
    }
}

std::vector<std::size_t> ScriptedBackend::substring_matches(const std::string& prompt) const {
    std::vector<std::size_t> out;
    for (std::size_t i : substring_rules_) {
        bool all = true;
        for (const auto& p : script_.rules[i].patterns) {
            if (prompt.find(p) == std::string::npos) {
                all = false;
                break;
            }
        }
        if (all) out.push_back(i);
    }
    return out;
}

ChatResponse ScriptedBackend::reply_from(std::size_t rule_index) {
    const auto& rule = script_.rules[rule_index];
    std::size_t n;
    {
        std::lock_guard lock(mu_);
        n = served_[rule_index]++;
    }
    ChatResponse r;
    r.text = rule.replies[n % rule.replies.size()];
    r.token_logprobs = rule.logprobs;
    return r;
}

ChatResponse ScriptedBackend::complete(const ChatRequest& req) {
    note_call();
    if (auto it = exact_.find(req.prompt); it != exact_.end()) return reply_from(it->second);
    if (!by_hash_.empty()) {
        if (auto it = by_hash_.find(sha256_hex(req.prompt)); it != by_hash_.end()) return reply_from(it->second);
    }
    auto matches = substring_matches(req.prompt);
    if (matches.size() > 1) {
        throw Error(ErrorCode::AmbiguousScript, "prompt matches several substring rules");
    }
    if (matches.size() == 1) return reply_from(matches.front());
    if (script_.fallback) return ChatResponse{script_.fallback(req), std::nullopt, std::nullopt};
    if (script_.default_reply) return ChatResponse{*script_.default_reply, std::nullopt, std::nullopt};
    throw Error(ErrorCode::ScriptMiss, "no script rule matches prompt: " + req.prompt.substr(0, 80));
}

// ---------------------------------------------------------------------------

std::string mock_mark(const LanguageCode& lang, std::string_view payload) {
    std::string out = "@@" + lang.value() + "@@";
    out.append(payload);
    return out;
}

std::optional<MockMarker> parse_mock_marker(std::string_view text) {
    if (text.size() < 5 || text.substr(0, 2) != "@@") return std::nullopt;
    const auto close = text.find("@@", 2);
    if (close == std::string_view::npos || close == 2 || close > 12) return std::nullopt;
    const auto code = text.substr(2, close - 2);
    for (char c : code) {
        if (!(c >= 'a' && c <= 'z') && c != '-') return std::nullopt;
    }
    return MockMarker{std::string(code), text.substr(close + 2)};
}

std::string MockTranslator::translate(const TranslationRequest& req) {
    note_call();
    if (req.text.empty()) throw Error(ErrorCode::InvalidInput, "translation text is empty");
    std::string_view payload = req.text;
    if (auto m = parse_mock_marker(req.text)) payload = m->payload;
    return mock_mark(req.target, payload);
}

}  // namespace lingbridge
