#pragma once

#include "lingbridge/core.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace lingbridge {

// ---------------------------------------------------------------------------
// Requests and responses

/// Temperature used for every main-pipeline call.
inline constexpr double kPipelineTemperature = 0.0;
/// Temperature used by the two-pass labeling workflow.
inline constexpr double kLabelingTemperature = 1.0;
inline constexpr int kDefaultMaxTokens = 1024;

struct ChatRequest {
    std::string prompt;
    double temperature = kPipelineTemperature;
    int max_tokens = kDefaultMaxTokens;
    std::string model_id;
    /// Distinguishes repeated samples of the same prompt in the cache key. Never sent on the wire.
    std::uint32_t sample = 0;
    bool want_logprobs = false;
};

struct TokenUsage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct ChatResponse {
    std::string text;
    std::optional<std::vector<double>> token_logprobs;
    std::optional<TokenUsage> usage;
};

nlohmann::json response_to_json(const ChatResponse& r);
ChatResponse response_from_json(const nlohmann::json& j);

struct TranslationRequest {
    std::string text;
    LanguageCode target;
    std::optional<LanguageCode> source;
};

/// Transport settings for an HTTP backend. The API key itself is never held here,
/// only the name of the environment variable carrying it.
struct BackendConfig {
    std::string endpoint;
    std::string auth_env;
    int timeout_ms = 30000;
    int max_retries = 3;
    double requests_per_second = 0.0;  // 0 disables rate limiting
    std::string cache_path;

    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Backend interfaces

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// One attempt; throws Error on failure. Retries live in ChatClient.
    virtual ChatResponse complete(const ChatRequest& req) = 0;
    /// Stable identity used in cache keys and manifests (host + model, never secrets).
    virtual std::string identity() const = 0;

    std::uint64_t calls() const noexcept { return calls_.load(); }

protected:
    void note_call() noexcept { calls_.fetch_add(1); }

private:
    std::atomic<std::uint64_t> calls_{0};
};

class Translator {
public:
    virtual ~Translator() = default;
    virtual std::string translate(const TranslationRequest& req) = 0;
    virtual std::string identity() const = 0;

    std::uint64_t calls() const noexcept { return calls_.load(); }

protected:
    void note_call() noexcept { calls_.fetch_add(1); }

private:
    std::atomic<std::uint64_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Clocks, rate limiting, caching

class Clock {
public:
    using duration = std::chrono::microseconds;
    virtual ~Clock() = default;
    virtual duration now() = 0;
    virtual void sleep_for(duration d) = 0;
};

class SteadyClock final : public Clock {
public:
    duration now() override;
    void sleep_for(duration d) override;
};

/// Deterministic clock for tests: sleeping advances time instantly.
class VirtualClock final : public Clock {
public:
    duration now() override { return duration{now_.load()}; }
    void sleep_for(duration d) override { now_.fetch_add(d.count()); }
    void advance(duration d) { now_.fetch_add(d.count()); }

private:
    std::atomic<std::int64_t> now_{0};
};

/// Sliding one-second window limiter; the single synchronization point shared by backends.
class RateLimiter {
public:
    RateLimiter(double per_second, std::shared_ptr<Clock> clock);

    /// Blocks (via the clock) until a request may be issued; returns the issue time.
    Clock::duration acquire();

private:
    std::size_t cap_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::deque<Clock::duration> issued_;
};

/// Append-only on-disk cache: one file per request hash holding the raw response.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> get(const std::string& key);
    /// Existing entries are never overwritten.
    void put(const std::string& key, const std::string& value);

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::mutex mu_;
    std::unordered_map<std::string, std::string> memo_;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{200};
    double multiplier = 2.0;
};

// ---------------------------------------------------------------------------
// Clients: retry + rate limit + cache + ledger around a backend

class ChatClient {
public:
    ChatClient(std::shared_ptr<ChatBackend> backend, RetryPolicy retry = {},
               std::shared_ptr<ResponseCache> cache = nullptr, std::shared_ptr<RateLimiter> limiter = nullptr,
               std::shared_ptr<Clock> clock = nullptr);

    /// Issues the request, appending one ledger record tagged with `purpose`.
    ChatResponse chat(const ChatRequest& req, CallLedger* ledger, std::string_view purpose,
                      BackendKind kind = BackendKind::llm) const;

    std::string cache_key(const ChatRequest& req) const;
    ChatBackend& backend() const { return *backend_; }
    const std::shared_ptr<ChatBackend>& backend_ptr() const { return backend_; }

private:
    std::shared_ptr<ChatBackend> backend_;
    RetryPolicy retry_;
    std::shared_ptr<ResponseCache> cache_;
    std::shared_ptr<RateLimiter> limiter_;
    std::shared_ptr<Clock> clock_;
};

class TranslationClient {
public:
    TranslationClient(std::shared_ptr<Translator> translator, RetryPolicy retry = {},
                      std::shared_ptr<ResponseCache> cache = nullptr, std::shared_ptr<RateLimiter> limiter = nullptr,
                      std::shared_ptr<Clock> clock = nullptr);

    std::string translate(const TranslationRequest& req, CallLedger* ledger, std::string_view purpose) const;

    std::string cache_key(const TranslationRequest& req) const;
    Translator& translator() const { return *translator_; }

private:
    std::shared_ptr<Translator> translator_;
    RetryPolicy retry_;
    std::shared_ptr<ResponseCache> cache_;
    std::shared_ptr<RateLimiter> limiter_;
    std::shared_ptr<Clock> clock_;
};

// ---------------------------------------------------------------------------
// Scripted chat backend

struct ScriptRule {
    enum class Match { exact, prompt_sha256, contains };
    Match match = Match::contains;
    /// exact / prompt_sha256: one pattern. contains: every pattern must occur.
    std::vector<std::string> patterns;
    /// Replies are served in order and cycle once exhausted.
    std::vector<std::string> replies;
    std::optional<std::vector<double>> logprobs;

    static ScriptRule exact(std::string prompt, std::string reply);
    static ScriptRule contains(std::string needle, std::string reply);
    static ScriptRule contains_all(std::vector<std::string> needles, std::string reply);
};

struct Script {
    std::vector<ScriptRule> rules;
    std::optional<std::string> default_reply;
    /// Consulted for unmatched prompts before default_reply.
    std::function<std::string(const ChatRequest&)> fallback;
    /// Prompts used at construction to prove the substring rules are disjoint.
    std::vector<std::string> probes;

    static Script from_json(const nlohmann::json& doc);
    static Script load(const std::filesystem::path& path);
};

class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(Script script, std::string name = "scripted");

    ChatResponse complete(const ChatRequest& req) override;
    std::string identity() const override { return name_; }

private:
    std::vector<std::size_t> substring_matches(const std::string& prompt) const;
    ChatResponse reply_from(std::size_t rule_index);

    Script script_;
    std::string name_;
    std::unordered_map<std::string, std::size_t> exact_;
    std::unordered_map<std::string, std::size_t> by_hash_;
    std::vector<std::size_t> substring_rules_;
    std::mutex mu_;
    std::vector<std::size_t> served_;
};

/// Adapter for code-defined chat behavior.
class FunctionBackend final : public ChatBackend {
public:
    using Fn = std::function<ChatResponse(const ChatRequest&)>;
    FunctionBackend(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}
    ChatResponse complete(const ChatRequest& req) override {
        note_call();
        return fn_(req);
    }
    std::string identity() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Mock translation: "@@<lang>@@<payload>"

std::string mock_mark(const LanguageCode& lang, std::string_view payload);

struct MockMarker {
    std::string lang;
    std::string_view payload;
};

/// Splits a leading "@@<lang>@@" marker; nullopt when absent.
std::optional<MockMarker> parse_mock_marker(std::string_view text);

/// Strips any existing marker, then prefixes the target's marker. Lossless and invertible.
class MockTranslator final : public Translator {
public:
    std::string translate(const TranslationRequest& req) override;
    std::string identity() const override { return "mock"; }
};

class FunctionTranslator final : public Translator {
public:
    using Fn = std::function<std::string(const TranslationRequest&)>;
    FunctionTranslator(Fn fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {}
    std::string translate(const TranslationRequest& req) override {
        note_call();
        return fn_(req);
    }
    std::string identity() const override { return name_; }

private:
    Fn fn_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// HTTP backends

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;
};

ParsedUrl parse_url(const std::string& url);

/// OpenAI-compatible chat-completions client (single attempt per call).
class HttpChatBackend final : public ChatBackend {
public:
    HttpChatBackend(BackendConfig config, std::string model_id);

    ChatResponse complete(const ChatRequest& req) override;
    std::string identity() const override;

    /// Wire body for a request; exposed for contract tests.
    static nlohmann::json request_body(const ChatRequest& req, const std::string& model_id);
    static ChatResponse parse_response_body(const std::string& body);

private:
    BackendConfig config_;
    std::string model_id_;
    ParsedUrl url_;
};

/// JSON translation service: POST {"text","from","to"} -> {"translation"}.
class HttpTranslator final : public Translator {
public:
    explicit HttpTranslator(BackendConfig config);

    std::string translate(const TranslationRequest& req) override;
    std::string identity() const override;

private:
    BackendConfig config_;
    ParsedUrl url_;
};

}  // namespace lingbridge
