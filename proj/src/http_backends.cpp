#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "lingbridge/backends.hpp"
#include "lingbridge/error.hpp"

#include <cstdlib>
#include <regex>

namespace lingbridge {

using json = nlohmann::json;

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?)://([^/:]+)(?::(\d+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw Error(ErrorCode::InvalidConfig, "malformed endpoint URL '" + url + "'");
    ParsedUrl out;
    out.scheme = m[1].str();
    out.host = m[2].str();
    out.port = m[3].matched ? std::stoi(m[3].str()) : (out.scheme == "https" ? 443 : 80);
    out.path = m[4].matched ? m[4].str() : "/";
    return out;
}

namespace {

std::unique_ptr<httplib::Client> make_client(const ParsedUrl& url, int timeout_ms) {
    auto cli = std::make_unique<httplib::Client>(url.scheme + "://" + url.host + ":" + std::to_string(url.port));
    const auto t = std::chrono::milliseconds(timeout_ms);
    cli->set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    cli->set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    cli->set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(t));
    return cli;
}

httplib::Headers auth_headers(const BackendConfig& config) {
    httplib::Headers h;
    if (!config.auth_env.empty()) {
        const char* secret = std::getenv(config.auth_env.c_str());
        if (!secret || !*secret) {
            throw Error(ErrorCode::AuthFailure, "environment variable " + config.auth_env + " is not set");
        }
        h.emplace("Authorization", std::string("Bearer ") + secret);
    }
    return h;
}

std::string post_json(const BackendConfig& config, const ParsedUrl& url, const json& body) {
    auto cli = make_client(url, config.timeout_ms);
    auto res = cli->Post(url.path, auth_headers(config), body.dump(), "application/json");
    if (!res) {
        throw Error(ErrorCode::Timeout, url.host + ": " + httplib::to_string(res.error()));
    }
    const int status = res->status;
    if (status == 401 || status == 403) throw Error(ErrorCode::AuthFailure, url.host + " rejected credentials");
    if (status == 429) throw Error(ErrorCode::RateLimited, url.host + " returned 429");
    if (status >= 500) throw Error(ErrorCode::Timeout, url.host + " unavailable (HTTP " + std::to_string(status) + ")");
    if (status < 200 || status >= 300) {
        throw Error(ErrorCode::MalformedResponse, url.host + " returned HTTP " + std::to_string(status));
    }
    return res->body;
}

}  // namespace

HttpChatBackend::HttpChatBackend(BackendConfig config, std::string model_id)
    : config_(std::move(config)), model_id_(std::move(model_id)), url_(parse_url(config_.endpoint)) {}

std::string HttpChatBackend::identity() const {
    return "openai:" + url_.host + ":" + std::to_string(url_.port) + "/" + model_id_;
}

json HttpChatBackend::request_body(const ChatRequest& req, const std::string& model_id) {
    json body{{"model", req.model_id.empty() ? model_id : req.model_id},
              {"messages", json::array({{{"role", "user"}, {"content", req.prompt}}})},
              {"temperature", req.temperature},
              {"max_tokens", req.max_tokens}};
    if (req.want_logprobs) body["logprobs"] = true;
    return body;
}

ChatResponse HttpChatBackend::parse_response_body(const std::string& body) {
    try {
        const auto j = json::parse(body);
        const auto& choice = j.at("choices").at(0);
        ChatResponse r;
        r.text = choice.at("message").at("content").get<std::string>();
        if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains("content") &&
            choice["logprobs"]["content"].is_array()) {
            std::vector<double> lps;
            for (const auto& tok : choice["logprobs"]["content"]) lps.push_back(tok.at("logprob").get<double>());
            r.token_logprobs = std::move(lps);
        }
        if (j.contains("usage") && j["usage"].is_object()) {
            r.usage = TokenUsage{j["usage"].value("prompt_tokens", std::int64_t{0}),
                                 j["usage"].value("completion_tokens", std::int64_t{0})};
        }
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("chat-completions body: ") + e.what());
    }
}

ChatResponse HttpChatBackend::complete(const ChatRequest& req) {
    note_call();
    return parse_response_body(post_json(config_, url_, request_body(req, model_id_)));
}

HttpTranslator::HttpTranslator(BackendConfig config) : config_(std::move(config)), url_(parse_url(config_.endpoint)) {}

std::string HttpTranslator::identity() const { return "http-translate:" + url_.host + ":" + std::to_string(url_.port); }

std::string HttpTranslator::translate(const TranslationRequest& req) {
    note_call();
    json body{{"text", req.text}, {"to", req.target.value()}};
    body["from"] = req.source ? req.source->value() : std::string("auto");
    const auto raw = post_json(config_, url_, body);
    try {
        return json::parse(raw).at("translation").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("translation body: ") + e.what());
    }
}

}  // namespace lingbridge
