#pragma once

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <nlohmann/json.hpp>

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace testsupport {

/// Local OpenAI-compatible chat server plus a JSON translation endpoint.
/// Replies come from `reply`; every hit is counted and its body kept.
class MockServer {
public:
    using ReplyFn = std::function<std::string(const std::string& prompt)>;

    explicit MockServer(ReplyFn reply) : reply_(std::move(reply)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            chat_hits.fetch_add(1);
            {
                std::lock_guard<std::mutex> lock(mu_);
                bodies_.push_back(req.body);
                auth_.push_back(req.get_header_value("Authorization"));
            }
            if (fail_next.load() > 0) {
                fail_next.fetch_sub(1);
                res.status = fail_status.load();
                res.set_content("{}", "application/json");
                return;
            }
            const auto body = nlohmann::json::parse(req.body);
            const auto prompt = body.at("messages").at(0).at("content").get<std::string>();
            nlohmann::json out{{"id", "cmpl-1"},
                               {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply_(prompt)}}}}}},
                               {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 3}}}};
            res.set_content(out.dump(), "application/json");
        });
        server_.Post("/translate", [this](const httplib::Request& req, httplib::Response& res) {
            translate_hits.fetch_add(1);
            const auto body = nlohmann::json::parse(req.body);
            const auto to = body.at("to").get<std::string>();
            auto text = body.at("text").get<std::string>();
            if (text.rfind("@@", 0) == 0) {
                const auto end = text.find("@@", 2);
                if (end != std::string::npos) text = text.substr(end + 2);
            }
            res.set_content(nlohmann::json{{"translation", "@@" + to + "@@" + text}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    int port() const { return port_; }
    std::string chat_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    std::string translate_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/translate"; }

    std::vector<std::string> bodies() {
        std::lock_guard<std::mutex> lock(mu_);
        return bodies_;
    }
    std::vector<std::string> auth_headers() {
        std::lock_guard<std::mutex> lock(mu_);
        return auth_;
    }

    std::atomic<int> chat_hits{0};
    std::atomic<int> translate_hits{0};
    std::atomic<int> fail_next{0};
    std::atomic<int> fail_status{500};

private:
    ReplyFn reply_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mu_;
    std::vector<std::string> bodies_;
    std::vector<std::string> auth_;
};

}  // namespace testsupport
