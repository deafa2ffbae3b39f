#include "mock_chat_server.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <stdexcept>

namespace mock {

using nlohmann::json;

Responder scripted(const json& script) {
  auto counter = std::make_shared<std::atomic<int>>(0);
  return [script, counter](const CapturedRequest& req) -> Reply {
    const int n = (*counter)++;
    if (n < script.value("fail_first", 0)) return {503, ""};
    if (script.contains("require_key") &&
        req.authorization != "Bearer " + script["require_key"].get<std::string>()) {
      return {401, ""};
    }
    std::string text = script.value("default", std::string("I am not sure."));
    if (script.contains("patients") && script["patients"].contains(req.patient_id)) {
      const auto& list = script["patients"][req.patient_id];
      if (list.is_string()) {
        text = list.get<std::string>();
      } else if (!list.empty()) {
        const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(req.attempt, 1)) - 1, list.size() - 1);
        text = list[k].get<std::string>();
      }
    }
    if (!text.empty() && text[0] == '@') return {std::stoi(text.substr(1)), ""};
    return {200, text};
  };
}

MockChatServer::MockChatServer(Responder responder, int port)
    : responder_(std::move(responder)), server_(std::make_unique<httplib::Server>()) {
  server_->Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    CapturedRequest cap;
    cap.patient_id = req.get_header_value("X-Zsc-Patient");
    const auto attempt = req.get_header_value("X-Zsc-Attempt");
    cap.attempt = attempt.empty() ? 0 : std::stoi(attempt);
    cap.authorization = req.get_header_value("Authorization");
    try {
      cap.body = json::parse(req.body);
    } catch (const json::exception&) {
      cap.body = req.body;
    }
    {
      std::lock_guard lock(mu_);
      captured_.push_back(cap);
    }
    const Reply r = responder_(cap);
    res.status = r.status;
    if (r.status == 200) {
      const json body = {{"id", "mock"},
                         {"object", "chat.completion"},
                         {"choices", json::array({{{"index", 0},
                                                   {"message", {{"role", "assistant"}, {"content", r.content}}},
                                                   {"finish_reason", "stop"}}})}};
      res.set_content(body.dump(), "application/json");
    }
  });
  if (port > 0) {
    if (!server_->bind_to_port("127.0.0.1", port)) throw std::runtime_error("mock server cannot bind port");
    port_ = port;
  } else {
    port_ = server_->bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw std::runtime_error("mock server cannot bind");
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

MockChatServer::~MockChatServer() { stop(); }

void MockChatServer::stop() {
  if (thread_.joinable()) {
    server_->stop();
    thread_.join();
  }
}

std::string MockChatServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

std::vector<CapturedRequest> MockChatServer::requests() const {
  std::lock_guard lock(mu_);
  return captured_;
}

std::size_t MockChatServer::request_count() const {
  std::lock_guard lock(mu_);
  return captured_.size();
}

}  // namespace mock
