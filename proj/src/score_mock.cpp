#include "semshift/score_mock.hpp"

#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace semshift {

struct MockScoringServer::Impl {
  Options options;
  httplib::Server server;
  std::thread runner;
  int port = 0;
  std::atomic<std::size_t> requests{0};
  std::atomic<int> remaining_429{0};
  std::atomic<int> remaining_500{0};
};

double MockScoringServer::canned_score(const std::string& text) {
  // FNV-1a keeps the score independent of standard-library hash choices.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<double>(h % 10000) / 9999.0;
}

MockScoringServer::MockScoringServer() : MockScoringServer(Options()) {}

MockScoringServer::MockScoringServer(Options options)
    : impl_(std::make_unique<Impl>()) {
  impl_->options = options;
  impl_->remaining_429 = options.fail_429;
  impl_->remaining_500 = options.fail_500;

  impl_->server.Post("/score", [this](const httplib::Request& req,
                                      httplib::Response& res) {
    impl_->requests.fetch_add(1);
    const Options& opts = impl_->options;
    if (!opts.require_key.empty()) {
      auto auth = req.get_header_value("Authorization");
      if (auth != "Bearer " + opts.require_key) {
        res.status = 401;
        res.set_content("{\"error\":\"unauthorized\"}", "application/json");
        return;
      }
    }
    if (impl_->remaining_429.fetch_sub(1) > 0) {
      res.status = 429;
      res.set_content("{\"error\":\"rate limited\"}", "application/json");
      return;
    }
    if (impl_->remaining_500.fetch_sub(1) > 0) {
      res.status = 500;
      res.set_content("{\"error\":\"transient\"}", "application/json");
      return;
    }
    if (opts.malformed) {
      res.status = 200;
      res.set_content("this is not json", "text/plain");
      return;
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      res.status = 400;
      res.set_content("{\"error\":\"bad request\"}", "application/json");
      return;
    }
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& item : body["texts"]) {
      const std::string id = item["id"].get<std::string>();
      const std::string text = item.value("text", "");
      const double toxicity = opts.enabled_fixed_score ? opts.fixed_score
                                                       : canned_score(text);
      scores.push_back(
          {{"id", id},
           {"values",
            {{"toxicity", toxicity},
             {"severe_toxicity", toxicity * 0.5},
             {"insult", toxicity * 0.8}}}});
    }
    res.status = 200;
    res.set_content(nlohmann::json{{"scores", scores}}.dump(),
                    "application/json");
  });

  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  if (impl_->port <= 0) {
    throw std::runtime_error("mock scoring server could not bind a port");
  }
  impl_->runner = std::thread([this]() { impl_->server.listen_after_bind(); });
  for (int i = 0; i < 200 && !impl_->server.is_running(); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

MockScoringServer::~MockScoringServer() {
  impl_->server.stop();
  if (impl_->runner.joinable()) impl_->runner.join();
}

int MockScoringServer::port() const { return impl_->port; }

std::string MockScoringServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

std::size_t MockScoringServer::requests_seen() const {
  return impl_->requests.load();
}

}  // namespace semshift
