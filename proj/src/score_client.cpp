#include "semshift/score_client.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "semshift/rng.hpp"

namespace semshift {

namespace {

std::string strip_trailing_slash(std::string url) {
  while (!url.empty() && url.back() == '/') url.pop_back();
  return url;
}

bool retryable_status(int status) {
  return status == 429 || (status >= 500 && status <= 599);
}

std::string body_excerpt(const std::string& body) {
  constexpr std::size_t kMax = 160;
  if (body.size() <= kMax) return body;
  return body.substr(0, kMax) + "...";
}

using Batch = std::vector<std::pair<std::string, std::string>>;

nlohmann::json batch_request_body(const Batch& batch) {
  nlohmann::json texts = nlohmann::json::array();
  for (const auto& [id, text] : batch) {
    texts.push_back({{"id", id}, {"text", text}});
  }
  return nlohmann::json{{"texts", texts}};
}

/// Parses and validates one response body against the batch it answers.
ScoreMap parse_batch_response(const std::string& body, const Batch& batch) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw NetworkError("malformed scoring response (not JSON): " +
                       body_excerpt(body));
  }
  if (!j.is_object() || !j.contains("scores") || !j["scores"].is_array()) {
    throw NetworkError("malformed scoring response (no scores array): " +
                       body_excerpt(body));
  }
  std::unordered_set<std::string> expected;
  for (const auto& [id, text] : batch) expected.insert(id);

  ScoreMap scores;
  for (const auto& entry : j["scores"]) {
    if (!entry.is_object() || !entry.contains("id") ||
        !entry.contains("values") || !entry["values"].is_object()) {
      throw NetworkError("malformed score entry: " + body_excerpt(body));
    }
    const std::string id = entry["id"].get<std::string>();
    if (!expected.erase(id)) {
      throw NetworkError("response contains unexpected or duplicate id \"" +
                         id + "\"");
    }
    std::map<std::string, double> values;
    for (const auto& [name, value] : entry["values"].items()) {
      if (!value.is_number()) {
        throw NetworkError("non-numeric score for id \"" + id + "\"");
      }
      const double v = value.get<double>();
      if (!(v >= 0.0 && v <= 1.0)) {
        throw NetworkError("score " + std::to_string(v) + " for id \"" + id +
                           "\" (" + name + ") is outside [0,1]");
      }
      values[name] = v;
    }
    if (values.empty()) {
      throw NetworkError("empty score values for id \"" + id + "\"");
    }
    scores[id] = std::move(values);
  }
  if (!expected.empty()) {
    throw NetworkError("response is missing a score for id \"" +
                       *expected.begin() + "\"");
  }
  return scores;
}

}  // namespace

ScoringEndpoint ScoringEndpoint::from_env() {
  const char* url = std::getenv("SEMSHIFT_SCORE_URL");
  if (url == nullptr || *url == '\0') {
    throw NetworkError("SEMSHIFT_SCORE_URL is not set");
  }
  ScoringEndpoint endpoint;
  endpoint.base_url = url;
  if (const char* key = std::getenv("SEMSHIFT_SCORE_KEY")) {
    endpoint.api_key = key;
  }
  return endpoint;
}

ScoreMap read_score_checkpoint(const std::filesystem::path& path) {
  ScoreMap scores;
  std::ifstream in(path);
  if (!in) return scores;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      std::map<std::string, double> values;
      for (const auto& [name, value] : j.at("values").items()) {
        values[name] = value.get<double>();
      }
      scores[j.at("id").get<std::string>()] = std::move(values);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("checkpoint line " + std::to_string(line_no) +
                      " is invalid: " + e.what());
    }
  }
  return scores;
}

ScoreOutcome score_texts(
    const ScoringEndpoint& endpoint,
    const std::vector<std::pair<std::string, std::string>>& texts,
    const std::filesystem::path& checkpoint, Sleeper sleeper) {
  if (endpoint.batch_size < 1) {
    throw DataError("batch_size must be at least 1");
  }
  if (endpoint.retry.max_attempts < 1) {
    throw DataError("max_attempts must be at least 1");
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& [id, text] : texts) {
      if (!seen.insert(id).second) {
        throw DataError("duplicate text id \"" + id + "\"");
      }
    }
  }
  if (!sleeper) {
    sleeper = [](std::chrono::milliseconds delay) {
      std::this_thread::sleep_for(delay);
    };
  }

  ScoreOutcome outcome;
  ScoreMap completed;
  if (!checkpoint.empty() && std::filesystem::exists(checkpoint)) {
    completed = read_score_checkpoint(checkpoint);
  }

  std::vector<Batch> batches;
  {
    Batch current;
    for (const auto& item : texts) {
      auto done = completed.find(item.first);
      if (done != completed.end()) {
        outcome.scores[item.first] = done->second;
        continue;
      }
      current.push_back(item);
      if (current.size() == endpoint.batch_size) {
        batches.push_back(std::move(current));
        current.clear();
      }
    }
    if (!current.empty()) batches.push_back(std::move(current));
  }
  if (batches.empty()) return outcome;

  const std::string base = strip_trailing_slash(endpoint.base_url);
  std::atomic<std::size_t> next_batch{0};
  std::atomic<std::size_t> requests{0};
  std::atomic<bool> abort{false};
  std::mutex sink_mutex;  // guards outcome, checkpoint writes, first_error
  std::exception_ptr first_error;
  std::ofstream checkpoint_out;
  if (!checkpoint.empty()) {
    checkpoint_out.open(checkpoint, std::ios::app);
    if (!checkpoint_out) {
      throw Error("cannot open checkpoint " + checkpoint.string());
    }
  }

  auto run_batch = [&](std::size_t batch_index) {
    const Batch& batch = batches[batch_index];
    Xoshiro256 jitter_rng(
        derive_seed(endpoint.jitter_seed, {0x6a697474u, batch_index}));
    httplib::Client client(base);
    client.set_connection_timeout(endpoint.timeout.count(), 0);
    client.set_read_timeout(endpoint.timeout.count(), 0);
    client.set_write_timeout(endpoint.timeout.count(), 0);
    httplib::Headers headers;
    if (!endpoint.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + endpoint.api_key);
    }
    const std::string body = batch_request_body(batch).dump();

    std::string last_failure = "not attempted";
    for (int attempt = 1; attempt <= endpoint.retry.max_attempts; ++attempt) {
      if (abort.load()) return;
      if (attempt > 1) {
        const double scale =
            std::pow(endpoint.retry.factor, static_cast<double>(attempt - 2));
        const double jitter_factor =
            1.0 + endpoint.retry.jitter * (2.0 * jitter_rng.uniform01() - 1.0);
        const auto delay = std::chrono::milliseconds(static_cast<long>(
            static_cast<double>(endpoint.retry.base_delay.count()) * scale *
            jitter_factor));
        sleeper(delay);
        if (abort.load()) return;
      }
      requests.fetch_add(1);
      httplib::Result res = client.Post("/score", headers, body,
                                        "application/json");
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        continue;  // connection-level problems are worth retrying
      }
      if (res->status == 401 || res->status == 403) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        if (!first_error) {
          first_error = std::make_exception_ptr(NetworkError(
              "authentication failed (HTTP " + std::to_string(res->status) +
              ")"));
        }
        abort.store(true);
        return;
      }
      if (retryable_status(res->status)) {
        last_failure = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        if (!first_error) {
          first_error = std::make_exception_ptr(NetworkError(
              "unexpected HTTP " + std::to_string(res->status) + ": " +
              body_excerpt(res->body)));
        }
        abort.store(true);
        return;
      }
      ScoreMap scores;
      try {
        scores = parse_batch_response(res->body, batch);
      } catch (...) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        if (!first_error) first_error = std::current_exception();
        abort.store(true);
        return;
      }
      std::lock_guard<std::mutex> lock(sink_mutex);
      for (auto& [id, values] : scores) {
        if (checkpoint_out.is_open()) {
          nlohmann::json line;
          line["id"] = id;
          line["values"] = values;
          checkpoint_out << line.dump() << '\n';
        }
        outcome.scores[id] = std::move(values);
      }
      if (checkpoint_out.is_open()) checkpoint_out.flush();
      return;
    }
    // Retries exhausted: report every id of the batch.
    std::lock_guard<std::mutex> lock(sink_mutex);
    for (const auto& [id, text] : batch) {
      outcome.failures.push_back({id, last_failure});
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(std::max<std::size_t>(endpoint.max_in_flight, 1),
                            batches.size());
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (std::size_t b = next_batch.fetch_add(1); b < batches.size();
           b = next_batch.fetch_add(1)) {
        if (abort.load()) return;
        run_batch(b);
      }
    });
  }
  for (auto& th : pool) th.join();
  outcome.requests_issued = requests.load();
  if (first_error) std::rethrow_exception(first_error);
  return outcome;
}

MetadataTable merge_scores(const MetadataTable& metadata,
                           const ScoreMap& scores,
                           const std::string& provider) {
  std::vector<DocumentRecord> records = metadata.records();
  for (const auto& [id, values] : scores) {
    auto row = metadata.row_of(id);
    if (!row) {
      throw DataError("score id \"" + id + "\" is not in the metadata");
    }
    // Prefer the direct toxicity value; providers without one contribute
    // the maximum of their scores.
    double score;
    auto direct = values.find("toxicity");
    if (direct != values.end()) {
      score = direct->second;
    } else {
      if (values.empty()) {
        throw DataError("empty score values for id \"" + id + "\"");
      }
      score = 0.0;
      for (const auto& [name, v] : values) score = std::max(score, v);
    }
    records[*row].toxicity[provider] = score;
  }
  return MetadataTable(std::move(records));
}

}  // namespace semshift
