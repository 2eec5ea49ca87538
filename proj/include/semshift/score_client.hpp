#ifndef SEMSHIFT_SCORE_CLIENT_HPP
#define SEMSHIFT_SCORE_CLIENT_HPP

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "semshift/types.hpp"

namespace semshift {

// Generic scoring-service client. Wire contract:
//   POST {base}/score
//   request  {"texts":  [{"id": s, "text": s}, ...]}
//   response {"scores": [{"id": s, "values": {"toxicity": f, ...}}, ...]}
// The API key travels as "Authorization: Bearer <key>" when present.

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  double factor = 2.0;   // exponential growth per attempt
  double jitter = 0.2;   // +-20% uniform jitter on each delay
};

struct ScoringEndpoint {
  std::string base_url;
  std::string api_key;
  std::size_t batch_size = 16;
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  std::chrono::seconds timeout{30};
  std::uint64_t jitter_seed = 0;

  /// Reads SEMSHIFT_SCORE_URL and SEMSHIFT_SCORE_KEY.
  static ScoringEndpoint from_env();
};

using ScoreMap = std::map<std::string, std::map<std::string, double>>;

struct ScoreFailure {
  std::string id;
  std::string reason;
};

struct ScoreOutcome {
  ScoreMap scores;
  std::vector<ScoreFailure> failures;
  std::size_t requests_issued = 0;  // HTTP attempts, including retries
};

/// Injectable sleep for tests; the default sleeps for real.
using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Scores every text, batching requests and running at most max_in_flight
/// batches concurrently. 429/5xx responses are retried with exponential
/// backoff and jitter; exhausted batches land in the failure report.
/// Authentication failures abort immediately; malformed responses and
/// out-of-range scores raise NetworkError with the offending detail.
/// When a checkpoint path is given, completed ids are appended there per
/// batch and skipped on reruns, so a completed run issues zero requests.
ScoreOutcome score_texts(
    const ScoringEndpoint& endpoint,
    const std::vector<std::pair<std::string, std::string>>& texts,
    const std::filesystem::path& checkpoint = {}, Sleeper sleeper = {});

/// Returns a copy of the metadata with the provider's score map entries
/// added or overwritten; ids in `scores` must all exist in the metadata.
/// Provider entries take the "toxicity" value from each score map.
MetadataTable merge_scores(const MetadataTable& metadata,
                           const ScoreMap& scores, const std::string& provider);

/// Loads a checkpoint file written by score_texts.
ScoreMap read_score_checkpoint(const std::filesystem::path& path);

}  // namespace semshift

#endif  // SEMSHIFT_SCORE_CLIENT_HPP
