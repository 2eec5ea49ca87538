#ifndef SEMSHIFT_SCORE_MOCK_HPP
#define SEMSHIFT_SCORE_MOCK_HPP

#include <cstddef>
#include <memory>
#include <string>

namespace semshift {

/// In-process scoring service implementing the POST /score contract, used
/// by the test suites and available for offline CLI experiments. Scores are
/// a deterministic hash of the text unless fixed_score overrides them.
class MockScoringServer {
 public:
  struct Options {
    std::string require_key;  // when set, requests need this bearer token
    int fail_429 = 0;         // first N requests answer 429
    int fail_500 = 0;         // then N requests answer 500
    bool malformed = false;   // reply with a non-JSON body
    bool enabled_fixed_score = false;
    double fixed_score = 0.0;  // may be out of range to probe validation
  };

  MockScoringServer();
  explicit MockScoringServer(Options options);
  ~MockScoringServer();
  MockScoringServer(const MockScoringServer&) = delete;
  MockScoringServer& operator=(const MockScoringServer&) = delete;

  int port() const;
  std::string base_url() const;
  std::size_t requests_seen() const;

  /// The deterministic score the server assigns to a text.
  static double canned_score(const std::string& text);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semshift

#endif  // SEMSHIFT_SCORE_MOCK_HPP
