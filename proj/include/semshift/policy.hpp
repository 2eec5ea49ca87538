#ifndef SEMSHIFT_POLICY_HPP
#define SEMSHIFT_POLICY_HPP

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "semshift/distortion.hpp"
#include "semshift/gaussian.hpp"
#include "semshift/types.hpp"

namespace semshift {

// Content-moderation policies. Threshold removal is strict: a score equal
// to tau is retained, only scores exceeding it are removed.

struct ThresholdPolicy {
  std::string provider;
  double tau = 0.0;
};

struct RandomPolicy {
  double fraction = 0.0;  // removes round(fraction * N) rows
  std::uint64_t seed = 0;
};

struct MaxDistancePolicy {
  std::size_t count = 0;  // rows farthest from the full-selection centroid
};

struct TopicDropPolicy {
  std::set<std::int64_t> topics;
};

/// Replaces each row with score > tau by its rephrased counterpart; the
/// selection (and therefore N) is unchanged.
struct ReplacePolicy {
  std::string provider;
  double tau = 0.0;
};

using PolicySpec = std::variant<ThresholdPolicy, RandomPolicy,
                                MaxDistancePolicy, TopicDropPolicy,
                                ReplacePolicy>;

/// Applies a policy to a view, producing a new view. MaxDistance ties are
/// broken by retaining the lower row index. Random removal uses the
/// policy's own seed.
CorpusView apply_policy(const CorpusView& view, const PolicySpec& policy);

/// Removes exactly `count` selected rows chosen uniformly by the seeded
/// generator, preserving selection order of the survivors. This is the
/// primitive behind RandomPolicy and matched-count baselines.
CorpusView remove_random_exact(const CorpusView& view, std::size_t count,
                               std::uint64_t seed);

inline const std::vector<double> kDefaultTauGrid = {0.9, 0.8, 0.7, 0.6,
                                                    0.5, 0.4, 0.3};

enum class SweepMode { Remove, Replace };

struct SweepRow {
  double tau = 0.0;
  DistortionReport policy;
  DistortionReport random;
};

struct SweepTable {
  std::vector<SweepRow> rows;
};

/// Threshold (or rephrase-replacement) sweep over a descending tau grid.
/// The before-summary is fitted once. Each row carries a random baseline
/// that removes exactly as many rows as the policy affected at that tau;
/// its sub-seed derives from (seed, baseline arm, tau index).
SweepTable sweep(const CorpusView& view, const std::string& provider,
                 const std::vector<double>& taus, std::uint64_t seed,
                 SweepMode mode, const WeightingMode& weighting = {});

struct MaxBenchRow {
  double tau = 0.0;
  DistortionReport threshold;
  DistortionReport random;
  DistortionReport maxdist;
  double ratio_threshold_to_max = 0.0;
  std::string error;  // non-empty when this tau failed (e.g. singular fit)
};

struct MaxBenchTable {
  std::vector<MaxBenchRow> rows;
};

/// Per tau: threshold removal, random removal and max-distance removal at
/// matched counts, plus the ratio of threshold to max-distance distortion.
MaxBenchTable max_distortion_benchmark(const CorpusView& view,
                                       const std::string& provider,
                                       const std::vector<double>& taus,
                                       std::uint64_t seed,
                                       const WeightingMode& weighting = {});

struct TopicDrawDetail {
  std::size_t k = 0;
  std::size_t draw = 0;
  std::vector<std::int64_t> topics;
  double bcd = 0.0;
  double retained_fraction = 0.0;
  std::string error;
};

struct TopicDropRow {
  std::size_t k = 0;
  double mean_bcd = 0.0;
  double mean_retained = 0.0;
  std::size_t failed_draws = 0;
};

struct TopicDropTable {
  std::vector<TopicDropRow> rows;
  std::vector<TopicDrawDetail> details;
  std::size_t unlabeled_excluded = 0;
};

/// For each k: mean distortion over `draws` uniform draws of k distinct
/// topics dropped from the corpus. Rows without a topic label are excluded
/// up front and counted in unlabeled_excluded.
TopicDropTable topic_drop_benchmark(const CorpusView& view,
                                    const std::vector<std::size_t>& k_values,
                                    std::size_t draws, std::uint64_t seed,
                                    const WeightingMode& weighting = {});

struct TopicShiftRow {
  std::int64_t topic = 0;
  std::size_t n_before = 0;
  std::size_t n_removed = 0;
  double removal_share = 0.0;
};

struct TopicShiftTable {
  std::vector<TopicShiftRow> rows;  // sorted by removal share, descending
  std::size_t unlabeled_total = 0;
  std::size_t unlabeled_removed = 0;
};

/// Which topics lose the largest share of their rows under threshold
/// removal at tau.
TopicShiftTable topic_shift_report(const CorpusView& view,
                                   const std::string& provider, double tau);

/// Exact mean cosine similarity over all unordered pairs of a seeded
/// subsample, computed in O(n*D) via the unit-row sum identity
/// (||sum u_i||^2 - n) / (n (n-1)) rather than pair enumeration.
double mean_pairwise_cosine(const CorpusView& view, std::size_t subsample,
                            std::uint64_t seed);

// CSV emission (17-significant-digit floats, stable column order).
void write_sweep_csv(const SweepTable& table, const std::filesystem::path& path);
void write_benchmark_csv(const MaxBenchTable& table,
                         const std::filesystem::path& path);
void write_topic_drop_csv(const TopicDropTable& table,
                          const std::filesystem::path& path);
void write_topic_shift_csv(const TopicShiftTable& table,
                           const std::filesystem::path& path);

}  // namespace semshift

#endif  // SEMSHIFT_POLICY_HPP
