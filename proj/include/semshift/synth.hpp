#ifndef SEMSHIFT_SYNTH_HPP
#define SEMSHIFT_SYNTH_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "semshift/gaussian.hpp"
#include "semshift/types.hpp"

namespace semshift {

/// One mixture component: axis-aligned Gaussian plus a clipped-normal
/// toxicity distribution. Clipping piles mass at 0 and 1, which mimics how
/// real toxicity scores bunch at the extremes.
struct ComponentSpec {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd cov_diag;  // per-dimension variances
  double toxicity_mean = 0.0;
  double toxicity_spread = 0.0;
};

/// Synthetic corpus recipe.
///
/// When language_gain > 0, each row is shifted along a designated "toxic
/// language" axis in proportion to its toxicity score, modeling wording
/// (rather than content) that tracks toxicity.
///
/// When rephrase_shrink is in [0,1], every row gains a rephrased
/// counterpart: its content part is pulled toward the component mean by
/// that factor (1 keeps the original, 0 collapses to the mean), the
/// language-axis shift is rebuilt from the reduced toxicity score, and
/// rephrase_jitter adds wording noise with decaying variance across the
/// language axes — so toxic/rephrased differences carry a dominant mean
/// direction plus a decaying spectrum, like real rephrasing does.
/// Counterparts are appended after the original rows and linked through
/// rephrased_of.
struct ScenarioSpec {
  std::string name;
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<ComponentSpec> components;
  std::uint64_t seed = 0;
  double rephrase_shrink = -1.0;   // < 0: no counterparts
  double language_gain = 0.0;      // score-proportional shift, first language axis
  std::size_t language_axes = 10;  // axes used for rephrase jitter
  double rephrase_jitter = 0.0;    // base jitter variance, decays per axis

  ScenarioSpec with_size(std::size_t rows, std::size_t dims) const;
  ScenarioSpec with_seed(std::uint64_t s) const;
};

/// First embedding coordinate reserved for the language axes (when the
/// dimensionality allows).
inline constexpr std::size_t kLanguageAxisBase = 4;

/// Coordinate carrying the shared cone offset of the stock scenarios.
inline constexpr std::size_t kSharedConeAxis = 14;

struct ComponentTruth {
  double weight = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd cov_diag;
};

/// Exact generating parameters plus the per-row component labels
/// (counterpart rows inherit the label of their original).
struct GroundTruth {
  std::vector<ComponentTruth> components;
  std::vector<std::uint32_t> labels;
};

struct SynthCorpus {
  EmbeddingMatrix matrix;
  MetadataTable metadata;
  GroundTruth truth;
};

/// Samples the mixture. Rows are generated in fixed 8192-row blocks with
/// per-block derived seeds, so output is byte-identical for a given spec
/// regardless of execution order. Toxicity scores land under the provider
/// name "synthetic".
SynthCorpus generate(const ScenarioSpec& spec);

/// Provider name attached to generated scores.
inline constexpr const char* kSynthProvider = "synthetic";

/// Exact Gaussian parameters for the closed-form distance.
struct GaussianParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Bhattacharyya distance evaluated on exact parameters; shares the
/// fitted-summary arithmetic so estimator tests exercise one code path.
double closed_form_bcd(const GaussianParams& p, const GaussianParams& q);

/// The three stock scenarios:
///   S1 "toxicity-coupled": five components, one highly toxic and offset.
///   S2 "separated-topics": five well-separated components, all benign.
///   S3 "rephrasable":      S1 plus rephrased counterparts (shrink 0.8).
/// All default to n = 100000, d = 64 and seed 0; override via with_size /
/// with_seed.
ScenarioSpec scenario_s1();
ScenarioSpec scenario_s2();
ScenarioSpec scenario_s3();
ScenarioSpec scenario_by_name(const std::string& name);

}  // namespace semshift

#endif  // SEMSHIFT_SYNTH_HPP
