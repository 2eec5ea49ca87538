#ifndef SEMSHIFT_DISTORTION_HPP
#define SEMSHIFT_DISTORTION_HPP

#include <array>
#include <cstddef>
#include <string>

#include "semshift/gaussian.hpp"

namespace semshift {

/// Bhattacharyya distance between two Gaussian summaries, split into its
/// two additive terms: a Mahalanobis mean-shift term and a log-determinant
/// variance term. gvi_log_ratio is the log ratio of the generalized
/// variance index (det of the covariance) after vs. before.
struct DistortionReport {
  double bcd = 0.0;
  double mean_term = 0.0;      // 1/8 * squared Mahalanobis under pooled cov
  double variance_term = 0.0;  // 1/2 * (ln det pooled - 1/2 (ln det1 + ln det2))
  double gvi_log_ratio = 0.0;  // log_det(after) - log_det(before)
  double retained_fraction = 1.0;
  std::size_t n_before = 0;
  std::size_t n_after = 0;
  std::array<double, 2> jitter{0.0, 0.0};  // before / after regularization
  double pooled_jitter = 0.0;              // diagnostic, not serialized
};

/// Distance of Eq.-style form: all determinant arithmetic happens in log
/// space, so no rescaling workaround is needed at any dimension. The report
/// satisfies bcd == mean_term + variance_term by construction and is
/// symmetric in its arguments.
DistortionReport bcd(const GaussianSummary& before,
                     const GaussianSummary& after);

/// log det(after) - log det(before); negative when the intervention
/// contracts the variance of the semantic space.
double gvi_log_ratio(const GaussianSummary& before,
                     const GaussianSummary& after);

/// Serializes the report to the stable JSON schema:
/// {"bcd","mean_term","variance_term","gvi_log_ratio","retained_fraction",
///  "n_before","n_after","jitter":[f,f]}.
std::string report_to_json(const DistortionReport& report);

}  // namespace semshift

#endif  // SEMSHIFT_DISTORTION_HPP
