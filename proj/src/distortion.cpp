#include "semshift/distortion.hpp"

#include <nlohmann/json.hpp>

namespace semshift {

DistortionReport bcd(const GaussianSummary& before,
                     const GaussianSummary& after) {
  if (before.dims() != after.dims()) {
    throw DataError("summaries have different dimensions");
  }
  PooledCovariance pooled = pool(before, after);

  DistortionReport report;
  report.mean_term =
      0.125 * mahalanobis_sq(before.mean, after.mean, pooled.factor);
  report.variance_term =
      0.5 * (pooled.log_det - 0.5 * (before.log_det + after.log_det));
  report.bcd = report.mean_term + report.variance_term;
  report.gvi_log_ratio = after.log_det - before.log_det;
  report.n_before = before.n_effective;
  report.n_after = after.n_effective;
  report.jitter = {before.jitter_applied, after.jitter_applied};
  report.pooled_jitter = pooled.jitter;
  return report;
}

double gvi_log_ratio(const GaussianSummary& before,
                     const GaussianSummary& after) {
  if (before.dims() != after.dims()) {
    throw DataError("summaries have different dimensions");
  }
  return after.log_det - before.log_det;
}

std::string report_to_json(const DistortionReport& report) {
  nlohmann::json j;
  j["bcd"] = report.bcd;
  j["mean_term"] = report.mean_term;
  j["variance_term"] = report.variance_term;
  j["gvi_log_ratio"] = report.gvi_log_ratio;
  j["retained_fraction"] = report.retained_fraction;
  j["n_before"] = report.n_before;
  j["n_after"] = report.n_after;
  j["jitter"] = {report.jitter[0], report.jitter[1]};
  return j.dump();
}

}  // namespace semshift
