#ifndef SEMSHIFT_GAUSSIAN_HPP
#define SEMSHIFT_GAUSSIAN_HPP

#include <Eigen/Dense>
#include <cstddef>

#include "semshift/types.hpp"

namespace semshift {

/// How rows are weighted when fitting a summary. Engagement weighting uses
/// offset + record.weight so zero-retweet documents still contribute.
struct WeightingMode {
  enum class Kind { Uniform, Engagement };
  Kind kind = Kind::Uniform;
  double offset = 1.0;

  static WeightingMode uniform() { return {}; }
  static WeightingMode engagement(double offset = 1.0) {
    return {Kind::Engagement, offset};
  }
};

/// Weighted multivariate-Gaussian summary of a corpus view: the fitted
/// (mean, covariance) pair plus the Cholesky factor and log-determinant of
/// the (possibly ridge-regularized) covariance. Immutable after
/// construction and safe to share across threads.
struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // MLE estimate, unregularized
  Eigen::MatrixXd cholesky;    // lower-triangular L, L*L^T = covariance + jitter*I
  double log_det = 0.0;        // 2 * sum(log(diag(L)))
  std::size_t n_effective = 0;
  double weight_sum = 0.0;     // raw (unnormalized) weight total
  double jitter_applied = 0.0; // ridge added before factorization, 0 if none

  Eigen::Index dims() const { return mean.size(); }
};

struct CholeskyResult {
  Eigen::MatrixXd factor;  // lower triangular
  double log_det = 0.0;
  double jitter = 0.0;
};

struct PooledCovariance {
  Eigen::MatrixXd covariance;  // (S1 + S2) / 2
  Eigen::MatrixXd factor;
  double log_det = 0.0;
  double jitter = 0.0;
};

/// Rows per accumulation chunk. Fixing the chunk size fixes the pairwise
/// reduction tree, which makes parallel fits bit-reproducible.
inline constexpr std::size_t kFitChunkRows = 8192;

/// Lower-triangular factor and log-determinant of a symmetric matrix.
/// If the direct factorization fails, retries with ridge lambda*I for
/// lambda = 1e-10 * (trace/D) * 8^k, k = 0..6, reporting the first success.
/// The log-determinant is accumulated in log space, never via the raw
/// determinant. Throws NumericalError with the attempted schedule if the
/// matrix stays singular.
CholeskyResult cholesky_logdet(const Eigen::MatrixXd& covariance);

/// Squared Mahalanobis distance (mu1-mu2)^T S^-1 (mu1-mu2), where
/// pooled_factor is the Cholesky factor of S. Triangular solve only, never
/// an explicit inverse; the result is nonnegative by construction.
double mahalanobis_sq(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                      const Eigen::MatrixXd& pooled_factor);

/// Elementwise average of the two covariances plus its factorization.
PooledCovariance pool(const GaussianSummary& a, const GaussianSummary& b);

/// Two-pass weighted fit over the view's (replacement-substituted) rows:
/// pass one accumulates the weighted mean, pass two centered outer
/// products, both over fixed 8192-row chunks merged through a deterministic
/// pairwise reduction tree. Covariance uses MLE normalization (divide by
/// the weight sum).
GaussianSummary fit_summary(const CorpusView& view,
                            const WeightingMode& weighting = {});

/// Summary built directly from exact moments (used by oracles and the
/// closed-form distance).
GaussianSummary summary_from_moments(Eigen::VectorXd mean,
                                     Eigen::MatrixXd covariance,
                                     std::size_t n_effective = 0);

/// Worker threads used for chunk-parallel accumulation. Defaults to the
/// hardware concurrency; the reduction order (and therefore the result) does
/// not depend on this value.
void set_fit_threads(unsigned threads);
unsigned fit_threads();

}  // namespace semshift

#endif  // SEMSHIFT_GAUSSIAN_HPP
