#ifndef SEMSHIFT_DEBIAS_HPP
#define SEMSHIFT_DEBIAS_HPP

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semshift/types.hpp"

namespace semshift {

/// Orthonormal basis of the learned toxicity subspace. Rows are the
/// principal directions of the toxic-vs-rephrased difference vectors;
/// explained_energy holds the corresponding eigenvalues, non-increasing.
struct ProjectionBasis {
  Eigen::MatrixXd vectors;          // K x D, rows orthonormal
  Eigen::VectorXd explained_energy; // K, non-increasing
};

/// Builds the toxicity basis from (toxic row, rephrased row) index pairs:
/// the top-k eigenvectors of the uncentered second-moment matrix of the
/// difference vectors, found by deflated power iteration (tolerance 1e-10
/// on the eigenvector change, at most 10000 iterations per vector). The
/// difference vectors are deliberately not centered by default: the mean
/// difference direction is itself toxicity signal. Pass centered = true to
/// subtract the mean difference first (ordinary PCA on the differences).
ProjectionBasis build_toxicity_basis(
    const EmbeddingMatrix& matrix,
    const std::vector<std::pair<Row, Row>>& pairs, std::size_t k,
    bool centered = false);

/// Collects (toxic, counterpart) row pairs recorded in the metadata.
std::vector<std::pair<Row, Row>> counterpart_pairs(
    const MetadataTable& metadata);

/// Projects every row onto the orthogonal complement of the basis:
/// x' = x - B^T (B x). Linear and idempotent; output rows have no
/// component along any basis vector. The result carries 64-bit values.
///
/// Note that the projected rows span at most D-K dimensions, so their
/// D-dimensional covariance is singular; distance computations over an
/// orthogonalized corpus should use project_complement instead, which is
/// the same projection expressed in well-posed (D-K)-dim coordinates.
EmbeddingMatrix orthogonalize(const EmbeddingMatrix& matrix,
                              const ProjectionBasis& basis);

/// Deterministic orthonormal completion of the basis: (D-K) x D rows
/// spanning the orthogonal complement.
Eigen::MatrixXd complement_basis(const ProjectionBasis& basis, std::size_t d);

/// Rows expressed in complement coordinates (n x (D-K)); fitting Gaussian
/// summaries on this matrix gives the distortion of the orthogonalized
/// corpus without a rank-deficient covariance.
EmbeddingMatrix project_complement(const EmbeddingMatrix& matrix,
                                   const ProjectionBasis& basis);

enum class ResidualMode { Permille, Linear };

/// Per-dimension regression of embeddings on toxicity. Permille mode ranks
/// rows by score (ties broken by row index) into near-equal bins and stores
/// per-bin means — the saturated-indicator OLS solution. Linear mode stores
/// per-dimension intercept and slope against the raw score. The fitted
/// row-to-bin assignment and fitted scores are kept so that applying the
/// model to the corpus it was fitted on reproduces the regression residuals
/// exactly.
struct ResidualizerModel {
  ResidualMode mode = ResidualMode::Permille;
  std::size_t bins = 1000;
  std::size_t fitted_n = 0;
  std::size_t dims = 0;
  std::vector<double> bin_edges;          // upper score edge per bin
  Eigen::MatrixXd bin_means;              // bins x D
  std::vector<std::uint32_t> row_bins;    // fitted assignment, permille mode
  Eigen::VectorXd intercept;              // linear mode
  Eigen::VectorXd slope;                  // linear mode
  std::vector<double> fitted_scores;      // linear mode
};

/// Fits on the full corpus in row order (the view must select every matrix
/// row without replacements, matching the fit-equals-apply procedure).
ResidualizerModel fit_residualizer(const CorpusView& view,
                                   const std::string& provider,
                                   ResidualMode mode, std::size_t bins = 1000);

/// Applies the model to the corpus it was fitted on (requires a matching
/// row count; uses the stored assignments/scores).
EmbeddingMatrix residualize(const EmbeddingMatrix& matrix,
                            const ResidualizerModel& model);

/// Experimental out-of-sample application: rows map to the nearest fitted
/// bin by score (permille) or use the supplied scores directly (linear).
EmbeddingMatrix residualize_with_scores(const EmbeddingMatrix& matrix,
                                        std::span<const double> scores,
                                        const ResidualizerModel& model);

struct AuditResult {
  double max_abs_correlation = 0.0;
  bool degenerate = false;  // all audited directions had (near-)zero variance
};

/// Debiasing success metric for a basis: the largest |Pearson correlation|
/// between the scores and any basis-direction coordinate of the matrix.
AuditResult toxicity_audit(const EmbeddingMatrix& matrix,
                           const ProjectionBasis& basis,
                           std::span<const double> scores);

/// Debiasing success metric for a residualizer: per dimension, the
/// correlation across bins between the mean score and the mean value;
/// returns the largest magnitude.
AuditResult toxicity_audit(const EmbeddingMatrix& matrix,
                           const ResidualizerModel& model,
                           std::span<const double> scores);

// Binary serialization: TOXB1 and RESID1 share the EMB1 header discipline
// (ASCII magic, u32 version, shape fields, payload).
void write_basis(const ProjectionBasis& basis,
                 const std::filesystem::path& path);
ProjectionBasis read_basis(const std::filesystem::path& path);
void write_residualizer(const ResidualizerModel& model,
                        const std::filesystem::path& path);
ResidualizerModel read_residualizer(const std::filesystem::path& path);

}  // namespace semshift

#endif  // SEMSHIFT_DEBIAS_HPP
