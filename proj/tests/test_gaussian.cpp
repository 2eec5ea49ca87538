#include <doctest.h>

#include <cmath>
#include <random>

#include "semshift/gaussian.hpp"
#include "semshift/ingest.hpp"
#include "support/test_helpers.hpp"

using namespace semshift;
using semshift::testing::make_matrix;
using semshift::testing::make_metadata;
using semshift::testing::scaled_copy;

namespace {

// Independent oracle: single-shot weighted MLE moments computed in one
// plain accumulation loop, no chunking, no reduction tree.
struct NaiveMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

NaiveMoments naive_fit(const CorpusView& view,
                       const std::vector<double>& weights) {
  const std::size_t d = view.matrix->n_dims();
  std::vector<double> rowbuf(d);
  double wsum = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < view.selection.size(); ++i) {
    view.matrix->copy_row(view.effective_row(view.selection[i]), rowbuf);
    const double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    for (std::size_t j = 0; j < d; ++j) {
      mean[static_cast<Eigen::Index>(j)] += w * rowbuf[j];
    }
  }
  mean /= wsum;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < view.selection.size(); ++i) {
    view.matrix->copy_row(view.effective_row(view.selection[i]), rowbuf);
    const double w = weights.empty() ? 1.0 : weights[i];
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
            w * (rowbuf[a] - mean[static_cast<Eigen::Index>(a)]) *
            (rowbuf[b] - mean[static_cast<Eigen::Index>(b)]);
      }
    }
  }
  cov /= wsum;
  return {std::move(mean), std::move(cov)};
}

EmbeddingMatrix random_matrix(std::size_t n, std::size_t d,
                              std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> data(n * d);
  for (float& v : data) v = dist(gen);
  return EmbeddingMatrix(n, d, std::move(data));
}

}  // namespace

TEST_SUITE("gaussian") {

TEST_CASE("MLE moments on the four-corner square") {
  EmbeddingMatrix m = make_matrix({{0, 0}, {2, 0}, {0, 2}, {2, 2}});
  MetadataTable meta = make_metadata(4);
  GaussianSummary s = fit_summary(align(m, meta));
  CHECK(s.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.mean[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.covariance(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.covariance(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.covariance(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.n_effective == 4);
  CHECK(s.jitter_applied == 0.0);
}

TEST_CASE("a single row repeated five times cannot be factorized") {
  EmbeddingMatrix m =
      make_matrix({{1, 2}, {1, 2}, {1, 2}, {1, 2}, {1, 2}});
  MetadataTable meta = make_metadata(5);
  CHECK_THROWS_AS(fit_summary(align(m, meta)), NumericalError);
}

TEST_CASE("empty selection and zero total weight are data errors") {
  EmbeddingMatrix m = make_matrix({{0, 0}, {1, 1}});
  MetadataTable meta = make_metadata(2);  // weights default to 0
  CorpusView view = align(m, meta);

  CorpusView empty = view.with_selection({});
  CHECK_THROWS_AS(fit_summary(empty), DataError);

  CHECK_THROWS_AS(fit_summary(view, WeightingMode::engagement(0.0)),
                  DataError);
}

TEST_CASE("engagement weighting with equal weights matches uniform exactly") {
  EmbeddingMatrix m = make_matrix({{0, 1}, {2, 3}, {4, 9}, {-1, 2}});
  MetadataTable meta =
      make_metadata(4, [](std::size_t, DocumentRecord& rec) { rec.weight = 3; });
  CorpusView view = align(m, meta);

  GaussianSummary uniform = fit_summary(view, WeightingMode::uniform());
  GaussianSummary weighted = fit_summary(view, WeightingMode::engagement(1.0));
  // Weight normalization makes these identical, not merely close.
  CHECK(uniform.mean == weighted.mean);
  CHECK(uniform.covariance == weighted.covariance);
  CHECK(uniform.log_det == weighted.log_det);
  CHECK(weighted.weight_sum == doctest::Approx(16.0));
}

TEST_CASE("unequal engagement weights match the naive oracle") {
  EmbeddingMatrix m = random_matrix(257, 5, 11);
  MetadataTable meta = make_metadata(257, [](std::size_t i, DocumentRecord& r) {
    r.weight = static_cast<double>(i % 7);
  });
  CorpusView view = align(m, meta);
  GaussianSummary s = fit_summary(view, WeightingMode::engagement(1.0));

  std::vector<double> weights(257);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = 1.0 + static_cast<double>(i % 7);
  }
  NaiveMoments oracle = naive_fit(view, weights);
  CHECK((s.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((s.covariance - oracle.covariance).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cholesky_logdet") {
  SUBCASE("identity has zero log determinant and no jitter") {
    CholeskyResult r = cholesky_logdet(Eigen::MatrixXd::Identity(3, 3));
    CHECK(r.log_det == 0.0);
    CHECK(r.jitter == 0.0);
  }

  SUBCASE("diag(1,4,9) has log det ln 36") {
    Eigen::MatrixXd cov = Eigen::Vector3d(1, 4, 9).asDiagonal();
    CholeskyResult r = cholesky_logdet(cov);
    CHECK(r.log_det == doctest::Approx(std::log(36.0)).epsilon(1e-12));
  }

  SUBCASE("all-zeros matrix is singular") {
    CHECK_THROWS_AS(cholesky_logdet(Eigen::MatrixXd::Zero(2, 2)),
                    NumericalError);
  }

  SUBCASE("singular error carries the attempted schedule") {
    try {
      cholesky_logdet(Eigen::MatrixXd::Zero(2, 2));
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("ridge") != std::string::npos);
    }
  }

  SUBCASE("mildly indefinite matrix is rescued by the ridge") {
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(2, 2);
    cov(0, 0) = 1.0;
    cov(1, 1) = -1e-14;  // tiny negative pivot from rounding
    CholeskyResult r = cholesky_logdet(cov);
    CHECK(r.jitter > 0.0);
    CHECK(std::isfinite(r.log_det));
  }

  SUBCASE("asymmetric input is rejected") {
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 0.5, -0.5, 1.0;
    CHECK_THROWS_AS(cholesky_logdet(bad), DataError);
  }
}

TEST_CASE("mahalanobis_sq") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);

  SUBCASE("identical means give zero") {
    Eigen::VectorXd mu(2);
    mu << 3, -1;
    CHECK(mahalanobis_sq(mu, mu, eye) == 0.0);
  }

  SUBCASE("identity covariance, delta (3,4) gives 25") {
    Eigen::VectorXd a(2), b(2);
    a << 3, 4;
    b << 0, 0;
    CHECK(mahalanobis_sq(a, b, eye) == doctest::Approx(25.0).epsilon(1e-12));
  }

  SUBCASE("diag(4,1) covariance, delta (2,0) gives 1") {
    Eigen::MatrixXd cov = Eigen::Vector2d(4, 1).asDiagonal();
    Eigen::MatrixXd factor = cholesky_logdet(cov).factor;
    Eigen::VectorXd a(2), b(2);
    a << 2, 0;
    b << 0, 0;
    CHECK(mahalanobis_sq(a, b, factor) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("dimension mismatch") {
    Eigen::VectorXd a(3), b(2);
    a.setZero();
    b.setZero();
    CHECK_THROWS_AS(mahalanobis_sq(a, b, eye), DataError);
  }
}

TEST_CASE("pool") {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(2);

  SUBCASE("identical identity covariances pool to identity") {
    GaussianSummary a = summary_from_moments(mu, Eigen::MatrixXd::Identity(2, 2));
    PooledCovariance p = pool(a, a);
    CHECK(p.log_det == 0.0);
    CHECK(p.covariance == Eigen::MatrixXd::Identity(2, 2));
  }

  SUBCASE("diag(1,1) with diag(3,3) pools to diag(2,2)") {
    GaussianSummary a = summary_from_moments(mu, Eigen::MatrixXd::Identity(2, 2));
    GaussianSummary b =
        summary_from_moments(mu, 3.0 * Eigen::MatrixXd::Identity(2, 2));
    PooledCovariance p = pool(a, b);
    CHECK(p.covariance(0, 0) == doctest::Approx(2.0));
    CHECK(p.log_det == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("dimension mismatch") {
    GaussianSummary a = summary_from_moments(mu, Eigen::MatrixXd::Identity(2, 2));
    GaussianSummary b = summary_from_moments(Eigen::VectorXd::Zero(3),
                                             Eigen::MatrixXd::Identity(3, 3));
    CHECK_THROWS_AS(pool(a, b), DataError);
  }
}

TEST_CASE("chunked two-pass fit equals the naive single-shot oracle") {
  // More rows than one chunk so the reduction tree actually merges.
  const std::size_t n = 3 * kFitChunkRows + 1234;
  EmbeddingMatrix m = random_matrix(n, 6, 42);
  MetadataTable meta = make_metadata(n);
  CorpusView view = align(m, meta);

  GaussianSummary s = fit_summary(view);
  NaiveMoments oracle = naive_fit(view, {});
  const double mean_scale = oracle.mean.cwiseAbs().maxCoeff() + 1.0;
  CHECK((s.mean - oracle.mean).cwiseAbs().maxCoeff() / mean_scale < 1e-9);
  const double cov_scale = oracle.covariance.cwiseAbs().maxCoeff();
  CHECK((s.covariance - oracle.covariance).cwiseAbs().maxCoeff() / cov_scale <
        1e-9);
}

TEST_CASE("fits are reproducible and permutation tolerant") {
  const std::size_t n = 2 * kFitChunkRows + 57;
  EmbeddingMatrix m = random_matrix(n, 4, 99);
  MetadataTable meta = make_metadata(n);
  CorpusView view = align(m, meta);

  GaussianSummary a = fit_summary(view);
  GaussianSummary b = fit_summary(view);
  CHECK(a.mean == b.mean);  // bit-identical reruns
  CHECK(a.covariance == b.covariance);

  // Reversing the selection changes summation order but not the estimate.
  CorpusView reversed = view;
  std::reverse(reversed.selection.begin(), reversed.selection.end());
  GaussianSummary r = fit_summary(reversed);
  CHECK((a.mean - r.mean).cwiseAbs().maxCoeff() < 1e-10);
  const double scale = a.covariance.cwiseAbs().maxCoeff();
  CHECK((a.covariance - r.covariance).cwiseAbs().maxCoeff() / scale < 1e-10);
}

TEST_CASE("replacements substitute rows before accumulation") {
  EmbeddingMatrix m = make_matrix({{0, 0}, {10, 10}, {1, 1}, {2, 2}});
  MetadataTable meta = make_metadata(4);
  CorpusView view = align(m, meta).with_selection({0, 1, 2});
  view.replacements[1] = 3;  // row 1 contributes row 3's values

  GaussianSummary s = fit_summary(view);
  CHECK(s.mean[0] == doctest::Approx(1.0).epsilon(1e-12));  // (0+2+1)/3

  CorpusView direct = align(m, meta).with_selection({0, 3, 2});
  GaussianSummary expected = fit_summary(direct);
  CHECK((s.covariance - expected.covariance).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("scaling the corpus by c scales the moments as expected") {
  const double c = 100.0;
  EmbeddingMatrix m = random_matrix(500, 3, 5);
  EmbeddingMatrix scaled = scaled_copy(m, c);
  MetadataTable meta = make_metadata(500);

  GaussianSummary base = fit_summary(align(m, meta));
  GaussianSummary big = fit_summary(align(scaled, meta));

  CHECK((big.mean - c * base.mean).cwiseAbs().maxCoeff() < 1e-9);
  const double cov_scale = base.covariance.cwiseAbs().maxCoeff() * c * c;
  CHECK((big.covariance - c * c * base.covariance).cwiseAbs().maxCoeff() /
            cov_scale <
        1e-12);
  const double expected_shift =
      2.0 * static_cast<double>(base.dims()) * std::log(c);
  CHECK(big.log_det - base.log_det ==
        doctest::Approx(expected_shift).epsilon(1e-9));
}

TEST_CASE("engagement offset keeps zero-weight rows contributing") {
  EmbeddingMatrix m = make_matrix({{0, 0}, {4, 4}});
  MetadataTable meta = make_metadata(2, [](std::size_t i, DocumentRecord& r) {
    r.weight = i == 0 ? 0.0 : 3.0;
  });
  CorpusView view = align(m, meta);
  GaussianSummary s = fit_summary(view, WeightingMode::engagement(1.0));
  // Weights 1 and 4: mean = (0*1 + 4*4)/5 = 3.2.
  CHECK(s.mean[0] == doctest::Approx(3.2).epsilon(1e-12));
}

}  // TEST_SUITE
