#include <doctest.h>

#include <cmath>
#include <random>

#include "semshift/distortion.hpp"
#include "semshift/ingest.hpp"
#include "support/test_helpers.hpp"

#include <nlohmann/json.hpp>

using namespace semshift;
using semshift::testing::make_matrix;
using semshift::testing::make_metadata;
using semshift::testing::scaled_copy;

namespace {

GaussianSummary univariate(double mean, double variance) {
  Eigen::VectorXd mu(1);
  mu << mean;
  Eigen::MatrixXd cov(1, 1);
  cov << variance;
  return summary_from_moments(mu, cov);
}

GaussianSummary random_summary(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd mu(d);
  for (int i = 0; i < d; ++i) mu[i] = dist(gen);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = dist(gen);
  }
  Eigen::MatrixXd cov = a * a.transpose() +
                        0.1 * Eigen::MatrixXd::Identity(d, d);
  return summary_from_moments(mu, cov);
}

}  // namespace

TEST_SUITE("distortion") {

TEST_CASE("identical summaries have exactly zero distance") {
  GaussianSummary s = univariate(0.7, 2.0);
  DistortionReport r = bcd(s, s);
  CHECK(r.bcd == 0.0);
  CHECK(r.mean_term == 0.0);
  CHECK(r.variance_term == 0.0);
  CHECK(r.gvi_log_ratio == 0.0);
  CHECK(r.retained_fraction == 1.0);
}

TEST_CASE("univariate unit-variance mean shift of 1 gives 0.125") {
  DistortionReport r = bcd(univariate(0.0, 1.0), univariate(1.0, 1.0));
  CHECK(r.mean_term == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(r.variance_term == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.bcd == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("univariate variance change 1 vs 4 gives half log 1.25") {
  DistortionReport r = bcd(univariate(0.3, 1.0), univariate(0.3, 4.0));
  CHECK(r.mean_term == 0.0);
  CHECK(r.variance_term ==
        doctest::Approx(0.5 * std::log(2.5 / 2.0)).epsilon(1e-12));
  CHECK(r.bcd == doctest::Approx(0.11157177565710485).epsilon(1e-9));
  CHECK(r.gvi_log_ratio == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("scaling both inputs by 100 leaves the report unchanged") {
  // A common workaround for determinant underflow multiplies the matrix by
  // 100; in log space the distance is invariant, so that must be a no-op.
  EmbeddingMatrix m = make_matrix({{0.01, 0.02},
                                   {0.04, -0.01},
                                   {-0.02, 0.03},
                                   {0.05, 0.01},
                                   {0.00, -0.04},
                                   {0.03, 0.02}});
  MetadataTable meta = make_metadata(6);
  CorpusView before_view = align(m, meta);
  CorpusView after_view = before_view.with_selection({0, 1, 2, 3});

  DistortionReport base = bcd(fit_summary(before_view), fit_summary(after_view));

  EmbeddingMatrix scaled = scaled_copy(m, 100.0);
  CorpusView sbefore = align(scaled, meta);
  CorpusView safter = sbefore.with_selection({0, 1, 2, 3});
  DistortionReport big = bcd(fit_summary(sbefore), fit_summary(safter));

  CHECK(std::abs(big.bcd - base.bcd) < 1e-9);
  CHECK(std::abs(big.mean_term - base.mean_term) < 1e-9);
  CHECK(std::abs(big.variance_term - base.variance_term) < 1e-9);
}

TEST_CASE("decomposition, symmetry and nonnegativity on random pairs") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + static_cast<int>(gen() % 32);
    GaussianSummary p = random_summary(gen, d);
    GaussianSummary q = random_summary(gen, d);
    DistortionReport pq = bcd(p, q);
    DistortionReport qp = bcd(q, p);

    CHECK(pq.bcd == pq.mean_term + pq.variance_term);  // exact by construction
    CHECK(pq.mean_term >= 0.0);
    CHECK(pq.variance_term >= 0.0);
    const double scale = std::max(1.0, std::abs(pq.bcd));
    CHECK(std::abs(pq.bcd - qp.bcd) / scale < 1e-12);
    CHECK(std::abs(pq.mean_term - qp.mean_term) / scale < 1e-12);
    CHECK(std::abs(pq.variance_term - qp.variance_term) / scale < 1e-12);
    CHECK(pq.gvi_log_ratio == doctest::Approx(-qp.gvi_log_ratio).epsilon(1e-12));
  }
}

TEST_CASE("dimension mismatch is rejected") {
  GaussianSummary a = univariate(0.0, 1.0);
  GaussianSummary b = summary_from_moments(Eigen::VectorXd::Zero(2),
                                           Eigen::MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(bcd(a, b), DataError);
  CHECK_THROWS_AS(gvi_log_ratio(a, b), DataError);
}

TEST_CASE("gvi log ratio") {
  SUBCASE("identical summaries give zero") {
    GaussianSummary s = univariate(0.0, 3.0);
    CHECK(gvi_log_ratio(s, s) == 0.0);
  }

  SUBCASE("covariance scaled by e in 4 dimensions gives 4") {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(4);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(4, 4);
    cov(0, 1) = cov(1, 0) = 0.3;
    GaussianSummary before = summary_from_moments(mu, cov);
    GaussianSummary after =
        summary_from_moments(mu, std::exp(1.0) * cov);
    CHECK(gvi_log_ratio(before, after) == doctest::Approx(4.0).epsilon(1e-10));
  }

  SUBCASE("central subsample of a Gaussian contracts the variance") {
    std::mt19937_64 gen(7);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    const std::size_t n = 20000;
    std::vector<float> data(n * 2);
    for (float& v : data) v = dist(gen);
    EmbeddingMatrix m(n, 2, std::move(data));
    MetadataTable meta = make_metadata(n);
    CorpusView all = align(m, meta);

    std::vector<Row> central;
    for (Row i = 0; i < n; ++i) {
      const double x = m.value(i, 0);
      const double y = m.value(i, 1);
      if (x * x + y * y < 1.0) central.push_back(i);
    }
    REQUIRE(central.size() > 100);
    GaussianSummary before = fit_summary(all);
    GaussianSummary after = fit_summary(all.with_selection(central));
    CHECK(gvi_log_ratio(before, after) < 0.0);
  }
}

TEST_CASE("report serializes to the pinned JSON schema") {
  DistortionReport r = bcd(univariate(0.0, 1.0), univariate(1.0, 1.0));
  r.retained_fraction = 0.5;
  r.n_before = 10;
  r.n_after = 5;
  nlohmann::json j = nlohmann::json::parse(report_to_json(r));
  CHECK(j["bcd"].get<double>() == doctest::Approx(0.125));
  CHECK(j["mean_term"].get<double>() == doctest::Approx(0.125));
  CHECK(j["variance_term"].get<double>() == doctest::Approx(0.0));
  CHECK(j["retained_fraction"].get<double>() == 0.5);
  CHECK(j["n_before"].get<std::size_t>() == 10);
  CHECK(j["n_after"].get<std::size_t>() == 5);
  REQUIRE(j["jitter"].is_array());
  CHECK(j["jitter"].size() == 2);
  // Round-trip through the serialized form is lossless.
  CHECK(j["bcd"].get<double>() == r.bcd);
}

}  // TEST_SUITE
