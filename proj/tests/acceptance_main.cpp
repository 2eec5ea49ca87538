// Acceptance suite: one check per shipped criterion, each printed as a
// PASS/FAIL line. Run with --calibrate-null to recompute the random-removal
// null bound before freezing it below.

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "semshift/debias.hpp"
#include "semshift/distortion.hpp"
#include "semshift/ingest.hpp"
#include "semshift/policy.hpp"
#include "semshift/rng.hpp"
#include "semshift/score_client.hpp"
#include "semshift/score_mock.hpp"
#include "semshift/synth.hpp"
#include "support/test_helpers.hpp"

using namespace semshift;

namespace {

// Frozen from `semshift_acceptance --calibrate-null`: 99th percentile of the
// distortion measured over 200 seeded 50%-random-removal trials on the S1
// corpus below (generation seed 1001, removal seeds derived from base 555).
constexpr double kNullBound = 0.0175267406135;

constexpr std::uint64_t kS1Seed = 1001;
constexpr std::uint64_t kS2Seed = 2002;
constexpr std::uint64_t kS3Seed = 3003;
constexpr std::uint64_t kCalibrationBase = 555;

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& detail) {
  if (!condition) throw CheckFailure(detail);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

std::size_t peak_rss_kb() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream fields(line.substr(6));
      std::size_t kb = 0;
      fields >> kb;
      return kb;
    }
  }
  return 0;
}

const SynthCorpus& s1_corpus() {
  static SynthCorpus corpus = generate(scenario_s1().with_seed(kS1Seed));
  return corpus;
}

const SynthCorpus& s3_corpus() {
  static SynthCorpus corpus = generate(scenario_s3().with_seed(kS3Seed));
  return corpus;
}

EmbeddingMatrix scale_matrix(const EmbeddingMatrix& matrix, double c) {
  std::vector<double> data(matrix.n_rows() * matrix.n_dims());
  std::vector<double> row(matrix.n_dims());
  for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
    matrix.copy_row(i, row);
    for (std::size_t j = 0; j < matrix.n_dims(); ++j) {
      data[i * matrix.n_dims() + j] = c * row[j];
    }
  }
  return EmbeddingMatrix(matrix.n_rows(), matrix.n_dims(), std::move(data));
}

GaussianSummary random_summary(std::mt19937_64& gen, int d) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd mu(d);
  for (int i = 0; i < d; ++i) mu[i] = dist(gen);
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = dist(gen);
  }
  Eigen::MatrixXd cov =
      a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
  return summary_from_moments(mu, cov);
}

double null_trial_bcd(const CorpusView& view, const GaussianSummary& before,
                      std::uint64_t seed) {
  CorpusView removed =
      remove_random_exact(view, view.selection.size() / 2, seed);
  return bcd(before, fit_summary(removed)).bcd;
}

// ---------------------------------------------------------------------------

// 1. Estimated distance on 50k-per-side samples matches the closed form.
void criterion_1() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = 50000, d = 8;

  auto make_spec = [&](double mean_shift, double variance,
                       std::uint64_t seed) {
    ScenarioSpec spec;
    spec.name = "oracle";
    spec.n = n;
    spec.d = d;
    spec.seed = seed;
    ComponentSpec comp;
    comp.weight = 1.0;
    comp.mean = Eigen::VectorXd::Constant(d, mean_shift);
    comp.cov_diag = Eigen::VectorXd::Constant(d, variance);
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
      comp.cov_diag[j] = variance * (1.0 + 0.1 * static_cast<double>(j));
    }
    comp.toxicity_mean = 0.0;
    comp.toxicity_spread = 0.0;
    spec.components = {comp};
    return spec;
  };

  const ScenarioSpec spec_p = make_spec(0.0, 1.0, 7001);
  const ScenarioSpec spec_q = make_spec(0.5, 1.5, 7002);
  SynthCorpus p = generate(spec_p);
  SynthCorpus q = generate(spec_q);

  GaussianSummary sp = fit_summary(align(p.matrix, p.metadata));
  GaussianSummary sq = fit_summary(align(q.matrix, q.metadata));
  const double estimated = bcd(sp, sq).bcd;

  GaussianParams exact_p{spec_p.components[0].mean,
                         Eigen::MatrixXd(spec_p.components[0].cov_diag.asDiagonal())};
  GaussianParams exact_q{spec_q.components[0].mean,
                         Eigen::MatrixXd(spec_q.components[0].cov_diag.asDiagonal())};
  const double closed = closed_form_bcd(exact_p, exact_q);

  const double tolerance = std::max(0.01, 0.05 * closed);
  require(std::abs(estimated - closed) <= tolerance,
          "estimated " + fmt(estimated) + " vs closed form " + fmt(closed));
  const double elapsed = seconds_since(start);
  require(elapsed < 10.0, "took " + fmt(elapsed) + " s (limit 10 s)");
}

// 2. Decomposition identity, nonnegativity and symmetry on random pairs.
void criterion_2() {
  std::mt19937_64 gen(909);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + static_cast<int>(gen() % 32);
    GaussianSummary p = random_summary(gen, d);
    GaussianSummary q = random_summary(gen, d);
    DistortionReport pq = bcd(p, q);
    DistortionReport qp = bcd(q, p);
    const double scale = std::max(1.0, std::abs(pq.bcd));
    require(std::abs(pq.bcd - (pq.mean_term + pq.variance_term)) / scale <=
                1e-12,
            "decomposition broke at trial " + std::to_string(trial));
    require(pq.variance_term >= 0.0, "negative variance term");
    require(std::abs(pq.bcd - qp.bcd) / scale <= 1e-12,
            "asymmetry at trial " + std::to_string(trial));
  }
}

// 3. Multiplying the corpus by 100 leaves every report term unchanged.
void criterion_3() {
  SynthCorpus corpus = generate(scenario_s1().with_size(20000, 16).with_seed(31));
  CorpusView view = align(corpus.matrix, corpus.metadata);
  CorpusView moderated =
      apply_policy(view, ThresholdPolicy{kSynthProvider, 0.5});
  DistortionReport base =
      bcd(fit_summary(view), fit_summary(moderated));

  EmbeddingMatrix scaled = scale_matrix(corpus.matrix, 100.0);
  CorpusView scaled_view = align(scaled, corpus.metadata);
  CorpusView scaled_moderated =
      apply_policy(scaled_view, ThresholdPolicy{kSynthProvider, 0.5});
  DistortionReport big =
      bcd(fit_summary(scaled_view), fit_summary(scaled_moderated));

  require(std::abs(big.bcd - base.bcd) < 1e-9,
          "bcd moved by " + fmt(std::abs(big.bcd - base.bcd)));
  require(std::abs(big.mean_term - base.mean_term) < 1e-9,
          "mean term moved by " + fmt(std::abs(big.mean_term - base.mean_term)));
  require(std::abs(big.variance_term - base.variance_term) < 1e-9,
          "variance term moved by " +
              fmt(std::abs(big.variance_term - base.variance_term)));
}

// 4. Exact self-distance; 50% random removal stays under the frozen null.
void criterion_4() {
  const SynthCorpus& corpus = s1_corpus();
  CorpusView view = align(corpus.matrix, corpus.metadata);
  GaussianSummary before = fit_summary(view);
  require(bcd(before, before).bcd == 0.0, "self-distance is not exactly 0");

  require(kNullBound > 0.0, "null bound has not been calibrated");
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    const double value =
        null_trial_bcd(view, before, derive_seed(777, {trial}));
    require(value < kNullBound, "random removal bcd " + fmt(value) +
                                    " breaches the null bound " +
                                    fmt(kNullBound));
  }
}

// 5. Threshold sweep rises strictly and dwarfs the random baseline.
void criterion_5() {
  const SynthCorpus& corpus = s1_corpus();
  CorpusView view = align(corpus.matrix, corpus.metadata);
  const auto start = std::chrono::steady_clock::now();
  SweepTable table =
      sweep(view, kSynthProvider, kDefaultTauGrid, 4242, SweepMode::Remove);
  const double elapsed = seconds_since(start);

  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    require(table.rows[i].policy.bcd > table.rows[i - 1].policy.bcd,
            "bcd not strictly increasing between tau " +
                fmt(table.rows[i - 1].tau) + " and " + fmt(table.rows[i].tau));
  }
  const SweepRow& last = table.rows.back();
  require(last.tau == 0.3, "default grid does not end at 0.3");
  require(last.policy.bcd > 5.0 * last.random.bcd,
          "bcd(0.3) = " + fmt(last.policy.bcd) + " is not above 5x random " +
              fmt(last.random.bcd));
  require(elapsed < 60.0, "sweep took " + fmt(elapsed) + " s (limit 60 s)");
}

// 6. Max-distance removal bounds threshold removal, which bounds random.
void criterion_6() {
  const SynthCorpus& corpus = s1_corpus();
  CorpusView view = align(corpus.matrix, corpus.metadata);
  MaxBenchTable table =
      max_distortion_benchmark(view, kSynthProvider, kDefaultTauGrid, 616);
  for (const MaxBenchRow& row : table.rows) {
    require(row.error.empty(), "row tau " + fmt(row.tau) + " errored: " + row.error);
    require(row.maxdist.bcd >= row.threshold.bcd,
            "tau " + fmt(row.tau) + ": maxdist " + fmt(row.maxdist.bcd) +
                " < threshold " + fmt(row.threshold.bcd));
    require(row.threshold.bcd >= row.random.bcd,
            "tau " + fmt(row.tau) + ": threshold " + fmt(row.threshold.bcd) +
                " < random " + fmt(row.random.bcd));
  }
}

// 7. Mean distortion grows with the number of dropped topics.
void criterion_7() {
  SynthCorpus corpus = generate(scenario_s2().with_seed(kS2Seed));
  CorpusView view = align(corpus.matrix, corpus.metadata);
  TopicDropTable table = topic_drop_benchmark(view, {1, 2, 3, 4}, 25, 737);
  require(table.rows.size() == 4, "unexpected table size");
  for (const TopicDropRow& row : table.rows) {
    require(row.failed_draws == 0, "draws failed at k " + std::to_string(row.k));
  }
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    require(table.rows[i].mean_bcd > table.rows[i - 1].mean_bcd,
            "mean bcd not increasing between k " +
                std::to_string(table.rows[i - 1].k) + " and " +
                std::to_string(table.rows[i].k));
  }
}

// 8. Replacing toxic rows distorts less than removing them.
void criterion_8() {
  const SynthCorpus& corpus = s3_corpus();
  CorpusView view = originals_only(corpus.matrix, corpus.metadata);
  SweepTable removed =
      sweep(view, kSynthProvider, {0.5}, 88, SweepMode::Remove);
  SweepTable replaced =
      sweep(view, kSynthProvider, {0.5}, 88, SweepMode::Replace);
  const double remove_bcd = removed.rows[0].policy.bcd;
  const double replace_bcd = replaced.rows[0].policy.bcd;
  require(replace_bcd < remove_bcd,
          "replace " + fmt(replace_bcd) + " not below remove " +
              fmt(remove_bcd));
  require(replaced.rows[0].policy.retained_fraction == 1.0,
          "replacement changed the corpus size");
}

// 9. Debiasing invariants: exact residual means, dead basis coordinates,
//    dense-eigendecomposition agreement, and the softened-but-positive sweep.
void criterion_9() {
  // Permille residualization at 1000 bins, fit equals apply.
  {
    const SynthCorpus& corpus = s1_corpus();
    CorpusView view = align(corpus.matrix, corpus.metadata);
    ResidualizerModel model =
        fit_residualizer(view, kSynthProvider, ResidualMode::Permille, 1000);
    EmbeddingMatrix residuals = residualize(corpus.matrix, model);
    const std::size_t d = residuals.n_dims();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(1000, static_cast<Eigen::Index>(d));
    std::vector<std::size_t> counts(1000, 0);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < residuals.n_rows(); ++i) {
      residuals.copy_row(i, row);
      const auto bin = static_cast<Eigen::Index>(model.row_bins[i]);
      for (std::size_t j = 0; j < d; ++j) {
        sums(bin, static_cast<Eigen::Index>(j)) += row[j];
      }
      ++counts[model.row_bins[i]];
    }
    double worst = 0.0;
    for (std::size_t b = 0; b < 1000; ++b) {
      for (std::size_t j = 0; j < d; ++j) {
        worst = std::max(worst,
                         std::abs(sums(static_cast<Eigen::Index>(b),
                                       static_cast<Eigen::Index>(j)) /
                                  static_cast<double>(counts[b])));
      }
    }
    require(worst <= 1e-10,
            "per-bin residual mean reaches " + fmt(worst));
  }

  // Orthogonalized coordinates are numerically dead, and the deflated power
  // iteration agrees with a dense eigendecomposition at small dimension.
  const SynthCorpus& s3 = s3_corpus();
  auto pairs = counterpart_pairs(s3.metadata);
  ProjectionBasis basis = build_toxicity_basis(s3.matrix, pairs, 10);
  EmbeddingMatrix debiased = orthogonalize(s3.matrix, basis);
  {
    double worst = 0.0;
    std::vector<double> row(debiased.n_dims());
    Eigen::Map<Eigen::VectorXd> row_map(row.data(),
                                        static_cast<Eigen::Index>(row.size()));
    for (std::size_t i = 0; i < debiased.n_rows(); ++i) {
      debiased.copy_row(i, row);
      worst = std::max(worst,
                       (basis.vectors * row_map).cwiseAbs().maxCoeff());
    }
    require(worst <= 1e-8, "basis coordinate magnitude " + fmt(worst));
  }
  {
    std::mt19937_64 gen(11);
    std::normal_distribution<double> dist(0.0, 1.0);
    const std::size_t d = 16;
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 120; ++i) {
      std::vector<double> diff(d, 0.0);
      diff[0] = 1.5 + dist(gen);
      for (std::size_t j = 1; j < 6; ++j) {
        diff[j] = dist(gen) * std::pow(0.8, static_cast<double>(j));
      }
      for (std::size_t j = 6; j < d; ++j) diff[j] = 0.05 * dist(gen);
      rows.push_back(diff);  // toxic row
    }
    const std::size_t n_pairs = rows.size();
    rows.insert(rows.end(), n_pairs, std::vector<double>(d, 0.0));
    EmbeddingMatrix matrix = semshift::testing::make_matrix_f64(rows);
    std::vector<std::pair<Row, Row>> small_pairs;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      small_pairs.emplace_back(static_cast<Row>(i),
                               static_cast<Row>(n_pairs + i));
    }
    const std::size_t k = 5;
    ProjectionBasis small = build_toxicity_basis(matrix, small_pairs, k);

    Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < n_pairs; ++i) {
      Eigen::Map<const Eigen::VectorXd> v(rows[i].data(), d);
      moment += v * v.transpose();
    }
    moment /= static_cast<double>(n_pairs);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(moment);
    Eigen::MatrixXd top(k, d);
    for (std::size_t j = 0; j < k; ++j) {
      top.row(static_cast<Eigen::Index>(j)) =
          solver.eigenvectors()
              .col(static_cast<Eigen::Index>(d - 1 - j))
              .transpose();
    }
    const double frobenius =
        (small.vectors.transpose() * small.vectors - top.transpose() * top)
            .norm();
    require(frobenius <= 1e-6,
            "projector difference " + fmt(frobenius) + " against dense oracle");
  }

  // Sweeping the orthogonalized corpus (in complement coordinates) softens
  // but does not erase the distortion.
  {
    CorpusView raw_view = originals_only(s3.matrix, s3.metadata);
    SweepTable raw =
        sweep(raw_view, kSynthProvider, kDefaultTauGrid, 99, SweepMode::Remove);
    EmbeddingMatrix reduced = project_complement(s3.matrix, basis);
    CorpusView reduced_view = originals_only(reduced, s3.metadata);
    SweepTable softened = sweep(reduced_view, kSynthProvider, kDefaultTauGrid,
                                99, SweepMode::Remove);
    for (std::size_t i = 0; i < raw.rows.size(); ++i) {
      require(softened.rows[i].policy.bcd > 0.0,
              "orthogonalized bcd vanished at tau " + fmt(raw.rows[i].tau));
      require(softened.rows[i].policy.bcd < raw.rows[i].policy.bcd,
              "tau " + fmt(raw.rows[i].tau) + ": orthogonalized " +
                  fmt(softened.rows[i].policy.bcd) + " not below raw " +
                  fmt(raw.rows[i].policy.bcd));
    }
  }
}

// 10. Cosine identity against enumeration; cosine stability on S1.
void criterion_10() {
  {
    std::mt19937_64 gen(404);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    const std::size_t n = 2000, d = 24;
    std::vector<float> data(n * d);
    for (float& v : data) v = dist(gen);
    EmbeddingMatrix matrix(n, d, std::move(data));
    std::vector<DocumentRecord> records(n);
    for (std::size_t i = 0; i < n; ++i) records[i].id = "c" + std::to_string(i);
    MetadataTable metadata(std::move(records));
    CorpusView view = align(matrix, metadata);

    const double fast = mean_pairwise_cosine(view, n, 3);
    double total = 0.0;
    std::vector<std::vector<double>> units(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
      matrix.copy_row(i, units[i]);
      double norm = 0.0;
      for (double v : units[i]) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : units[i]) v /= norm;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += units[i][t] * units[j][t];
        total += dot;
      }
    }
    const double slow =
        total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
    require(std::abs(fast - slow) <= 1e-10,
            "identity gap " + fmt(std::abs(fast - slow)));
  }
  {
    const SynthCorpus& corpus = s1_corpus();
    CorpusView view = align(corpus.matrix, corpus.metadata);
    const double before = mean_pairwise_cosine(view, view.size(), 5);
    CorpusView moderated =
        apply_policy(view, ThresholdPolicy{kSynthProvider, 0.8});
    const double after =
        mean_pairwise_cosine(moderated, moderated.size(), 5);
    const double relative = std::abs(after - before) / std::abs(before);
    require(relative < 0.01, "mean cosine moved by " +
                                 fmt(100.0 * relative) + "% (before " +
                                 fmt(before) + ", after " + fmt(after) + ")");
  }
}

// 11. Weighting invariants.
void criterion_11() {
  SynthCorpus corpus = generate(scenario_s1().with_size(20000, 16).with_seed(21));
  std::vector<DocumentRecord> records = corpus.metadata.records();
  for (auto& rec : records) rec.weight = 7.0;  // identical engagement counts
  MetadataTable uniform_meta(records);
  CorpusView view = align(corpus.matrix, uniform_meta);

  GaussianSummary plain = fit_summary(view, WeightingMode::uniform());
  GaussianSummary weighted = fit_summary(view, WeightingMode::engagement(1.0));
  require((plain.mean - weighted.mean).cwiseAbs().maxCoeff() <= 1e-12,
          "means diverge under constant weights");
  require((plain.covariance - weighted.covariance).cwiseAbs().maxCoeff() <=
              1e-12,
          "covariances diverge under constant weights");
  require(std::abs(plain.log_det - weighted.log_det) <= 1e-12,
          "log determinants diverge under constant weights");

  // Raising one row's weight moves the mean toward that row by exactly
  // delta_w / (W + delta_w) of its deviation.
  const std::size_t target = 17;
  const double delta_w = 50.0;
  records[target].weight += delta_w;
  MetadataTable bumped_meta(records);
  CorpusView bumped_view = align(corpus.matrix, bumped_meta);
  GaussianSummary bumped =
      fit_summary(bumped_view, WeightingMode::engagement(1.0));

  std::vector<double> row(corpus.matrix.n_dims());
  corpus.matrix.copy_row(target, row);
  Eigen::Map<Eigen::VectorXd> x(row.data(), static_cast<Eigen::Index>(row.size()));
  const double total_before = weighted.weight_sum;
  Eigen::VectorXd predicted =
      weighted.mean +
      (delta_w / (total_before + delta_w)) * (x - weighted.mean);
  require((bumped.mean - predicted).cwiseAbs().maxCoeff() <= 1e-10,
          "perturbed mean does not match the analytic prediction");
  require((bumped.mean - weighted.mean).dot(x - weighted.mean) > 0.0,
          "mean did not move toward the upweighted row");
}

// 12. Ingest round-trip and the malformed-file error taxonomy.
void criterion_12() {
  semshift::testing::TempDir dir("acceptance_ingest");
  std::mt19937_64 gen(2712);
  std::normal_distribution<float> dist(0.0f, 3.0f);
  std::vector<float> data(10000 * 64);
  for (float& v : data) v = dist(gen);
  std::vector<float> original = data;
  EmbeddingMatrix matrix(10000, 64, std::move(data));
  const auto path = dir.file("corpus.emb1");
  write_embeddings(matrix, path);
  EmbeddingMatrix back = read_embeddings(path);
  require(back.n_rows() == 10000 && back.n_dims() == 64, "shape mismatch");
  require(std::memcmp(back.f32_data(), original.data(),
                      original.size() * sizeof(float)) == 0,
          "payload not bitwise identical after round-trip");

  auto write_raw = [&](const std::string& name, const char* magic,
                       std::uint32_t version, std::uint64_t n_rows,
                       std::uint32_t n_dims, std::uint32_t dtype,
                       const std::vector<float>& payload) {
    std::ofstream out(dir.file(name), std::ios::binary | std::ios::trunc);
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&n_rows), 8);
    out.write(reinterpret_cast<const char*>(&n_dims), 4);
    out.write(reinterpret_cast<const char*>(&dtype), 4);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    return dir.file(name);
  };
  auto expect = [&](const char* what, auto&& call, auto exception_tag) {
    using Exception = std::decay_t<decltype(exception_tag)>;
    try {
      call();
    } catch (const Exception&) {
      return;
    } catch (const std::exception& e) {
      throw CheckFailure(std::string(what) + ": wrong exception: " + e.what());
    }
    throw CheckFailure(std::string(what) + ": no error raised");
  };

  auto bad_magic = write_raw("magic.emb1", "XXXX", 1, 1, 1, 1, {1.0f});
  expect("bad magic", [&] { read_embeddings(bad_magic); }, FormatError{""});

  auto truncated =
      write_raw("trunc.emb1", "EMB1", 1, 5, 2, 1, {0, 0, 1, 1, 2, 2, 3, 3});
  expect("truncation", [&] { read_embeddings(truncated); }, TruncationError{""});

  auto nan_file =
      write_raw("nan.emb1", "EMB1", 1, 2, 2, 1, {0, 0, 0, std::nanf("")});
  expect("non-finite", [&] { read_embeddings(nan_file); }, DataError{""});

  auto write_meta = [&](const std::string& name,
                        const std::vector<std::string>& lines) {
    std::ofstream out(dir.file(name), std::ios::trunc);
    for (const auto& line : lines) out << line << '\n';
    return dir.file(name);
  };
  auto count_file = write_meta("count.jsonl", {R"({"id":"a"})", R"({"id":"b"})"});
  expect("count mismatch", [&] { read_metadata(count_file, 3); }, DataError{""});
  auto dup_file = write_meta("dup.jsonl", {R"({"id":"a"})", R"({"id":"a"})"});
  expect("duplicate id", [&] { read_metadata(dup_file, 2); }, DataError{""});
  auto range_file =
      write_meta("range.jsonl", {R"({"id":"a","tox":{"p":1.2}})"});
  expect("score range", [&] { read_metadata(range_file, 1); }, DataError{""});
  auto dangling_file =
      write_meta("dangling.jsonl", {R"({"id":"a","rephrased_of":"ghost"})"});
  expect("dangling counterpart", [&] { read_metadata(dangling_file, 1); },
         DataError{""});
}

// 13. Score client against the bundled mock server.
void criterion_13() {
  const std::vector<std::pair<std::string, std::string>> texts = {
      {"a", "first"}, {"b", "second"}, {"c", "third"}};

  {
    MockScoringServer server;
    ScoringEndpoint endpoint;
    endpoint.base_url = server.base_url();
    endpoint.batch_size = 2;
    ScoreOutcome outcome = score_texts(endpoint, texts);
    require(outcome.requests_issued == 2,
            "expected 2 requests, saw " +
                std::to_string(outcome.requests_issued));
    require(outcome.scores.size() == 3, "missing scores");
  }
  {
    MockScoringServer::Options opts;
    opts.fail_429 = 2;
    MockScoringServer server(opts);
    ScoringEndpoint endpoint;
    endpoint.base_url = server.base_url();
    endpoint.batch_size = 16;
    std::vector<std::chrono::milliseconds> delays;
    ScoreOutcome outcome = score_texts(
        endpoint, texts, {},
        [&delays](std::chrono::milliseconds d) { delays.push_back(d); });
    require(outcome.requests_issued == 3, "retry count wrong");
    require(delays.size() == 2, "expected two backoff sleeps");
    require(delays[0].count() >= 400 && delays[0].count() <= 600,
            "first delay " + std::to_string(delays[0].count()) + " ms");
    require(delays[1].count() >= 800 && delays[1].count() <= 1200,
            "second delay " + std::to_string(delays[1].count()) + " ms");
  }
  {
    semshift::testing::TempDir dir("acceptance_ckpt");
    MockScoringServer server;
    ScoringEndpoint endpoint;
    endpoint.base_url = server.base_url();
    endpoint.batch_size = 2;
    const auto checkpoint = dir.file("ckpt.jsonl");
    ScoreOutcome first = score_texts(endpoint, texts, checkpoint);
    require(first.requests_issued == 2, "first run issued wrong count");
    ScoreOutcome second = score_texts(endpoint, texts, checkpoint);
    require(second.requests_issued == 0,
            "checkpointed rerun issued " +
                std::to_string(second.requests_issued) + " requests");
    require(second.scores.size() == 3, "checkpointed scores incomplete");
  }
}

// 14. Full sweep on a million-row corpus inside the time and memory budget.
void criterion_14() {
  SynthCorpus corpus =
      generate(scenario_s1().with_size(1000000, 128).with_seed(1414));
  CorpusView view = align(corpus.matrix, corpus.metadata);
  const auto start = std::chrono::steady_clock::now();
  SweepTable table =
      sweep(view, kSynthProvider, kDefaultTauGrid, 1441, SweepMode::Remove);
  const double elapsed = seconds_since(start);
  require(table.rows.size() == 7, "sweep did not cover the grid");
  require(table.rows.back().policy.bcd > 0.0, "sweep produced no signal");
  require(elapsed < 300.0,
          "sweep took " + fmt(elapsed) + " s (limit 300 s)");
  const double peak_gb =
      static_cast<double>(peak_rss_kb()) / (1024.0 * 1024.0);
  require(peak_gb < 8.0, "peak memory " + fmt(peak_gb) + " GiB (limit 8)");
}

void calibrate_null() {
  std::cout << "calibrating the random-removal null bound (200 trials)...\n";
  const SynthCorpus& corpus = s1_corpus();
  CorpusView view = align(corpus.matrix, corpus.metadata);
  GaussianSummary before = fit_summary(view);
  std::vector<double> values;
  values.reserve(200);
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    values.push_back(
        null_trial_bcd(view, before, derive_seed(kCalibrationBase, {trial})));
    if ((trial + 1) % 50 == 0) {
      std::cout << "  " << (trial + 1) << " trials done\n";
    }
  }
  std::sort(values.begin(), values.end());
  std::cout.precision(12);
  std::cout << "min    " << values.front() << "\n";
  std::cout << "median " << values[99] << "\n";
  std::cout << "p99    " << values[198] << "\n";
  std::cout << "max    " << values.back() << "\n";
  std::cout << "freeze kNullBound = " << values[198] << "\n";
}

struct Criterion {
  int id;
  const char* title;
  std::function<void()> run;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1 && std::string(argv[1]) == "--calibrate-null") {
    calibrate_null();
    return 0;
  }
  int only = 0;
  if (argc > 2 && std::string(argv[1]) == "--only") {
    only = std::atoi(argv[2]);
  }

  const std::vector<Criterion> criteria = {
      {1, "closed-form oracle within tolerance", criterion_1},
      {2, "decomposition identity, nonnegativity, symmetry", criterion_2},
      {3, "scale invariance under x100", criterion_3},
      {4, "exact self-distance and random-removal null", criterion_4},
      {5, "threshold sweep shape and 5x margin", criterion_5},
      {6, "max-distance >= threshold >= random ordering", criterion_6},
      {7, "topic-drop distortion grows with k", criterion_7},
      {8, "replacement distorts less than removal", criterion_8},
      {9, "debiasing correctness and softened sweep", criterion_9},
      {10, "cosine identity and stability", criterion_10},
      {11, "weighting equivalence and perturbation", criterion_11},
      {12, "ingest round-trip and error taxonomy", criterion_12},
      {13, "score client batching, retry, idempotence", criterion_13},
      {14, "million-row sweep inside time/memory budget", criterion_14},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    if (only != 0 && criterion.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    try {
      criterion.run();
      std::printf("PASS  %2d  %s (%.1fs)\n", criterion.id, criterion.title,
                  seconds_since(start));
    } catch (const std::exception& e) {
      ++failures;
      std::printf("FAIL  %2d  %s: %s\n", criterion.id, criterion.title,
                  e.what());
    }
    std::fflush(stdout);
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
