#include "semshift/gaussian.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

namespace semshift {

namespace {

std::atomic<unsigned> g_fit_threads{0};  // 0 = resolve from hardware

unsigned resolve_threads() {
  unsigned t = g_fit_threads.load(std::memory_order_relaxed);
  if (t == 0) {
    t = std::thread::hardware_concurrency();
    if (t == 0) t = 1;
  }
  return t;
}

// Binary-counter pairwise reduction. Pushing partials in chunk order yields
// a merge tree that depends only on the number of chunks, so results are
// bit-identical no matter how many threads produced the partials.
template <typename Partial, typename Combine>
class PairwiseReducer {
 public:
  explicit PairwiseReducer(Combine combine) : combine_(std::move(combine)) {}

  void push(Partial p) {
    for (std::size_t lvl = 0;; ++lvl) {
      if (lvl == slots_.size()) {
        slots_.push_back(std::move(p));
        filled_.push_back(true);
        return;
      }
      if (!filled_[lvl]) {
        slots_[lvl] = std::move(p);
        filled_[lvl] = true;
        return;
      }
      // Slot holds the earlier half; keep it on the left.
      p = combine_(std::move(slots_[lvl]), std::move(p));
      filled_[lvl] = false;
    }
  }

  Partial finish() {
    std::optional<Partial> acc;
    for (std::size_t lvl = 0; lvl < slots_.size(); ++lvl) {
      if (!filled_[lvl]) continue;
      if (acc) {
        acc = combine_(std::move(slots_[lvl]), std::move(*acc));
      } else {
        acc = std::move(slots_[lvl]);
      }
    }
    return std::move(*acc);
  }

 private:
  Combine combine_;
  std::vector<Partial> slots_;
  std::vector<bool> filled_;
};

// Computes per-chunk partials (in parallel waves when threads > 1) and
// pushes them into the reducer in chunk order.
template <typename Partial, typename Compute, typename Combine>
Partial reduce_chunks(std::size_t n_chunks, const Compute& compute,
                      Combine combine) {
  PairwiseReducer<Partial, Combine> reducer(std::move(combine));
  const unsigned threads = resolve_threads();
  if (threads <= 1 || n_chunks <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) reducer.push(compute(c));
    return reducer.finish();
  }
  const std::size_t wave = static_cast<std::size_t>(threads) * 2;
  std::vector<std::optional<Partial>> slots(wave);
  for (std::size_t start = 0; start < n_chunks; start += wave) {
    const std::size_t end = std::min(n_chunks, start + wave);
    std::atomic<std::size_t> next{start};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    const unsigned active =
        static_cast<unsigned>(std::min<std::size_t>(threads, end - start));
    for (unsigned t = 0; t < active; ++t) {
      pool.emplace_back([&]() {
        try {
          for (std::size_t c = next.fetch_add(1); c < end;
               c = next.fetch_add(1)) {
            slots[c - start] = compute(c);
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
    for (std::size_t c = start; c < end; ++c) {
      reducer.push(std::move(*slots[c - start]));
      slots[c - start].reset();
    }
  }
  return reducer.finish();
}

struct MeanPartial {
  double weight = 0.0;
  Eigen::VectorXd weighted_sum;
};

}  // namespace

void set_fit_threads(unsigned threads) {
  g_fit_threads.store(threads, std::memory_order_relaxed);
}

unsigned fit_threads() { return resolve_threads(); }

CholeskyResult cholesky_logdet(const Eigen::MatrixXd& covariance) {
  if (covariance.rows() != covariance.cols()) {
    throw DataError("covariance must be square");
  }
  if (!covariance.allFinite()) {
    throw DataError("covariance contains non-finite values");
  }
  const Eigen::Index d = covariance.rows();
  const double scale = covariance.cwiseAbs().maxCoeff();
  const double asymmetry =
      (covariance - covariance.transpose()).cwiseAbs().maxCoeff();
  if (asymmetry > 1e-8 * std::max(scale, 1e-300)) {
    throw DataError("covariance is not symmetric");
  }

  const double base = 1e-10 * covariance.trace() / static_cast<double>(d);
  std::vector<double> schedule;
  schedule.push_back(0.0);
  for (int k = 0; k <= 6; ++k) {
    schedule.push_back(base * std::pow(8.0, k));
  }

  for (std::size_t attempt = 0; attempt < schedule.size(); ++attempt) {
    const double lambda = schedule[attempt];
    if (attempt > 0 && lambda <= 0.0) continue;  // ridge must be positive
    Eigen::MatrixXd working = covariance;
    if (lambda > 0.0) working.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(working);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd factor = llt.matrixL();
    if (!(factor.diagonal().array() > 0.0).all() || !factor.allFinite()) {
      continue;
    }
    // Pivots at rounding-noise scale mean the matrix is numerically rank
    // deficient even though the factorization "succeeded"; such pivots are
    // unstable garbage, so escalate to the ridge instead.
    const double max_pivot = factor.diagonal().maxCoeff();
    if (factor.diagonal().minCoeff() <= 1e-10 * max_pivot) continue;
    const double log_det = 2.0 * factor.diagonal().array().log().sum();
    if (!std::isfinite(log_det)) continue;
    return {std::move(factor), log_det, lambda};
  }

  std::ostringstream msg;
  msg << "covariance not factorizable after jitter escalation; attempted "
         "ridge values:";
  for (double lambda : schedule) msg << ' ' << lambda;
  throw NumericalError(msg.str());
}

double mahalanobis_sq(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                      const Eigen::MatrixXd& pooled_factor) {
  if (mu1.size() != mu2.size() || mu1.size() != pooled_factor.rows()) {
    throw DataError("dimension mismatch in Mahalanobis inputs");
  }
  const Eigen::VectorXd delta = mu1 - mu2;
  const Eigen::VectorXd y =
      pooled_factor.triangularView<Eigen::Lower>().solve(delta);
  return y.squaredNorm();
}

PooledCovariance pool(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dims() != b.dims()) {
    throw DataError("cannot pool summaries of different dimension");
  }
  PooledCovariance pooled;
  pooled.covariance = 0.5 * (a.covariance + b.covariance);
  CholeskyResult chol = cholesky_logdet(pooled.covariance);
  pooled.factor = std::move(chol.factor);
  pooled.log_det = chol.log_det;
  pooled.jitter = chol.jitter;
  return pooled;
}

GaussianSummary fit_summary(const CorpusView& view,
                            const WeightingMode& weighting) {
  if (view.matrix == nullptr || view.metadata == nullptr) {
    throw DataError("view is not bound to a corpus");
  }
  const std::size_t n = view.selection.size();
  if (n == 0) {
    throw DataError("cannot fit a summary on an empty selection");
  }
  const std::size_t d = view.matrix->n_dims();

  // Normalizing weights by their maximum makes the all-equal-weights case
  // reduce to the uniform path bit-for-bit (w/w == 1 exactly).
  std::vector<double> weights;
  double raw_weight_sum = static_cast<double>(n);
  if (weighting.kind == WeightingMode::Kind::Engagement) {
    if (!(weighting.offset >= 0.0)) {
      throw DataError("engagement offset must be nonnegative");
    }
    weights.resize(n);
    double wmax = 0.0;
    double raw = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w =
          weighting.offset + view.record(view.selection[i]).weight;
      weights[i] = w;
      raw += w;
      if (w > wmax) wmax = w;
    }
    if (!(wmax > 0.0)) {
      throw DataError("total weight is zero");
    }
    for (double& w : weights) w /= wmax;
    raw_weight_sum = raw;
  }

  const std::size_t n_chunks = (n + kFitChunkRows - 1) / kFitChunkRows;

  // Column j of the chunk buffer holds observation j, so each row copy is
  // one contiguous write.
  auto fill_chunk =
      [&](std::size_t c, Eigen::MatrixXd& buffer, Eigen::VectorXd& wvec) {
        const std::size_t begin = c * kFitChunkRows;
        const std::size_t end = std::min(n, begin + kFitChunkRows);
        const std::size_t m = end - begin;
        buffer.resize(static_cast<Eigen::Index>(d),
                      static_cast<Eigen::Index>(m));
        wvec.resize(static_cast<Eigen::Index>(m));
        for (std::size_t i = begin; i < end; ++i) {
          const Row source = view.effective_row(view.selection[i]);
          view.matrix->copy_row(
              source, std::span<double>(buffer.col(static_cast<Eigen::Index>(
                                            i - begin)).data(), d));
          wvec[static_cast<Eigen::Index>(i - begin)] =
              weights.empty() ? 1.0 : weights[i];
        }
        return m;
      };

  // Pass 1: weighted mean.
  MeanPartial mean_total = reduce_chunks<MeanPartial>(
      n_chunks,
      [&](std::size_t c) {
        Eigen::MatrixXd buffer;
        Eigen::VectorXd wvec;
        fill_chunk(c, buffer, wvec);
        MeanPartial p;
        p.weight = wvec.sum();
        p.weighted_sum = buffer * wvec;
        return p;
      },
      [](MeanPartial left, MeanPartial right) {
        left.weight += right.weight;
        left.weighted_sum += right.weighted_sum;
        return left;
      });
  if (!(mean_total.weight > 0.0)) {
    throw DataError("total weight is zero");
  }
  Eigen::VectorXd mean = mean_total.weighted_sum / mean_total.weight;

  // Pass 2: centered scatter via rank updates on sqrt(w)-scaled columns.
  Eigen::MatrixXd scatter = reduce_chunks<Eigen::MatrixXd>(
      n_chunks,
      [&](std::size_t c) {
        Eigen::MatrixXd buffer;
        Eigen::VectorXd wvec;
        const std::size_t m = fill_chunk(c, buffer, wvec);
        buffer.colwise() -= mean;
        for (std::size_t j = 0; j < m; ++j) {
          buffer.col(static_cast<Eigen::Index>(j)) *=
              std::sqrt(wvec[static_cast<Eigen::Index>(j)]);
        }
        Eigen::MatrixXd partial = Eigen::MatrixXd::Zero(
            static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        partial.selfadjointView<Eigen::Lower>().rankUpdate(buffer);
        return partial;
      },
      [](Eigen::MatrixXd left, const Eigen::MatrixXd& right) {
        left += right;
        return left;
      });

  GaussianSummary summary;
  summary.mean = std::move(mean);
  summary.covariance =
      Eigen::MatrixXd((scatter / mean_total.weight)
                          .selfadjointView<Eigen::Lower>());
  CholeskyResult chol = cholesky_logdet(summary.covariance);
  summary.cholesky = std::move(chol.factor);
  summary.log_det = chol.log_det;
  summary.jitter_applied = chol.jitter;
  summary.n_effective = n;
  summary.weight_sum = raw_weight_sum;
  return summary;
}

GaussianSummary summary_from_moments(Eigen::VectorXd mean,
                                     Eigen::MatrixXd covariance,
                                     std::size_t n_effective) {
  if (mean.size() != covariance.rows()) {
    throw DataError("mean and covariance dimensions disagree");
  }
  GaussianSummary summary;
  CholeskyResult chol = cholesky_logdet(covariance);
  summary.mean = std::move(mean);
  summary.covariance = std::move(covariance);
  summary.cholesky = std::move(chol.factor);
  summary.log_det = chol.log_det;
  summary.jitter_applied = chol.jitter;
  summary.n_effective = n_effective;
  summary.weight_sum = static_cast<double>(n_effective);
  return summary;
}

}  // namespace semshift
