#include "semshift/debias.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "semshift/rng.hpp"

namespace semshift {

namespace {

constexpr std::size_t kRowChunk = 4096;
constexpr double kVectorTolerance = 1e-10;
constexpr int kMaxIterations = 10000;

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void subtract_projections(Eigen::VectorXd& v, const Eigen::MatrixXd& rows,
                          std::size_t upto) {
  for (std::size_t r = 0; r < upto; ++r) {
    v -= rows.row(static_cast<Eigen::Index>(r)).dot(v) *
         rows.row(static_cast<Eigen::Index>(r)).transpose();
  }
}

/// Deterministic orthonormal completion over canonical basis vectors, used
/// when the difference vectors have rank below k.
void fill_null_space(Eigen::MatrixXd& rows, Eigen::VectorXd& energy,
                     std::size_t from, std::size_t d) {
  std::size_t next_axis = 0;
  for (std::size_t j = from; j < static_cast<std::size_t>(rows.rows()); ++j) {
    for (; next_axis < d; ++next_axis) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
      v[static_cast<Eigen::Index>(next_axis)] = 1.0;
      subtract_projections(v, rows, j);
      const double norm = v.norm();
      if (norm > 0.5) {
        rows.row(static_cast<Eigen::Index>(j)) = v.transpose() / norm;
        energy[static_cast<Eigen::Index>(j)] = 0.0;
        ++next_axis;
        break;
      }
    }
    if (next_axis > d) {
      throw NumericalError("cannot complete basis in the null space");
    }
  }
}

double provider_score_at(const CorpusView& view, Row row,
                         const std::string& provider) {
  const DocumentRecord& rec = view.record(row);
  auto it = rec.toxicity.find(provider);
  if (it == rec.toxicity.end()) {
    throw DataError("document \"" + rec.id + "\" has no score from provider \"" +
                    provider + "\"");
  }
  return it->second;
}

void require_full_corpus_view(const CorpusView& view) {
  if (view.matrix == nullptr || view.metadata == nullptr) {
    throw DataError("view is not bound to a corpus");
  }
  if (!view.replacements.empty() ||
      view.selection.size() != view.matrix->n_rows()) {
    throw DataError(
        "residualizer fitting requires the full corpus view in row order");
  }
  for (std::size_t i = 0; i < view.selection.size(); ++i) {
    if (view.selection[i] != i) {
      throw DataError(
          "residualizer fitting requires the full corpus view in row order");
    }
  }
}

struct ColumnStats {
  Eigen::VectorXd sum;
  Eigen::VectorXd sum_sq;
  Eigen::VectorXd sum_cross;  // against the score
};

}  // namespace

std::vector<std::pair<Row, Row>> counterpart_pairs(
    const MetadataTable& metadata) {
  std::vector<std::pair<Row, Row>> pairs;
  for (std::size_t i = 0; i < metadata.size(); ++i) {
    auto twin = metadata.counterpart_of(i);
    if (twin) {
      pairs.emplace_back(static_cast<Row>(i), static_cast<Row>(*twin));
    }
  }
  return pairs;
}

ProjectionBasis build_toxicity_basis(
    const EmbeddingMatrix& matrix,
    const std::vector<std::pair<Row, Row>>& pairs, std::size_t k,
    bool centered) {
  if (k < 1) {
    throw DataError("basis size k must be at least 1");
  }
  if (pairs.size() < k + 1) {
    throw DataError("need at least k+1 = " + std::to_string(k + 1) +
                    " toxic/rephrased pairs, have " +
                    std::to_string(pairs.size()));
  }
  const std::size_t d = matrix.n_dims();
  for (const auto& [toxic, rephrased] : pairs) {
    if (toxic >= matrix.n_rows() || rephrased >= matrix.n_rows()) {
      throw DataError("pair row index out of bounds");
    }
  }

  std::vector<double> toxic_buf(d), twin_buf(d);
  Eigen::VectorXd mean_diff = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  if (centered) {
    for (const auto& [toxic, rephrased] : pairs) {
      matrix.copy_row(toxic, toxic_buf);
      matrix.copy_row(rephrased, twin_buf);
      for (std::size_t j = 0; j < d; ++j) {
        mean_diff[static_cast<Eigen::Index>(j)] += toxic_buf[j] - twin_buf[j];
      }
    }
    mean_diff /= static_cast<double>(pairs.size());
  }

  // Second moment of the (optionally centered) difference vectors.
  Eigen::MatrixXd moment =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                            static_cast<Eigen::Index>(d));
  Eigen::MatrixXd buffer(static_cast<Eigen::Index>(d),
                         static_cast<Eigen::Index>(
                             std::min<std::size_t>(kRowChunk, pairs.size())));
  std::size_t filled = 0;
  for (const auto& [toxic, rephrased] : pairs) {
    matrix.copy_row(toxic, toxic_buf);
    matrix.copy_row(rephrased, twin_buf);
    for (std::size_t j = 0; j < d; ++j) {
      buffer(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(filled)) =
          toxic_buf[j] - twin_buf[j] - mean_diff[static_cast<Eigen::Index>(j)];
    }
    if (++filled == static_cast<std::size_t>(buffer.cols())) {
      moment.selfadjointView<Eigen::Lower>().rankUpdate(buffer);
      filled = 0;
    }
  }
  if (filled > 0) {
    moment.selfadjointView<Eigen::Lower>().rankUpdate(
        buffer.leftCols(static_cast<Eigen::Index>(filled)));
  }
  moment = Eigen::MatrixXd(moment.selfadjointView<Eigen::Lower>());
  moment /= static_cast<double>(pairs.size());

  Eigen::MatrixXd rows(static_cast<Eigen::Index>(k),
                       static_cast<Eigen::Index>(d));
  Eigen::VectorXd energy(static_cast<Eigen::Index>(k));
  Eigen::MatrixXd work = moment;
  Xoshiro256 rng(0x746f786263617331ULL);  // fixed stream: basis is deterministic
  double leading = 0.0;

  for (std::size_t j = 0; j < k; ++j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    bool converged = false;
    bool null_space = false;
    for (int restart = 0; restart < 4 && !converged && !null_space; ++restart) {
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
      subtract_projections(v, rows, j);
      const double start_norm = v.norm();
      if (start_norm < 1e-12) continue;
      v /= start_norm;

      for (int iter = 0; iter < kMaxIterations; ++iter) {
        Eigen::VectorXd w = work * v;
        subtract_projections(w, rows, j);  // guard against deflation drift
        const double norm = w.norm();
        const double floor_norm = j == 0 ? 1e-300 : leading * 1e-13;
        if (norm <= floor_norm) {
          null_space = true;
          break;
        }
        Eigen::VectorXd next = w / norm;
        if (next.dot(v) < 0.0) next = -next;
        const double delta = (next - v).norm();
        v = std::move(next);
        if (delta < kVectorTolerance) {
          converged = true;
          break;
        }
      }
    }
    if (null_space) {
      fill_null_space(rows, energy, j, d);
      break;
    }
    if (!converged) {
      throw NumericalError("power iteration did not converge for basis vector " +
                           std::to_string(j));
    }
    const double lambda = v.dot(work * v);
    if (j == 0) leading = lambda;
    rows.row(static_cast<Eigen::Index>(j)) = v.transpose();
    energy[static_cast<Eigen::Index>(j)] = lambda;
    work.selfadjointView<Eigen::Lower>().rankUpdate(v, -lambda);
    work = Eigen::MatrixXd(work.selfadjointView<Eigen::Lower>());
  }

  // Order by energy (descending) and re-orthonormalize.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return energy[static_cast<Eigen::Index>(a)] >
           energy[static_cast<Eigen::Index>(b)];
  });
  ProjectionBasis basis;
  basis.vectors.resize(static_cast<Eigen::Index>(k),
                       static_cast<Eigen::Index>(d));
  basis.explained_energy.resize(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < k; ++j) {
    basis.vectors.row(static_cast<Eigen::Index>(j)) =
        rows.row(static_cast<Eigen::Index>(order[j]));
    basis.explained_energy[static_cast<Eigen::Index>(j)] =
        energy[static_cast<Eigen::Index>(order[j])];
  }
  for (std::size_t j = 0; j < k; ++j) {
    Eigen::VectorXd v =
        basis.vectors.row(static_cast<Eigen::Index>(j)).transpose();
    subtract_projections(v, basis.vectors, j);
    const double norm = v.norm();
    if (norm < 1e-12) {
      throw NumericalError("basis vectors collapsed during orthonormalization");
    }
    basis.vectors.row(static_cast<Eigen::Index>(j)) = v.transpose() / norm;
  }
  return basis;
}

EmbeddingMatrix orthogonalize(const EmbeddingMatrix& matrix,
                              const ProjectionBasis& basis) {
  const std::size_t d = matrix.n_dims();
  if (basis.vectors.cols() != static_cast<Eigen::Index>(d)) {
    throw DataError("basis dimension does not match the matrix");
  }
  const std::size_t n = matrix.n_rows();
  std::vector<double> out(n * d);
  RowMajorMatrix chunk;
  for (std::size_t begin = 0; begin < n; begin += kRowChunk) {
    const std::size_t end = std::min(n, begin + kRowChunk);
    const std::size_t m = end - begin;
    chunk.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < m; ++i) {
      matrix.copy_row(begin + i,
                      std::span<double>(chunk.row(static_cast<Eigen::Index>(i))
                                            .data(),
                                        d));
    }
    chunk -= (chunk * basis.vectors.transpose()) * basis.vectors;
    std::memcpy(out.data() + begin * d, chunk.data(),
                m * d * sizeof(double));
  }
  EmbeddingMatrix result(n, d, std::move(out));
  result.set_ids(matrix.ids());
  return result;
}

Eigen::MatrixXd complement_basis(const ProjectionBasis& basis, std::size_t d) {
  if (basis.vectors.cols() != static_cast<Eigen::Index>(d)) {
    throw DataError("basis dimension does not match the matrix");
  }
  const std::size_t k = static_cast<std::size_t>(basis.vectors.rows());
  if (k >= d) {
    throw DataError("basis already spans the full space");
  }
  Eigen::MatrixXd all(static_cast<Eigen::Index>(d),
                      static_cast<Eigen::Index>(d));
  all.topRows(static_cast<Eigen::Index>(k)) = basis.vectors;
  std::size_t filled = k;
  for (std::size_t axis = 0; axis < d && filled < d; ++axis) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    v[static_cast<Eigen::Index>(axis)] = 1.0;
    subtract_projections(v, all, filled);
    const double norm = v.norm();
    if (norm > 0.5) {
      all.row(static_cast<Eigen::Index>(filled++)) = v.transpose() / norm;
    }
  }
  if (filled != d) {
    throw NumericalError("could not complete the complement basis");
  }
  return all.bottomRows(static_cast<Eigen::Index>(d - k));
}

EmbeddingMatrix project_complement(const EmbeddingMatrix& matrix,
                                   const ProjectionBasis& basis) {
  const std::size_t d = matrix.n_dims();
  const Eigen::MatrixXd q = complement_basis(basis, d);
  const std::size_t out_dims = static_cast<std::size_t>(q.rows());
  const std::size_t n = matrix.n_rows();
  std::vector<double> out(n * out_dims);
  RowMajorMatrix chunk;
  RowMajorMatrix reduced;
  for (std::size_t begin = 0; begin < n; begin += kRowChunk) {
    const std::size_t end = std::min(n, begin + kRowChunk);
    const std::size_t m = end - begin;
    chunk.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < m; ++i) {
      matrix.copy_row(begin + i,
                      std::span<double>(
                          chunk.row(static_cast<Eigen::Index>(i)).data(), d));
    }
    reduced = chunk * q.transpose();
    std::memcpy(out.data() + begin * out_dims, reduced.data(),
                m * out_dims * sizeof(double));
  }
  EmbeddingMatrix result(n, out_dims, std::move(out));
  result.set_ids(matrix.ids());
  return result;
}

ResidualizerModel fit_residualizer(const CorpusView& view,
                                   const std::string& provider,
                                   ResidualMode mode, std::size_t bins) {
  require_full_corpus_view(view);
  const std::size_t n = view.selection.size();
  const std::size_t d = view.matrix->n_dims();

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = provider_score_at(view, view.selection[i], provider);
  }

  ResidualizerModel model;
  model.mode = mode;
  model.fitted_n = n;
  model.dims = d;
  std::vector<double> rowbuf(d);

  if (mode == ResidualMode::Permille) {
    if (bins < 1) {
      throw DataError("bin count must be at least 1");
    }
    if (n < bins) {
      throw DataError("permille residualization needs at least " +
                      std::to_string(bins) + " rows, have " +
                      std::to_string(n));
    }
    model.bins = bins;
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::uint32_t a, std::uint32_t b) {
                if (scores[a] != scores[b]) return scores[a] < scores[b];
                return a < b;  // ties broken by row index
              });

    model.row_bins.resize(n);
    model.bin_edges.assign(bins, 0.0);
    model.bin_means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bins),
                                            static_cast<Eigen::Index>(d));
    std::vector<std::size_t> bin_count(bins, 0);
    for (std::size_t b = 0; b < bins; ++b) {
      const std::size_t lo = b * n / bins;
      const std::size_t hi = (b + 1) * n / bins;
      for (std::size_t pos = lo; pos < hi; ++pos) {
        const std::uint32_t row = order[pos];
        model.row_bins[row] = static_cast<std::uint32_t>(b);
        ++bin_count[b];
        view.matrix->copy_row(row, rowbuf);
        for (std::size_t j = 0; j < d; ++j) {
          model.bin_means(static_cast<Eigen::Index>(b),
                          static_cast<Eigen::Index>(j)) += rowbuf[j];
        }
      }
      model.bin_edges[b] = scores[order[hi - 1]];
    }
    for (std::size_t b = 0; b < bins; ++b) {
      model.bin_means.row(static_cast<Eigen::Index>(b)) /=
          static_cast<double>(bin_count[b]);
    }
    return model;
  }

  // Linear mode: per-dimension simple OLS against the raw score, computed
  // from centered sums for conditioning.
  double score_mean = 0.0;
  for (double s : scores) score_mean += s;
  score_mean /= static_cast<double>(n);
  Eigen::VectorXd dim_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    view.matrix->copy_row(i, rowbuf);
    for (std::size_t j = 0; j < d; ++j) {
      dim_mean[static_cast<Eigen::Index>(j)] += rowbuf[j];
    }
  }
  dim_mean /= static_cast<double>(n);

  double score_ss = 0.0;
  Eigen::VectorXd cross = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const double sc = scores[i] - score_mean;
    score_ss += sc * sc;
    view.matrix->copy_row(i, rowbuf);
    for (std::size_t j = 0; j < d; ++j) {
      cross[static_cast<Eigen::Index>(j)] +=
          sc * (rowbuf[j] - dim_mean[static_cast<Eigen::Index>(j)]);
    }
  }
  if (!(score_ss > 0.0)) {
    throw DataError("scores have zero variance; linear residualization is undefined");
  }
  model.slope = cross / score_ss;
  model.intercept = dim_mean - model.slope * score_mean;
  model.fitted_scores = std::move(scores);
  return model;
}

namespace {

EmbeddingMatrix apply_residualizer(const EmbeddingMatrix& matrix,
                                   const ResidualizerModel& model,
                                   const std::vector<std::uint32_t>& bins,
                                   const std::vector<double>& scores) {
  const std::size_t n = matrix.n_rows();
  const std::size_t d = matrix.n_dims();
  if (d != model.dims) {
    throw DataError("matrix dimension does not match the fitted model");
  }
  std::vector<double> out(n * d);
  std::vector<double> rowbuf(d);
  for (std::size_t i = 0; i < n; ++i) {
    matrix.copy_row(i, rowbuf);
    double* dst = out.data() + i * d;
    if (model.mode == ResidualMode::Permille) {
      const auto b = static_cast<Eigen::Index>(bins[i]);
      for (std::size_t j = 0; j < d; ++j) {
        dst[j] = rowbuf[j] - model.bin_means(b, static_cast<Eigen::Index>(j));
      }
    } else {
      const double s = scores[i];
      for (std::size_t j = 0; j < d; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        dst[j] = rowbuf[j] - (model.intercept[jj] + model.slope[jj] * s);
      }
    }
  }
  EmbeddingMatrix result(n, d, std::move(out));
  result.set_ids(matrix.ids());
  return result;
}

}  // namespace

EmbeddingMatrix residualize(const EmbeddingMatrix& matrix,
                            const ResidualizerModel& model) {
  if (matrix.n_rows() != model.fitted_n) {
    throw DataError(
        "matrix row count differs from the corpus the model was fitted on; "
        "use residualize_with_scores for held-out data");
  }
  return apply_residualizer(matrix, model, model.row_bins,
                            model.fitted_scores);
}

EmbeddingMatrix residualize_with_scores(const EmbeddingMatrix& matrix,
                                        std::span<const double> scores,
                                        const ResidualizerModel& model) {
  if (scores.size() != matrix.n_rows()) {
    throw DataError("score count does not match matrix rows");
  }
  if (model.mode == ResidualMode::Permille) {
    std::vector<std::uint32_t> bins(matrix.n_rows());
    for (std::size_t i = 0; i < matrix.n_rows(); ++i) {
      auto it = std::lower_bound(model.bin_edges.begin(),
                                 model.bin_edges.end(), scores[i]);
      bins[i] = static_cast<std::uint32_t>(
          it == model.bin_edges.end()
              ? model.bins - 1
              : static_cast<std::size_t>(it - model.bin_edges.begin()));
    }
    return apply_residualizer(matrix, model, bins, {});
  }
  return apply_residualizer(matrix, model, {},
                            std::vector<double>(scores.begin(), scores.end()));
}

AuditResult toxicity_audit(const EmbeddingMatrix& matrix,
                           const ProjectionBasis& basis,
                           std::span<const double> scores) {
  const std::size_t n = matrix.n_rows();
  const std::size_t d = matrix.n_dims();
  if (scores.size() != n) {
    throw DataError("score count does not match matrix rows");
  }
  if (basis.vectors.cols() != static_cast<Eigen::Index>(d)) {
    throw DataError("basis dimension does not match the matrix");
  }
  const Eigen::Index k = basis.vectors.rows();

  Eigen::VectorXd coord_sum = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd coord_sq = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd coord_cross = Eigen::VectorXd::Zero(k);
  double s_sum = 0.0, s_sq = 0.0, row_norm_sq = 0.0;
  std::vector<double> rowbuf(d);
  Eigen::Map<const Eigen::VectorXd> row_map(rowbuf.data(),
                                            static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    matrix.copy_row(i, rowbuf);
    const Eigen::VectorXd coords = basis.vectors * row_map;
    coord_sum += coords;
    coord_sq += coords.cwiseProduct(coords);
    coord_cross += scores[i] * coords;
    s_sum += scores[i];
    s_sq += scores[i] * scores[i];
    row_norm_sq += row_map.squaredNorm();
  }
  const double nn = static_cast<double>(n);
  const double scale_ref = std::sqrt(row_norm_sq / nn);
  const double s_var = s_sq / nn - (s_sum / nn) * (s_sum / nn);

  AuditResult result;
  result.degenerate = true;
  if (s_var <= 0.0) return result;
  for (Eigen::Index j = 0; j < k; ++j) {
    const double c_mean = coord_sum[j] / nn;
    const double c_var = coord_sq[j] / nn - c_mean * c_mean;
    const double c_std = c_var > 0.0 ? std::sqrt(c_var) : 0.0;
    if (c_std <= 1e-9 * std::max(scale_ref, 1e-300)) continue;
    const double cov = coord_cross[j] / nn - (s_sum / nn) * c_mean;
    const double corr = cov / (std::sqrt(s_var) * c_std);
    result.degenerate = false;
    result.max_abs_correlation =
        std::max(result.max_abs_correlation, std::abs(corr));
  }
  return result;
}

AuditResult toxicity_audit(const EmbeddingMatrix& matrix,
                           const ResidualizerModel& model,
                           std::span<const double> scores) {
  const std::size_t n = matrix.n_rows();
  const std::size_t d = matrix.n_dims();
  if (scores.size() != n) {
    throw DataError("score count does not match matrix rows");
  }
  if (d != model.dims) {
    throw DataError("matrix dimension does not match the fitted model");
  }
  std::vector<double> rowbuf(d);
  AuditResult result;
  result.degenerate = true;

  if (model.mode == ResidualMode::Permille) {
    if (n != model.fitted_n) {
      throw DataError("permille audit requires the fitted corpus");
    }
    const std::size_t bins = model.bins;
    Eigen::MatrixXd value_mean = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(bins), static_cast<Eigen::Index>(d));
    Eigen::VectorXd score_mean =
        Eigen::VectorXd::Zero(static_cast<Eigen::Index>(bins));
    std::vector<double> count(bins, 0.0);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = static_cast<Eigen::Index>(model.row_bins[i]);
      matrix.copy_row(i, rowbuf);
      for (std::size_t j = 0; j < d; ++j) {
        value_mean(b, static_cast<Eigen::Index>(j)) += rowbuf[j];
        norm_sq += rowbuf[j] * rowbuf[j];
      }
      score_mean[b] += scores[i];
      count[model.row_bins[i]] += 1.0;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      value_mean.row(static_cast<Eigen::Index>(b)) /= count[b];
      score_mean[static_cast<Eigen::Index>(b)] /= count[b];
    }
    const double nb = static_cast<double>(bins);
    const double scale_ref = std::sqrt(norm_sq / static_cast<double>(n));
    const double sm = score_mean.mean();
    const double s_var = score_mean.squaredNorm() / nb - sm * sm;
    if (s_var <= 0.0) return result;
    for (std::size_t j = 0; j < d; ++j) {
      const auto col = value_mean.col(static_cast<Eigen::Index>(j));
      const double vm = col.mean();
      const double v_var = col.squaredNorm() / nb - vm * vm;
      const double v_std = v_var > 0.0 ? std::sqrt(v_var) : 0.0;
      if (v_std <= 1e-9 * std::max(scale_ref, 1e-300)) continue;
      const double cov = col.dot(score_mean) / nb - vm * sm;
      const double corr = cov / (std::sqrt(s_var) * v_std);
      result.degenerate = false;
      result.max_abs_correlation =
          std::max(result.max_abs_correlation, std::abs(corr));
    }
    return result;
  }

  // Linear mode: direct correlation between scores and each dimension.
  Eigen::VectorXd v_sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::VectorXd v_sq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::VectorXd v_cross = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  double s_sum = 0.0, s_sq = 0.0, norm_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    matrix.copy_row(i, rowbuf);
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      v_sum[jj] += rowbuf[j];
      v_sq[jj] += rowbuf[j] * rowbuf[j];
      v_cross[jj] += scores[i] * rowbuf[j];
      norm_sq += rowbuf[j] * rowbuf[j];
    }
    s_sum += scores[i];
    s_sq += scores[i] * scores[i];
  }
  const double nn = static_cast<double>(n);
  const double scale_ref = std::sqrt(norm_sq / nn);
  const double s_var = s_sq / nn - (s_sum / nn) * (s_sum / nn);
  if (s_var <= 0.0) return result;
  for (std::size_t j = 0; j < d; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double vm = v_sum[jj] / nn;
    const double v_var = v_sq[jj] / nn - vm * vm;
    const double v_std = v_var > 0.0 ? std::sqrt(v_var) : 0.0;
    if (v_std <= 1e-9 * std::max(scale_ref, 1e-300)) continue;
    const double cov = v_cross[jj] / nn - (s_sum / nn) * vm;
    const double corr = cov / (std::sqrt(s_var) * v_std);
    result.degenerate = false;
    result.max_abs_correlation =
        std::max(result.max_abs_correlation, std::abs(corr));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization (TOXB1 / RESID1)

namespace {

constexpr std::uint32_t kBasisVersion = 1;
constexpr std::uint32_t kResidVersion = 1;

class Cursor {
 public:
  Cursor(const std::vector<char>& buf, const std::filesystem::path& path)
      : buf_(buf), path_(path) {}

  void read(void* dst, std::size_t bytes) {
    if (pos_ + bytes > buf_.size()) {
      throw TruncationError("unexpected end of file in " + path_.string());
    }
    std::memcpy(dst, buf_.data() + pos_, bytes);
    pos_ += bytes;
  }

  template <typename T>
  T scalar() {
    T value;
    read(&value, sizeof(T));
    return value;
  }

  void expect_magic(const char* magic, std::size_t len) {
    if (buf_.size() < len || std::memcmp(buf_.data(), magic, len) != 0) {
      throw FormatError("bad magic in " + path_.string() + " (expected \"" +
                        std::string(magic, len) + "\")");
    }
    pos_ = len;
  }

  void finish() const {
    if (pos_ != buf_.size()) {
      throw TruncationError("trailing bytes in " + path_.string());
    }
  }

 private:
  const std::vector<char>& buf_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

template <typename T>
void put(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

void write_basis(const ProjectionBasis& basis,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write("TOXB1", 5);
  put(out, kBasisVersion);
  put(out, static_cast<std::uint32_t>(basis.vectors.rows()));
  put(out, static_cast<std::uint32_t>(basis.vectors.cols()));
  out.write(reinterpret_cast<const char*>(basis.explained_energy.data()),
            static_cast<std::streamsize>(basis.explained_energy.size() *
                                         sizeof(double)));
  for (Eigen::Index r = 0; r < basis.vectors.rows(); ++r) {
    Eigen::VectorXd row = basis.vectors.row(r).transpose();
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

ProjectionBasis read_basis(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  Cursor cur(buf, path);
  cur.expect_magic("TOXB1", 5);
  const auto version = cur.scalar<std::uint32_t>();
  if (version != kBasisVersion) {
    throw FormatError("unsupported TOXB1 version " + std::to_string(version));
  }
  const auto k = cur.scalar<std::uint32_t>();
  const auto d = cur.scalar<std::uint32_t>();
  if (k == 0 || d == 0) throw DataError("TOXB1 declares an empty basis");
  ProjectionBasis basis;
  basis.explained_energy.resize(k);
  cur.read(basis.explained_energy.data(), k * sizeof(double));
  basis.vectors.resize(k, d);
  std::vector<double> row(d);
  for (std::uint32_t r = 0; r < k; ++r) {
    cur.read(row.data(), d * sizeof(double));
    for (std::uint32_t j = 0; j < d; ++j) basis.vectors(r, j) = row[j];
  }
  cur.finish();
  return basis;
}

void write_residualizer(const ResidualizerModel& model,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write("RESID1", 6);
  put(out, kResidVersion);
  put(out, static_cast<std::uint8_t>(model.mode == ResidualMode::Permille ? 0
                                                                          : 1));
  put(out, static_cast<std::uint32_t>(model.bins));
  put(out, static_cast<std::uint64_t>(model.fitted_n));
  put(out, static_cast<std::uint32_t>(model.dims));
  if (model.mode == ResidualMode::Permille) {
    out.write(reinterpret_cast<const char*>(model.bin_edges.data()),
              static_cast<std::streamsize>(model.bin_edges.size() *
                                           sizeof(double)));
    for (Eigen::Index b = 0; b < model.bin_means.rows(); ++b) {
      Eigen::VectorXd row = model.bin_means.row(b).transpose();
      out.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
    out.write(reinterpret_cast<const char*>(model.row_bins.data()),
              static_cast<std::streamsize>(model.row_bins.size() *
                                           sizeof(std::uint32_t)));
  } else {
    out.write(reinterpret_cast<const char*>(model.intercept.data()),
              static_cast<std::streamsize>(model.intercept.size() *
                                           sizeof(double)));
    out.write(reinterpret_cast<const char*>(model.slope.data()),
              static_cast<std::streamsize>(model.slope.size() *
                                           sizeof(double)));
    out.write(reinterpret_cast<const char*>(model.fitted_scores.data()),
              static_cast<std::streamsize>(model.fitted_scores.size() *
                                           sizeof(double)));
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

ResidualizerModel read_residualizer(const std::filesystem::path& path) {
  const std::vector<char> buf = slurp(path);
  Cursor cur(buf, path);
  cur.expect_magic("RESID1", 6);
  const auto version = cur.scalar<std::uint32_t>();
  if (version != kResidVersion) {
    throw FormatError("unsupported RESID1 version " + std::to_string(version));
  }
  const auto mode = cur.scalar<std::uint8_t>();
  if (mode > 1) throw FormatError("unknown RESID1 mode byte");
  ResidualizerModel model;
  model.mode = mode == 0 ? ResidualMode::Permille : ResidualMode::Linear;
  model.bins = cur.scalar<std::uint32_t>();
  model.fitted_n = cur.scalar<std::uint64_t>();
  model.dims = cur.scalar<std::uint32_t>();
  if (model.mode == ResidualMode::Permille) {
    model.bin_edges.resize(model.bins);
    cur.read(model.bin_edges.data(), model.bins * sizeof(double));
    model.bin_means.resize(static_cast<Eigen::Index>(model.bins),
                           static_cast<Eigen::Index>(model.dims));
    std::vector<double> row(model.dims);
    for (std::size_t b = 0; b < model.bins; ++b) {
      cur.read(row.data(), model.dims * sizeof(double));
      for (std::size_t j = 0; j < model.dims; ++j) {
        model.bin_means(static_cast<Eigen::Index>(b),
                        static_cast<Eigen::Index>(j)) = row[j];
      }
    }
    model.row_bins.resize(model.fitted_n);
    cur.read(model.row_bins.data(), model.fitted_n * sizeof(std::uint32_t));
  } else {
    model.intercept.resize(static_cast<Eigen::Index>(model.dims));
    model.slope.resize(static_cast<Eigen::Index>(model.dims));
    cur.read(model.intercept.data(), model.dims * sizeof(double));
    cur.read(model.slope.data(), model.dims * sizeof(double));
    model.fitted_scores.resize(model.fitted_n);
    cur.read(model.fitted_scores.data(), model.fitted_n * sizeof(double));
  }
  cur.finish();
  return model;
}

}  // namespace semshift
