#include "semshift/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "semshift/rng.hpp"

namespace semshift {

namespace {

double provider_score(const CorpusView& view, Row row,
                      const std::string& provider) {
  const DocumentRecord& rec = view.record(row);
  auto it = rec.toxicity.find(provider);
  if (it == rec.toxicity.end()) {
    throw DataError("document \"" + rec.id + "\" has no score from provider \"" +
                    provider + "\"");
  }
  return it->second;
}

CorpusView keep_positions(const CorpusView& view,
                          const std::vector<bool>& drop) {
  std::vector<Row> retained;
  retained.reserve(view.selection.size());
  for (std::size_t i = 0; i < view.selection.size(); ++i) {
    if (!drop[i]) retained.push_back(view.selection[i]);
  }
  return view.with_selection(std::move(retained));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Squared distance of each effective selected row to the uniform centroid.
std::vector<double> centroid_distances(const CorpusView& view) {
  const std::size_t n = view.selection.size();
  const std::size_t d = view.matrix->n_dims();
  std::vector<double> rowbuf(d);
  Eigen::VectorXd centroid = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (Row r : view.selection) {
    view.matrix->copy_row(view.effective_row(r), rowbuf);
    for (std::size_t j = 0; j < d; ++j) centroid[static_cast<Eigen::Index>(j)] += rowbuf[j];
  }
  centroid /= static_cast<double>(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    view.matrix->copy_row(view.effective_row(view.selection[i]), rowbuf);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = rowbuf[j] - centroid[static_cast<Eigen::Index>(j)];
      acc += delta * delta;
    }
    dist[i] = acc;
  }
  return dist;
}

/// Selection positions ordered by removal priority: farthest first, ties
/// removing the higher row index first so the lower index survives longest.
std::vector<std::size_t> distance_priority(const CorpusView& view) {
  std::vector<double> dist = centroid_distances(view);
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] > dist[b];
    return view.selection[a] > view.selection[b];
  });
  return order;
}

CorpusView drop_priority_prefix(const CorpusView& view,
                                const std::vector<std::size_t>& priority,
                                std::size_t count) {
  std::vector<bool> drop(view.selection.size(), false);
  for (std::size_t i = 0; i < count; ++i) drop[priority[i]] = true;
  return keep_positions(view, drop);
}

}  // namespace

CorpusView remove_random_exact(const CorpusView& view, std::size_t count,
                               std::uint64_t seed) {
  const std::size_t n = view.selection.size();
  if (count > n) {
    throw DataError("cannot remove " + std::to_string(count) + " of " +
                    std::to_string(n) + " rows");
  }
  Xoshiro256 rng(seed);
  std::vector<std::uint32_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(n - i));
    std::swap(positions[i], positions[j]);
    drop[positions[i]] = true;
  }
  return keep_positions(view, drop);
}

CorpusView apply_policy(const CorpusView& view, const PolicySpec& policy) {
  if (view.matrix == nullptr || view.metadata == nullptr) {
    throw DataError("view is not bound to a corpus");
  }
  const std::size_t n = view.selection.size();

  if (const auto* p = std::get_if<ThresholdPolicy>(&policy)) {
    if (!(p->tau >= 0.0 && p->tau <= 1.0)) {
      throw DataError("threshold tau must lie in [0,1]");
    }
    std::vector<bool> drop(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      // "Exceeding the threshold" is strict: score == tau is retained.
      if (provider_score(view, view.selection[i], p->provider) > p->tau) {
        drop[i] = true;
      }
    }
    return keep_positions(view, drop);
  }

  if (const auto* p = std::get_if<RandomPolicy>(&policy)) {
    if (!(p->fraction >= 0.0 && p->fraction <= 1.0)) {
      throw DataError("removal fraction must lie in [0,1]");
    }
    const std::size_t count = static_cast<std::size_t>(
        std::floor(p->fraction * static_cast<double>(n) + 0.5));
    return remove_random_exact(view, count, p->seed);
  }

  if (const auto* p = std::get_if<MaxDistancePolicy>(&policy)) {
    if (p->count > n) {
      throw DataError("max-distance count exceeds selection size");
    }
    return drop_priority_prefix(view, distance_priority(view), p->count);
  }

  if (const auto* p = std::get_if<TopicDropPolicy>(&policy)) {
    std::unordered_set<std::int64_t> known;
    for (const auto& rec : view.metadata->records()) {
      if (rec.topic) known.insert(*rec.topic);
    }
    for (std::int64_t t : p->topics) {
      if (!known.count(t)) {
        throw DataError("topic " + std::to_string(t) +
                        " does not exist in the metadata");
      }
    }
    std::vector<bool> drop(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& topic = view.record(view.selection[i]).topic;
      if (topic && p->topics.count(*topic)) drop[i] = true;
    }
    return keep_positions(view, drop);
  }

  const auto& p = std::get<ReplacePolicy>(policy);
  if (!(p.tau >= 0.0 && p.tau <= 1.0)) {
    throw DataError("replacement tau must lie in [0,1]");
  }
  CorpusView replaced = view;
  for (std::size_t i = 0; i < n; ++i) {
    const Row row = view.selection[i];
    if (provider_score(view, row, p.provider) > p.tau) {
      auto twin = view.metadata->counterpart_of(row);
      if (!twin) {
        throw DataError("document \"" + view.record(row).id +
                        "\" exceeds tau but has no rephrased counterpart");
      }
      replaced.replacements[row] = static_cast<Row>(*twin);
    }
  }
  return replaced;
}

SweepTable sweep(const CorpusView& view, const std::string& provider,
                 const std::vector<double>& taus, std::uint64_t seed,
                 SweepMode mode, const WeightingMode& weighting) {
  for (std::size_t i = 1; i < taus.size(); ++i) {
    if (taus[i] > taus[i - 1]) {
      throw DataError("tau grid must be sorted in descending order");
    }
  }
  const GaussianSummary before = fit_summary(view, weighting);
  const double n_base = static_cast<double>(view.selection.size());

  SweepTable table;
  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    const double tau = taus[ti];
    CorpusView moderated =
        mode == SweepMode::Remove
            ? apply_policy(view, ThresholdPolicy{provider, tau})
            : apply_policy(view, ReplacePolicy{provider, tau});
    const std::size_t affected =
        mode == SweepMode::Remove
            ? view.selection.size() - moderated.selection.size()
            : moderated.replacements.size() - view.replacements.size();

    SweepRow row;
    row.tau = tau;
    row.policy = bcd(before, fit_summary(moderated, weighting));
    row.policy.retained_fraction =
        static_cast<double>(moderated.selection.size()) / n_base;

    CorpusView random_view = remove_random_exact(
        view, affected, derive_seed(seed, {kStreamRandomBaseline, ti}));
    row.random = bcd(before, fit_summary(random_view, weighting));
    row.random.retained_fraction =
        static_cast<double>(random_view.selection.size()) / n_base;
    table.rows.push_back(std::move(row));
  }
  return table;
}

MaxBenchTable max_distortion_benchmark(const CorpusView& view,
                                       const std::string& provider,
                                       const std::vector<double>& taus,
                                       std::uint64_t seed,
                                       const WeightingMode& weighting) {
  for (std::size_t i = 1; i < taus.size(); ++i) {
    if (taus[i] > taus[i - 1]) {
      throw DataError("tau grid must be sorted in descending order");
    }
  }
  MaxBenchTable table;
  GaussianSummary before;
  try {
    before = fit_summary(view, weighting);
  } catch (const Error& e) {
    // A corpus whose baseline cannot be summarized (e.g. identical rows)
    // yields a table of error-marked rows rather than an abort.
    for (double tau : taus) {
      MaxBenchRow row;
      row.tau = tau;
      row.error = e.what();
      row.ratio_threshold_to_max = std::numeric_limits<double>::quiet_NaN();
      table.rows.push_back(std::move(row));
    }
    return table;
  }
  const std::vector<std::size_t> priority = distance_priority(view);
  const double n_base = static_cast<double>(view.selection.size());

  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    MaxBenchRow row;
    row.tau = taus[ti];
    try {
      CorpusView thr = apply_policy(view, ThresholdPolicy{provider, taus[ti]});
      const std::size_t removed = view.selection.size() - thr.selection.size();
      CorpusView maxd = drop_priority_prefix(view, priority, removed);
      CorpusView rnd = remove_random_exact(
          view, removed, derive_seed(seed, {kStreamRandomBaseline, ti}));

      row.threshold = bcd(before, fit_summary(thr, weighting));
      row.threshold.retained_fraction = thr.selection.size() / n_base;
      row.random = bcd(before, fit_summary(rnd, weighting));
      row.random.retained_fraction = rnd.selection.size() / n_base;
      row.maxdist = bcd(before, fit_summary(maxd, weighting));
      row.maxdist.retained_fraction = maxd.selection.size() / n_base;
      row.ratio_threshold_to_max =
          row.maxdist.bcd != 0.0
              ? row.threshold.bcd / row.maxdist.bcd
              : std::numeric_limits<double>::quiet_NaN();
    } catch (const Error& e) {
      row.error = e.what();
      row.ratio_threshold_to_max = std::numeric_limits<double>::quiet_NaN();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

TopicDropTable topic_drop_benchmark(const CorpusView& view,
                                    const std::vector<std::size_t>& k_values,
                                    std::size_t draws, std::uint64_t seed,
                                    const WeightingMode& weighting) {
  TopicDropTable table;

  std::vector<Row> labeled;
  labeled.reserve(view.selection.size());
  for (Row r : view.selection) {
    if (view.record(r).topic) {
      labeled.push_back(r);
    } else {
      ++table.unlabeled_excluded;
    }
  }
  CorpusView base = view.with_selection(std::move(labeled));

  std::vector<std::int64_t> topics;
  {
    std::unordered_set<std::int64_t> seen;
    for (Row r : base.selection) seen.insert(*base.record(r).topic);
    topics.assign(seen.begin(), seen.end());
    std::sort(topics.begin(), topics.end());
  }
  for (std::size_t k : k_values) {
    if (k > topics.size()) {
      throw DataError("k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(topics.size()) + " distinct topics");
    }
  }

  const GaussianSummary before = fit_summary(base, weighting);
  const double n_base = static_cast<double>(base.selection.size());

  for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
    const std::size_t k = k_values[ki];
    const std::size_t effective_draws = k == 0 ? 1 : draws;
    TopicDropRow row;
    row.k = k;
    double bcd_sum = 0.0;
    double retained_sum = 0.0;
    std::size_t ok = 0;
    for (std::size_t d = 0; d < effective_draws; ++d) {
      TopicDrawDetail detail;
      detail.k = k;
      detail.draw = d;
      Xoshiro256 rng(derive_seed(seed, {kStreamTopicDraw, ki, d}));
      std::vector<std::int64_t> pool = topics;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.bounded(pool.size() - i));
        std::swap(pool[i], pool[j]);
      }
      detail.topics.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(detail.topics.begin(), detail.topics.end());
      try {
        TopicDropPolicy policy;
        policy.topics.insert(detail.topics.begin(), detail.topics.end());
        CorpusView dropped = apply_policy(base, policy);
        DistortionReport report = bcd(before, fit_summary(dropped, weighting));
        detail.bcd = report.bcd;
        detail.retained_fraction = dropped.selection.size() / n_base;
        bcd_sum += detail.bcd;
        retained_sum += detail.retained_fraction;
        ++ok;
      } catch (const Error& e) {
        detail.error = e.what();
        ++row.failed_draws;
      }
      table.details.push_back(std::move(detail));
    }
    row.mean_bcd = ok > 0 ? bcd_sum / static_cast<double>(ok)
                          : std::numeric_limits<double>::quiet_NaN();
    row.mean_retained = ok > 0 ? retained_sum / static_cast<double>(ok)
                               : std::numeric_limits<double>::quiet_NaN();
    table.rows.push_back(row);
  }
  return table;
}

TopicShiftTable topic_shift_report(const CorpusView& view,
                                   const std::string& provider, double tau) {
  TopicShiftTable table;
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> counts;
  for (Row r : view.selection) {
    const bool removed = provider_score(view, r, provider) > tau;
    const auto& topic = view.record(r).topic;
    if (!topic) {
      ++table.unlabeled_total;
      if (removed) ++table.unlabeled_removed;
      continue;
    }
    auto& entry = counts[*topic];
    ++entry.first;
    if (removed) ++entry.second;
  }
  for (const auto& [topic, entry] : counts) {
    TopicShiftRow row;
    row.topic = topic;
    row.n_before = entry.first;
    row.n_removed = entry.second;
    row.removal_share =
        static_cast<double>(entry.second) / static_cast<double>(entry.first);
    table.rows.push_back(row);
  }
  std::sort(table.rows.begin(), table.rows.end(),
            [](const TopicShiftRow& a, const TopicShiftRow& b) {
              if (a.removal_share != b.removal_share) {
                return a.removal_share > b.removal_share;
              }
              return a.topic < b.topic;
            });
  return table;
}

double mean_pairwise_cosine(const CorpusView& view, std::size_t subsample,
                            std::uint64_t seed) {
  const std::size_t n = view.selection.size();
  if (subsample < 2) {
    throw DataError("cosine subsample must contain at least 2 rows");
  }
  if (subsample > n) {
    throw DataError("cosine subsample " + std::to_string(subsample) +
                    " exceeds selection size " + std::to_string(n));
  }
  Xoshiro256 rng(derive_seed(seed, {kStreamCosineSubsample}));
  std::vector<std::uint32_t> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  for (std::size_t i = 0; i < subsample; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(n - i));
    std::swap(positions[i], positions[j]);
  }

  const std::size_t d = view.matrix->n_dims();
  std::vector<double> rowbuf(d);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < subsample; ++i) {
    const Row row = view.selection[positions[i]];
    view.matrix->copy_row(view.effective_row(row), rowbuf);
    double norm_sq = 0.0;
    for (double v : rowbuf) norm_sq += v * v;
    if (norm_sq == 0.0) {
      throw DataError("row " + std::to_string(view.effective_row(row)) +
                      " has zero norm");
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < d; ++j) {
      sum[static_cast<Eigen::Index>(j)] += rowbuf[j] * inv;
    }
  }
  const double m = static_cast<double>(subsample);
  return (sum.squaredNorm() - m) / (m * (m - 1.0));
}

// ---------------------------------------------------------------------------
// CSV emission

void write_sweep_csv(const SweepTable& table,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "tau,retained_fraction,bcd,mean_term,variance_term,gvi_log_ratio,"
         "bcd_random,gvi_log_ratio_random\n";
  for (const SweepRow& row : table.rows) {
    out << format_double(row.tau) << ','
        << format_double(row.policy.retained_fraction) << ','
        << format_double(row.policy.bcd) << ','
        << format_double(row.policy.mean_term) << ','
        << format_double(row.policy.variance_term) << ','
        << format_double(row.policy.gvi_log_ratio) << ','
        << format_double(row.random.bcd) << ','
        << format_double(row.random.gvi_log_ratio) << '\n';
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

void write_benchmark_csv(const MaxBenchTable& table,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "tau,retained_fraction,bcd,mean_term,variance_term,gvi_log_ratio,"
         "bcd_random,gvi_log_ratio_random,bcd_maxdist,ratio_threshold_to_max,"
         "error\n";
  for (const MaxBenchRow& row : table.rows) {
    out << format_double(row.tau) << ','
        << format_double(row.threshold.retained_fraction) << ','
        << format_double(row.threshold.bcd) << ','
        << format_double(row.threshold.mean_term) << ','
        << format_double(row.threshold.variance_term) << ','
        << format_double(row.threshold.gvi_log_ratio) << ','
        << format_double(row.random.bcd) << ','
        << format_double(row.random.gvi_log_ratio) << ','
        << format_double(row.maxdist.bcd) << ','
        << format_double(row.ratio_threshold_to_max) << ','
        << row.error << '\n';
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

void write_topic_drop_csv(const TopicDropTable& table,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "k,mean_bcd,mean_retained,failed_draws\n";
  for (const TopicDropRow& row : table.rows) {
    out << row.k << ',' << format_double(row.mean_bcd) << ','
        << format_double(row.mean_retained) << ',' << row.failed_draws << '\n';
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

void write_topic_shift_csv(const TopicShiftTable& table,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "topic,n_before,n_removed,removal_share\n";
  for (const TopicShiftRow& row : table.rows) {
    out << row.topic << ',' << row.n_before << ',' << row.n_removed << ','
        << format_double(row.removal_share) << '\n';
  }
  if (!out) throw Error("I/O failure while writing " + path.string());
}

}  // namespace semshift
