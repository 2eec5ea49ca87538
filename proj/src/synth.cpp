#include "semshift/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "semshift/distortion.hpp"
#include "semshift/rng.hpp"

namespace semshift {

namespace {

constexpr std::size_t kBlockRows = 8192;

void validate_spec(const ScenarioSpec& spec) {
  if (spec.n == 0 || spec.d == 0) {
    throw DataError("scenario must have n >= 1 and d >= 1");
  }
  if (spec.components.empty()) {
    throw DataError("scenario has no mixture components");
  }
  double weight_sum = 0.0;
  for (const ComponentSpec& comp : spec.components) {
    if (!(comp.weight > 0.0)) {
      throw DataError("component weights must be positive");
    }
    weight_sum += comp.weight;
    if (comp.mean.size() != static_cast<Eigen::Index>(spec.d) ||
        comp.cov_diag.size() != static_cast<Eigen::Index>(spec.d)) {
      throw DataError("component parameter dimensions disagree with d");
    }
    if (!(comp.cov_diag.array() >= 0.0).all()) {
      throw DataError("component variances must be nonnegative");
    }
    if (!(comp.toxicity_mean >= 0.0 && comp.toxicity_mean <= 1.0)) {
      throw DataError("component toxicity_mean must lie in [0,1]");
    }
    if (!(comp.toxicity_spread >= 0.0)) {
      throw DataError("component toxicity_spread must be nonnegative");
    }
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw DataError("component weights must sum to 1");
  }
  if (spec.rephrase_shrink >= 0.0 && spec.rephrase_shrink > 1.0) {
    throw DataError("rephrase_shrink must lie in [0,1]");
  }
  if (spec.language_gain < 0.0 || spec.rephrase_jitter < 0.0) {
    throw DataError("language_gain and rephrase_jitter must be nonnegative");
  }
}

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

}  // namespace

ScenarioSpec ScenarioSpec::with_size(std::size_t rows, std::size_t dims) const {
  ScenarioSpec out = *this;
  out.n = rows;
  out.d = dims;
  for (ComponentSpec& comp : out.components) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dims);
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(dims);
    const Eigen::Index copy = std::min<Eigen::Index>(comp.mean.size(), dims);
    mean.head(copy) = comp.mean.head(copy);
    diag.head(copy) = comp.cov_diag.head(copy);
    const double fill = comp.cov_diag.size() > 0
                            ? comp.cov_diag[comp.cov_diag.size() - 1]
                            : 1.0;
    for (Eigen::Index j = copy; j < static_cast<Eigen::Index>(dims); ++j) {
      diag[j] = fill;
    }
    comp.mean = std::move(mean);
    comp.cov_diag = std::move(diag);
  }
  return out;
}

ScenarioSpec ScenarioSpec::with_seed(std::uint64_t s) const {
  ScenarioSpec out = *this;
  out.seed = s;
  return out;
}

SynthCorpus generate(const ScenarioSpec& spec) {
  validate_spec(spec);
  const std::size_t n = spec.n;
  const std::size_t d = spec.d;
  const bool with_counterparts = spec.rephrase_shrink >= 0.0;
  const std::size_t total_rows = with_counterparts ? 2 * n : n;

  std::vector<double> cumulative;
  cumulative.reserve(spec.components.size());
  double acc = 0.0;
  for (const ComponentSpec& comp : spec.components) {
    acc += comp.weight;
    cumulative.push_back(acc);
  }
  cumulative.back() = 1.0;

  std::vector<float> data(total_rows * d);
  std::vector<std::uint32_t> labels(total_rows);
  std::vector<double> scores(n);
  std::vector<double> engagement(n);

  const std::size_t n_blocks = (n + kBlockRows - 1) / kBlockRows;
  const std::size_t language_axis = std::min(kLanguageAxisBase, d - 1);
  auto generate_block = [&](std::size_t block) {
    Xoshiro256 rng(derive_seed(spec.seed, {kStreamGenerateBlock, block}));
    std::vector<double> content_row(d);
    const std::size_t begin = block * kBlockRows;
    const std::size_t end = std::min(n, begin + kBlockRows);
    for (std::size_t i = begin; i < end; ++i) {
      const double u = rng.uniform01();
      std::size_t c = 0;
      while (c + 1 < cumulative.size() && u >= cumulative[c]) ++c;
      const ComponentSpec& comp = spec.components[c];
      labels[i] = static_cast<std::uint32_t>(c);
      for (std::size_t j = 0; j < d; ++j) {
        content_row[j] = comp.mean[static_cast<Eigen::Index>(j)] +
                         std::sqrt(comp.cov_diag[static_cast<Eigen::Index>(j)]) *
                             rng.normal();
      }
      const double score =
          clamp01(comp.toxicity_mean + comp.toxicity_spread * rng.normal());
      scores[i] = score;
      engagement[i] = std::floor(-1.5 * std::log(1.0 - rng.uniform01()));

      float* row = data.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = static_cast<float>(content_row[j]);
      }
      row[language_axis] = static_cast<float>(
          content_row[language_axis] + spec.language_gain * score);

      if (with_counterparts) {
        // Counterpart: content pulled toward the component mean, language
        // shift rebuilt from the reduced score, plus wording jitter with
        // per-axis decaying variance.
        const double twin_score = clamp01(0.35 * score);
        float* twin = data.data() + (n + i) * d;
        for (std::size_t j = 0; j < d; ++j) {
          const double mu = comp.mean[static_cast<Eigen::Index>(j)];
          twin[j] = static_cast<float>(
              mu + spec.rephrase_shrink * (content_row[j] - mu));
        }
        twin[language_axis] = static_cast<float>(
            static_cast<double>(twin[language_axis]) +
            spec.language_gain * twin_score);
        if (spec.rephrase_jitter > 0.0) {
          double axis_var = spec.rephrase_jitter;
          for (std::size_t j = 0; j < spec.language_axes; ++j) {
            const std::size_t axis = kLanguageAxisBase + j;
            const double noise = std::sqrt(axis_var) * rng.normal();
            if (axis < d) {
              twin[axis] = static_cast<float>(
                  static_cast<double>(twin[axis]) + noise);
            }
            axis_var *= 0.82;
          }
        }
        labels[n + i] = labels[i];
      }
    }
  };

  unsigned threads = fit_threads();
  if (threads <= 1 || n_blocks <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) generate_block(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n_blocks); ++t) {
      pool.emplace_back([&]() {
        for (std::size_t b = next.fetch_add(1); b < n_blocks;
             b = next.fetch_add(1)) {
          generate_block(b);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  std::vector<DocumentRecord> records(total_rows);
  std::vector<std::string> ids(total_rows);
  for (std::size_t i = 0; i < n; ++i) {
    DocumentRecord& rec = records[i];
    rec.id = "t" + std::to_string(i);
    rec.toxicity[kSynthProvider] = scores[i];
    rec.topic = static_cast<std::int64_t>(labels[i]);
    rec.weight = engagement[i];
    ids[i] = rec.id;
  }
  if (with_counterparts) {
    for (std::size_t i = 0; i < n; ++i) {
      DocumentRecord& rec = records[n + i];
      rec.id = "t" + std::to_string(i) + "_r";
      rec.toxicity[kSynthProvider] = clamp01(0.35 * scores[i]);
      rec.topic = static_cast<std::int64_t>(labels[i]);
      rec.weight = 0.0;
      rec.rephrased_of = "t" + std::to_string(i);
      ids[n + i] = rec.id;
    }
  }

  SynthCorpus corpus;
  corpus.matrix = EmbeddingMatrix(total_rows, d, std::move(data));
  corpus.matrix.set_ids(std::move(ids));
  corpus.metadata = MetadataTable(std::move(records));
  corpus.truth.labels = std::move(labels);
  for (const ComponentSpec& comp : spec.components) {
    corpus.truth.components.push_back(
        ComponentTruth{comp.weight, comp.mean, comp.cov_diag});
  }
  return corpus;
}

double closed_form_bcd(const GaussianParams& p, const GaussianParams& q) {
  GaussianSummary sp = summary_from_moments(p.mean, p.covariance);
  GaussianSummary sq = summary_from_moments(q.mean, q.covariance);
  return bcd(sp, sq).bcd;
}

namespace {

ComponentSpec make_component(double weight, std::size_t d,
                             std::initializer_list<double> mean_head,
                             double variance, double tox_mean,
                             double tox_spread) {
  ComponentSpec comp;
  comp.weight = weight;
  comp.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  Eigen::Index j = 0;
  for (double v : mean_head) comp.mean[j++] = v;
  comp.cov_diag =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), variance);
  comp.toxicity_mean = tox_mean;
  comp.toxicity_spread = tox_spread;
  return comp;
}

}  // namespace

ScenarioSpec scenario_s1() {
  constexpr std::size_t d = 64;
  ScenarioSpec spec;
  spec.name = "S1";
  spec.n = 100000;
  spec.d = d;
  // Five topical components with increasing toxicity, the last one strongly
  // toxic and offset, plus a small benign broad-variance component whose
  // rows populate the far shell around the centroid. That keeps threshold
  // removal well separated from both baselines: it beats matched random
  // removal by a wide margin but stays below max-distance removal. The
  // mid-toxicity component sits on the same offset axis as the toxic one,
  // so lowering the threshold keeps pushing the sample in one direction
  // instead of cancelling earlier shifts.
  spec.components = {
      make_component(0.29, d, {0.0}, 1.0, 0.05, 0.05),
      make_component(0.24, d, {2.0}, 1.0, 0.10, 0.07),
      make_component(0.19, d, {-2.0, 2.0}, 1.0, 0.15, 0.07),
      make_component(0.13, d, {0.0, 0.0, 2.5, 1.0}, 1.0, 0.22, 0.13),
      make_component(0.12, d, {0.0, 0.0, 5.0, 2.5}, 1.5, 0.85, 0.12),
      make_component(0.03, d, {0.0}, 25.0, 0.05, 0.04),
  };
  spec.language_gain = 1.5;
  // Transformer embeddings live in a narrow cone: a large component shared
  // by every document dominates the norm, which is what keeps the mean
  // pairwise cosine nearly invariant under moderation. Model that with a
  // common offset on an axis no component or language signal uses.
  if (d > kSharedConeAxis) {
    for (ComponentSpec& comp : spec.components) {
      comp.mean[static_cast<Eigen::Index>(kSharedConeAxis)] = 24.0;
    }
  }
  return spec;
}

ScenarioSpec scenario_s2() {
  constexpr std::size_t d = 64;
  ScenarioSpec spec;
  spec.name = "S2";
  spec.n = 100000;
  spec.d = d;
  for (int c = 0; c < 5; ++c) {
    ComponentSpec comp = make_component(0.2, d, {}, 1.0, 0.05, 0.03);
    comp.mean[c] = 6.0;
    spec.components.push_back(std::move(comp));
  }
  return spec;
}

ScenarioSpec scenario_s3() {
  ScenarioSpec spec = scenario_s1();
  spec.name = "S3";
  spec.rephrase_shrink = 0.8;
  spec.rephrase_jitter = 0.55;
  return spec;
}

ScenarioSpec scenario_by_name(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  if (upper == "S1") return scenario_s1();
  if (upper == "S2") return scenario_s2();
  if (upper == "S3") return scenario_s3();
  throw DataError("unknown scenario \"" + name + "\" (expected S1, S2 or S3)");
}

}  // namespace semshift
