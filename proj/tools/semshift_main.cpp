// semshift: measure how content-moderation policies distort the semantic
// distribution of an embedded corpus.
//
// Exit codes: 0 success, 2 usage error, 3 data/validation error,
//             4 numerical failure, 5 network failure, 130 interrupted.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "semshift/chart.hpp"
#include "semshift/debias.hpp"
#include "semshift/distortion.hpp"
#include "semshift/gaussian.hpp"
#include "semshift/ingest.hpp"
#include "semshift/manifest.hpp"
#include "semshift/policy.hpp"
#include "semshift/score_client.hpp"
#include "semshift/synth.hpp"

namespace {

using namespace semshift;

std::atomic<bool> g_interrupted{false};

void handle_sigint(int) { g_interrupted.store(true); }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Interrupted : std::runtime_error {
  Interrupted() : std::runtime_error("interrupted") {}
};

void checkpoint_interrupt() {
  if (g_interrupted.load()) throw Interrupted();
}

/// Tracks a run's inputs/outputs and guards against silent overwrites.
/// A run that never reaches finish() (error, SIGINT) still leaves a
/// manifest, flagged incomplete.
class Run {
 public:
  Run(std::string command, std::filesystem::path outdir, bool force)
      : outdir_(std::move(outdir)), force_(force) {
    manifest_.command = std::move(command);
    std::filesystem::create_directories(outdir_);
    start_ = std::chrono::steady_clock::now();
  }

  ~Run() {
    if (finished_) return;
    // Flag interrupted runs, but only when they left partial outputs;
    // a refused overwrite must not clobber the previous run's manifest.
    bool any_output = false;
    for (const auto& path : manifest_.outputs) {
      if (std::filesystem::exists(path)) any_output = true;
    }
    if (!any_output) return;
    try {
      finish(false);
    } catch (...) {
    }
  }

  const std::filesystem::path& outdir() const { return outdir_; }

  std::filesystem::path plan_output(const std::string& name) {
    std::filesystem::path path = outdir_ / name;
    if (!force_ && std::filesystem::exists(path)) {
      throw UsageError("output " + path.string() +
                       " exists; pass --force to overwrite");
    }
    manifest_.add_output(path);
    return path;
  }

  void add_input(const std::filesystem::path& path) {
    manifest_.add_input(path);
  }
  void set_seed(std::uint64_t seed) { manifest_.seed = seed; }

  void finish(bool complete = true) {
    finished_ = true;
    manifest_.duration_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start_)
            .count();
    manifest_.complete = complete;
    // Only hash outputs that actually materialized.
    std::vector<std::filesystem::path> existing;
    for (const auto& path : manifest_.outputs) {
      if (std::filesystem::exists(path)) existing.push_back(path);
    }
    manifest_.outputs = std::move(existing);
    write_manifest(manifest_, outdir_);
  }

 private:
  std::filesystem::path outdir_;
  bool force_;
  bool finished_ = false;
  RunManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

struct CorpusOptions {
  std::string embeddings;
  std::string metadata;
  std::string weighting = "uniform";
  double engagement_offset = 1.0;

  WeightingMode weighting_mode() const {
    if (weighting == "engagement") {
      return WeightingMode::engagement(engagement_offset);
    }
    return WeightingMode::uniform();
  }
};

void add_corpus_options(CLI::App* cmd, CorpusOptions& opts) {
  cmd->add_option("-e,--embeddings", opts.embeddings, "EMB1 embedding matrix")
      ->required();
  cmd->add_option("-m,--metadata", opts.metadata, "metadata JSONL")
      ->required();
  cmd->add_option("--weighting", opts.weighting,
                  "row weighting: uniform or engagement")
      ->check(CLI::IsMember({"uniform", "engagement"}));
  cmd->add_option("--engagement-offset", opts.engagement_offset,
                  "offset added to engagement counts (default 1)");
}

struct LoadedCorpus {
  EmbeddingMatrix matrix;
  MetadataTable metadata;
};

LoadedCorpus load_corpus(Run& run, const CorpusOptions& opts) {
  run.add_input(opts.embeddings);
  run.add_input(opts.metadata);
  LoadedCorpus corpus;
  corpus.matrix = read_embeddings(opts.embeddings);
  corpus.metadata = read_metadata(opts.metadata, corpus.matrix.n_rows());
  return corpus;
}

/// Baseline sample: every row that is not a rephrased counterpart. For
/// corpora without counterpart rows this is the full corpus.
CorpusView baseline_view(const LoadedCorpus& corpus) {
  return originals_only(corpus.matrix, corpus.metadata);
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << body;
  if (!out) throw Error("I/O failure while writing " + path.string());
}

nlohmann::json summary_diagnostics(const GaussianSummary& summary,
                                   const WeightingMode& weighting) {
  nlohmann::json j;
  j["n_effective"] = summary.n_effective;
  j["weight_sum"] = summary.weight_sum;
  j["log_det"] = summary.log_det;
  j["jitter"] = summary.jitter_applied;
  j["dims"] = summary.dims();
  j["weighting"] = weighting.kind == WeightingMode::Kind::Engagement
                       ? "engagement"
                       : "uniform";
  j["engagement_offset"] = weighting.offset;
  j["mean"] = std::vector<double>(summary.mean.data(),
                                  summary.mean.data() + summary.mean.size());
  return j;
}

std::vector<double> provider_scores_for_all_rows(const MetadataTable& metadata,
                                                 const std::string& provider) {
  std::vector<double> scores(metadata.size());
  for (std::size_t i = 0; i < metadata.size(); ++i) {
    const auto& tox = metadata.record(i).toxicity;
    auto it = tox.find(provider);
    if (it == tox.end()) {
      throw DataError("document \"" + metadata.record(i).id +
                      "\" has no score from provider \"" + provider + "\"");
    }
    scores[i] = it->second;
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Subcommand runners

struct CommonFlags {
  std::string outdir;
  bool force = false;
  unsigned threads = 0;
};

void run_summarize(const CommonFlags& common,
                   const CorpusOptions& corpus_opts) {
  Run run("summarize", common.outdir, common.force);
  auto summary_path = run.plan_output("summary.json");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  const WeightingMode weighting = corpus_opts.weighting_mode();
  GaussianSummary summary = fit_summary(baseline_view(corpus), weighting);
  write_text(summary_path,
             summary_diagnostics(summary, weighting).dump(2) + "\n");
  std::cout << "n=" << summary.n_effective << " log_det=" << summary.log_det
            << " jitter=" << summary.jitter_applied << "\n";
  run.finish();
}

void run_bcd(const CommonFlags& common, const CorpusOptions& before_opts,
             const CorpusOptions& after_opts) {
  Run run("bcd", common.outdir, common.force);
  auto report_path = run.plan_output("report.json");
  LoadedCorpus before = load_corpus(run, before_opts);
  LoadedCorpus after = load_corpus(run, after_opts);
  checkpoint_interrupt();
  DistortionReport report =
      bcd(fit_summary(baseline_view(before), before_opts.weighting_mode()),
          fit_summary(baseline_view(after), after_opts.weighting_mode()));
  const std::string json = report_to_json(report);
  write_text(report_path, json + "\n");
  std::cout << json << "\n";
  run.finish();
}

void run_sweep(const CommonFlags& common, const CorpusOptions& corpus_opts,
               const std::string& provider, const std::vector<double>& taus,
               std::uint64_t seed, const std::string& mode) {
  Run run("sweep", common.outdir, common.force);
  run.set_seed(seed);
  auto csv_path = run.plan_output("sweep.csv");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  SweepTable table =
      sweep(baseline_view(corpus), provider, taus, seed,
            mode == "replace" ? SweepMode::Replace : SweepMode::Remove,
            corpus_opts.weighting_mode());
  write_sweep_csv(table, csv_path);
  bool jittered = false;
  for (const SweepRow& row : table.rows) {
    jittered = jittered || row.policy.jitter[0] != 0.0 ||
               row.policy.jitter[1] != 0.0;
    std::printf("tau=%.3f retained=%.4f bcd=%.6g bcd_random=%.6g\n", row.tau,
                row.policy.retained_fraction, row.policy.bcd, row.random.bcd);
  }
  if (jittered) {
    std::cerr << "warning: ridge regularization was applied to a singular "
                 "covariance; for orthogonalized corpora sweep the "
                 "debiased_reduced.emb1 matrix instead\n";
  }
  run.finish();
}

void run_benchmark_max(const CommonFlags& common,
                       const CorpusOptions& corpus_opts,
                       const std::string& provider,
                       const std::vector<double>& taus, std::uint64_t seed) {
  Run run("benchmark-max", common.outdir, common.force);
  run.set_seed(seed);
  auto csv_path = run.plan_output("benchmark_max.csv");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  MaxBenchTable table =
      max_distortion_benchmark(baseline_view(corpus), provider, taus, seed,
                               corpus_opts.weighting_mode());
  write_benchmark_csv(table, csv_path);
  for (const MaxBenchRow& row : table.rows) {
    if (!row.error.empty()) {
      std::printf("tau=%.3f error=%s\n", row.tau, row.error.c_str());
    } else {
      std::printf("tau=%.3f bcd=%.6g bcd_maxdist=%.6g ratio=%.4f\n", row.tau,
                  row.threshold.bcd, row.maxdist.bcd,
                  row.ratio_threshold_to_max);
    }
  }
  run.finish();
}

void run_topics_drop(const CommonFlags& common,
                     const CorpusOptions& corpus_opts,
                     const std::vector<std::size_t>& k_values,
                     std::size_t draws, std::uint64_t seed, bool verbose) {
  Run run("topics drop", common.outdir, common.force);
  run.set_seed(seed);
  auto csv_path = run.plan_output("topic_drop.csv");
  std::optional<std::filesystem::path> details_path;
  if (verbose) details_path = run.plan_output("topic_drop_details.csv");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  TopicDropTable table =
      topic_drop_benchmark(baseline_view(corpus), k_values, draws, seed,
                           corpus_opts.weighting_mode());
  write_topic_drop_csv(table, csv_path);
  if (details_path) {
    std::ofstream out(*details_path, std::ios::trunc);
    out << "k,draw,topics,bcd,retained_fraction,error\n";
    for (const TopicDrawDetail& d : table.details) {
      out << d.k << ',' << d.draw << ',';
      for (std::size_t i = 0; i < d.topics.size(); ++i) {
        if (i) out << ';';
        out << d.topics[i];
      }
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g,", d.bcd,
                    d.retained_fraction);
      out << buf << d.error << '\n';
    }
  }
  if (table.unlabeled_excluded > 0) {
    std::cerr << "warning: excluded " << table.unlabeled_excluded
              << " rows without topic labels\n";
  }
  for (const TopicDropRow& row : table.rows) {
    std::printf("k=%zu mean_bcd=%.6g mean_retained=%.4f failed=%zu\n", row.k,
                row.mean_bcd, row.mean_retained, row.failed_draws);
  }
  run.finish();
}

void run_topics_shift(const CommonFlags& common,
                      const CorpusOptions& corpus_opts,
                      const std::string& provider, double tau) {
  Run run("topics shift", common.outdir, common.force);
  auto csv_path = run.plan_output("topic_shift.csv");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  TopicShiftTable table =
      topic_shift_report(baseline_view(corpus), provider, tau);
  write_topic_shift_csv(table, csv_path);
  if (table.unlabeled_total > 0) {
    std::cerr << "warning: " << table.unlabeled_total
              << " rows without topic labels (" << table.unlabeled_removed
              << " of them above tau)\n";
  }
  for (const TopicShiftRow& row : table.rows) {
    std::printf("topic=%lld share=%.4f removed=%zu/%zu\n",
                static_cast<long long>(row.topic), row.removal_share,
                row.n_removed, row.n_before);
  }
  run.finish();
}

void run_debias(const CommonFlags& common, const CorpusOptions& corpus_opts,
                const std::string& provider, std::size_t k, bool centered) {
  Run run("debias", common.outdir, common.force);
  auto basis_path = run.plan_output("basis.toxb1");
  auto matrix_path = run.plan_output("debiased.emb1");
  auto reduced_path = run.plan_output("debiased_reduced.emb1");
  auto audit_path = run.plan_output("audit.json");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();

  auto pairs = counterpart_pairs(corpus.metadata);
  ProjectionBasis basis =
      build_toxicity_basis(corpus.matrix, pairs, k, centered);
  checkpoint_interrupt();
  EmbeddingMatrix debiased = orthogonalize(corpus.matrix, basis);
  write_basis(basis, basis_path);
  write_embeddings(debiased, matrix_path);
  // The full-D projection has a singular covariance (K directions are
  // identically zero). Distance pipelines should consume the complement-
  // coordinate matrix, which is the same corpus in a well-posed basis.
  write_embeddings(project_complement(corpus.matrix, basis), reduced_path);

  const std::vector<double> scores =
      provider_scores_for_all_rows(corpus.metadata, provider);
  AuditResult before = toxicity_audit(corpus.matrix, basis, scores);
  AuditResult after = toxicity_audit(debiased, basis, scores);
  nlohmann::json audit;
  audit["pairs"] = pairs.size();
  audit["k"] = k;
  audit["explained_energy"] = std::vector<double>(
      basis.explained_energy.data(),
      basis.explained_energy.data() + basis.explained_energy.size());
  audit["max_abs_correlation_before"] = before.max_abs_correlation;
  audit["max_abs_correlation_after"] = after.max_abs_correlation;
  audit["after_degenerate"] = after.degenerate;
  write_text(audit_path, audit.dump(2) + "\n");
  std::cout << "audit before=" << before.max_abs_correlation
            << " after=" << after.max_abs_correlation << "\n";
  run.finish();
}

void run_residualize(const CommonFlags& common,
                     const CorpusOptions& corpus_opts,
                     const std::string& provider, const std::string& mode,
                     std::size_t bins) {
  Run run("residualize", common.outdir, common.force);
  auto model_path = run.plan_output("residualizer.resid1");
  auto matrix_path = run.plan_output("residualized.emb1");
  auto audit_path = run.plan_output("audit.json");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();

  const ResidualMode residual_mode =
      mode == "linear" ? ResidualMode::Linear : ResidualMode::Permille;
  CorpusView full = align(corpus.matrix, corpus.metadata);
  ResidualizerModel model =
      fit_residualizer(full, provider, residual_mode, bins);
  checkpoint_interrupt();
  EmbeddingMatrix residualized = residualize(corpus.matrix, model);
  write_residualizer(model, model_path);
  write_embeddings(residualized, matrix_path);

  const std::vector<double> scores =
      provider_scores_for_all_rows(corpus.metadata, provider);
  AuditResult audit_result = toxicity_audit(residualized, model, scores);
  nlohmann::json audit;
  audit["mode"] = mode;
  audit["bins"] = residual_mode == ResidualMode::Permille ? bins : 0;
  audit["max_abs_correlation_after"] = audit_result.max_abs_correlation;
  audit["after_degenerate"] = audit_result.degenerate;
  write_text(audit_path, audit.dump(2) + "\n");
  std::cout << "audit after=" << audit_result.max_abs_correlation << "\n";
  run.finish();
}

void run_cosine(const CommonFlags& common, const CorpusOptions& corpus_opts,
                std::size_t subsample, std::uint64_t seed) {
  Run run("cosine", common.outdir, common.force);
  run.set_seed(seed);
  auto json_path = run.plan_output("cosine.json");
  LoadedCorpus corpus = load_corpus(run, corpus_opts);
  checkpoint_interrupt();
  CorpusView view = baseline_view(corpus);
  const std::size_t effective =
      subsample == 0 ? view.selection.size() : subsample;
  const double mean = mean_pairwise_cosine(view, effective, seed);
  nlohmann::json j;
  j["mean_pairwise_cosine"] = mean;
  j["subsample"] = effective;
  j["seed"] = seed;
  write_text(json_path, j.dump(2) + "\n");
  std::cout << "mean_pairwise_cosine=" << mean << "\n";
  run.finish();
}

void run_synth(const CommonFlags& common, const std::string& scenario,
               std::size_t n, std::size_t d, std::uint64_t seed) {
  Run run("synth", common.outdir, common.force);
  run.set_seed(seed);
  auto emb_path = run.plan_output("corpus.emb1");
  auto meta_path = run.plan_output("corpus.meta.jsonl");
  auto truth_path = run.plan_output("truth.json");

  ScenarioSpec spec = scenario_by_name(scenario);
  if (n > 0 || d > 0) {
    spec = spec.with_size(n > 0 ? n : spec.n, d > 0 ? d : spec.d);
  }
  spec = spec.with_seed(seed);
  checkpoint_interrupt();
  SynthCorpus corpus = generate(spec);
  write_embeddings(corpus.matrix, emb_path);
  write_metadata(corpus.metadata, meta_path);

  nlohmann::json truth;
  truth["scenario"] = spec.name;
  truth["n"] = spec.n;
  truth["d"] = spec.d;
  truth["seed"] = spec.seed;
  truth["provider"] = kSynthProvider;
  truth["rephrase_shrink"] = spec.rephrase_shrink;
  truth["topic_is_component_index"] = true;
  nlohmann::json comps = nlohmann::json::array();
  for (const ComponentTruth& comp : corpus.truth.components) {
    nlohmann::json c;
    c["weight"] = comp.weight;
    c["mean"] = std::vector<double>(comp.mean.data(),
                                    comp.mean.data() + comp.mean.size());
    c["cov_diag"] = std::vector<double>(
        comp.cov_diag.data(), comp.cov_diag.data() + comp.cov_diag.size());
    comps.push_back(std::move(c));
  }
  truth["components"] = std::move(comps);
  write_text(truth_path, truth.dump(2) + "\n");
  std::cout << "wrote " << corpus.matrix.n_rows() << " rows (" << spec.name
            << ", d=" << spec.d << ")\n";
  run.finish();
}

void run_score(const CommonFlags& common, const std::string& texts_path,
               const std::string& metadata_path, const std::string& provider,
               std::string checkpoint, std::size_t batch_size,
               std::size_t max_in_flight) {
  Run run("score", common.outdir, common.force);
  auto out_meta_path = run.plan_output("metadata.scored.jsonl");
  run.add_input(texts_path);
  run.add_input(metadata_path);

  std::vector<std::pair<std::string, std::string>> texts;
  {
    std::ifstream in(texts_path);
    if (!in) throw Error("cannot open " + texts_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        nlohmann::json j = nlohmann::json::parse(line);
        texts.emplace_back(j.at("id").get<std::string>(),
                           j.at("text").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw DataError("texts line " + std::to_string(line_no) +
                        " is invalid: " + e.what());
      }
    }
  }

  std::size_t meta_lines = 0;
  {
    std::ifstream meta_in(metadata_path);
    if (!meta_in) throw Error("cannot open " + metadata_path);
    std::string line;
    while (std::getline(meta_in, line)) {
      if (!line.empty()) ++meta_lines;
    }
  }
  MetadataTable metadata = read_metadata(metadata_path, meta_lines);

  ScoringEndpoint endpoint = ScoringEndpoint::from_env();
  if (batch_size > 0) endpoint.batch_size = batch_size;
  if (max_in_flight > 0) endpoint.max_in_flight = max_in_flight;
  if (checkpoint.empty()) {
    checkpoint = (run.outdir() / "score_checkpoint.jsonl").string();
  }
  checkpoint_interrupt();
  ScoreOutcome outcome = score_texts(endpoint, texts, checkpoint);
  MetadataTable merged = merge_scores(metadata, outcome.scores, provider);
  write_metadata(merged, out_meta_path);

  std::cout << "scored=" << outcome.scores.size()
            << " failed=" << outcome.failures.size()
            << " requests=" << outcome.requests_issued << "\n";
  for (const ScoreFailure& failure : outcome.failures) {
    std::cerr << "failed: " << failure.id << ": " << failure.reason << "\n";
  }
  run.finish();
  if (!outcome.failures.empty()) {
    throw NetworkError(std::to_string(outcome.failures.size()) +
                       " texts could not be scored");
  }
}

void run_chart(const CommonFlags& common, const std::string& input,
               const std::vector<std::string>& columns, std::string title,
               const std::string& output_name) {
  Run run("chart", common.outdir, common.force);
  auto svg_path = run.plan_output(output_name);
  run.add_input(input);
  CsvTable table = read_csv(input);
  if (title.empty()) {
    title = std::filesystem::path(input).stem().string();
  }
  ChartSpec spec = chart_from_csv(table, columns, title);
  write_text(svg_path, render_line_chart_svg(spec));
  std::cout << "wrote " << svg_path.string() << "\n";
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, handle_sigint);

  CLI::App app{
      "semshift: distribution-level distortion reports for content-moderation "
      "policies over document embeddings"};
  app.require_subcommand(1);

  CommonFlags common;
  app.add_option("-o,--outdir", common.outdir,
                 "output directory (manifest.json is written here)")
      ->required();
  app.add_flag("--force", common.force, "overwrite existing outputs");
  app.add_option("--threads", common.threads,
                 "worker threads for fitting (default: hardware)");

  CorpusOptions summarize_corpus;
  auto* cmd_summarize = app.add_subcommand(
      "summarize", "fit a Gaussian summary and dump diagnostics");
  add_corpus_options(cmd_summarize, summarize_corpus);

  CorpusOptions bcd_before, bcd_after;
  auto* cmd_bcd =
      app.add_subcommand("bcd", "distortion report between two corpora");
  cmd_bcd->add_option("--before", bcd_before.embeddings, "before EMB1")
      ->required();
  cmd_bcd->add_option("--before-meta", bcd_before.metadata, "before JSONL")
      ->required();
  cmd_bcd->add_option("--after", bcd_after.embeddings, "after EMB1")
      ->required();
  cmd_bcd->add_option("--after-meta", bcd_after.metadata, "after JSONL")
      ->required();

  CorpusOptions sweep_corpus;
  std::string sweep_provider = "perspective";
  std::vector<double> sweep_taus = kDefaultTauGrid;
  std::uint64_t sweep_seed = 0;
  std::string sweep_mode = "remove";
  auto* cmd_sweep = app.add_subcommand(
      "sweep",
      "threshold sweep with matched random baselines (removal is strict: "
      "score > tau goes, score == tau stays)");
  add_corpus_options(cmd_sweep, sweep_corpus);
  cmd_sweep->add_option("--provider", sweep_provider, "toxicity provider");
  cmd_sweep->add_option("--taus", sweep_taus, "descending tau grid")
      ->delimiter(',');
  cmd_sweep->add_option("--seed", sweep_seed, "seed for random baselines")
      ->required();
  cmd_sweep->add_option("--mode", sweep_mode, "remove or replace")
      ->check(CLI::IsMember({"remove", "replace"}));

  CorpusOptions bench_corpus;
  std::string bench_provider = "perspective";
  std::vector<double> bench_taus = kDefaultTauGrid;
  std::uint64_t bench_seed = 0;
  auto* cmd_bench = app.add_subcommand(
      "benchmark-max",
      "threshold vs random vs max-distance removal at matched counts");
  add_corpus_options(cmd_bench, bench_corpus);
  cmd_bench->add_option("--provider", bench_provider, "toxicity provider");
  cmd_bench->add_option("--taus", bench_taus, "descending tau grid")
      ->delimiter(',');
  cmd_bench->add_option("--seed", bench_seed, "seed for random baselines")
      ->required();

  auto* cmd_topics = app.add_subcommand("topics", "topic-level analyses");
  cmd_topics->require_subcommand(1);

  CorpusOptions drop_corpus;
  std::vector<std::size_t> drop_k = {1, 2, 3, 4, 5};
  std::size_t drop_draws = 25;
  std::uint64_t drop_seed = 0;
  bool drop_verbose = false;
  auto* cmd_drop = cmd_topics->add_subcommand(
      "drop", "mean distortion over random draws of dropped topics");
  add_corpus_options(cmd_drop, drop_corpus);
  cmd_drop->add_option("--k-values", drop_k, "numbers of topics to drop")
      ->delimiter(',');
  cmd_drop->add_option("--draws", drop_draws, "random draws per k");
  cmd_drop->add_option("--seed", drop_seed, "seed for topic draws")
      ->required();
  cmd_drop->add_flag("--verbose", drop_verbose, "write per-draw details CSV");

  CorpusOptions shift_corpus;
  std::string shift_provider = "perspective";
  double shift_tau = 0.8;
  auto* cmd_shift = cmd_topics->add_subcommand(
      "shift", "per-topic removal shares under threshold moderation");
  add_corpus_options(cmd_shift, shift_corpus);
  cmd_shift->add_option("--provider", shift_provider, "toxicity provider");
  cmd_shift->add_option("--tau", shift_tau, "threshold");

  CorpusOptions debias_corpus;
  std::string debias_provider = "perspective";
  std::size_t debias_k = 10;
  auto* cmd_debias = app.add_subcommand(
      "debias",
      "toxicity-subspace orthogonalization from toxic/rephrased pairs");
  add_corpus_options(cmd_debias, debias_corpus);
  cmd_debias->add_option("--provider", debias_provider,
                         "provider used for the audit");
  cmd_debias->add_option("--k", debias_k, "basis size (default 10)");
  bool debias_centered = false;
  cmd_debias->add_flag("--centered", debias_centered,
                       "center difference vectors before the PCA");

  CorpusOptions resid_corpus;
  std::string resid_provider = "perspective";
  std::string resid_mode = "permille";
  std::size_t resid_bins = 1000;
  auto* cmd_resid = app.add_subcommand(
      "residualize", "regression residualization against toxicity");
  add_corpus_options(cmd_resid, resid_corpus);
  cmd_resid->add_option("--provider", resid_provider, "toxicity provider");
  cmd_resid->add_option("--mode", resid_mode, "permille or linear")
      ->check(CLI::IsMember({"permille", "linear"}));
  cmd_resid->add_option("--bins", resid_bins,
                        "quantile bins for permille mode (default 1000)");

  CorpusOptions cosine_corpus;
  std::size_t cosine_subsample = 0;
  std::uint64_t cosine_seed = 0;
  auto* cmd_cosine = app.add_subcommand(
      "cosine", "mean pairwise cosine similarity over a seeded subsample");
  add_corpus_options(cmd_cosine, cosine_corpus);
  cmd_cosine->add_option("--subsample", cosine_subsample,
                         "rows to sample (0 = all)");
  cmd_cosine->add_option("--seed", cosine_seed, "subsample seed")->required();

  std::string synth_scenario = "S1";
  std::size_t synth_n = 0, synth_d = 0;
  std::uint64_t synth_seed = 0;
  auto* cmd_synth = app.add_subcommand(
      "synth", "generate a synthetic corpus (scenarios S1, S2, S3)");
  cmd_synth->add_option("--scenario", synth_scenario, "S1, S2 or S3");
  cmd_synth->add_option("--n", synth_n, "rows (0 = scenario default)");
  cmd_synth->add_option("--d", synth_d, "dimensions (0 = scenario default)");
  cmd_synth->add_option("--seed", synth_seed, "generation seed")->required();

  std::string score_texts_path, score_metadata_path, score_checkpoint;
  std::string score_provider = "perspective";
  std::size_t score_batch = 0, score_inflight = 0;
  auto* cmd_score = app.add_subcommand(
      "score",
      "fetch toxicity scores from the service at SEMSHIFT_SCORE_URL "
      "(key from SEMSHIFT_SCORE_KEY) and merge them into metadata");
  cmd_score->add_option("--texts", score_texts_path,
                        "JSONL of {\"id\",\"text\"} records")
      ->required();
  cmd_score->add_option("-m,--metadata", score_metadata_path,
                        "metadata JSONL to merge into")
      ->required();
  cmd_score->add_option("--provider", score_provider,
                        "provider name to store");
  cmd_score->add_option("--checkpoint", score_checkpoint,
                        "checkpoint file (default: <outdir>/score_checkpoint.jsonl)");
  cmd_score->add_option("--batch-size", score_batch, "texts per request");
  cmd_score->add_option("--max-in-flight", score_inflight,
                        "concurrent requests");

  std::string chart_input, chart_title, chart_output = "chart.svg";
  std::vector<std::string> chart_columns;
  auto* cmd_chart = app.add_subcommand(
      "chart", "render an SVG line chart from a sweep/benchmark CSV");
  cmd_chart->add_option("--input", chart_input, "CSV produced by this tool")
      ->required();
  cmd_chart->add_option("--columns", chart_columns,
                        "columns to plot (default: all bcd* columns)")
      ->delimiter(',');
  cmd_chart->add_option("--title", chart_title, "chart title");
  cmd_chart->add_option("--output", chart_output, "SVG file name");

  app.fallthrough();
  for (CLI::App* sub : app.get_subcommands(nullptr)) {
    sub->fallthrough();
    for (CLI::App* nested : sub->get_subcommands(nullptr)) {
      nested->fallthrough();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (common.threads > 0) set_fit_threads(common.threads);

    if (cmd_summarize->parsed()) {
      run_summarize(common, summarize_corpus);
    } else if (cmd_bcd->parsed()) {
      run_bcd(common, bcd_before, bcd_after);
    } else if (cmd_sweep->parsed()) {
      run_sweep(common, sweep_corpus, sweep_provider, sweep_taus, sweep_seed,
                sweep_mode);
    } else if (cmd_bench->parsed()) {
      run_benchmark_max(common, bench_corpus, bench_provider, bench_taus,
                        bench_seed);
    } else if (cmd_topics->parsed() && cmd_drop->parsed()) {
      run_topics_drop(common, drop_corpus, drop_k, drop_draws, drop_seed,
                      drop_verbose);
    } else if (cmd_topics->parsed() && cmd_shift->parsed()) {
      run_topics_shift(common, shift_corpus, shift_provider, shift_tau);
    } else if (cmd_debias->parsed()) {
      run_debias(common, debias_corpus, debias_provider, debias_k,
                 debias_centered);
    } else if (cmd_resid->parsed()) {
      run_residualize(common, resid_corpus, resid_provider, resid_mode,
                      resid_bins);
    } else if (cmd_cosine->parsed()) {
      run_cosine(common, cosine_corpus, cosine_subsample, cosine_seed);
    } else if (cmd_synth->parsed()) {
      run_synth(common, synth_scenario, synth_n, synth_d, synth_seed);
    } else if (cmd_score->parsed()) {
      run_score(common, score_texts_path, score_metadata_path, score_provider,
                score_checkpoint, score_batch, score_inflight);
    } else if (cmd_chart->parsed()) {
      run_chart(common, chart_input, chart_columns, chart_title, chart_output);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Interrupted&) {
    std::cerr << "interrupted\n";
    return 130;
  } catch (const NetworkError& e) {
    std::cerr << "network error: " << e.what() << "\n";
    return 5;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
