#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsdf/data.hpp"
#include "tsdf/denoiser.hpp"
#include "tsdf/diffusion.hpp"
#include "tsdf/nn/graph.hpp"
#include "tsdf/pretrain.hpp"

namespace tsdf::augbench {

// Class 1 is the positive class.
struct Confusion {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
};

// Ratios with a zero denominator are absent.
struct Metrics {
  double acc = 0.0;
  std::optional<double> sen;
  std::optional<double> spec;
  std::optional<double> f1;
};

Metrics classification_metrics(const Confusion& c);
Confusion confusion(std::span<const int> truth, std::span<const int> predicted);

struct DownstreamConfig {
  std::size_t hidden = 64;
  double dropout = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  double weight_decay = 1e-4;

  void validate() const;
};

// One-hidden-layer GELU MLP on FC feature vectors, standardized with
// training-set statistics.
class DownstreamClassifier {
 public:
  // features: [N x F]. Needs at least 2 samples of each class.
  static DownstreamClassifier train(const nn::Tensor<double>& features, std::span<const int> labels,
                                    const DownstreamConfig& config, std::uint64_t seed);

  nn::Tensor<double> predict_proba(const nn::Tensor<double>& features);
  std::vector<int> predict(const nn::Tensor<double>& features);

 private:
  DownstreamClassifier(DownstreamConfig config, std::size_t inputs, std::uint64_t seed);
  nn::Var<double> forward(nn::Graph<double>& g, const nn::Tensor<double>& x, Rng* dropout);

  DownstreamConfig config_;
  std::size_t inputs_ = 0;
  std::vector<double> mean_;
  std::vector<double> inv_std_;
  nn::ParameterStore<double> store_;
};

// Upper-triangle FC features of each [L x R] series, stacked to [N x F].
nn::Tensor<double> fc_features(std::span<const nn::Tensor<double>> series);

enum class Ablation { full, no_pretrain, fc_level_synthesis };
std::string to_string(Ablation a);
Ablation parse_ablation(std::string_view text);

struct BenchmarkConfig {
  std::size_t k = 5;
  std::size_t seeds = 5;
  std::uint64_t seed = 0;
  double augment_ratio = 1.0;
  Ablation ablation = Ablation::full;
  DownstreamConfig downstream;
  model::DenoiserConfig denoiser;
  diffusion::TrainConfig diffusion;
  pretrain::PretrainConfig pretrain;
  std::size_t jobs = 1;
  std::size_t sample_chunk = 32;

  void validate() const;
};

// Seed of repetition s; shared by every ablation mode.
std::uint64_t repetition_seed(std::uint64_t base, std::size_t s);

struct CellResult {
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::string condition;  // "with_synth" or "without_synth"
  Confusion confusion;
  Metrics metrics;
  std::uint64_t split_hash = 0;
  std::string error;  // non-empty when the cell aborted

  bool ok() const noexcept { return error.empty(); }
};

struct SyntheticRecord {
  std::string id;
  std::size_t seed_index = 0;
  std::size_t fold = 0;
  int label = 0;
  std::uint64_t model_hash = 0;
  std::optional<std::size_t> held_out_fold;
  std::vector<std::string> training_ids;
};

// Per-epoch diffusion loss of one (seed, fold, class) model.
struct LossTrace {
  std::size_t seed_index = 0;
  std::size_t fold = 0;
  int label = 0;
  std::vector<double> loss;
};

struct BenchmarkReport {
  Ablation ablation = Ablation::full;
  std::vector<CellResult> cells;  // ordered by (seed, fold, condition)
  std::vector<SyntheticRecord> synthetic;
  std::vector<LossTrace> traces;
};

// Cross-validated augmentation benchmark; stage errors abort only their
// (seed, fold) cell and are recorded in the report.
BenchmarkReport run_benchmark(const data::Cohort& cohort, const BenchmarkConfig& config);

struct Summary {
  std::string condition;
  std::size_t n = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double sen_mean = 0.0, sen_std = 0.0;
  double spec_mean = 0.0, spec_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
};

struct PairedDelta {
  std::size_t seed_index = 0;
  std::size_t fold = 0;
  double acc_with = 0.0;
  double acc_without = 0.0;
  double delta() const noexcept { return acc_with - acc_without; }
};

// Mean and sample standard deviation over successful cells per condition.
std::vector<Summary> summarize(const BenchmarkReport& report);
std::vector<PairedDelta> paired_deltas(const BenchmarkReport& report);
double mean_delta(const BenchmarkReport& report);

// Mean diffusion loss at `epoch` (1-based) per repetition, averaged over
// folds and classes.
std::vector<double> epoch_loss_by_seed(const BenchmarkReport& report, std::size_t seeds, std::size_t epoch);

void write_report_csv(std::ostream& out, const BenchmarkReport& report);
void write_summary_csv(std::ostream& out, const BenchmarkReport& report);
void write_deltas_csv(std::ostream& out, const BenchmarkReport& report);
void write_provenance_csv(std::ostream& out, const BenchmarkReport& report);

// Cross-site shift: `sites` toy cohorts whose coupling matrices are perturbed
// per site, each benchmarked independently.
struct SiteConfig {
  data::ToyGenConfig toy;
  std::size_t sites = 3;
  double perturbation = 0.05;
};

std::vector<data::Cohort> make_site_cohorts(const SiteConfig& config);
std::vector<BenchmarkReport> run_multisite(const SiteConfig& sites, const BenchmarkConfig& config);

}  // namespace tsdf::augbench
