#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crs/dataset.hpp"
#include "json.hpp"

namespace crs::metrics {

// Layout [tn, fp; fn, tp]: row = true class, column = predicted class.
struct ConfusionMatrix {
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tp = 0;

  std::size_t n() const { return tn + fp + fn + tp; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predicted);

struct ThresholdMetrics {
  double accuracy = 0.0;
  double precision0 = 0.0;
  double recall0 = 0.0;
  double precision1 = 0.0;
  double recall1 = 0.0;
  double f1_pos = 0.0;
  double balanced_accuracy = 0.0;
  // Ratios whose denominator was zero; reported as 0.
  std::vector<std::string> undefined;
};

ThresholdMetrics threshold_metrics(const ConfusionMatrix& cm);

enum class ScoreKind {
  Probability,  // scores in [0, 1]
  Proxy,        // signed confidence in [-1, 1]
};

// Per-case outputs of one model on one split, sorted by case id.
struct PredictionSet {
  std::string model;
  ScoreKind score_kind = ScoreKind::Probability;
  std::vector<std::string> case_ids;
  std::vector<int> labels;
  std::vector<double> scores;
  std::vector<int> hard_labels;

  std::size_t size() const { return case_ids.size(); }
  // Throws ValidationError on misaligned or out-of-range entries.
  void validate() const;
  void sort_by_case_id();
  // Scores mapped onto [0, 1]; proxy s becomes (s + 1) / 2.
  std::vector<double> probabilities() const;
  PredictionSet subset(std::span<const std::size_t> rows) const;
};

// Mann-Whitney form: (concordant + 0.5 * tied) / (n0 * n1). Throws on a single class.
double auroc(std::span<const int> labels, std::span<const double> scores);

// Step-wise area under the precision-recall curve; equal scores form one step.
double average_precision(std::span<const int> labels, std::span<const double> scores);

double brier(std::span<const int> labels, std::span<const double> probabilities);

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  double center = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_probability;  // empty bins leave these unset
  std::optional<double> empirical_rate;
};

std::vector<ReliabilityBin> reliability_curve(std::span<const int> labels,
                                              std::span<const double> probabilities,
                                              std::size_t bins = 10);

struct NetBenefitPoint {
  double threshold = 0.0;
  double model = 0.0;
  double treat_all = 0.0;
  double treat_none = 0.0;
};

// NB(t) = TP/n - FP/n * t/(1-t), treating cases with probability >= t.
std::vector<NetBenefitPoint> net_benefit(std::span<const int> labels,
                                         std::span<const double> probabilities,
                                         std::span<const double> thresholds);

std::vector<double> default_thresholds();

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};
struct PrPoint {
  double threshold;
  double recall;
  double precision;
};

std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores);
std::vector<PrPoint> pr_curve(std::span<const int> labels, std::span<const double> scores);

struct DeLongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double difference = 0.0;  // auc_a - auc_b
  double variance = 0.0;
  double z = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool zero_variance = false;
};

// Paired DeLong test on two score vectors over the same cases.
DeLongResult delong_test(std::span<const int> labels, std::span<const double> scores_a,
                         std::span<const double> scores_b);

struct McNemarResult {
  std::size_t b = 0;  // a correct, b wrong
  std::size_t c = 0;  // a wrong, b correct
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = true;
  bool no_discordant_pairs = false;
};

// Exact binomial when b + c < 25, otherwise chi-square with continuity correction.
McNemarResult mcnemar(std::span<const int> labels, std::span<const int> hard_a,
                      std::span<const int> hard_b);

struct BootstrapResult {
  double point = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::size_t redraws = 0;
  std::vector<double> samples;  // resampled statistics in repeat order
};

// Statistic over a resample of case indices.
using IndexStatistic = std::function<double(std::span<const std::size_t>)>;

// Percentile bootstrap with case-level resampling. Resamples that lose a class
// are redrawn; more than 10x n_resamples redraws is a NumericError. Each repeat
// uses its own derived seed, so results do not depend on execution order.
BootstrapResult bootstrap_indices(std::span<const int> labels, const IndexStatistic& statistic,
                                  std::size_t n_resamples, std::uint64_t seed,
                                  std::size_t threads = 1);

BootstrapResult bootstrap_ci(const std::function<double(const PredictionSet&)>& metric,
                             const PredictionSet& data, std::size_t n_resamples = 2000,
                             std::uint64_t seed = 0, std::size_t threads = 1);

struct PairedBootstrapResult {
  double difference = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  double standard_error = 0.0;
  double p_value = 1.0;  // normal approximation on the bootstrap standard error
};

PairedBootstrapResult paired_bootstrap_auc(std::span<const int> labels,
                                           std::span<const double> scores_a,
                                           std::span<const double> scores_b,
                                           std::size_t n_resamples = 2000, std::uint64_t seed = 0,
                                           std::size_t threads = 1);

using BatchClassifier = std::function<std::vector<int>(const Matrix&)>;

struct ImportanceResult {
  std::string feature;
  double mean_delta_balanced_accuracy = 0.0;
  double sd = 0.0;
  bool constant = false;
  std::vector<double> deltas;
};

ImportanceResult permutation_importance(const BatchClassifier& model, const Dataset& test,
                                        std::size_t feature_index, std::size_t repeats = 20,
                                        std::uint64_t seed = 0);

struct PairedComparison {
  std::string model_a;
  std::string model_b;
  DeLongResult delong;
  McNemarResult mcnemar;
  PairedBootstrapResult bootstrap_auc;
};

struct EvaluationReport {
  std::string model;
  std::string schema_checksum;
  std::size_t n = 0;
  double prevalence = 0.0;
  ConfusionMatrix cm;
  ThresholdMetrics threshold;
  std::optional<double> auroc;
  std::optional<double> average_precision;
  double brier = 0.0;
  std::vector<ReliabilityBin> reliability;
  std::vector<NetBenefitPoint> net_benefit;
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;
  std::optional<BootstrapResult> auroc_ci;
  std::optional<PairedComparison> paired;
};

struct EvaluateOptions {
  std::vector<double> thresholds = default_thresholds();
  std::size_t reliability_bins = 10;
  std::size_t bootstrap_resamples = 0;  // 0 disables the AUROC interval
  std::uint64_t seed = 0;
};

EvaluationReport evaluate(const PredictionSet& predictions, const EvaluateOptions& options = {});

// Both sets must cover exactly the same case ids.
PairedComparison compare(const PredictionSet& a, const PredictionSet& b,
                         std::size_t bootstrap_resamples = 2000, std::uint64_t seed = 0);

// Splitmix64 step for deriving per-repeat seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const ThresholdMetrics& m);
nlohmann::json to_json(const PairedComparison& c);
nlohmann::json to_json(const EvaluationReport& report);

}  // namespace crs::metrics
