#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crs/dataset.hpp"

namespace crs::models {

enum class ModelKind { LogReg, GaussianNB, MLP };

std::string_view to_string(ModelKind kind);

struct ClassWeights {
  double w0 = 1.0;
  double w1 = 1.0;
  double operator[](int label) const { return label == 1 ? w1 : w0; }
  bool operator==(const ClassWeights&) const = default;
};

// Inverse class prevalence, normalized so the mean weight over cases is 1.
ClassWeights inverse_prevalence_weights(std::span<const int> labels);

struct LossConfig {
  enum class Kind { Weighted, Focal };
  Kind kind = Kind::Weighted;
  double gamma = 2.0;
  double alpha = 0.25;  // weight on the class-1 term
  bool operator==(const LossConfig&) const = default;
};

// Focal loss with gamma = 2; the minority class term is weighted by the
// minority prevalence, so with class 0 in the minority alpha = 1 - p0.
LossConfig default_focal(std::span<const int> labels);

struct LossCounters {
  std::size_t clamped = 0;
};

inline constexpr double kProbabilityEpsilon = 1e-7;

// y=1: -alpha (1-p)^gamma log p; y=0: -(1-alpha) p^gamma log(1-p).
// p outside (0,1) is clamped to [eps, 1-eps] and counted.
double focal_loss(double p, int y, double gamma, double alpha, LossCounters* counters = nullptr);

// -w_y log p_y with the same clamping rule.
double weighted_cross_entropy(double p, int y, const ClassWeights& weights,
                              LossCounters* counters = nullptr);

enum class Activation { Relu };

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::size_t hidden_units = 400;
  Activation activation = Activation::Relu;
};

struct OptimizerConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  double validation_fraction = 0.1;
  std::size_t patience = 20;
  // Post-hoc Platt recalibration fit on the validation carve-out.
  bool platt_recalibration = false;
};

struct TrainingMetadata {
  double final_train_loss = 0.0;
  double final_validation_loss = 0.0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  std::size_t clamped_probabilities = 0;
};

struct PlattScaling {
  double a = 1.0;
  double b = 0.0;
  bool operator==(const PlattScaling&) const = default;
};

// Immutable fitted classifier. Parameter layout by kind:
//   LogReg:     [w_1..w_d, bias]
//   GaussianNB: [prior_0, prior_1, mean_0(d), mean_1(d), var_0(d), var_1(d)]
//   MLP:        [W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]
struct TrainedModel {
  ModelKind kind = ModelKind::LogReg;
  std::vector<double> parameters;
  std::vector<std::size_t> shape;  // LogReg/GNB: {d}; MLP: {d, hidden}
  std::vector<std::string> feature_names;
  std::uint64_t training_seed = 0;
  LossConfig loss;
  ClassWeights class_weights;
  double decision_threshold = 0.5;
  std::optional<PlattScaling> platt;
  std::string schema_checksum;
  TrainingMetadata metadata;

  std::size_t input_dim() const { return shape.empty() ? 0 : shape.front(); }

  // Probability of class 1. Throws ValidationError on dimension mismatch.
  double predict_proba(std::span<const double> x) const;
  int predict(std::span<const double> x) const;
  std::vector<double> predict_proba(const Matrix& x) const;
  std::vector<int> predict(const Matrix& x) const;
};

// Newton iterations on the class-weighted mean log-loss with an L2 penalty on
// the weights (the intercept is unpenalized).
TrainedModel train_logreg(const Dataset& train, const ClassWeights& weights, double l2,
                          std::uint64_t seed);

TrainedModel train_gnb(const Dataset& train, double var_smoothing = 1e-9);

TrainedModel train_mlp(const Dataset& train, const MlpArchitecture& arch, const LossConfig& loss,
                       const OptimizerConfig& optimizer, std::uint64_t seed,
                       const ClassWeights& weights = {});

// Objectives with analytic gradients, exposed for gradient checking.
double logreg_objective(std::span<const double> params, const Dataset& data,
                        const ClassWeights& weights, double l2, std::vector<double>* gradient);

double mlp_objective(std::span<const double> params, const MlpArchitecture& arch,
                     const Dataset& data, std::span<const std::size_t> rows,
                     const LossConfig& loss, const ClassWeights& weights,
                     std::vector<double>* gradient, LossCounters* counters = nullptr);

std::vector<double> init_mlp_parameters(const MlpArchitecture& arch, std::uint64_t seed);

// Fits sigmoid(a * logit(p) + b) to labels by Newton's method.
PlattScaling fit_platt(std::span<const double> probabilities, std::span<const int> labels);

// Self-describing JSON container. Loading checks the schema checksum when one
// is supplied and throws ValidationError on mismatch.
std::string save_model_json(const TrainedModel& model);
TrainedModel load_model_json(std::string_view text,
                             std::optional<std::string_view> expected_schema_checksum = std::nullopt);

}  // namespace crs::models
