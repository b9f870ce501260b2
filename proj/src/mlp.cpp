#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crs/cohort.hpp"
#include "crs/errors.hpp"
#include "crs/models.hpp"

namespace crs::models {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::size_t parameter_count(const MlpArchitecture& arch) {
  return arch.hidden_units * arch.input_dim + 2 * arch.hidden_units + 1;
}

// Loss of one case and its derivative with respect to the output logit.
std::pair<double, double> case_loss(double z, int y, const LossConfig& loss,
                                    const ClassWeights& weights, LossCounters* counters) {
  const double p = sigmoid(z);
  if (loss.kind == LossConfig::Kind::Weighted) {
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double value = weights[y] * (softplus - (y == 1 ? z : 0.0));
    return {value, weights[y] * (p - y)};
  }
  const double value = focal_loss(p, y, loss.gamma, loss.alpha, counters);
  const double q = std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  double dz = 0.0;
  if (y == 1) {
    // d/dz of -alpha (1-p)^g log p
    dz = loss.alpha * std::pow(1.0 - q, loss.gamma) * (loss.gamma * q * std::log(q) - (1.0 - q));
  } else {
    dz = (1.0 - loss.alpha) * std::pow(q, loss.gamma) * (q - loss.gamma * (1.0 - q) * std::log(1.0 - q));
  }
  return {value, dz};
}

void check_architecture(const MlpArchitecture& arch) {
  if (arch.hidden_units < 1) throw ValidationError("mlp: hidden_units must be at least 1");
  if (arch.input_dim < 1) throw ValidationError("mlp: input_dim must be at least 1");
}

}  // namespace

std::vector<double> init_mlp_parameters(const MlpArchitecture& arch, std::uint64_t seed) {
  check_architecture(arch);
  std::mt19937_64 rng(seed);
  const std::size_t d = arch.input_dim;
  const std::size_t h = arch.hidden_units;
  std::vector<double> params(parameter_count(arch), 0.0);
  std::normal_distribution<double> w1_dist(0.0, std::sqrt(2.0 / static_cast<double>(d)));
  std::normal_distribution<double> w2_dist(0.0, std::sqrt(1.0 / static_cast<double>(h)));
  for (std::size_t i = 0; i < h * d; ++i) params[i] = w1_dist(rng);
  for (std::size_t j = 0; j < h; ++j) params[h * d + h + j] = w2_dist(rng);
  return params;
}

double mlp_objective(std::span<const double> params, const MlpArchitecture& arch,
                     const Dataset& data, std::span<const std::size_t> rows,
                     const LossConfig& loss, const ClassWeights& weights,
                     std::vector<double>* gradient, LossCounters* counters) {
  const std::size_t d = arch.input_dim;
  const std::size_t h = arch.hidden_units;
  if (params.size() != parameter_count(arch) || data.x.cols != d) {
    throw ValidationError("mlp: parameter or input dimension mismatch");
  }
  const double* w1 = params.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  const double b2 = w2[h];

  if (gradient != nullptr) gradient->assign(params.size(), 0.0);
  std::vector<double> pre(h);
  double total = 0.0;
  const double scale = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());

  for (const std::size_t i : rows) {
    const auto x = data.x.row(i);
    double z = b2;
    for (std::size_t j = 0; j < h; ++j) {
      double a = b1[j];
      const double* wrow = w1 + j * d;
      for (std::size_t k = 0; k < d; ++k) a += wrow[k] * x[k];
      pre[j] = a;
      if (a > 0.0) z += w2[j] * a;
    }
    const auto [value, dz_raw] = case_loss(z, data.y[i], loss, weights, counters);
    total += value;
    if (gradient == nullptr) continue;

    const double dz = dz_raw * scale;
    double* g = gradient->data();
    double* g_b1 = g + h * d;
    double* g_w2 = g_b1 + h;
    g_w2[h] += dz;
    for (std::size_t j = 0; j < h; ++j) {
      if (pre[j] <= 0.0) continue;
      g_w2[j] += dz * pre[j];
      const double da = dz * w2[j];
      g_b1[j] += da;
      double* grow = g + j * d;
      for (std::size_t k = 0; k < d; ++k) grow[k] += da * x[k];
    }
  }
  return total * scale;
}

TrainedModel train_mlp(const Dataset& train, const MlpArchitecture& arch_in, const LossConfig& loss,
                       const OptimizerConfig& opt, std::uint64_t seed, const ClassWeights& weights) {
  if (train.size() == 0) throw ValidationError("training set is empty");
  cohort::enforce_no_leakage(train.feature_names, cohort::canonical_blocklist());
  const auto n1 = std::count(train.y.begin(), train.y.end(), 1);
  if (n1 == 0 || n1 == static_cast<long>(train.size())) {
    throw ValidationError("training set contains a single class");
  }
  MlpArchitecture arch = arch_in;
  if (arch.input_dim == 0) arch.input_dim = train.x.cols;
  if (arch.input_dim != train.x.cols) throw ValidationError("mlp: input_dim does not match the data");
  check_architecture(arch);
  if (opt.batch_size < 1 || opt.max_epochs < 1 || !(opt.learning_rate > 0.0) ||
      !(opt.validation_fraction >= 0.0 && opt.validation_fraction < 1.0)) {
    throw ValidationError("mlp: invalid optimizer configuration");
  }

  std::mt19937_64 rng(seed);
  std::vector<double> params = init_mlp_parameters(arch, seed);

  // Stratified validation carve-out from the training rows.
  std::vector<std::size_t> fit_rows;
  std::vector<std::size_t> val_rows;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (train.y[i] == c) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(opt.validation_fraction * static_cast<double>(members.size())));
    val_rows.insert(val_rows.end(), members.begin(), members.begin() + static_cast<long>(n_val));
    fit_rows.insert(fit_rows.end(), members.begin() + static_cast<long>(n_val), members.end());
  }
  std::sort(fit_rows.begin(), fit_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  const bool early_stopping = !val_rows.empty();

  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad;
  std::vector<double> best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_best = 0;
  LossCounters counters;
  TrainingMetadata meta;

  std::vector<std::size_t> order = fit_rows;
  for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      mlp_objective(params, arch, train, batch, loss, weights, &grad, &counters);
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = opt.momentum * velocity[k] - opt.learning_rate * grad[k];
        params[k] += velocity[k];
      }
    }
    const double train_loss = mlp_objective(params, arch, train, fit_rows, loss, weights, nullptr, &counters);
    const double val_loss = early_stopping
                                ? mlp_objective(params, arch, train, val_rows, loss, weights, nullptr, &counters)
                                : train_loss;
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericError("mlp training diverged at epoch " + std::to_string(epoch));
    }
    meta.epochs_run = epoch;
    if (val_loss < best_val) {
      best_val = val_loss;
      best = params;
      best_epoch = epoch;
      since_best = 0;
    } else if (early_stopping && ++since_best >= opt.patience) {
      break;
    }
  }
  if (early_stopping) params = best;

  TrainedModel model;
  model.kind = ModelKind::MLP;
  model.parameters = std::move(params);
  model.shape = {arch.input_dim, arch.hidden_units};
  model.feature_names = train.feature_names;
  model.training_seed = seed;
  model.loss = loss;
  model.class_weights = weights;

  meta.best_epoch = early_stopping ? best_epoch : meta.epochs_run;
  meta.final_train_loss = mlp_objective(model.parameters, arch, train, fit_rows, loss, weights, nullptr);
  meta.final_validation_loss =
      early_stopping ? mlp_objective(model.parameters, arch, train, val_rows, loss, weights, nullptr)
                     : meta.final_train_loss;
  meta.clamped_probabilities = counters.clamped;
  model.metadata = meta;

  if (opt.platt_recalibration && early_stopping) {
    const Dataset val = train.subset(val_rows);
    const auto probs = model.predict_proba(val.x);
    model.platt = fit_platt(probs, val.y);
  }
  return model;
}

}  // namespace crs::models
