#include "crs/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crs/cohort.hpp"
#include "crs/errors.hpp"
#include <Eigen/Dense>

namespace crs::models {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_probability(double p, LossCounters* counters) {
  if (p >= kProbabilityEpsilon && p <= 1.0 - kProbabilityEpsilon) return p;
  if (counters != nullptr) ++counters->clamped;
  if (std::isnan(p)) return 0.5;
  return std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

void require_trainable(const Dataset& train) {
  if (train.size() == 0) throw ValidationError("training set is empty");
  if (train.x.rows != train.size() || train.x.cols != train.feature_names.size()) {
    throw ValidationError("training set shape does not match its feature names");
  }
  const auto positives = std::count(train.y.begin(), train.y.end(), 1);
  const auto negatives = std::count(train.y.begin(), train.y.end(), 0);
  if (positives + negatives != static_cast<long>(train.size())) {
    throw ValidationError("training labels must be 0 or 1");
  }
  if (positives == 0 || negatives == 0) {
    throw ValidationError("training set contains a single class");
  }
  const auto blocklist = cohort::canonical_blocklist();
  cohort::enforce_no_leakage(train.feature_names, blocklist);
}

// Softplus(z) - y z, the log-loss of a logit.
double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double logit_loss(double z, int y) {
  const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - (y == 1 ? z : 0.0);
}

}  // namespace

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::LogReg: return "logreg";
    case ModelKind::GaussianNB: return "gnb";
    case ModelKind::MLP: return "mlp";
  }
  return "";
}

ClassWeights inverse_prevalence_weights(std::span<const int> labels) {
  const auto n = static_cast<double>(labels.size());
  const auto n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n0 = n - n1;
  if (n0 == 0.0 || n1 == 0.0) throw ValidationError("class weights need both classes");
  return {n / (2.0 * n0), n / (2.0 * n1)};
}

LossConfig default_focal(std::span<const int> labels) {
  // The minority class term carries the minority prevalence, whichever class
  // that is; either way alpha (the class-1 weight) equals the class-1 share.
  const auto n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  LossConfig cfg;
  cfg.kind = LossConfig::Kind::Focal;
  cfg.gamma = 2.0;
  cfg.alpha = labels.empty() ? 0.5 : n1 / static_cast<double>(labels.size());
  return cfg;
}

double focal_loss(double p, int y, double gamma, double alpha, LossCounters* counters) {
  p = clamp_probability(p, counters);
  if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double weighted_cross_entropy(double p, int y, const ClassWeights& weights, LossCounters* counters) {
  p = clamp_probability(p, counters);
  return -weights[y] * (y == 1 ? std::log(p) : std::log(1.0 - p));
}

double TrainedModel::predict_proba(std::span<const double> x) const {
  const std::size_t d = input_dim();
  if (x.size() != d) {
    throw ValidationError("feature vector has " + std::to_string(x.size()) + " values, model expects " +
                          std::to_string(d));
  }
  double p = 0.5;
  switch (kind) {
    case ModelKind::LogReg: {
      double z = parameters[d];
      for (std::size_t k = 0; k < d; ++k) z += parameters[k] * x[k];
      p = sigmoid(z);
      break;
    }
    case ModelKind::GaussianNB: {
      const double* mean0 = parameters.data() + 2;
      const double* mean1 = mean0 + d;
      const double* var0 = mean1 + d;
      const double* var1 = var0 + d;
      double l0 = std::log(parameters[0]);
      double l1 = std::log(parameters[1]);
      for (std::size_t k = 0; k < d; ++k) {
        const double e0 = x[k] - mean0[k];
        const double e1 = x[k] - mean1[k];
        l0 -= 0.5 * std::log(2.0 * std::numbers::pi * var0[k]) + e0 * e0 / (2.0 * var0[k]);
        l1 -= 0.5 * std::log(2.0 * std::numbers::pi * var1[k]) + e1 * e1 / (2.0 * var1[k]);
      }
      p = sigmoid(l1 - l0);
      break;
    }
    case ModelKind::MLP: {
      const std::size_t h = shape.at(1);
      const double* w1 = parameters.data();
      const double* b1 = w1 + h * d;
      const double* w2 = b1 + h;
      double z = w2[h];
      for (std::size_t j = 0; j < h; ++j) {
        double a = b1[j];
        const double* row = w1 + j * d;
        for (std::size_t k = 0; k < d; ++k) a += row[k] * x[k];
        if (a > 0.0) z += w2[j] * a;
      }
      p = sigmoid(z);
      break;
    }
  }
  if (platt) {
    const double q = std::clamp(p, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    p = sigmoid(platt->a * std::log(q / (1.0 - q)) + platt->b);
  }
  return p;
}

int TrainedModel::predict(std::span<const double> x) const {
  return predict_proba(x) >= decision_threshold ? 1 : 0;
}

std::vector<double> TrainedModel::predict_proba(const Matrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = predict_proba(x.row(i));
  return out;
}

std::vector<int> TrainedModel::predict(const Matrix& x) const {
  std::vector<int> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = predict(x.row(i));
  return out;
}

double logreg_objective(std::span<const double> params, const Dataset& data,
                        const ClassWeights& weights, double l2, std::vector<double>* gradient) {
  const std::size_t d = data.x.cols;
  if (gradient != nullptr) gradient->assign(d + 1, 0.0);
  double total_weight = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.x.row(i);
    double z = params[d];
    for (std::size_t k = 0; k < d; ++k) z += params[k] * x[k];
    const double c = weights[data.y[i]];
    total_weight += c;
    loss += c * logit_loss(z, data.y[i]);
    if (gradient != nullptr) {
      const double r = c * (sigmoid(z) - data.y[i]);
      for (std::size_t k = 0; k < d; ++k) (*gradient)[k] += r * x[k];
      (*gradient)[d] += r;
    }
  }
  loss /= total_weight;
  double penalty = 0.0;
  for (std::size_t k = 0; k < d; ++k) penalty += params[k] * params[k];
  loss += 0.5 * l2 * penalty;
  if (gradient != nullptr) {
    for (auto& g : *gradient) g /= total_weight;
    for (std::size_t k = 0; k < d; ++k) (*gradient)[k] += l2 * params[k];
  }
  return loss;
}

TrainedModel train_logreg(const Dataset& train, const ClassWeights& weights, double l2,
                          std::uint64_t seed) {
  require_trainable(train);
  if (!(l2 >= 0.0)) throw ValidationError("l2 penalty must be non-negative");
  const std::size_t d = train.x.cols;
  const std::size_t p = d + 1;
  constexpr std::size_t kMaxIterations = 100;
  constexpr double kTolerance = 1e-10;

  std::vector<double> theta(p, 0.0);
  std::vector<double> grad;
  double loss = logreg_objective(theta, train, weights, l2, &grad);
  TrainingMetadata meta;

  for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
    const double gnorm = max_abs(grad);
    meta.gradient_norm = gnorm;
    if (gnorm < kTolerance) {
      meta.converged = true;
      break;
    }
    // Weighted Hessian of the mean loss plus the ridge block.
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    double total_weight = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto x = train.x.row(i);
      double z = theta[d];
      for (std::size_t k = 0; k < d; ++k) z += theta[k] * x[k];
      const double s = sigmoid(z);
      const double c = weights[train.y[i]];
      total_weight += c;
      const double v = c * s * (1.0 - s);
      for (std::size_t a = 0; a < p; ++a) {
        const double xa = a < d ? x[a] : 1.0;
        for (std::size_t b = 0; b <= a; ++b) {
          hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += v * xa * (b < d ? x[b] : 1.0);
        }
      }
    }
    hess /= total_weight;
    hess.triangularView<Eigen::StrictlyUpper>() = hess.transpose();
    for (std::size_t a = 0; a < d; ++a) hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)) += l2;
    const Eigen::Map<const Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(p));
    // Jitter only matters when the Hessian is singular (e.g. constant features, l2 = 0).
    Eigen::VectorXd solution = hess.ldlt().solve(g);
    for (double jitter = 1e-10; !solution.allFinite() && jitter < 1.0; jitter *= 100.0) {
      solution = (hess + jitter * Eigen::MatrixXd::Identity(hess.rows(), hess.cols())).ldlt().solve(g);
    }
    if (!solution.allFinite()) throw NumericError("logistic regression Hessian is singular");
    const std::vector<double> step(solution.data(), solution.data() + solution.size());

    // Backtracking keeps every accepted step a strict decrease.
    double scale = 1.0;
    std::vector<double> candidate(p);
    std::vector<double> candidate_grad;
    double candidate_loss = loss;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      for (std::size_t k = 0; k < p; ++k) candidate[k] = theta[k] - scale * step[k];
      candidate_loss = logreg_objective(candidate, train, weights, l2, &candidate_grad);
      if (std::isfinite(candidate_loss) && candidate_loss <= loss) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    meta.iterations = iter + 1;
    if (!accepted) break;
    const bool stalled = loss - candidate_loss <= 0.0;
    theta.swap(candidate);
    grad.swap(candidate_grad);
    loss = candidate_loss;
    if (stalled) {
      meta.gradient_norm = max_abs(grad);
      meta.converged = meta.gradient_norm < 1e-6;
      break;
    }
  }
  if (!std::isfinite(loss)) throw NumericError("logistic regression diverged");

  TrainedModel model;
  model.kind = ModelKind::LogReg;
  model.parameters = std::move(theta);
  model.shape = {d};
  model.feature_names = train.feature_names;
  model.training_seed = seed;
  model.class_weights = weights;
  model.loss.kind = LossConfig::Kind::Weighted;
  meta.final_train_loss = loss;
  meta.gradient_norm = max_abs(grad);
  model.metadata = meta;
  return model;
}

TrainedModel train_gnb(const Dataset& train, double var_smoothing) {
  require_trainable(train);
  if (!(var_smoothing > 0.0)) throw ValidationError("var_smoothing must be positive");
  const std::size_t d = train.x.cols;
  const std::size_t n = train.size();

  std::vector<double> overall_mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) overall_mean[k] += train.x(i, k);
  }
  for (auto& m : overall_mean) m /= static_cast<double>(n);
  double max_var = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = train.x(i, k) - overall_mean[k];
      ss += e * e;
    }
    max_var = std::max(max_var, ss / static_cast<double>(n));
  }
  // Variance floor proportional to the widest feature, as in common GNB practice.
  const double floor = var_smoothing * std::max(max_var, 1.0);

  std::vector<double> params(2 + 4 * d, 0.0);
  for (int c = 0; c < 2; ++c) {
    double* mean = params.data() + 2 + static_cast<std::size_t>(c) * d;
    double* var = params.data() + 2 + 2 * d + static_cast<std::size_t>(c) * d;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (train.y[i] != c) continue;
      ++count;
      for (std::size_t k = 0; k < d; ++k) mean[k] += train.x(i, k);
    }
    for (std::size_t k = 0; k < d; ++k) mean[k] /= static_cast<double>(count);
    for (std::size_t i = 0; i < n; ++i) {
      if (train.y[i] != c) continue;
      for (std::size_t k = 0; k < d; ++k) {
        const double e = train.x(i, k) - mean[k];
        var[k] += e * e;
      }
    }
    for (std::size_t k = 0; k < d; ++k) var[k] = var[k] / static_cast<double>(count) + floor;
    params[static_cast<std::size_t>(c)] = static_cast<double>(count) / static_cast<double>(n);
  }

  TrainedModel model;
  model.kind = ModelKind::GaussianNB;
  model.parameters = std::move(params);
  model.shape = {d};
  model.feature_names = train.feature_names;
  return model;
}

PlattScaling fit_platt(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size() || probabilities.empty()) {
    throw ValidationError("platt: probabilities and labels must be aligned and nonempty");
  }
  std::vector<double> s(probabilities.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double q = std::clamp(probabilities[i], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    s[i] = std::log(q / (1.0 - q));
  }
  // Tiny ridge keeps the 2x2 system solvable on separable or constant inputs.
  constexpr double kRidge = 1e-6;
  double a = 1.0;
  double b = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    double ga = kRidge * (a - 1.0), gb = kRidge * b;
    double haa = kRidge, hab = 0.0, hbb = kRidge;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double p = sigmoid(a * s[i] + b);
      const double r = p - labels[i];
      const double w = p * (1.0 - p);
      ga += r * s[i];
      gb += r;
      haa += w * s[i] * s[i];
      hab += w * s[i];
      hbb += w;
    }
    const double det = haa * hbb - hab * hab;
    if (!(std::abs(det) > 0.0)) break;
    const double da = (hbb * ga - hab * gb) / det;
    const double db = (haa * gb - hab * ga) / det;
    a -= da;
    b -= db;
    if (std::abs(da) + std::abs(db) < 1e-12) break;
  }
  return {a, b};
}

}  // namespace crs::models
