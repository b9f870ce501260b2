#include "crs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "crs/errors.hpp"

namespace crs::metrics {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": inputs differ in length");
}

double ratio(std::size_t num, std::size_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

// Case indices ordered by descending score, ties by index.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predicted) {
  require_same_length(labels.size(), predicted.size(), "confusion");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool truth = labels[i] == 1;
    const bool pred = predicted[i] == 1;
    if (truth && pred) ++cm.tp;
    else if (truth) ++cm.fn;
    else if (pred) ++cm.fp;
    else ++cm.tn;
  }
  return cm;
}

ThresholdMetrics threshold_metrics(const ConfusionMatrix& cm) {
  if (cm.n() == 0) throw ValidationError("threshold metrics need at least one case");
  ThresholdMetrics m;
  m.accuracy = static_cast<double>(cm.tn + cm.tp) / static_cast<double>(cm.n());
  m.precision0 = ratio(cm.tn, cm.tn + cm.fn, "precision0", m.undefined);
  m.recall0 = ratio(cm.tn, cm.tn + cm.fp, "recall0", m.undefined);
  m.precision1 = ratio(cm.tp, cm.tp + cm.fp, "precision1", m.undefined);
  m.recall1 = ratio(cm.tp, cm.tp + cm.fn, "recall1", m.undefined);
  if (m.precision1 + m.recall1 > 0.0) {
    m.f1_pos = 2.0 * m.precision1 * m.recall1 / (m.precision1 + m.recall1);
  } else {
    m.undefined.emplace_back("f1_pos");
  }
  m.balanced_accuracy = (m.recall0 + m.recall1) / 2.0;
  return m;
}

void PredictionSet::validate() const {
  const std::size_t n = case_ids.size();
  if (labels.size() != n || scores.size() != n || hard_labels.size() != n) {
    throw ValidationError("prediction set " + model + ": vectors are not aligned");
  }
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(case_ids[i]).second) {
      throw ValidationError("prediction set " + model + ": duplicate case id " + case_ids[i]);
    }
    if ((labels[i] != 0 && labels[i] != 1) || (hard_labels[i] != 0 && hard_labels[i] != 1)) {
      throw ValidationError("prediction set " + model + ": labels must be 0 or 1");
    }
    const double lo = score_kind == ScoreKind::Probability ? 0.0 : -1.0;
    if (!(scores[i] >= lo && scores[i] <= 1.0)) {
      throw ValidationError("prediction set " + model + ": score out of range for " + case_ids[i]);
    }
  }
}

void PredictionSet::sort_by_case_id() {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return case_ids[a] < case_ids[b]; });
  *this = subset(order);
}

std::vector<double> PredictionSet::probabilities() const {
  if (score_kind == ScoreKind::Probability) return scores;
  std::vector<double> out(scores.size());
  std::transform(scores.begin(), scores.end(), out.begin(), [](double s) { return (s + 1.0) / 2.0; });
  return out;
}

PredictionSet PredictionSet::subset(std::span<const std::size_t> rows) const {
  PredictionSet out;
  out.model = model;
  out.score_kind = score_kind;
  for (auto r : rows) {
    out.case_ids.push_back(case_ids[r]);
    out.labels.push_back(labels[r]);
    out.scores.push_back(scores[r]);
    out.hard_labels.push_back(hard_labels[r]);
  }
  return out;
}

double auroc(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "auroc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive mid-ranks, kept doubled so every quantity stays an integer.
  double positives = 0.0;
  double doubled_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double doubled_mid = static_cast<double>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positives += 1.0;
        doubled_rank_sum += doubled_mid;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw ValidationError("auroc needs both classes");
  const double doubled_u = doubled_rank_sum - positives * (positives + 1.0);
  return (doubled_u / 2.0) / (positives * negatives);
}

double average_precision(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "average_precision");
  const auto total_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0.0) throw ValidationError("average precision needs at least one positive");
  const auto order = descending_order(scores);
  double tp = 0.0;
  double fp = 0.0;
  double ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double group_tp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) group_tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    tp += group_tp;
    if (group_tp > 0.0) ap += (group_tp / total_pos) * (tp / (tp + fp));
    i = j;
  }
  return ap;
}

double brier(std::span<const int> labels, std::span<const double> probabilities) {
  require_same_length(labels.size(), probabilities.size(), "brier");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double e = probabilities[i] - labels[i];
    sum += e * e;
  }
  return sum / static_cast<double>(labels.size());
}

std::vector<ReliabilityBin> reliability_curve(std::span<const int> labels,
                                              std::span<const double> probabilities,
                                              std::size_t bins) {
  require_same_length(labels.size(), probabilities.size(), "reliability_curve");
  if (bins < 2) throw ValidationError("reliability curve needs at least 2 bins");
  std::vector<ReliabilityBin> out(bins);
  std::vector<double> prob_sum(bins, 0.0);
  std::vector<double> pos_sum(bins, 0.0);
  const auto width = 1.0 / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = static_cast<double>(b) * width;
    out[b].upper = static_cast<double>(b + 1) * width;
    out[b].center = (out[b].lower + out[b].upper) / 2.0;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probabilities[i], 0.0, 1.0);
    auto b = static_cast<std::size_t>(p * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    ++out[b].count;
    prob_sum[b] += probabilities[i];
    pos_sum[b] += labels[i];
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (out[b].count == 0) continue;
    const auto c = static_cast<double>(out[b].count);
    out[b].mean_probability = prob_sum[b] / c;
    out[b].empirical_rate = pos_sum[b] / c;
  }
  return out;
}

std::vector<NetBenefitPoint> net_benefit(std::span<const int> labels,
                                         std::span<const double> probabilities,
                                         std::span<const double> thresholds) {
  require_same_length(labels.size(), probabilities.size(), "net_benefit");
  for (double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("net benefit thresholds must lie in (0, 1)");
  }
  std::vector<NetBenefitPoint> out;
  const auto n = static_cast<double>(labels.size());
  if (n == 0.0) return out;
  const auto positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  for (double t : thresholds) {
    const double odds = t / (1.0 - t);
    double tp = 0.0;
    double fp = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (probabilities[i] < t) continue;
      if (labels[i] == 1) tp += 1.0;
      else fp += 1.0;
    }
    NetBenefitPoint point;
    point.threshold = t;
    point.model = tp / n - (fp / n) * odds;
    point.treat_all = positives / n - ((n - positives) / n) * odds;
    point.treat_none = 0.0;
    out.push_back(point);
  }
  return out;
}

std::vector<double> default_thresholds() {
  std::vector<double> out;
  for (int i = 1; i <= 19; ++i) out.push_back(i * 0.05);
  return out;
}

std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "roc_curve");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double neg = static_cast<double>(labels.size()) - pos;
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  if (pos == 0.0 || neg == 0.0) return out;
  const auto order = descending_order(scores);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    out.push_back({scores[order[i]], fp / neg, tp / pos});
    i = j;
  }
  return out;
}

std::vector<PrPoint> pr_curve(std::span<const int> labels, std::span<const double> scores) {
  require_same_length(labels.size(), scores.size(), "pr_curve");
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  std::vector<PrPoint> out;
  if (pos == 0.0) return out;
  const auto order = descending_order(scores);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) tp += 1.0;
      else fp += 1.0;
      ++j;
    }
    out.push_back({scores[order[i]], tp / pos, tp / (tp + fp)});
    i = j;
  }
  return out;
}

EvaluationReport evaluate(const PredictionSet& predictions, const EvaluateOptions& options) {
  predictions.validate();
  EvaluationReport r;
  r.model = predictions.model;
  r.n = predictions.size();
  r.cm = confusion(predictions.labels, predictions.hard_labels);
  r.threshold = threshold_metrics(r.cm);
  const auto positives = std::count(predictions.labels.begin(), predictions.labels.end(), 1);
  r.prevalence = static_cast<double>(positives) / static_cast<double>(r.n);
  const bool both_classes = positives > 0 && positives < static_cast<long>(r.n);
  if (both_classes) {
    r.auroc = auroc(predictions.labels, predictions.scores);
    r.roc = roc_curve(predictions.labels, predictions.scores);
  }
  if (positives > 0) {
    r.average_precision = average_precision(predictions.labels, predictions.scores);
    r.pr = pr_curve(predictions.labels, predictions.scores);
  }
  const auto probs = predictions.probabilities();
  r.brier = brier(predictions.labels, probs);
  r.reliability = reliability_curve(predictions.labels, probs, options.reliability_bins);
  r.net_benefit = net_benefit(predictions.labels, probs, options.thresholds);
  if (both_classes && options.bootstrap_resamples > 0) {
    const auto& labels = predictions.labels;
    const auto& scores = predictions.scores;
    r.auroc_ci = bootstrap_indices(
        labels,
        [&](std::span<const std::size_t> idx) {
          std::vector<int> l;
          std::vector<double> s;
          for (auto i : idx) {
            l.push_back(labels[i]);
            s.push_back(scores[i]);
          }
          return auroc(l, s);
        },
        options.bootstrap_resamples, options.seed);
    r.auroc_ci->samples.clear();
  }
  return r;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}, {"tp", cm.tp},
          {"matrix", {{cm.tn, cm.fp}, {cm.fn, cm.tp}}}};
}

nlohmann::json to_json(const ThresholdMetrics& m) {
  return {{"accuracy", m.accuracy},   {"precision0", m.precision0},
          {"recall0", m.recall0},     {"precision1", m.precision1},
          {"recall1", m.recall1},     {"f1_pos", m.f1_pos},
          {"balanced_accuracy", m.balanced_accuracy}, {"undefined", m.undefined}};
}

nlohmann::json to_json(const PairedComparison& c) {
  return {{"model_a", c.model_a},
          {"model_b", c.model_b},
          {"delong",
           {{"auc_a", c.delong.auc_a},
            {"auc_b", c.delong.auc_b},
            {"difference", c.delong.difference},
            {"variance", c.delong.variance},
            {"z", c.delong.z},
            {"p_value", c.delong.p_value},
            {"ci_95_diff", {c.delong.ci_low, c.delong.ci_high}},
            {"zero_variance", c.delong.zero_variance}}},
          {"mcnemar",
           {{"b_count", c.mcnemar.b},
            {"c_count", c.mcnemar.c},
            {"statistic", c.mcnemar.statistic},
            {"p_value", c.mcnemar.p_value},
            {"exact", c.mcnemar.exact},
            {"no_discordant_pairs", c.mcnemar.no_discordant_pairs}}},
          {"bootstrap_auc_difference",
           {{"difference", c.bootstrap_auc.difference},
            {"lo95", c.bootstrap_auc.lo95},
            {"hi95", c.bootstrap_auc.hi95},
            {"standard_error", c.bootstrap_auc.standard_error},
            {"p_value", c.bootstrap_auc.p_value}}}};
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json doc;
  doc["model"] = r.model;
  doc["schema_checksum"] = r.schema_checksum;
  doc["n"] = r.n;
  doc["prevalence"] = r.prevalence;
  doc["confusion_matrix"] = to_json(r.cm);
  doc["threshold_metrics"] = to_json(r.threshold);
  doc["auroc"] = r.auroc ? nlohmann::json(*r.auroc) : nlohmann::json();
  doc["average_precision"] = r.average_precision ? nlohmann::json(*r.average_precision) : nlohmann::json();
  doc["brier"] = r.brier;
  auto& bins = doc["reliability"] = nlohmann::json::array();
  for (const auto& b : r.reliability) {
    bins.push_back({{"center", b.center},
                    {"count", b.count},
                    {"mean_probability", b.mean_probability ? nlohmann::json(*b.mean_probability) : nlohmann::json()},
                    {"empirical_rate", b.empirical_rate ? nlohmann::json(*b.empirical_rate) : nlohmann::json()}});
  }
  auto& nb = doc["net_benefit"] = nlohmann::json::array();
  for (const auto& p : r.net_benefit) {
    nb.push_back({{"threshold", p.threshold}, {"model", p.model}, {"treat_all", p.treat_all}, {"treat_none", p.treat_none}});
  }
  if (r.auroc_ci) {
    doc["auroc_ci"] = {{"point", r.auroc_ci->point}, {"lo95", r.auroc_ci->lo95},
                       {"hi95", r.auroc_ci->hi95}, {"redraws", r.auroc_ci->redraws}};
  }
  if (r.paired) doc["paired"] = to_json(*r.paired);
  return doc;
}

}  // namespace crs::metrics
