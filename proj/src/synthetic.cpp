#include "crs/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "crs/cohort.hpp"
#include "crs/errors.hpp"
#include "crs/heuristic.hpp"

namespace crs::cohort {

namespace {

void check_marginal(const IntMarginal& m, const ColumnSpec& c) {
  if (m.lo > m.hi || m.lo < c.min || m.hi > c.max || !(m.sd >= 0.0) || !std::isfinite(m.mean)) {
    throw ValidationError("generator: marginal for " + c.name + " can leave the valid range [" +
                          std::to_string(static_cast<int>(c.min)) + ", " +
                          std::to_string(static_cast<int>(c.max)) + "]");
  }
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError(std::string("generator: probability ") + name + " outside [0, 1]");
  }
}

void check_weights(const std::vector<double>& w, const ColumnSpec& c) {
  if (w.size() != c.categories.size()) {
    throw ValidationError("generator: " + c.name + " weights do not match the dictionary size");
  }
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("generator: negative weight for " + c.name);
    total += v;
  }
  if (!(total > 0.0)) throw ValidationError("generator: " + c.name + " weights sum to zero");
}

int draw(std::mt19937_64& rng, const IntMarginal& m) {
  std::normal_distribution<double> dist(m.mean, m.sd);
  const double v = m.sd > 0.0 ? dist(rng) : m.mean;
  return std::clamp(static_cast<int>(std::lround(v)), m.lo, m.hi);
}

}  // namespace

GeneratorConfig default_generator_config() { return GeneratorConfig{}; }

std::vector<PatientRecord> generate_synthetic(int n, std::uint64_t seed,
                                              const GeneratorConfig& cfg, const Schema& schema) {
  if (n < 1) throw ValidationError("generator: n must be at least 1");
  check_marginal(cfg.snot22_baseline, schema.column(FieldId::Snot22Baseline));
  check_marginal(cfg.ct_total, schema.column(FieldId::CtTotal));
  check_marginal(cfg.endoscopy_total, schema.column(FieldId::EndoscopyTotal));
  check_marginal(cfg.age, schema.column(FieldId::Age));
  for (const auto& [p, name] : std::initializer_list<std::pair<double, const char*>>{
           {cfg.p_male, "male"},
           {cfg.p_polyps, "polyps"},
           {cfg.p_previous_surgery, "previous_surgery"},
           {cfg.p_allergy_testing, "allergy_testing"},
           {cfg.p_septal_deviation, "septal_deviation"},
           {cfg.p_depression, "depression"},
           {cfg.p_fibromyalgia, "fibromyalgia"},
           {cfg.p_smoker, "smoker"},
           {cfg.p_copd, "copd"},
           {cfg.p_asthma, "asthma"},
           {cfg.p_osa, "osa"},
           {cfg.p_diabetes, "diabetes"},
           {cfg.p_gerd, "gerd"},
           {cfg.p_asa_intolerance, "asa_intolerance"}}) {
    check_probability(p, name);
  }
  const auto& insurance = schema.column(FieldId::Insurance);
  const auto& income = schema.column(FieldId::Income);
  const auto& race = schema.column(FieldId::Race);
  check_weights(cfg.insurance_weights, insurance);
  check_weights(cfg.income_weights, income);
  check_weights(cfg.race_weights, race);
  if (!(cfg.outcome_noise_sd >= 0.0) || !(cfg.reduction_sd >= 0.0) ||
      !std::isfinite(cfg.outcome_intercept) || !std::isfinite(cfg.outcome_slope)) {
    throw ValidationError("generator: invalid outcome model parameters");
  }
  for (const auto& c : schema.columns) {
    if (c.field == FieldId::Extra && c.required) {
      throw ValidationError("generator: cannot synthesize schema extra column " + c.name);
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> standard(0.0, 1.0);
  auto flip = [&](double p) { return unit(rng) < p; };
  auto pick = [&](const std::vector<double>& w, const ColumnSpec& c) {
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    return c.categories[dist(rng)];
  };

  std::vector<PatientRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PatientRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "SYN%05d", i + 1);
    r.patient_id = id;
    r.snot22_baseline = draw(rng, cfg.snot22_baseline);
    r.age = draw(rng, cfg.age);
    r.sex = flip(cfg.p_male) ? Sex::Male : Sex::Female;
    r.ct_total = draw(rng, cfg.ct_total);
    r.endoscopy_total = draw(rng, cfg.endoscopy_total);
    r.crs_polyps = flip(cfg.p_polyps);
    r.previous_surgery = flip(cfg.p_previous_surgery);
    r.allergy_testing = flip(cfg.p_allergy_testing);
    r.septal_deviation = flip(cfg.p_septal_deviation);
    r.depression = flip(cfg.p_depression);
    r.fibromyalgia = flip(cfg.p_fibromyalgia);
    r.smoker = flip(cfg.p_smoker);
    r.copd = flip(cfg.p_copd);
    r.asthma = flip(cfg.p_asthma);
    r.osa = flip(cfg.p_osa);
    r.diabetes = flip(cfg.p_diabetes);
    r.gerd = flip(cfg.p_gerd);
    r.asa_intolerance = flip(cfg.p_asa_intolerance);
    r.insurance = pick(cfg.insurance_weights, insurance);
    r.income_bracket = pick(cfg.income_weights, income);
    r.race = pick(cfg.race_weights, race);

    const double delta = heuristic::predict_heuristic(r).adjusted_improvement;
    const double z = cfg.outcome_intercept +
                     cfg.outcome_slope * (delta - heuristic::kLabelThreshold) / 10.0 +
                     cfg.outcome_noise_sd * standard(rng);
    const bool improves = unit(rng) < 1.0 / (1.0 + std::exp(-z));
    const double noise = cfg.reduction_sd * standard(rng);

    // Realized integer reduction, consistent with the drawn outcome. The MCID
    // label is reduction >= 9 on integer data.
    int reduction = static_cast<int>(std::lround(delta + noise));
    const int baseline = r.snot22_baseline;
    if (improves && baseline >= 9) {
      reduction = std::clamp(reduction, 9, baseline);
    } else {
      reduction = std::clamp(reduction, baseline - 110, std::min(8, baseline));
    }
    r.snot22_6mo = baseline - reduction;

    validate_record(r, schema);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace crs::cohort
