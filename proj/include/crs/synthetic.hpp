#pragma once

#include <cstdint>
#include <vector>

#include "crs/record.hpp"
#include "crs/schema.hpp"

namespace crs::cohort {

struct IntMarginal {
  double mean;
  double sd;
  int lo;
  int hi;
};

// Generator defaults are plausible clinic ranges, not estimates of any real cohort.
struct GeneratorConfig {
  IntMarginal snot22_baseline{50.0, 20.0, 9, 110};
  IntMarginal ct_total{12.0, 5.0, 0, 24};
  IntMarginal endoscopy_total{7.0, 4.0, 0, 20};
  IntMarginal age{52.0, 14.0, 18, 90};
  double p_male = 0.5;
  double p_polyps = 0.35;
  double p_previous_surgery = 0.30;
  double p_allergy_testing = 0.45;
  double p_septal_deviation = 0.20;
  double p_depression = 0.20;
  double p_fibromyalgia = 0.05;
  double p_smoker = 0.15;
  double p_copd = 0.05;
  double p_asthma = 0.20;
  double p_osa = 0.10;
  double p_diabetes = 0.10;
  double p_gerd = 0.20;
  double p_asa_intolerance = 0.05;
  // Category weights, aligned with the schema dictionaries.
  std::vector<double> insurance_weights{0.05, 0.15, 0.25, 0.55};
  std::vector<double> income_weights{0.15, 0.20, 0.25, 0.20, 0.20};
  std::vector<double> race_weights{0.75, 0.10, 0.05, 0.02, 0.01, 0.04, 0.03};
  // Latent outcome: P(MCID) = sigmoid(intercept + slope * (delta - 9) / 10 + noise),
  // where delta is the rule engine's adjusted improvement.
  double outcome_intercept = 2.7;
  double outcome_slope = 20.0;
  double outcome_noise_sd = 0.5;
  // Spread of the realized reduction around delta.
  double reduction_sd = 6.0;
};

GeneratorConfig default_generator_config();

// Deterministic for fixed (n, seed, config). Throws ValidationError for n < 1
// or configurations that could produce out-of-range fields.
std::vector<PatientRecord> generate_synthetic(int n, std::uint64_t seed,
                                              const GeneratorConfig& config,
                                              const Schema& schema);

}  // namespace crs::cohort
