#pragma once

#include <string>
#include <vector>

#include "crs/confidence.hpp"
#include "crs/record.hpp"
#include "json.hpp"

namespace crs::heuristic {

// Multiplicative rule: expected SNOT-22 drop = 45% of baseline, scaled by
// severity brackets and comorbidity penalties; recommend surgery iff the drop
// exceeds 9 points.

inline constexpr double kBaseFraction = 0.45;
inline constexpr double kLabelThreshold = 9.0;

struct Factor {
  std::string name;
  double multiplier = 1.0;
  bool operator==(const Factor&) const = default;
};

struct HeuristicPrediction {
  double base_improvement = 0.0;
  std::vector<Factor> factor_trace;  // severity factors first, then penalties
  double adjusted_improvement = 0.0;
  double predicted_6mo = 0.0;
  int label = 0;
  Confidence confidence = Confidence::NotAtAllConfident;
};

double base_improvement(int snot22_baseline);

std::vector<Factor> severity_multipliers(int snot22_baseline, int endoscopy_total, int ct_total,
                                         bool crs_polyps);

std::vector<Factor> penalty_multipliers(const PatientRecord& record);

// Ignores snot22_6mo.
HeuristicPrediction predict_heuristic(const PatientRecord& record);

// Bands on |delta - 9| with half-open intervals [15,inf), [10,15), [6,10), [3,6), [0,3).
Confidence confidence_band(double delta);

nlohmann::json to_json(const HeuristicPrediction& prediction);

}  // namespace crs::heuristic
