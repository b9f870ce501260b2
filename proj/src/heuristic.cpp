#include "crs/heuristic.hpp"

#include <algorithm>
#include <cmath>

namespace crs {

std::string_view to_phrase(Confidence c) {
  switch (c) {
    case Confidence::VeryConfident: return "very confident";
    case Confidence::SomewhatConfident: return "Somewhat confident";
    case Confidence::Neutral: return "Neutral";
    case Confidence::SomewhatUnsure: return "Somewhat unsure";
    case Confidence::NotAtAllConfident: return "Not at all confident";
  }
  return "";
}

std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::VeryConfident: return "VeryConfident";
    case Confidence::SomewhatConfident: return "SomewhatConfident";
    case Confidence::Neutral: return "Neutral";
    case Confidence::SomewhatUnsure: return "SomewhatUnsure";
    case Confidence::NotAtAllConfident: return "NotAtAllConfident";
  }
  return "";
}

std::optional<Confidence> confidence_from_string(std::string_view identifier) {
  for (auto c : {Confidence::VeryConfident, Confidence::SomewhatConfident, Confidence::Neutral,
                 Confidence::SomewhatUnsure, Confidence::NotAtAllConfident}) {
    if (to_string(c) == identifier) return c;
  }
  return std::nullopt;
}

}  // namespace crs

namespace crs::heuristic {

double base_improvement(int snot22_baseline) { return kBaseFraction * snot22_baseline; }

std::vector<Factor> severity_multipliers(int snot, int endo, int ct, bool polyps) {
  std::vector<Factor> out;

  double snot_factor = 1.2;
  if (snot < 25) snot_factor = 0.5;
  else if (snot < 40) snot_factor = 0.7;
  else if (snot < 60) snot_factor = 1.0;
  else if (snot < 80) snot_factor = 1.1;
  out.push_back({"snot", snot_factor});

  double endo_factor = 1.1;
  if (endo <= 3) endo_factor = 0.8;
  else if (endo <= 6) endo_factor = 0.9;
  else if (endo <= 10) endo_factor = 1.0;
  out.push_back({"endo", endo_factor});

  double ct_factor = 1.1;
  if (ct <= 6) ct_factor = 0.85;
  else if (ct <= 12) ct_factor = 1.0;
  out.push_back({"ct", ct_factor});

  if (polyps) out.push_back({"polyps", 1.05});
  return out;
}

std::vector<Factor> penalty_multipliers(const PatientRecord& r) {
  std::vector<Factor> out;
  if (r.depression) out.push_back({"depression", 0.7});
  if (r.fibromyalgia) out.push_back({"fibromyalgia", 0.7});
  if (r.smoker) out.push_back({"smoker", 0.85});
  if (r.copd) out.push_back({"copd", 0.8});
  if (r.asthma) out.push_back({"asthma", 0.9});
  if (r.osa) out.push_back({"osa", 0.9});
  if (r.diabetes) out.push_back({"diabetes", 0.9});
  if (r.gerd) out.push_back({"gerd", 0.95});
  if (r.asa_intolerance) out.push_back({"asa_intolerance", 0.9});
  if (r.previous_surgery) out.push_back({"previous_surgery", 0.85});
  if (r.age >= 65) out.push_back({"age65", 0.9});
  return out;
}

Confidence confidence_band(double delta) {
  const double d = std::abs(delta - kLabelThreshold);
  if (d >= 15.0) return Confidence::VeryConfident;
  if (d >= 10.0) return Confidence::SomewhatConfident;
  if (d >= 6.0) return Confidence::Neutral;
  if (d >= 3.0) return Confidence::SomewhatUnsure;
  return Confidence::NotAtAllConfident;
}

HeuristicPrediction predict_heuristic(const PatientRecord& r) {
  HeuristicPrediction p;
  p.base_improvement = base_improvement(r.snot22_baseline);
  p.factor_trace = severity_multipliers(r.snot22_baseline, r.endoscopy_total, r.ct_total, r.crs_polyps);
  const auto penalties = penalty_multipliers(r);
  p.factor_trace.insert(p.factor_trace.end(), penalties.begin(), penalties.end());

  double delta = p.base_improvement;
  for (const auto& f : p.factor_trace) delta *= f.multiplier;
  p.adjusted_improvement = delta;
  // Unreachable for valid inputs (delta <= 0.6861 * baseline) but kept as stated.
  p.predicted_6mo = std::max(0.0, r.snot22_baseline - delta);
  p.label = delta > kLabelThreshold ? 1 : 0;
  p.confidence = confidence_band(delta);
  return p;
}

nlohmann::json to_json(const HeuristicPrediction& p) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : p.factor_trace) factors.push_back({{"name", f.name}, {"multiplier", f.multiplier}});
  return {{"base_improvement", p.base_improvement},
          {"factors", factors},
          {"delta", p.adjusted_improvement},
          {"predicted_6mo", p.predicted_6mo},
          {"label", p.label},
          {"confidence", std::string(to_string(p.confidence))}};
}

}  // namespace crs::heuristic
