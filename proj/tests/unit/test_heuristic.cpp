#include <cmath>

#include "../oracles/heuristic_oracle.hpp"
#include "crs/heuristic.hpp"
#include "doctest.h"

using namespace crs;
using namespace crs::heuristic;

namespace {

PatientRecord make(int baseline, int endo, int ct, bool polyps = false) {
  PatientRecord r;
  r.patient_id = "H";
  r.snot22_baseline = baseline;
  r.endoscopy_total = endo;
  r.ct_total = ct;
  r.crs_polyps = polyps;
  r.age = 40;
  return r;
}

std::vector<double> multipliers(const std::vector<Factor>& fs) {
  std::vector<double> out;
  for (const auto& f : fs) out.push_back(f.multiplier);
  return out;
}

}  // namespace

TEST_CASE("base improvement") {
  CHECK(base_improvement(60) == doctest::Approx(27.0));
  CHECK(base_improvement(0) == 0.0);
  CHECK(base_improvement(110) == doctest::Approx(49.5));
}

TEST_CASE("severity brackets") {
  CHECK(severity_multipliers(60, 8, 10, true) ==
        std::vector<Factor>{{"snot", 1.1}, {"endo", 1.0}, {"ct", 1.0}, {"polyps", 1.05}});
  CHECK(multipliers(severity_multipliers(25, 4, 7, false)) == std::vector<double>{0.7, 0.9, 1.0});
  CHECK(multipliers(severity_multipliers(24, 3, 6, false)) == std::vector<double>{0.5, 0.8, 0.85});
  CHECK(multipliers(severity_multipliers(40, 11, 13, false)) == std::vector<double>{1.0, 1.1, 1.1});
  CHECK(multipliers(severity_multipliers(80, 10, 12, false)) == std::vector<double>{1.2, 1.0, 1.0});
  CHECK(multipliers(severity_multipliers(79, 7, 12, false)) == std::vector<double>{1.1, 1.0, 1.0});
}

TEST_CASE("penalties") {
  auto r = make(50, 7, 10);
  CHECK(penalty_multipliers(r).empty());

  r.depression = true;
  r.smoker = true;
  r.age = 70;
  auto p = penalty_multipliers(r);
  CHECK(p == std::vector<Factor>{{"depression", 0.7}, {"smoker", 0.85}, {"age65", 0.9}});
  double product = 1;
  for (const auto& f : p) product *= f.multiplier;
  CHECK(product == doctest::Approx(0.5355).epsilon(1e-12));

  auto at65 = make(50, 7, 10);
  at65.age = 65;
  CHECK(penalty_multipliers(at65) == std::vector<Factor>{{"age65", 0.9}});
  at65.age = 64;
  CHECK(penalty_multipliers(at65).empty());
}

TEST_CASE("full rule chain") {
  auto a = predict_heuristic(make(60, 8, 10, true));
  CHECK(a.base_improvement == doctest::Approx(27.0));
  CHECK(a.adjusted_improvement == doctest::Approx(31.185));
  CHECK(a.predicted_6mo == doctest::Approx(28.815));
  CHECK(a.label == 1);
  CHECK(a.confidence == Confidence::VeryConfident);

  auto r = make(20, 2, 5);
  r.depression = true;
  r.smoker = true;
  auto b = predict_heuristic(r);
  CHECK(b.adjusted_improvement == doctest::Approx(9 * 0.5 * 0.8 * 0.85 * 0.7 * 0.85));
  CHECK(b.adjusted_improvement == doctest::Approx(1.8207).epsilon(1e-4));
  CHECK(b.label == 0);
  CHECK(b.confidence == Confidence::Neutral);

  auto z = predict_heuristic(make(0, 0, 0));
  CHECK(z.adjusted_improvement == 0.0);
  CHECK(z.label == 0);
  CHECK(z.confidence == Confidence::Neutral);
  CHECK(z.predicted_6mo == 0.0);
}

TEST_CASE("follow-up score is ignored") {
  auto r = make(70, 9, 14, true);
  auto a = predict_heuristic(r);
  r.snot22_6mo = 3;
  auto b = predict_heuristic(r);
  CHECK(a.adjusted_improvement == b.adjusted_improvement);
  CHECK(a.confidence == b.confidence);
}

TEST_CASE("confidence bands are half-open") {
  CHECK(confidence_band(31.185) == Confidence::VeryConfident);
  CHECK(confidence_band(9) == Confidence::NotAtAllConfident);
  CHECK(confidence_band(19) == Confidence::SomewhatConfident);
  CHECK(confidence_band(24) == Confidence::VeryConfident);
  CHECK(confidence_band(23.999) == Confidence::SomewhatConfident);
  CHECK(confidence_band(15) == Confidence::Neutral);
  CHECK(confidence_band(14.95) == Confidence::SomewhatUnsure);
  CHECK(confidence_band(12) == Confidence::SomewhatUnsure);
  CHECK(confidence_band(11.999) == Confidence::NotAtAllConfident);
  CHECK(confidence_band(3) == Confidence::Neutral);
  CHECK(confidence_band(0) == Confidence::Neutral);
}

TEST_CASE("trace soundness and oracle agreement on a sampled grid") {
  for (int baseline = 0; baseline <= 110; baseline += 11)
    for (int endo = 0; endo <= 20; endo += 5)
      for (int ct = 0; ct <= 24; ct += 4)
        for (int mask = 0; mask < 64; mask += 5) {
          auto r = make(baseline, endo, ct, mask & 1);
          r.depression = mask & 2;
          r.fibromyalgia = mask & 4;
          r.copd = mask & 8;
          r.gerd = mask & 16;
          r.asa_intolerance = mask & 32;
          r.age = (mask & 1) ? 70 : 30;
          auto p = predict_heuristic(r);
          double product = p.base_improvement;
          for (const auto& f : p.factor_trace) product *= f.multiplier;
          CHECK(std::fabs(product - p.adjusted_improvement) <= 1e-12);

          oracle::Case c;
          c.baseline = baseline;
          c.endo = endo;
          c.ct = ct;
          c.polyps = r.crs_polyps;
          c.depression = r.depression;
          c.fibromyalgia = r.fibromyalgia;
          c.copd = r.copd;
          c.gerd = r.gerd;
          c.asa = r.asa_intolerance;
          c.age = r.age;
          auto o = oracle::evaluate(c);
          CHECK(std::fabs(o.delta - p.adjusted_improvement) <= 1e-9);
          CHECK(o.label == p.label);
          CHECK(o.confidence == static_cast<int>(p.confidence));
        }
}

TEST_CASE("trace json") {
  auto j = to_json(predict_heuristic(make(60, 8, 10, true)));
  CHECK(j["label"] == 1);
  CHECK(j["confidence"] == "VeryConfident");
  CHECK(j["factors"].size() == 4);
  CHECK(j["factors"][3]["name"] == "polyps");
}
