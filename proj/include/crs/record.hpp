#pragma once

#include <map>
#include <optional>
#include <string>

namespace crs {

enum class Sex { Female = 0, Male = 1 };

// One pre-operative case. snot22_6mo exists for label derivation only and is
// never rendered into features or prompts.
struct PatientRecord {
  std::string patient_id;
  int snot22_baseline = 0;
  std::optional<int> snot22_6mo;
  int age = 18;
  Sex sex = Sex::Female;
  int ct_total = 0;
  int endoscopy_total = 0;
  bool crs_polyps = false;
  bool previous_surgery = false;
  bool allergy_testing = false;
  bool septal_deviation = false;
  bool depression = false;
  bool fibromyalgia = false;
  bool smoker = false;
  bool copd = false;
  bool asthma = false;
  bool osa = false;
  bool diabetes = false;
  bool gerd = false;
  bool asa_intolerance = false;
  std::string insurance;
  std::string income_bracket;
  std::string race;
  // Schema-declared additional numeric columns, keyed by column name.
  std::map<std::string, double> extras;

  bool operator==(const PatientRecord&) const = default;
};

}  // namespace crs
