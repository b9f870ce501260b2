#pragma once

#include <optional>
#include <string_view>

namespace crs {

// Five-level verbal confidence scale shared by the rule engine and the LLM
// output schema, ordered from most to least confident.
enum class Confidence {
  VeryConfident,
  SomewhatConfident,
  Neutral,
  SomewhatUnsure,
  NotAtAllConfident,
};

// Prompt vocabulary spelling, e.g. "very confident", "Somewhat confident".
std::string_view to_phrase(Confidence c);
// Identifier spelling used in JSON, e.g. "VeryConfident".
std::string_view to_string(Confidence c);
std::optional<Confidence> confidence_from_string(std::string_view identifier);

}  // namespace crs
