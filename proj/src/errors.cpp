#include "crs/errors.hpp"

namespace crs {

namespace {

std::string describe(const std::vector<LeakageViolation>& violations) {
  std::string text = "post-operative leakage: ";
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i > 0) text += ", ";
    text += violations[i].feature + " (matches " + violations[i].pattern + ")";
  }
  return text;
}

}  // namespace

LeakageError::LeakageError(std::vector<LeakageViolation> violations)
    : Error(ExitCode::Leakage, describe(violations)), violations_(std::move(violations)) {}

ReplayMissError::ReplayMissError(std::string prompt_hash, int replicate_index)
    : Error(ExitCode::ReplayMiss, "replay store has no response for prompt " + prompt_hash +
                                      " replicate " + std::to_string(replicate_index)),
      hash_(std::move(prompt_hash)) {}

}  // namespace crs
