#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crs/dataset.hpp"
#include "crs/errors.hpp"
#include "crs/record.hpp"
#include "crs/schema.hpp"

namespace crs::cohort {

struct Rejection {
  std::size_t row_index = 0;  // 1-based data row, header excluded
  std::string column;
  std::string reason;
};

struct ParseResult {
  std::vector<PatientRecord> records;
  std::vector<Rejection> rejections;
};

// Schema-driven CSV ingestion. Missing required columns throw ValidationError;
// bad rows are dropped and reported. Columns not named by the schema are ignored.
ParseResult parse_cohort(std::string_view csv_bytes, const Schema& schema);

// Canonical CSV rendering in schema column order; parse_cohort inverts it.
std::string serialize_cohort(std::span<const PatientRecord> records, const Schema& schema);

// Throws ValidationError if the record breaks a range or dictionary invariant.
void validate_record(const PatientRecord& record, const Schema& schema);

// 1 iff baseline - followup >= mcid; nullopt when the follow-up is missing.
std::optional<int> derive_label(int snot22_baseline, std::optional<int> snot22_6mo,
                                double mcid = 8.9);

// Patterns matched case-insensitively against feature names (ECMAScript regex, search semantics).
std::vector<std::string> canonical_blocklist();

std::vector<LeakageViolation> leakage_guard(std::span<const std::string> feature_names,
                                            std::span<const std::string> blocklist);

// Throws LeakageError listing every violation.
void enforce_no_leakage(std::span<const std::string> feature_names,
                        std::span<const std::string> blocklist);

// Standardization state for continuous columns, fit on training records only.
struct Scaler {
  std::vector<std::string> columns;
  std::vector<double> means;
  std::vector<double> sds;

  std::string id() const;  // content hash, identifies the fitted snapshot
  bool operator==(const Scaler&) const = default;
};

Scaler fit_scaler(std::span<const PatientRecord> train, const Schema& schema);

struct FeatureVector {
  std::vector<double> values;
  std::vector<std::string> feature_names;
  std::string scaling_state_id;
};

FeatureVector encode(const PatientRecord& record, const Schema& schema, const Scaler& scaler);

// Encodes labeled records into a Dataset; unlabeled records throw.
Dataset encode_dataset(std::span<const PatientRecord> records, const Schema& schema,
                       const Scaler& scaler);

struct CohortSplit {
  std::vector<std::string> train_ids;  // sorted
  std::vector<std::string> test_ids;   // sorted
  std::uint64_t seed = 0;
  double label_prevalence_train = 0.0;
  double label_prevalence_test = 0.0;
};

// Per-class shuffle, test counts allocated by largest remainder so that the
// test size is round(fraction * n) and every class is within one case of
// proportional. Throws ValidationError if a class has fewer than 2 members.
CohortSplit stratified_split(std::span<const std::string> ids, std::span<const int> labels,
                             double test_fraction, std::uint64_t seed);

CohortSplit stratified_split(std::span<const PatientRecord> records, const Schema& schema,
                             double test_fraction, std::uint64_t seed);

// Selects records by id in the order of `ids`; throws if an id is unknown.
std::vector<PatientRecord> select(std::span<const PatientRecord> records,
                                  std::span<const std::string> ids);

// Records with a derivable label.
std::vector<PatientRecord> labeled_only(std::span<const PatientRecord> records,
                                        const Schema& schema);

}  // namespace crs::cohort
