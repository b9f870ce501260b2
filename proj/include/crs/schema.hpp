#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crs/record.hpp"

namespace crs {

// Semantic slot a CSV column fills in PatientRecord.
enum class FieldId {
  Snot22Baseline,
  Snot22Followup,
  Age,
  Sex,
  CtTotal,
  EndoscopyTotal,
  CrsPolyps,
  PreviousSurgery,
  AllergyTesting,
  SeptalDeviation,
  Depression,
  Fibromyalgia,
  Smoker,
  Copd,
  Asthma,
  Osa,
  Diabetes,
  Gerd,
  AsaIntolerance,
  Insurance,
  Income,
  Race,
  Extra,
};

enum class ColumnType { Integer, Boolean, Category, Real };

struct ColumnSpec {
  std::string name;
  FieldId field = FieldId::Extra;
  ColumnType type = ColumnType::Integer;
  bool required = true;
  bool feature = true;
  bool standardize = false;
  double min = 0.0;
  double max = 0.0;
  // Category columns: code = position in this list.
  std::vector<std::string> categories;
};

// Versioned column/dictionary descriptor loaded from JSON. The checksum is the
// SHA-256 of the exact file bytes and is stamped into every downstream report.
struct Schema {
  std::string name;
  std::string version;
  std::string checksum;
  std::string id_column;
  double mcid = 8.9;
  std::vector<std::string> placeholders;
  std::vector<std::string> boolean_true;
  std::vector<std::string> boolean_false;
  std::vector<std::string> postop_blocklist;
  std::vector<ColumnSpec> columns;

  const ColumnSpec& column(FieldId field) const;
  const ColumnSpec* find_column(std::string_view name) const;
  // Feature columns in schema order.
  std::vector<const ColumnSpec*> feature_columns() const;
  std::vector<std::string> feature_names() const;

  bool is_placeholder(std::string_view text) const;
  std::optional<bool> parse_boolean(std::string_view text) const;
  // Throws ValidationError for labels absent from the dictionary.
  int category_code(const ColumnSpec& column, std::string_view label) const;
};

Schema parse_schema(std::string_view json_text);
Schema load_schema(const std::filesystem::path& path);

// Path of the schema file shipped with the repository.
std::filesystem::path default_schema_path();
std::filesystem::path default_corpus_path();

// Raw text of a record field as it appears in CSV files and prompts.
std::string field_text(const PatientRecord& record, const ColumnSpec& column);

std::string_view to_string(FieldId field);

}  // namespace crs
