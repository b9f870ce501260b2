#include "crs/schema.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <charconv>

#include "crs/checksum.hpp"
#include "crs/errors.hpp"
#include "json.hpp"

namespace crs {

namespace {

struct FieldInfo {
  FieldId id;
  std::string_view key;
  ColumnType type;
  double min;
  double max;
};

// Types and hard ranges are fixed in code; the schema file only names columns
// and supplies dictionaries.
constexpr std::array<FieldInfo, 22> kFields{{
    {FieldId::Snot22Baseline, "snot22_baseline", ColumnType::Integer, 0, 110},
    {FieldId::Snot22Followup, "snot22_6mo", ColumnType::Integer, 0, 110},
    {FieldId::Age, "age", ColumnType::Integer, 18, 120},
    {FieldId::Sex, "sex", ColumnType::Category, 0, 0},
    {FieldId::CtTotal, "ct_total", ColumnType::Integer, 0, 24},
    {FieldId::EndoscopyTotal, "endoscopy_total", ColumnType::Integer, 0, 20},
    {FieldId::CrsPolyps, "crs_polyps", ColumnType::Boolean, 0, 1},
    {FieldId::PreviousSurgery, "previous_surgery", ColumnType::Boolean, 0, 1},
    {FieldId::AllergyTesting, "allergy_testing", ColumnType::Boolean, 0, 1},
    {FieldId::SeptalDeviation, "septal_deviation", ColumnType::Boolean, 0, 1},
    {FieldId::Depression, "depression", ColumnType::Boolean, 0, 1},
    {FieldId::Fibromyalgia, "fibromyalgia", ColumnType::Boolean, 0, 1},
    {FieldId::Smoker, "smoker", ColumnType::Boolean, 0, 1},
    {FieldId::Copd, "copd", ColumnType::Boolean, 0, 1},
    {FieldId::Asthma, "asthma", ColumnType::Boolean, 0, 1},
    {FieldId::Osa, "osa", ColumnType::Boolean, 0, 1},
    {FieldId::Diabetes, "diabetes", ColumnType::Boolean, 0, 1},
    {FieldId::Gerd, "gerd", ColumnType::Boolean, 0, 1},
    {FieldId::AsaIntolerance, "asa_intolerance", ColumnType::Boolean, 0, 1},
    {FieldId::Insurance, "insurance", ColumnType::Category, 0, 0},
    {FieldId::Income, "income", ColumnType::Category, 0, 0},
    {FieldId::Race, "race", ColumnType::Category, 0, 0},
}};

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return text;
}

ColumnType parse_type(const std::string& text) {
  if (text == "integer") return ColumnType::Integer;
  if (text == "boolean") return ColumnType::Boolean;
  if (text == "category") return ColumnType::Category;
  if (text == "real") return ColumnType::Real;
  throw ValidationError("schema: unknown column type '" + text + "'");
}

bool bool_field(const PatientRecord& r, FieldId f) {
  switch (f) {
    case FieldId::CrsPolyps: return r.crs_polyps;
    case FieldId::PreviousSurgery: return r.previous_surgery;
    case FieldId::AllergyTesting: return r.allergy_testing;
    case FieldId::SeptalDeviation: return r.septal_deviation;
    case FieldId::Depression: return r.depression;
    case FieldId::Fibromyalgia: return r.fibromyalgia;
    case FieldId::Smoker: return r.smoker;
    case FieldId::Copd: return r.copd;
    case FieldId::Asthma: return r.asthma;
    case FieldId::Osa: return r.osa;
    case FieldId::Diabetes: return r.diabetes;
    case FieldId::Gerd: return r.gerd;
    case FieldId::AsaIntolerance: return r.asa_intolerance;
    default: throw std::logic_error("not a boolean field");
  }
}

// Shortest text that parses back to the same double.
std::string format_real(double value) {
  std::array<char, 64> buffer{};
  const auto result = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  return std::string(buffer.data(), result.ptr);
}

}  // namespace

std::string_view to_string(FieldId field) {
  if (field == FieldId::Extra) return "extra";
  for (const auto& info : kFields) {
    if (info.id == field) return info.key;
  }
  return "unknown";
}

const ColumnSpec& Schema::column(FieldId field) const {
  for (const auto& c : columns) {
    if (c.field == field) return c;
  }
  throw ValidationError("schema has no column for field " + std::string(to_string(field)));
}

const ColumnSpec* Schema::find_column(std::string_view column_name) const {
  for (const auto& c : columns) {
    if (c.name == column_name) return &c;
  }
  return nullptr;
}

std::vector<const ColumnSpec*> Schema::feature_columns() const {
  std::vector<const ColumnSpec*> out;
  for (const auto& c : columns) {
    if (c.feature) out.push_back(&c);
  }
  return out;
}

std::vector<std::string> Schema::feature_names() const {
  std::vector<std::string> out;
  for (const auto* c : feature_columns()) out.push_back(c->name);
  return out;
}

bool Schema::is_placeholder(std::string_view text) const {
  const std::string t = lower(trim(text));
  return std::any_of(placeholders.begin(), placeholders.end(),
                     [&](const std::string& p) { return lower(p) == t; });
}

std::optional<bool> Schema::parse_boolean(std::string_view text) const {
  const std::string t = lower(trim(text));
  for (const auto& token : boolean_true) {
    if (lower(token) == t) return true;
  }
  for (const auto& token : boolean_false) {
    if (lower(token) == t) return false;
  }
  return std::nullopt;
}

int Schema::category_code(const ColumnSpec& c, std::string_view label) const {
  const auto it = std::find(c.categories.begin(), c.categories.end(), label);
  if (it == c.categories.end()) {
    throw ValidationError("column " + c.name + ": value '" + std::string(label) +
                          "' is not in the encoding dictionary");
  }
  return static_cast<int>(it - c.categories.begin());
}

Schema parse_schema(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schema: invalid JSON: ") + e.what());
  }

  Schema schema;
  try {
    schema.name = doc.at("schema").get<std::string>();
    schema.version = doc.at("version").get<std::string>();
    schema.id_column = doc.value("id_column", std::string("PATIENT_ID"));
    schema.mcid = doc.value("mcid", 8.9);
    schema.placeholders = doc.at("placeholders").get<std::vector<std::string>>();
    schema.boolean_true = doc.at("boolean_true").get<std::vector<std::string>>();
    schema.boolean_false = doc.at("boolean_false").get<std::vector<std::string>>();
    schema.postop_blocklist = doc.at("postop_blocklist").get<std::vector<std::string>>();

    for (const auto& entry : doc.at("columns")) {
      ColumnSpec c;
      c.name = entry.at("name").get<std::string>();
      const std::string key = entry.at("field").get<std::string>();
      c.type = parse_type(entry.at("type").get<std::string>());
      c.required = entry.value("required", true);
      c.feature = entry.value("feature", true);
      c.standardize = entry.value("standardize", false);
      c.categories = entry.value("categories", std::vector<std::string>{});

      if (key == "extra") {
        if (c.type != ColumnType::Real && c.type != ColumnType::Integer) {
          throw ValidationError("schema: extra column " + c.name + " must be numeric");
        }
        c.field = FieldId::Extra;
        c.min = entry.value("min", -1e300);
        c.max = entry.value("max", 1e300);
      } else {
        const auto it = std::find_if(kFields.begin(), kFields.end(),
                                     [&](const FieldInfo& f) { return f.key == key; });
        if (it == kFields.end()) throw ValidationError("schema: unknown field '" + key + "'");
        if (it->type != c.type) {
          throw ValidationError("schema: column " + c.name + " has the wrong type for " + key);
        }
        c.field = it->id;
        c.min = it->min;
        c.max = it->max;
      }
      if (c.type == ColumnType::Category && c.categories.empty()) {
        throw ValidationError("schema: category column " + c.name + " has no dictionary");
      }
      if (schema.find_column(c.name) != nullptr) {
        throw ValidationError("schema: duplicate column " + c.name);
      }
      schema.columns.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("schema: ") + e.what());
  }

  for (const auto& info : kFields) {
    const auto n = std::count_if(schema.columns.begin(), schema.columns.end(),
                                 [&](const ColumnSpec& c) { return c.field == info.id; });
    if (n != 1) {
      throw ValidationError("schema must map field " + std::string(info.key) + " exactly once");
    }
  }
  const auto& followup = schema.column(FieldId::Snot22Followup);
  if (followup.feature) throw ValidationError("schema: the follow-up column cannot be a feature");
  const auto sex = schema.column(FieldId::Sex).categories;
  if (sex != std::vector<std::string>{"Female", "Male"}) {
    throw ValidationError("schema: SEX dictionary must be [Female, Male]");
  }

  schema.checksum = sha256_hex(json_text);
  return schema;
}

Schema load_schema(const std::filesystem::path& path) { return parse_schema(read_file(path)); }

std::filesystem::path default_schema_path() {
  return std::filesystem::path(CRS_DATA_DIR) / "schema_v1.json";
}

std::filesystem::path default_corpus_path() {
  return std::filesystem::path(CRS_DATA_DIR) / "corpus.json";
}

std::string field_text(const PatientRecord& r, const ColumnSpec& c) {
  switch (c.field) {
    case FieldId::Snot22Baseline: return std::to_string(r.snot22_baseline);
    case FieldId::Snot22Followup: return r.snot22_6mo ? std::to_string(*r.snot22_6mo) : "";
    case FieldId::Age: return std::to_string(r.age);
    case FieldId::Sex: return c.categories.at(static_cast<std::size_t>(r.sex));
    case FieldId::CtTotal: return std::to_string(r.ct_total);
    case FieldId::EndoscopyTotal: return std::to_string(r.endoscopy_total);
    case FieldId::Insurance: return r.insurance;
    case FieldId::Income: return r.income_bracket;
    case FieldId::Race: return r.race;
    case FieldId::Extra: {
      const auto it = r.extras.find(c.name);
      return it == r.extras.end() ? "" : format_real(it->second);
    }
    default: return bool_field(r, c.field) ? "1" : "0";
  }
}

}  // namespace crs
