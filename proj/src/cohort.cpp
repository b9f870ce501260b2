#include "crs/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <regex>
#include <set>

#include "crs/checksum.hpp"
#include "crs/csv.hpp"
#include "json.hpp"

namespace crs {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.feature_names = feature_names;
  out.x = Matrix(rows.size(), x.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.row(rows[i]);
    std::copy(src.begin(), src.end(), out.x.row(i).begin());
    out.y.push_back(y[rows[i]]);
    out.case_ids.push_back(case_ids[rows[i]]);
  }
  return out;
}

}  // namespace crs

namespace crs::cohort {

namespace {

std::string_view trim(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return text;
}

std::optional<long long> parse_integer(std::string_view text) {
  long long value = 0;
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, value);
  if (result.ec != std::errc{} || result.ptr != end) return std::nullopt;
  return value;
}

std::optional<double> parse_real(std::string_view text) {
  double value = 0;
  const auto* end = text.data() + text.size();
  const auto result = std::from_chars(text.data(), end, value);
  if (result.ec != std::errc{} || result.ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

bool* bool_slot(PatientRecord& r, FieldId f) {
  switch (f) {
    case FieldId::CrsPolyps: return &r.crs_polyps;
    case FieldId::PreviousSurgery: return &r.previous_surgery;
    case FieldId::AllergyTesting: return &r.allergy_testing;
    case FieldId::SeptalDeviation: return &r.septal_deviation;
    case FieldId::Depression: return &r.depression;
    case FieldId::Fibromyalgia: return &r.fibromyalgia;
    case FieldId::Smoker: return &r.smoker;
    case FieldId::Copd: return &r.copd;
    case FieldId::Asthma: return &r.asthma;
    case FieldId::Osa: return &r.osa;
    case FieldId::Diabetes: return &r.diabetes;
    case FieldId::Gerd: return &r.gerd;
    case FieldId::AsaIntolerance: return &r.asa_intolerance;
    default: return nullptr;
  }
}

int* int_slot(PatientRecord& r, FieldId f) {
  switch (f) {
    case FieldId::Snot22Baseline: return &r.snot22_baseline;
    case FieldId::Age: return &r.age;
    case FieldId::CtTotal: return &r.ct_total;
    case FieldId::EndoscopyTotal: return &r.endoscopy_total;
    default: return nullptr;
  }
}

std::string* category_slot(PatientRecord& r, FieldId f) {
  switch (f) {
    case FieldId::Insurance: return &r.insurance;
    case FieldId::Income: return &r.income_bracket;
    case FieldId::Race: return &r.race;
    default: return nullptr;
  }
}

int int_value(const PatientRecord& r, FieldId f) {
  switch (f) {
    case FieldId::Snot22Baseline: return r.snot22_baseline;
    case FieldId::Age: return r.age;
    case FieldId::CtTotal: return r.ct_total;
    case FieldId::EndoscopyTotal: return r.endoscopy_total;
    default: throw std::logic_error("not an integer field");
  }
}

// Sets one field from cell text. Returns an empty string on success or the
// rejection reason.
std::string assign(PatientRecord& r, const ColumnSpec& c, std::string_view text,
                   const Schema& schema) {
  switch (c.type) {
    case ColumnType::Integer: {
      const auto v = parse_integer(text);
      if (!v) return "malformed integer '" + std::string(text) + "'";
      if (*v < c.min || *v > c.max) return "value " + std::to_string(*v) + " out of range";
      if (c.field == FieldId::Snot22Followup) {
        r.snot22_6mo = static_cast<int>(*v);
      } else if (c.field == FieldId::Extra) {
        r.extras[c.name] = static_cast<double>(*v);
      } else {
        *int_slot(r, c.field) = static_cast<int>(*v);
      }
      return {};
    }
    case ColumnType::Real: {
      const auto v = parse_real(text);
      if (!v) return "malformed number '" + std::string(text) + "'";
      if (*v < c.min || *v > c.max) return "value out of range";
      r.extras[c.name] = *v;
      return {};
    }
    case ColumnType::Boolean: {
      const auto v = schema.parse_boolean(text);
      if (!v) return "malformed boolean '" + std::string(text) + "'";
      *bool_slot(r, c.field) = *v;
      return {};
    }
    case ColumnType::Category: {
      const auto it = std::find(c.categories.begin(), c.categories.end(), text);
      if (it == c.categories.end()) return "value '" + std::string(text) + "' not in dictionary";
      if (c.field == FieldId::Sex) {
        r.sex = it == c.categories.begin() ? Sex::Female : Sex::Male;
      } else {
        *category_slot(r, c.field) = std::string(text);
      }
      return {};
    }
  }
  return "unsupported column type";
}

std::string format_row_id(std::size_t index) { return "row-" + std::to_string(index); }

}  // namespace

ParseResult parse_cohort(std::string_view csv_bytes, const Schema& schema) {
  const auto table = csv::parse(csv_bytes);
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    index.emplace(std::string(trim(table.header[i])), i);
  }
  for (const auto& c : schema.columns) {
    if (c.required && !index.contains(c.name)) {
      throw ValidationError("cohort csv is missing required column " + c.name);
    }
  }
  const auto id_it = index.find(schema.id_column);

  ParseResult result;
  std::set<std::string> seen_ids;
  for (std::size_t row_no = 0; row_no < table.rows.size(); ++row_no) {
    const auto& row = table.rows[row_no];
    const std::size_t row_index = row_no + 1;
    if (row.size() != table.header.size()) {
      result.rejections.push_back({row_index, "", "expected " + std::to_string(table.header.size()) +
                                                      " fields, found " + std::to_string(row.size())});
      continue;
    }

    PatientRecord record;
    record.patient_id = id_it == index.end() ? format_row_id(row_index)
                                              : std::string(trim(row[id_it->second]));
    if (record.patient_id.empty() || schema.is_placeholder(record.patient_id)) {
      result.rejections.push_back({row_index, schema.id_column, "missing patient id"});
      continue;
    }

    std::optional<Rejection> rejection;
    for (const auto& c : schema.columns) {
      const auto it = index.find(c.name);
      if (it == index.end()) continue;
      const auto text = trim(row[it->second]);
      if (schema.is_placeholder(text)) {
        if (c.required) {
          rejection = Rejection{row_index, c.name, "missing value"};
          break;
        }
        continue;
      }
      if (auto reason = assign(record, c, text, schema); !reason.empty()) {
        rejection = Rejection{row_index, c.name, std::move(reason)};
        break;
      }
    }
    if (!rejection && !seen_ids.insert(record.patient_id).second) {
      rejection = Rejection{row_index, schema.id_column, "duplicate patient id " + record.patient_id};
    }
    if (rejection) {
      result.rejections.push_back(std::move(*rejection));
      continue;
    }
    result.records.push_back(std::move(record));
  }
  return result;
}

std::string serialize_cohort(std::span<const PatientRecord> records, const Schema& schema) {
  std::vector<std::string> header{schema.id_column};
  for (const auto& c : schema.columns) header.push_back(c.name);
  std::string out = csv::format_row(header);
  for (const auto& r : records) {
    std::vector<std::string> fields{r.patient_id};
    for (const auto& c : schema.columns) fields.push_back(field_text(r, c));
    out += csv::format_row(fields);
  }
  return out;
}

void validate_record(const PatientRecord& r, const Schema& schema) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("record " + r.patient_id + ": " + what);
  };
  if (r.patient_id.empty()) fail("empty patient id");
  for (const auto& c : schema.columns) {
    switch (c.field) {
      case FieldId::Snot22Followup:
        if (r.snot22_6mo && (*r.snot22_6mo < c.min || *r.snot22_6mo > c.max)) {
          fail(c.name + " out of range");
        }
        break;
      case FieldId::Snot22Baseline:
      case FieldId::Age:
      case FieldId::CtTotal:
      case FieldId::EndoscopyTotal: {
        const int v = int_value(r, c.field);
        if (v < c.min || v > c.max) fail(c.name + " = " + std::to_string(v) + " out of range");
        break;
      }
      case FieldId::Insurance:
      case FieldId::Income:
      case FieldId::Race:
        schema.category_code(c, field_text(r, c));
        break;
      case FieldId::Extra: {
        const auto it = r.extras.find(c.name);
        if (it == r.extras.end()) {
          if (c.required) fail("missing " + c.name);
        } else if (!std::isfinite(it->second) || it->second < c.min || it->second > c.max) {
          fail(c.name + " out of range");
        }
        break;
      }
      default:
        break;
    }
  }
  for (const auto& [name, value] : r.extras) {
    const auto* c = schema.find_column(name);
    if (c == nullptr || c->field != FieldId::Extra) fail("unknown extra column " + name);
  }
}

std::optional<int> derive_label(int snot22_baseline, std::optional<int> snot22_6mo, double mcid) {
  if (!snot22_6mo) return std::nullopt;
  const double reduction = static_cast<double>(snot22_baseline - *snot22_6mo);
  return reduction >= mcid ? 1 : 0;
}

std::vector<std::string> canonical_blocklist() {
  return {"6_?MO", "POST_?OP", "(^|_)POST(_|$)", "FOLLOW_?UP", "(^|_)FU(_|$)", "OLF\\w*_(POST|FU|6)"};
}

std::vector<LeakageViolation> leakage_guard(std::span<const std::string> feature_names,
                                            std::span<const std::string> blocklist) {
  std::vector<std::regex> patterns;
  patterns.reserve(blocklist.size());
  for (const auto& p : blocklist) {
    try {
      patterns.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error&) {
      throw ValidationError("invalid blocklist pattern '" + p + "'");
    }
  }
  std::vector<LeakageViolation> violations;
  for (const auto& name : feature_names) {
    for (std::size_t i = 0; i < patterns.size(); ++i) {
      if (std::regex_search(name, patterns[i])) {
        violations.push_back({name, blocklist[i]});
        break;
      }
    }
  }
  return violations;
}

void enforce_no_leakage(std::span<const std::string> feature_names,
                        std::span<const std::string> blocklist) {
  auto violations = leakage_guard(feature_names, blocklist);
  if (!violations.empty()) throw LeakageError(std::move(violations));
}

std::string Scaler::id() const {
  const nlohmann::json doc{{"columns", columns}, {"means", means}, {"sds", sds}};
  return sha256_hex(doc.dump()).substr(0, 16);
}

namespace {

double numeric_value(const PatientRecord& r, const ColumnSpec& c) {
  if (c.field == FieldId::Extra) {
    const auto it = r.extras.find(c.name);
    if (it == r.extras.end()) throw ValidationError("record " + r.patient_id + " lacks " + c.name);
    return it->second;
  }
  return static_cast<double>(int_value(r, c.field));
}

std::vector<std::string> effective_blocklist(const Schema& schema) {
  auto list = canonical_blocklist();
  for (const auto& p : schema.postop_blocklist) {
    if (std::find(list.begin(), list.end(), p) == list.end()) list.push_back(p);
  }
  return list;
}

}  // namespace

Scaler fit_scaler(std::span<const PatientRecord> train, const Schema& schema) {
  if (train.empty()) throw ValidationError("cannot fit a scaler on an empty training set");
  Scaler scaler;
  for (const auto* c : schema.feature_columns()) {
    if (!c->standardize) continue;
    double mean = 0.0;
    for (const auto& r : train) mean += numeric_value(r, *c);
    mean /= static_cast<double>(train.size());
    double ss = 0.0;
    for (const auto& r : train) {
      const double d = numeric_value(r, *c) - mean;
      ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(train.size()));
    if (!(sd > 0.0) || !std::isfinite(sd)) sd = 1.0;
    scaler.columns.push_back(c->name);
    scaler.means.push_back(mean);
    scaler.sds.push_back(sd);
  }
  return scaler;
}

FeatureVector encode(const PatientRecord& r, const Schema& schema, const Scaler& scaler) {
  FeatureVector fv;
  fv.scaling_state_id = scaler.id();
  for (const auto* c : schema.feature_columns()) {
    double value = 0.0;
    switch (c->type) {
      case ColumnType::Boolean:
        value = field_text(r, *c) == "1" ? 1.0 : 0.0;
        break;
      case ColumnType::Category:
        value = schema.category_code(*c, field_text(r, *c));
        break;
      case ColumnType::Integer:
      case ColumnType::Real:
        value = numeric_value(r, *c);
        break;
    }
    if (c->standardize) {
      const auto it = std::find(scaler.columns.begin(), scaler.columns.end(), c->name);
      if (it == scaler.columns.end()) {
        throw ValidationError("scaler was not fitted for column " + c->name);
      }
      const auto k = static_cast<std::size_t>(it - scaler.columns.begin());
      value = (value - scaler.means[k]) / scaler.sds[k];
    }
    fv.values.push_back(value);
    fv.feature_names.push_back(c->name);
  }
  return fv;
}

Dataset encode_dataset(std::span<const PatientRecord> records, const Schema& schema,
                       const Scaler& scaler) {
  Dataset ds;
  ds.feature_names = schema.feature_names();
  enforce_no_leakage(ds.feature_names, effective_blocklist(schema));
  ds.x = Matrix(records.size(), ds.feature_names.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const auto label = derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid);
    if (!label) throw ValidationError("record " + r.patient_id + " is unlabeled");
    const auto fv = encode(r, schema, scaler);
    std::copy(fv.values.begin(), fv.values.end(), ds.x.row(i).begin());
    ds.y.push_back(*label);
    ds.case_ids.push_back(r.patient_id);
  }
  return ds;
}

CohortSplit stratified_split(std::span<const std::string> ids, std::span<const int> labels,
                             double test_fraction, std::uint64_t seed) {
  if (ids.size() != labels.size()) throw ValidationError("split: ids and labels differ in length");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ValidationError("split: test fraction must lie in (0, 1)");
  }
  std::array<std::vector<std::string>, 2> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("split: labels must be 0 or 1");
    by_class[static_cast<std::size_t>(labels[i])].push_back(ids[i]);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw ValidationError("split: class " + std::to_string(c) + " has " +
                            std::to_string(by_class[c].size()) + " member(s); cannot stratify");
    }
    std::sort(by_class[c].begin(), by_class[c].end());
    if (std::adjacent_find(by_class[c].begin(), by_class[c].end()) != by_class[c].end()) {
      throw ValidationError("split: duplicate case id");
    }
  }

  // Largest-remainder allocation of round(fraction * n) test slots.
  const auto n = static_cast<double>(ids.size());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * n));
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t allocated = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double exact = test_fraction * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - std::floor(exact);
    allocated += quota[c];
  }
  while (allocated < n_test) {
    const std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
    ++quota[c];
    remainder[c] = -1.0;
    ++allocated;
  }
  for (std::size_t c = 0; c < 2; ++c) {
    quota[c] = std::clamp<std::size_t>(quota[c], 1, by_class[c].size() - 1);
  }

  std::mt19937_64 rng(seed);
  CohortSplit split;
  split.seed = seed;
  std::array<std::size_t, 2> test_counts{};
  std::array<std::size_t, 2> train_counts{};
  for (std::size_t c = 0; c < 2; ++c) {
    auto members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (i < quota[c]) {
        split.test_ids.push_back(members[i]);
        ++test_counts[c];
      } else {
        split.train_ids.push_back(members[i]);
        ++train_counts[c];
      }
    }
  }
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  split.label_prevalence_train =
      static_cast<double>(train_counts[1]) / static_cast<double>(split.train_ids.size());
  split.label_prevalence_test =
      static_cast<double>(test_counts[1]) / static_cast<double>(split.test_ids.size());
  return split;
}

CohortSplit stratified_split(std::span<const PatientRecord> records, const Schema& schema,
                             double test_fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& r : records) {
    const auto label = derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid);
    if (!label) throw ValidationError("split: record " + r.patient_id + " is unlabeled");
    ids.push_back(r.patient_id);
    labels.push_back(*label);
  }
  return stratified_split(ids, labels, test_fraction, seed);
}

std::vector<PatientRecord> select(std::span<const PatientRecord> records,
                                  std::span<const std::string> ids) {
  std::map<std::string_view, const PatientRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.patient_id, &r);
  std::vector<PatientRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("unknown case id " + id);
    out.push_back(*it->second);
  }
  return out;
}

std::vector<PatientRecord> labeled_only(std::span<const PatientRecord> records,
                                        const Schema& schema) {
  std::vector<PatientRecord> out;
  for (const auto& r : records) {
    if (derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid)) out.push_back(r);
  }
  return out;
}

}  // namespace crs::cohort
