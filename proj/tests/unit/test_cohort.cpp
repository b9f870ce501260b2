#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "crs/checksum.hpp"
#include "crs/cohort.hpp"
#include "crs/csv.hpp"
#include "crs/synthetic.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace crs;
using namespace crs::cohort;
using testing::schema;

namespace {

std::vector<PatientRecord> synth(int n, std::uint64_t seed) {
  return generate_synthetic(n, seed, default_generator_config(), schema());
}

// Replaces one field of one data row (0-based) in canonical CSV text.
std::string blank_field(const std::string& csv_text, std::size_t row, const std::string& column) {
  auto table = csv::parse(csv_text);
  auto col = std::find(table.header.begin(), table.header.end(), column) - table.header.begin();
  table.rows[row][static_cast<std::size_t>(col)] = "";
  std::string out = csv::format_row(table.header) + "\n";
  for (const auto& r : table.rows) out += csv::format_row(r) + "\n";
  return out;
}

}  // namespace

TEST_CASE("csv reader handles quoting, CRLF and BOM") {
  auto t = csv::parse("\xEF\xBB\xBF" "a,b,c\r\n1,\"x,y\",\"say \"\"hi\"\"\"\r\n\r\n");
  REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "say \"hi\"");
  CHECK(csv::escape_field("plain") == "plain");
  CHECK(csv::escape_field("a,b") == "\"a,b\"");
  CHECK(csv::escape_field("q\"") == "\"q\"\"\"");
}

TEST_CASE("schema loads with a stable checksum and feature order") {
  const auto& s = schema();
  CHECK(s.checksum == sha256_file(default_schema_path()));
  CHECK(s.checksum.size() == 64);
  auto names = s.feature_names();
  CHECK(names.front() == "SNOT22_BLN_TOTAL");
  CHECK(std::find(names.begin(), names.end(), "SNOT22_6MO_TOTAL") == names.end());
  CHECK(s.parse_boolean("Yes") == true);
  CHECK(s.parse_boolean("0") == false);
  CHECK_FALSE(s.parse_boolean("maybe").has_value());
  CHECK(s.is_placeholder("N/A"));
  const auto& sex = s.column(FieldId::Sex);
  CHECK(s.category_code(sex, "Female") == 0);
  CHECK(s.category_code(sex, "Male") == 1);
  CHECK_THROWS_AS(s.category_code(sex, "Other"), ValidationError);
}

TEST_CASE("schema rejects malformed descriptors") {
  CHECK_THROWS_AS(parse_schema("{"), ValidationError);
  CHECK_THROWS_AS(parse_schema("{\"schema\":\"x\"}"), ValidationError);
}

TEST_CASE("derive_label at the MCID boundary") {
  CHECK(derive_label(60, 51) == 1);
  CHECK(derive_label(60, 52) == 0);
  CHECK(derive_label(30, 45) == 0);
  CHECK_FALSE(derive_label(60, std::nullopt).has_value());
}

TEST_CASE("leakage guard") {
  auto bl = canonical_blocklist();
  std::vector<std::string> ok{"SNOT22_BLN_TOTAL", "Age"};
  CHECK(leakage_guard(ok, bl).empty());

  std::vector<std::string> follow{"SNOT22_6MO_TOTAL"};
  CHECK(leakage_guard(follow, bl).size() == 1);

  std::vector<std::string> mixed{"POSTOP_HUV", "Age", "BLN_CT_TOTAL"};
  auto v = leakage_guard(mixed, bl);
  REQUIRE_FALSE(v.empty());
  for (const auto& x : v) CHECK(x.feature == "POSTOP_HUV");

  CHECK_THROWS_AS(enforce_no_leakage(mixed, bl), LeakageError);
  try {
    enforce_no_leakage(mixed, bl);
  } catch (const LeakageError& e) {
    CHECK(e.code() == ExitCode::Leakage);
    CHECK(std::string(e.what()).find("POSTOP_HUV") != std::string::npos);
  }

  // Every canonical feature of the shipped schema is clean.
  auto names = schema().feature_names();
  CHECK(leakage_guard(names, bl).empty());
  for (const char* bad : {"snot22_post_op", "OLF_6MO", "FOLLOWUP_SCORE", "Q_FU", "POST_HUV"}) {
    std::vector<std::string> one{bad};
    CHECK_MESSAGE(!leakage_guard(one, bl).empty(), bad);
  }
}

TEST_CASE("parse_cohort round trip and rejections") {
  auto records = synth(10, 3);
  auto text = serialize_cohort(records, schema());
  auto parsed = parse_cohort(text, schema());
  CHECK(parsed.rejections.empty());
  CHECK(parsed.records == records);

  auto header_only = text.substr(0, text.find('\n') + 1);
  auto empty = parse_cohort(header_only, schema());
  CHECK(empty.records.empty());
  CHECK(empty.rejections.empty());

  auto damaged = blank_field(blank_field(text, 2, "BLN_CT_TOTAL"), 7, "BLN_CT_TOTAL");
  auto partial = parse_cohort(damaged, schema());
  CHECK(partial.records.size() == 8);
  REQUIRE(partial.rejections.size() == 2);
  CHECK(partial.rejections[0].row_index == 3);
  CHECK(partial.rejections[1].row_index == 8);
  CHECK(partial.rejections[0].column == "BLN_CT_TOTAL");

  auto table = csv::parse(text);
  auto no_age = text;
  no_age.replace(no_age.find(",Age,"), 5, ",AGE_X,");
  CHECK_THROWS_WITH_AS(parse_cohort(no_age, schema()), doctest::Contains("Age"), ValidationError);
}

TEST_CASE("parse_cohort rejects malformed numbers and out-of-range values") {
  auto records = synth(4, 5);
  auto text = serialize_cohort(records, schema());
  auto table = csv::parse(text);
  auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(table.header.begin(), table.header.end(), name) -
                                    table.header.begin());
  };
  table.rows[0][col("Age")] = "4o";
  table.rows[1][col("SNOT22_BLN_TOTAL")] = "111";
  table.rows[2][col("SEX")] = "Unknown";
  std::string out = csv::format_row(table.header) + "\n";
  for (const auto& r : table.rows) out += csv::format_row(r) + "\n";
  auto parsed = parse_cohort(out, schema());
  CHECK(parsed.records.size() == 1);
  CHECK(parsed.rejections.size() == 3);
}

TEST_CASE("encode: codes, zero comorbidities and standardization") {
  PatientRecord r;
  r.patient_id = "P1";
  r.snot22_baseline = 60;
  r.age = 50;
  r.sex = Sex::Male;
  r.ct_total = 10;
  r.endoscopy_total = 5;
  r.insurance = schema().column(FieldId::Insurance).categories.front();
  r.income_bracket = schema().column(FieldId::Income).categories.front();
  r.race = schema().column(FieldId::Race).categories.front();

  Scaler scaler;
  for (const auto* c : schema().feature_columns()) {
    if (!c->standardize) continue;
    scaler.columns.push_back(c->name);
    scaler.means.push_back(c->field == FieldId::Snot22Baseline ? 50.0 : 0.0);
    scaler.sds.push_back(c->field == FieldId::Snot22Baseline ? 20.0 : 1.0);
  }
  auto fv = encode(r, schema(), scaler);
  REQUIRE(fv.values.size() == fv.feature_names.size());
  CHECK(fv.feature_names == schema().feature_names());
  auto at = [&](const std::string& n) {
    return fv.values[static_cast<std::size_t>(
        std::find(fv.feature_names.begin(), fv.feature_names.end(), n) - fv.feature_names.begin())];
  };
  CHECK(at("SNOT22_BLN_TOTAL") == doctest::Approx(0.5));
  CHECK(at("SEX") == 1.0);
  for (const char* c : {"DEPRESSION", "FIBROMYALGIA", "SMOKER", "COPD", "ASTHMA", "OSA", "DIABETES",
                        "GERD", "ASA_INTOLERANCE"})
    CHECK(at(c) == 0.0);
  CHECK(fv.scaling_state_id == scaler.id());

  r.sex = Sex::Female;
  CHECK(encode(r, schema(), scaler).values[static_cast<std::size_t>(
            std::find(fv.feature_names.begin(), fv.feature_names.end(), "SEX") -
            fv.feature_names.begin())] == 0.0);

  r.race = "not-a-race";
  CHECK_THROWS_AS(encode(r, schema(), scaler), ValidationError);
}

TEST_CASE("scaler fits on training rows only") {
  auto records = synth(50, 9);
  auto scaler = fit_scaler(records, schema());
  double sum = 0;
  for (const auto& r : records) sum += r.snot22_baseline;
  auto idx = static_cast<std::size_t>(
      std::find(scaler.columns.begin(), scaler.columns.end(), "SNOT22_BLN_TOTAL") -
      scaler.columns.begin());
  REQUIRE(idx < scaler.columns.size());
  CHECK(scaler.means[idx] == doctest::Approx(sum / 50));
  CHECK(scaler.id() == fit_scaler(records, schema()).id());
  auto shifted = records;
  shifted[0].snot22_baseline += 1;
  CHECK(scaler.id() != fit_scaler(shifted, schema()).id());
  CHECK_THROWS_AS(fit_scaler(std::vector<PatientRecord>{}, schema()), ValidationError);
}

TEST_CASE("stratified split") {
  SUBCASE("10 balanced cases") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) {
      ids.push_back("C" + std::to_string(i));
      labels.push_back(i % 2);
    }
    auto s = stratified_split(ids, labels, 0.2, 1);
    REQUIRE(s.test_ids.size() == 2);
    int ones = 0;
    for (const auto& id : s.test_ids) ones += labels[static_cast<std::size_t>(std::stoi(id.substr(1)))];
    CHECK(ones == 1);
  }
  SUBCASE("524 synthetic cases") {
    auto records = synth(524, 2);
    auto a = stratified_split(records, schema(), 0.2, 11);
    auto b = stratified_split(records, schema(), 0.2, 11);
    CHECK(a.test_ids.size() == 105);
    CHECK(a.train_ids.size() == 419);
    CHECK(a.test_ids == b.test_ids);
    CHECK(std::is_sorted(a.test_ids.begin(), a.test_ids.end()));
    std::set<std::string> all(a.train_ids.begin(), a.train_ids.end());
    for (const auto& id : a.test_ids) CHECK(all.insert(id).second);
    CHECK(all.size() == 524);
    // Within one case of proportional.
    double expected_pos = a.label_prevalence_train * 105;
    CHECK(std::abs(a.label_prevalence_test * 105 - expected_pos) <= 1.0 + 1e-9);
    auto c = stratified_split(records, schema(), 0.2, 12);
    CHECK(c.test_ids != a.test_ids);
  }
  SUBCASE("errors") {
    std::vector<std::string> ids{"a", "b", "c"};
    std::vector<int> one_zero{0, 1, 1};
    CHECK_THROWS_AS(stratified_split(ids, one_zero, 0.2, 1), ValidationError);
    std::vector<std::string> dup{"a", "a", "b", "c"};
    std::vector<int> lab{0, 0, 1, 1};
    CHECK_THROWS_AS(stratified_split(dup, lab, 0.5, 1), ValidationError);
    std::vector<std::string> ids4{"a", "b", "c", "d"};
    CHECK_THROWS_AS(stratified_split(ids4, lab, 1.0, 1), ValidationError);
  }
}

TEST_CASE("synthetic generator") {
  auto one = synth(1, 4);
  REQUIRE(one.size() == 1);
  CHECK_NOTHROW(validate_record(one[0], schema()));
  CHECK(one[0].snot22_6mo.has_value());

  auto a = serialize_cohort(synth(524, 7), schema());
  auto b = serialize_cohort(synth(524, 7), schema());
  CHECK(a == b);
  CHECK(a != serialize_cohort(synth(524, 8), schema()));
  CHECK_THROWS_AS(synth(0, 1), ValidationError);

  auto bad = default_generator_config();
  bad.ct_total.hi = 40;
  CHECK_THROWS_AS(generate_synthetic(5, 1, bad, schema()), ValidationError);

  auto records = synth(524, 2);
  for (const auto& r : records) CHECK_NOTHROW(validate_record(r, schema()));
}

TEST_CASE("synthetic prevalence calibration over 100 seeds") {
  int in_range = 0;
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto records = synth(524, seed);
    int pos = 0;
    for (const auto& r : records) pos += *derive_label(r.snot22_baseline, r.snot22_6mo);
    double p = pos / 524.0;
    mean += p / 100;
    if (p >= 0.76 && p <= 0.86) ++in_range;
    if (seed == 2) {
      CHECK(p >= 0.76);
      CHECK(p <= 0.86);
    }
  }
  CHECK(mean >= 0.80);
  CHECK(mean <= 0.82);
  CHECK(in_range >= 95);
}

TEST_CASE("select and labeled_only") {
  auto records = synth(20, 1);
  records[3].snot22_6mo.reset();
  CHECK(labeled_only(records, schema()).size() == 19);
  std::vector<std::string> ids{records[5].patient_id, records[0].patient_id};
  auto picked = select(records, ids);
  REQUIRE(picked.size() == 2);
  CHECK(picked[0] == records[5]);
  std::vector<std::string> missing{"nope"};
  CHECK_THROWS_AS(select(records, missing), ValidationError);
  CHECK_THROWS_AS(encode_dataset(records, schema(), fit_scaler(records, schema())), ValidationError);
}
