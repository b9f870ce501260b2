#include <sstream>

#include "crs/checksum.hpp"
#include "crs/cli.hpp"
#include "crs/csv.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace crs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

const fs::path kFixtures = CRS_TEST_FIXTURES;

// Shipped schema plus one extra feature column with the given name.
fs::path leaky_schema(const testing::TempDir& dir, const std::string& column) {
  auto doc = json::parse(read_file(default_schema_path()));
  doc["columns"].push_back({{"name", column},
                            {"field", "extra"},
                            {"type", "real"},
                            {"required", false},
                            {"min", 0},
                            {"max", 1000}});
  auto path = dir / ("schema_" + column + ".json");
  write_file(path, doc.dump(2));
  return path;
}

json small_config(const fs::path& out_dir) {
  return {{"run_id", "t"},
          {"seed", 2},
          {"synthetic_n", 524},
          {"output_dir", out_dir.string()},
          {"models", {"logreg", "heuristic", "replay:claude"}},
          {"genai",
           {{"claude",
             {{"store", (kFixtures / "claude" / "replay").string()},
              {"vendor", "anthropic"},
              {"model_id", "claude-sonnet-4-5"},
              {"access_date", "2025-10-01"}}}}},
          {"k", 5},
          {"bootstrap_resamples", 200},
          {"comparisons", json::array({json::array({"logreg", "replay:claude"})})},
          {"importance", {{"models", {"logreg"}}, {"repeats", 3}}}};
}

}  // namespace

TEST_CASE("synth writes the requested cohort deterministically") {
  testing::TempDir dir;
  auto a = dir / "a.csv", b = dir / "b.csv";
  auto r = invoke({"synth", "--n", "524", "--seed", "7", "--out", a.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("prevalence") != std::string::npos);
  CHECK(csv::parse(read_file(a)).rows.size() == 524);
  REQUIRE(invoke({"synth", "--n", "524", "--seed", "7", "--out", b.string()}).code == 0);
  CHECK(read_file(a) == read_file(b));

  CHECK(invoke({"synth", "--n", "524", "--seed", "7", "--out", a.string()}).code == 2);
  CHECK(invoke({"synth", "--n", "10", "--seed", "7", "--out", a.string(), "--force"}).code == 0);
  CHECK(csv::parse(read_file(a)).rows.size() == 10);
  CHECK(invoke({"synth", "--n", "0", "--seed", "7", "--out", (dir / "z.csv").string()}).code == 2);
  CHECK(invoke({"synth", "--seed", "7"}).code == 2);
}

TEST_CASE("stepwise commands produce a consistent evaluation") {
  testing::TempDir dir;
  auto cohort = (dir / "cohort.csv").string();
  REQUIRE(invoke({"synth", "--n", "200", "--seed", "3", "--out", cohort}).code == 0);
  auto pre = invoke({"preprocess", "--cohort", cohort, "--seed", "3", "--out-dir", dir.path().string()});
  REQUIRE(pre.code == 0);
  auto split = (dir / "split.json").string();
  auto split_doc = json::parse(read_file(split));
  CHECK(split_doc["test_ids"].size() == 40);

  auto model = (dir / "lr.json").string();
  REQUIRE(invoke({"train", "--model", "logreg", "--cohort", cohort, "--split", split, "--seed", "3",
               "--out", model})
              .code == 0);
  auto preds = (dir / "lr_pred.json").string();
  REQUIRE(invoke({"predict", "--model", model, "--cohort", cohort, "--split", split, "--out", preds})
              .code == 0);
  auto h = (dir / "h_pred.json").string();
  REQUIRE(invoke({"predict", "--model", "heuristic", "--cohort", cohort, "--split", split, "--out", h})
              .code == 0);
  CHECK(cli::load_predictions(preds).size() == 40);

  auto ev = invoke({"evaluate", "--predictions", preds, "--out", (dir / "lr_report").string(),
                 "--bootstrap", "200", "--seed", "1"});
  REQUIRE(ev.code == 0);
  CHECK(fs::exists(dir / "lr_report.json"));
  CHECK(fs::exists(dir / "lr_report.md"));

  auto self = invoke({"compare", "--a", preds, "--b", preds, "--out", (dir / "self").string(),
                   "--bootstrap", "200", "--seed", "1"});
  REQUIRE(self.code == 0);
  auto doc = json::parse(read_file(dir / "self.json"));
  CHECK(doc["tests"]["delong"]["p_value"] == 1.0);
  CHECK(doc["tests"]["mcnemar"]["p_value"] == 1.0);

  // Disjoint case ids cannot be paired.
  auto other = json::parse(read_file(preds));
  for (auto& c : other["cases"]) c["case_id"] = "X" + c["case_id"].get<std::string>();
  write_file(dir / "other.json", other.dump());
  CHECK(invoke({"compare", "--a", preds, "--b", (dir / "other.json").string(), "--out",
             (dir / "bad").string(), "--seed", "1"})
            .code == 2);

  auto imp = invoke({"importance", "--model", model, "--cohort", cohort, "--split", split,
                  "--repeats", "3", "--seed", "1", "--out", (dir / "imp").string()});
  CHECK(imp.code == 0);
  CHECK(fs::exists(dir / "imp.json"));

  auto rag = invoke({"rag-build", "--out", (dir / "index.json").string(), "--query", "polyps", "--k", "3"});
  CHECK(rag.code == 0);
}

TEST_CASE("leaky schemas abort with exit code 3") {
  testing::TempDir dir;
  auto cohort = (dir / "cohort.csv").string();
  REQUIRE(invoke({"synth", "--n", "60", "--seed", "1", "--out", cohort}).code == 0);
  for (const std::string col : {"POSTOP_HUV", "SNOT22_6MO_EXTRA", "FOLLOWUP_SCORE"}) {
    auto schema = leaky_schema(dir, col);
    auto r = invoke({"preprocess", "--cohort", cohort, "--schema", schema.string(), "--seed", "1",
                  "--out-dir", dir.path().string()});
    CHECK(r.code == 3);
    CHECK(r.err.find(col) != std::string::npos);
  }
}

TEST_CASE("replay miss exits with code 4 naming the hash") {
  testing::TempDir dir;
  auto cohort = (dir / "cohort.csv").string();
  REQUIRE(invoke({"synth", "--n", "20", "--seed", "1", "--out", cohort}).code == 0);
  fs::create_directories(dir / "empty_store");
  auto r = invoke({"genai", "--mode", "replay", "--cohort", cohort, "--store",
                (dir / "empty_store").string(), "--vendor", "v", "--model-id", "m",
                "--access-date", "2025-10-01", "--audit-log", (dir / "audit.jsonl").string(),
                "--out", (dir / "p.json").string()});
  CHECK(r.code == 4);
  CHECK(r.err.find("prompt") != std::string::npos);
  bool has_hex = false;
  for (std::size_t i = 0; i + 64 <= r.err.size() && !has_hex; ++i)
    has_hex = r.err.find_first_not_of("0123456789abcdef", i) >= i + 64;
  CHECK(has_hex);
}

TEST_CASE("run config validation") {
  testing::TempDir dir;
  auto cfg = small_config(dir.path());
  cfg.erase("seed");
  write_file(dir / "no_seed.json", cfg.dump());
  CHECK(invoke({"run", "--config", (dir / "no_seed.json").string()}).code == 2);

  auto unknown = small_config(dir.path());
  unknown["surprise"] = 1;
  write_file(dir / "unknown.json", unknown.dump());
  CHECK(invoke({"run", "--config", (dir / "unknown.json").string()}).code == 2);

  auto bad_model = small_config(dir.path());
  bad_model["models"] = {"svm"};
  write_file(dir / "bad_model.json", bad_model.dump());
  CHECK(invoke({"run", "--config", (dir / "bad_model.json").string()}).code == 2);
}

TEST_CASE("full run is reproducible and reproduces the replay fixture") {
  testing::TempDir dir;
  write_file(dir / "run.json", small_config(dir.path()).dump(2));
  auto first = invoke({"run", "--config", (dir / "run.json").string(), "--run-id", "one"});
  REQUIRE_MESSAGE(first.code == 0, first.err);
  auto second = invoke({"run", "--config", (dir / "run.json").string(), "--run-id", "two"});
  REQUIRE(second.code == 0);

  for (const char* rel : {"predictions/logreg.json", "predictions/replay_claude.json",
                          "reports/logreg.json", "reports/replay_claude.json", "split.json",
                          "scaler.json", "reports/compare_logreg_vs_replay_claude.json",
                          "reports/importance_logreg.json", "cohort.csv"}) {
    REQUIRE_MESSAGE(fs::exists(dir / "one" / rel), rel);
    CHECK_MESSAGE(read_file(dir / "one" / rel) == read_file(dir / "two" / rel), rel);
  }
  CHECK(fs::exists(dir / "one" / "manifest.json"));
  CHECK(fs::exists(dir / "one" / "summary.md"));

  auto report = json::parse(read_file(dir / "one" / "reports" / "replay_claude.json"));
  const auto& cm = report["confusion_matrix"];
  CHECK(cm["tn"] == 6);
  CHECK(cm["fp"] == 14);
  CHECK(cm["fn"] == 3);
  CHECK(cm["tp"] == 82);

  auto manifest = json::parse(read_file(dir / "one" / "manifest.json"));
  CHECK(manifest["schema_checksum"] == sha256_file(default_schema_path()));
  auto split = json::parse(read_file(dir / "one" / "split.json"));
  CHECK(split["test_ids"].size() == 105);

  // A different seed changes the split.
  auto third = invoke({"run", "--config", (dir / "run.json").string(), "--run-id", "three",
                    "--seed", "5"});
  if (third.code == 0)
    CHECK(read_file(dir / "three" / "split.json") != read_file(dir / "one" / "split.json"));
  else
    CHECK(third.code == 4);  // the stored fixture only covers the seed-2 test cases
}
