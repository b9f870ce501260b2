#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "crs/cohort.hpp"
#include "crs/metrics.hpp"
#include "crs/models.hpp"
#include "crs/protocol.hpp"
#include "crs/schema.hpp"
#include "json.hpp"

namespace crs::cli {

inline constexpr std::string_view kSoftwareVersion = "0.1.0";

// Entry point shared by the executable and in-process callers. Returns the
// process exit code (0, 2 validation, 3 leakage, 4 replay miss, 5 numeric).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// ---- artifacts ----

nlohmann::json to_json(const metrics::PredictionSet& predictions);
metrics::PredictionSet prediction_set_from_json(const nlohmann::json& doc);
metrics::PredictionSet load_predictions(const std::filesystem::path& path);

nlohmann::json to_json(const cohort::CohortSplit& split);
cohort::CohortSplit split_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const cohort::Scaler& scaler);

std::string render_markdown(const metrics::EvaluationReport& report);

// Paired report with both confusion matrices and a per-metric winner table.
nlohmann::json comparison_json(const metrics::PredictionSet& a, const metrics::PredictionSet& b,
                               const metrics::PairedComparison& comparison);
std::string render_comparison_markdown(const nlohmann::json& comparison);

// Live adapter: POSTs {"prompt", "temperature", "top_p", "max_tokens", "seed"}
// as JSON and reads the "text" field of the JSON reply.
class HttpJsonClient : public protocol::ModelClient {
 public:
  HttpJsonClient(std::string endpoint, std::string bearer_token = {});
  std::string complete(const protocol::CompletionRequest& request) override;

 private:
  std::string endpoint_;
  std::string token_;
};

// ---- pipeline ----

struct GenAiSource {
  std::string name;  // label in reports, e.g. "replay:claude"
  bool live = false;
  std::filesystem::path store;
  std::string endpoint;  // live only
  protocol::ModelIdentity identity;
  bool rag = false;
};

struct RunConfig {
  std::string run_id = "run";
  std::optional<std::uint64_t> seed;  // mandatory at validation
  std::filesystem::path cohort;       // empty: synthesize
  int synthetic_n = 524;
  std::filesystem::path schema;
  std::filesystem::path corpus;
  std::filesystem::path output_dir = "runs";
  double test_fraction = 0.2;
  std::vector<std::string> models;  // mlp, logreg, gnb, heuristic, replay:<name>, live:<name>
  std::map<std::string, GenAiSource> genai;
  std::string mlp_loss = "focal";
  double logreg_l2 = 1e-2;
  protocol::DecodingParams decoding;
  int k = 5;
  std::size_t rag_k = 5;
  std::size_t parallelism = 1;
  std::vector<double> thresholds = metrics::default_thresholds();
  std::size_t bootstrap_resamples = 2000;
  std::vector<std::pair<std::string, std::string>> comparisons;
  std::vector<std::string> importance_models;
  std::size_t importance_repeats = 20;
  std::vector<std::string> report_formats{"json", "markdown"};
};

// Relative paths resolve against base_dir.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
// Throws ValidationError on missing seed, missing paths or unknown models.
void validate_run_config(const RunConfig& config);

struct RunResult {
  std::filesystem::path run_dir;
  std::map<std::string, metrics::EvaluationReport> reports;
  std::map<std::string, metrics::PredictionSet> predictions;
  nlohmann::json manifest;
};

RunResult run_pipeline(const RunConfig& config, std::ostream& log);

// Builds the per-case prompt used by the genai stage.
protocol::Prompt case_prompt(const PatientRecord& record, const Schema& schema,
                             const rag::Bm25Index* index, std::size_t rag_k);

// Runs the genai protocol over records and returns the prediction set.
metrics::PredictionSet run_genai(protocol::ModelClient& client, const GenAiSource& source,
                                 std::span<const PatientRecord> records, const Schema& schema,
                                 const RunConfig& config, const rag::Bm25Index* index,
                                 protocol::AuditLog* log,
                                 const protocol::Clock& clock = protocol::utc_timestamp);

metrics::PredictionSet heuristic_predictions(std::span<const PatientRecord> records,
                                             const Schema& schema);

}  // namespace crs::cli
