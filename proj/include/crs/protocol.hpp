#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "crs/confidence.hpp"
#include "crs/rag.hpp"
#include "crs/record.hpp"
#include "crs/schema.hpp"
#include "json.hpp"

namespace crs::protocol {

struct ModelIdentity {
  std::string vendor;
  std::string model_id;
  std::string access_date;  // ISO date

  // "vendor/model_id (date)"; throws ValidationError if any part is empty.
  std::string display() const;
};

struct DecodingParams {
  double temperature = 0.3;
  double top_p = 0.9;
  int max_tokens = 1024;
  std::optional<std::uint64_t> seed;

  // Values outside the default ranges are allowed but reported.
  std::vector<std::string> warnings() const;
  // Throws ValidationError for values no client can honor.
  void validate() const;
};

enum class ParserStatus { Ok, MissingPrediction, MissingConfidence, Malformed };

std::string_view to_string(ParserStatus status);

struct ParsedOutput {
  std::optional<int> prediction;
  std::optional<Confidence> confidence;
  ParserStatus status = ParserStatus::MissingPrediction;
};

struct Replicate {
  int index = 0;
  std::string raw_text;
  ParsedOutput parsed;
  std::optional<std::string> error;  // transport failure text, if any
};

struct Aggregate {
  int final_label = 0;
  double mean_proxy = 0.0;
  std::size_t votes_0 = 0;
  std::size_t votes_1 = 0;
  std::size_t valid = 0;
  bool tie_broken = false;    // vote tie resolved by the mean proxy
  bool residual_tie = false;  // mean proxy exactly 0, conservative 0
  bool unparseable = false;   // no valid replicate, conservative 0

  bool operator==(const Aggregate&) const = default;
};

struct TrialTranscript {
  std::string case_id;
  ModelIdentity model;
  std::string prompt_hash;
  DecodingParams decoding;
  std::vector<Replicate> replicates;
  Aggregate aggregate;
  std::string timestamp;
};

std::string_view canonical_prompt();
std::string_view output_format_block();

// "NAME: value" per feature column in schema order after a CASE_ID line. The
// follow-up SNOT-22 column is never rendered.
std::string serialize_case(const PatientRecord& record, const Schema& schema);

struct Prompt {
  std::string text;
  std::string hash;  // SHA-256 of text
};

// Throws ValidationError when no case blocks are given.
Prompt build_prompt(std::span<const std::string> case_blocks,
                    std::string_view template_text = canonical_prompt(),
                    std::span<const rag::Passage> passages = {});

// Total: never throws; failures are reported through the status.
ParsedOutput parse_response(std::string_view raw) noexcept;

// Signed confidence: +v for prediction 1, -v for 0, v from 1.0 (very confident)
// down to 0.0 (not at all confident) in steps of 0.25.
double proxy_score(int prediction, Confidence confidence);

// Majority vote over Ok replicates; ties go to the sign of the mean proxy and
// residual ties or no valid replicates give 0.
Aggregate aggregate_replicates(std::span<const ParsedOutput> outputs);

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompletionRequest {
  std::string_view prompt;
  std::string_view prompt_hash;
  const DecodingParams& decoding;
  int replicate_index = 0;
};

// Single request/response contract. Implementations throw TransportError for
// recoverable transport failures; anything else propagates.
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
};

// Directory of <prompt_hash>.json files holding responses keyed by replicate index.
class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path directory);

  std::optional<std::string> lookup(std::string_view prompt_hash, int replicate_index) const;
  void record(std::string_view prompt_hash, int replicate_index, std::string_view text);
  const std::filesystem::path& directory() const { return directory_; }

 private:
  std::filesystem::path file_for(std::string_view prompt_hash) const;

  std::filesystem::path directory_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::map<int, std::string>, std::less<>> cache_;
};

class ReplayClient : public ModelClient {
 public:
  explicit ReplayClient(const ReplayStore& store) : store_(store) {}
  // Throws ReplayMissError naming the hash.
  std::string complete(const CompletionRequest& request) override;

 private:
  const ReplayStore& store_;
};

// Forwards to a live client and writes every successful response to the store.
class RecordingClient : public ModelClient {
 public:
  RecordingClient(ModelClient& live, ReplayStore& store) : live_(live), store_(store) {}
  std::string complete(const CompletionRequest& request) override;

 private:
  ModelClient& live_;
  ReplayStore& store_;
};

inline constexpr int kAuditSchemaVersion = 1;

// Append-only JSON Lines file; the first line is a schema header.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path);
  void append(const TrialTranscript& transcript);
  std::size_t appended() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::size_t appended_ = 0;
};

std::vector<TrialTranscript> read_audit_log(const std::filesystem::path& path);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

using Clock = std::function<std::string()>;

// UTC wall clock in ISO-8601.
std::string utc_timestamp();

struct TrialRequest {
  std::string case_id;
  Prompt prompt;
};

// Collects k replicates, parses and aggregates them, and appends the
// transcript to the log (when given) before returning.
TrialTranscript run_trial(ModelClient& client, const ModelIdentity& model,
                          const TrialRequest& request, const DecodingParams& decoding, int k,
                          AuditLog* log, const Clock& clock = utc_timestamp,
                          const RetryPolicy& retry = {});

// Runs trials with at most `parallelism` in flight; results keep input order.
std::vector<TrialTranscript> run_trials(ModelClient& client, const ModelIdentity& model,
                                        std::span<const TrialRequest> requests,
                                        const DecodingParams& decoding, int k, AuditLog* log,
                                        std::size_t parallelism = 1,
                                        const Clock& clock = utc_timestamp,
                                        const RetryPolicy& retry = {});

nlohmann::json to_json(const TrialTranscript& transcript);
TrialTranscript transcript_from_json(const nlohmann::json& doc);

}  // namespace crs::protocol
