#include <fstream>
#include <sstream>

#include "crs/checksum.hpp"
#include "crs/errors.hpp"
#include "crs/protocol.hpp"

namespace crs::protocol {

namespace fs = std::filesystem;
using nlohmann::json;

ReplayStore::ReplayStore(fs::path directory) : directory_(std::move(directory)) {}

fs::path ReplayStore::file_for(std::string_view prompt_hash) const {
  if (prompt_hash.empty() ||
      prompt_hash.find_first_not_of("0123456789abcdef") != std::string_view::npos)
    throw ValidationError("invalid prompt hash '" + std::string(prompt_hash) + "'");
  return directory_ / (std::string(prompt_hash) + ".json");
}

std::optional<std::string> ReplayStore::lookup(std::string_view prompt_hash,
                                               int replicate_index) const {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(prompt_hash);
  if (it == cache_.end()) {
    std::map<int, std::string> responses;
    const auto path = file_for(prompt_hash);
    if (fs::exists(path)) {
      try {
        const auto doc = json::parse(read_file(path));
        for (const auto& [key, value] : doc.at("responses").items())
          responses.emplace(std::stoi(key), value.get<std::string>());
      } catch (const json::exception& e) {
        throw ValidationError("corrupt replay file " + path.string() + ": " + e.what());
      }
    }
    it = cache_.emplace(std::string(prompt_hash), std::move(responses)).first;
  }
  auto r = it->second.find(replicate_index);
  if (r == it->second.end()) return std::nullopt;
  return r->second;
}

void ReplayStore::record(std::string_view prompt_hash, int replicate_index, std::string_view text) {
  lookup(prompt_hash, replicate_index);  // warm the cache from disk
  std::lock_guard lock(mutex_);
  auto& responses = cache_[std::string(prompt_hash)];
  responses[replicate_index] = std::string(text);
  json doc{{"prompt_hash", prompt_hash}, {"responses", json::object()}};
  for (const auto& [index, body] : responses) doc["responses"][std::to_string(index)] = body;
  write_file(file_for(prompt_hash), doc.dump(2) + "\n");
}

std::string ReplayClient::complete(const CompletionRequest& request) {
  auto hit = store_.lookup(request.prompt_hash, request.replicate_index);
  if (!hit) throw ReplayMissError(std::string(request.prompt_hash), request.replicate_index);
  return *hit;
}

std::string RecordingClient::complete(const CompletionRequest& request) {
  std::string text = live_.complete(request);
  store_.record(request.prompt_hash, request.replicate_index, text);
  return text;
}

AuditLog::AuditLog(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_) && fs::file_size(path_) > 0) return;
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot create audit log " + path_.string());
  out << json{{"format", "crs-audit-log"}, {"schema_version", kAuditSchemaVersion}}.dump() << '\n';
}

void AuditLog::append(const TrialTranscript& transcript) {
  const std::string line = to_json(transcript).dump() + "\n";
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw ValidationError("cannot append to audit log " + path_.string());
  out << line;
  out.flush();
  ++appended_;
}

std::size_t AuditLog::appended() const {
  std::lock_guard lock(mutex_);
  return appended_;
}

std::vector<TrialTranscript> read_audit_log(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty audit log " + path.string());
  try {
    const auto header = json::parse(line);
    if (header.at("format") != "crs-audit-log" ||
        header.at("schema_version").get<int>() != kAuditSchemaVersion)
      throw ValidationError("unsupported audit log header in " + path.string());
  } catch (const json::exception& e) {
    throw ValidationError("bad audit log header in " + path.string() + ": " + e.what());
  }
  std::vector<TrialTranscript> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(transcript_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ValidationError("bad audit log line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace crs::protocol
