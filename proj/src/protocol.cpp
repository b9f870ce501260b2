#include "crs/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <ctime>
#include <future>
#include <thread>

#include "crs/checksum.hpp"
#include "crs/errors.hpp"

namespace crs::protocol {

namespace {

constexpr std::string_view kCanonicalPrompt =
    "Assume you are an expert Otolaryngologist with a special interest in Rhinology and "
    "endoscopic sinus surgery. I will provide you an excel sheet with different patients' "
    "clinical information. They have been suffering from CRS (chronic rhinosinusitis), and "
    "have undergone prior appropriate medical therapies, and are considering whether or not "
    "to have endoscopic sinus surgery. In this discussion, we have the baseline sinonasal "
    "quality of life measured by the SNOT22 score, and you need to predict what their result "
    "might be at 6-months postoperatively, should they choose to undergo surgery. Consider a "
    "decrease in total SNOT22 of more than 8.9 as clinically significant, and the surgery "
    "would be deemed successful. Based on the given data, provide your predictions in the "
    "form of 0 or 1. 0 means the patient would not be expected to achieve an 8.9 point "
    "improvement in SNOT22 and the surgery should not be recommended; 1 means the patient is "
    "expected to achieve greater than an 8.9 point improvement in total SNOT22 and the "
    "surgery should be recommended. Also complete the confidence column, your options would "
    "be very confident, Somewhat confident, Neutral, Somewhat unsure, Not at all confident. "
    "The data are in the uploaded csv file. All patients meet criteria to have surgery by "
    "current clinical guidelines, but we have observed from previous published data and our "
    "own experience that some patients will not achieve their expected outcome. Your job is "
    "to predict whether surgery should be recommended for these patients, or not.";

constexpr std::string_view kOutputFormat =
    "Answer with exactly these two lines:\n"
    "PREDICTION: 0 or 1\n"
    "CONFIDENCE: one of very confident, Somewhat confident, Neutral, Somewhat unsure, "
    "Not at all confident";

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = lower(c);
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

// Offsets just past "KEY:" for every occurrence of the key, allowing markdown
// decoration (asterisks, underscores, spaces) between key and colon.
std::vector<std::size_t> field_values(const std::string& haystack, std::string_view key) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while ((pos = haystack.find(key, pos)) != std::string::npos) {
    std::size_t i = pos + key.size();
    while (i < haystack.size() && (is_space(haystack[i]) || haystack[i] == '*' || haystack[i] == '_'))
      ++i;
    if (i < haystack.size() && haystack[i] == ':') out.push_back(i + 1);
    pos += key.size();
  }
  return out;
}

bool decoration(char c) {
  return is_space(c) || c == '*' || c == '_' || c == '"' || c == '\'' || c == '`' || c == '[' ||
         c == '(' || c == '<';
}

std::optional<int> prediction_at(const std::string& text, std::size_t i) {
  while (i < text.size() && decoration(text[i])) ++i;
  if (i >= text.size() || (text[i] != '0' && text[i] != '1')) return std::nullopt;
  std::size_t next = i + 1;
  if (next < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[next]);
    if (std::isalnum(c) || (c == '.' && next + 1 < text.size() &&
                                std::isdigit(static_cast<unsigned char>(text[next + 1]))))
      return std::nullopt;
  }
  return text[i] - '0';
}

std::optional<Confidence> confidence_at(const std::string& text, std::size_t i) {
  std::size_t end = text.find('\n', i);
  if (end == std::string::npos) end = text.size();
  std::string norm;
  bool pending_space = false;
  for (std::size_t j = i; j < end; ++j) {
    const char c = text[j];
    if (is_space(c)) {
      pending_space = !norm.empty();
      continue;
    }
    if (c == '*' || c == '"' || c == '\'' || c == '`' || c == '_') continue;
    if (pending_space) norm.push_back(' ');
    pending_space = false;
    norm.push_back(c);
  }
  while (!norm.empty() && (norm.back() == '.' || norm.back() == ',' || norm.back() == ';' ||
                           norm.back() == '!'))
    norm.pop_back();
  for (Confidence c : {Confidence::VeryConfident, Confidence::SomewhatConfident,
                       Confidence::Neutral, Confidence::SomewhatUnsure,
                       Confidence::NotAtAllConfident}) {
    if (norm == lowercase(to_phrase(c))) return c;
  }
  return std::nullopt;
}

ParsedOutput parse_impl(std::string_view raw) {
  const std::string text = lowercase(raw);
  ParsedOutput out;
  const auto predictions = field_values(text, "prediction");
  for (std::size_t at : predictions) {
    if (auto p = prediction_at(text, at)) {
      out.prediction = p;
      break;
    }
  }
  for (std::size_t at : field_values(text, "confidence")) {
    if (auto c = confidence_at(text, at)) {
      out.confidence = c;
      break;
    }
  }
  if (!out.prediction)
    out.status = predictions.empty() ? ParserStatus::MissingPrediction : ParserStatus::Malformed;
  else if (!out.confidence)
    out.status = ParserStatus::MissingConfidence;
  else
    out.status = ParserStatus::Ok;
  return out;
}

}  // namespace

std::string ModelIdentity::display() const {
  if (vendor.empty() || model_id.empty() || access_date.empty())
    throw ValidationError("model identity needs vendor, model id and access date");
  return vendor + "/" + model_id + " (" + access_date + ")";
}

std::vector<std::string> DecodingParams::warnings() const {
  std::vector<std::string> out;
  if (temperature < 0.1 || temperature > 0.5)
    out.push_back("temperature " + std::to_string(temperature) + " outside default range [0.1, 0.5]");
  if (top_p < 0.7 || top_p > 0.95)
    out.push_back("top_p " + std::to_string(top_p) + " outside default range [0.7, 0.95]");
  return out;
}

void DecodingParams::validate() const {
  if (!std::isfinite(temperature) || temperature < 0.0)
    throw ValidationError("temperature must be a nonnegative number");
  if (!std::isfinite(top_p) || top_p <= 0.0 || top_p > 1.0)
    throw ValidationError("top_p must be in (0, 1]");
  if (max_tokens < 1) throw ValidationError("max_tokens must be positive");
}

std::string_view to_string(ParserStatus status) {
  switch (status) {
    case ParserStatus::Ok: return "Ok";
    case ParserStatus::MissingPrediction: return "MissingPrediction";
    case ParserStatus::MissingConfidence: return "MissingConfidence";
    case ParserStatus::Malformed: return "Malformed";
  }
  return "Malformed";
}

std::string_view canonical_prompt() { return kCanonicalPrompt; }
std::string_view output_format_block() { return kOutputFormat; }

std::string serialize_case(const PatientRecord& record, const Schema& schema) {
  std::string out = "CASE_ID: " + record.patient_id + "\n";
  for (const auto* col : schema.feature_columns()) {
    if (col->field == FieldId::Snot22Followup) continue;
    if (col->field == FieldId::Extra && !record.extras.count(col->name)) continue;
    out += col->name;
    out += ": ";
    out += field_text(record, *col);
    out += '\n';
  }
  return out;
}

Prompt build_prompt(std::span<const std::string> case_blocks, std::string_view template_text,
                    std::span<const rag::Passage> passages) {
  if (case_blocks.empty()) throw ValidationError("build_prompt needs at least one case");
  std::string body(template_text);
  body += "\n\n";
  body += kOutputFormat;
  std::string text = rag::augment_prompt(body, passages);
  text += "\n\nPATIENT DATA:\n";
  for (std::size_t i = 0; i < case_blocks.size(); ++i) {
    if (i) text += '\n';
    text += case_blocks[i];
  }
  return {text, sha256_hex(text)};
}

ParsedOutput parse_response(std::string_view raw) noexcept {
  try {
    return parse_impl(raw);
  } catch (...) {
    return ParsedOutput{std::nullopt, std::nullopt, ParserStatus::Malformed};
  }
}

double proxy_score(int prediction, Confidence confidence) {
  double v = 0.0;
  switch (confidence) {
    case Confidence::VeryConfident: v = 1.0; break;
    case Confidence::SomewhatConfident: v = 0.75; break;
    case Confidence::Neutral: v = 0.5; break;
    case Confidence::SomewhatUnsure: v = 0.25; break;
    case Confidence::NotAtAllConfident: v = 0.0; break;
  }
  return prediction == 1 ? v : -v;
}

Aggregate aggregate_replicates(std::span<const ParsedOutput> outputs) {
  Aggregate agg;
  double sum = 0.0;
  for (const auto& o : outputs) {
    if (o.status != ParserStatus::Ok) continue;
    ++agg.valid;
    (*o.prediction == 1 ? agg.votes_1 : agg.votes_0)++;
    sum += proxy_score(*o.prediction, *o.confidence);
  }
  if (agg.valid == 0) {
    agg.unparseable = true;
    return agg;
  }
  agg.mean_proxy = sum / static_cast<double>(agg.valid);
  if (agg.votes_1 != agg.votes_0) {
    agg.final_label = agg.votes_1 > agg.votes_0 ? 1 : 0;
    return agg;
  }
  agg.tie_broken = true;
  if (agg.mean_proxy > 0.0)
    agg.final_label = 1;
  else if (agg.mean_proxy < 0.0)
    agg.final_label = 0;
  else
    agg.residual_tie = true;
  return agg;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

TrialTranscript run_trial(ModelClient& client, const ModelIdentity& model,
                          const TrialRequest& request, const DecodingParams& decoding, int k,
                          AuditLog* log, const Clock& clock, const RetryPolicy& retry) {
  if (k < 1) throw ValidationError("replicate count k must be at least 1");
  model.display();
  decoding.validate();
  TrialTranscript t;
  t.case_id = request.case_id;
  t.model = model;
  t.prompt_hash = request.prompt.hash;
  t.decoding = decoding;
  std::vector<ParsedOutput> parsed;
  for (int r = 0; r < k; ++r) {
    Replicate rep;
    rep.index = r;
    const CompletionRequest req{request.prompt.text, request.prompt.hash, decoding, r};
    auto backoff = retry.initial_backoff;
    const int attempts = std::max(1, retry.attempts);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      try {
        rep.raw_text = client.complete(req);
        rep.error.reset();
        break;
      } catch (const TransportError& e) {
        rep.error = e.what();
        if (attempt == attempts) break;
        if (retry.sleep)
          retry.sleep(backoff);
        else
          std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(backoff.count()) * retry.multiplier));
      }
    }
    if (rep.error)
      rep.parsed = ParsedOutput{std::nullopt, std::nullopt, ParserStatus::Malformed};
    else
      rep.parsed = parse_response(rep.raw_text);
    parsed.push_back(rep.parsed);
    t.replicates.push_back(std::move(rep));
  }
  t.aggregate = aggregate_replicates(parsed);
  t.timestamp = clock ? clock() : utc_timestamp();
  if (log) log->append(t);
  return t;
}

std::vector<TrialTranscript> run_trials(ModelClient& client, const ModelIdentity& model,
                                        std::span<const TrialRequest> requests,
                                        const DecodingParams& decoding, int k, AuditLog* log,
                                        std::size_t parallelism, const Clock& clock,
                                        const RetryPolicy& retry) {
  std::vector<TrialTranscript> out(requests.size());
  if (parallelism <= 1) {
    for (std::size_t i = 0; i < requests.size(); ++i)
      out[i] = run_trial(client, model, requests[i], decoding, k, log, clock, retry);
    return out;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++)
      out[i] = run_trial(client, model, requests[i], decoding, k, log, clock, retry);
  };
  std::vector<std::future<void>> workers;
  for (std::size_t w = 0; w < std::min(parallelism, requests.size()); ++w)
    workers.push_back(std::async(std::launch::async, worker));
  for (auto& f : workers) f.get();
  return out;
}

nlohmann::json to_json(const TrialTranscript& t) {
  using nlohmann::json;
  json reps = json::array();
  for (const auto& r : t.replicates) {
    json j{{"index", r.index},
           {"raw_text", r.raw_text},
           {"parser_status", to_string(r.parsed.status)},
           {"prediction", nullptr},
           {"confidence", nullptr},
           {"error", nullptr}};
    if (r.parsed.prediction) j["prediction"] = *r.parsed.prediction;
    if (r.parsed.confidence) j["confidence"] = to_string(*r.parsed.confidence);
    if (r.error) j["error"] = *r.error;
    reps.push_back(std::move(j));
  }
  json decoding{{"temperature", t.decoding.temperature},
                {"top_p", t.decoding.top_p},
                {"max_tokens", t.decoding.max_tokens},
                {"seed", nullptr}};
  if (t.decoding.seed) decoding["seed"] = *t.decoding.seed;
  const auto& a = t.aggregate;
  return json{{"case_id", t.case_id},
              {"model",
               {{"vendor", t.model.vendor},
                {"model_id", t.model.model_id},
                {"access_date", t.model.access_date},
                {"identity", t.model.display()}}},
              {"prompt_hash", t.prompt_hash},
              {"decoding", decoding},
              {"replicates", reps},
              {"aggregate",
               {{"final_label", a.final_label},
                {"mean_proxy", a.mean_proxy},
                {"vote_counts", {{"0", a.votes_0}, {"1", a.votes_1}}},
                {"valid_replicates", a.valid},
                {"tie_broken", a.tie_broken},
                {"residual_tie", a.residual_tie},
                {"unparseable", a.unparseable}}},
              {"timestamp", t.timestamp}};
}

TrialTranscript transcript_from_json(const nlohmann::json& doc) {
  try {
    TrialTranscript t;
    t.case_id = doc.at("case_id").get<std::string>();
    const auto& m = doc.at("model");
    t.model = {m.at("vendor").get<std::string>(), m.at("model_id").get<std::string>(),
               m.at("access_date").get<std::string>()};
    t.prompt_hash = doc.at("prompt_hash").get<std::string>();
    const auto& d = doc.at("decoding");
    t.decoding.temperature = d.at("temperature").get<double>();
    t.decoding.top_p = d.at("top_p").get<double>();
    t.decoding.max_tokens = d.at("max_tokens").get<int>();
    if (!d.at("seed").is_null()) t.decoding.seed = d.at("seed").get<std::uint64_t>();
    for (const auto& r : doc.at("replicates")) {
      Replicate rep;
      rep.index = r.at("index").get<int>();
      rep.raw_text = r.at("raw_text").get<std::string>();
      const auto status = r.at("parser_status").get<std::string>();
      bool known = false;
      for (auto s : {ParserStatus::Ok, ParserStatus::MissingPrediction,
                     ParserStatus::MissingConfidence, ParserStatus::Malformed}) {
        if (to_string(s) == status) {
          rep.parsed.status = s;
          known = true;
        }
      }
      if (!known) throw ValidationError("unknown parser status '" + status + "'");
      if (!r.at("prediction").is_null()) rep.parsed.prediction = r.at("prediction").get<int>();
      if (!r.at("confidence").is_null()) {
        const auto c = confidence_from_string(r.at("confidence").get<std::string>());
        if (!c) throw ValidationError("unknown confidence level in transcript");
        rep.parsed.confidence = c;
      }
      if (!r.at("error").is_null()) rep.error = r.at("error").get<std::string>();
      t.replicates.push_back(std::move(rep));
    }
    const auto& a = doc.at("aggregate");
    t.aggregate.final_label = a.at("final_label").get<int>();
    t.aggregate.mean_proxy = a.at("mean_proxy").get<double>();
    t.aggregate.votes_0 = a.at("vote_counts").at("0").get<std::size_t>();
    t.aggregate.votes_1 = a.at("vote_counts").at("1").get<std::size_t>();
    t.aggregate.valid = a.at("valid_replicates").get<std::size_t>();
    t.aggregate.tie_broken = a.at("tie_broken").get<bool>();
    t.aggregate.residual_tie = a.at("residual_tie").get<bool>();
    t.aggregate.unparseable = a.at("unparseable").get<bool>();
    t.timestamp = doc.at("timestamp").get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed transcript: ") + e.what());
  }
}

}  // namespace crs::protocol
