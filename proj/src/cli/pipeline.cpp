#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "crs/checksum.hpp"
#include "crs/cli.hpp"
#include "crs/errors.hpp"
#include "crs/heuristic.hpp"
#include "crs/rag.hpp"
#include "crs/synthetic.hpp"

namespace crs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string safe_name(std::string_view name) {
  std::string out(name);
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(fs::path path) : path_(std::move(path)) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw ValidationError("run directory is locked (" + path_.string() +
                            "); remove the lock file if no other run is active");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

const std::set<std::string, std::less<>> kTrainable{"mlp", "logreg", "gnb"};

bool is_genai(std::string_view name) {
  return name.starts_with("replay:") || name.starts_with("live:");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string csv_roc(const std::vector<metrics::RocPoint>& pts) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : pts) out += fmt_g(p.threshold) + "," + fmt_g(p.fpr) + "," + fmt_g(p.tpr) + "\n";
  return out;
}

std::string csv_pr(const std::vector<metrics::PrPoint>& pts) {
  std::string out = "threshold,recall,precision\n";
  for (const auto& p : pts)
    out += fmt_g(p.threshold) + "," + fmt_g(p.recall) + "," + fmt_g(p.precision) + "\n";
  return out;
}

std::string csv_reliability(const std::vector<metrics::ReliabilityBin>& bins) {
  std::string out = "lower,upper,count,mean_probability,empirical_rate\n";
  for (const auto& b : bins) {
    out += fmt_g(b.lower) + "," + fmt_g(b.upper) + "," + std::to_string(b.count) + ",";
    out += (b.mean_probability ? fmt_g(*b.mean_probability) : "") + ",";
    out += (b.empirical_rate ? fmt_g(*b.empirical_rate) : "") + "\n";
  }
  return out;
}

std::string csv_net_benefit(const std::vector<metrics::NetBenefitPoint>& pts) {
  std::string out = "threshold,model,treat_all,treat_none\n";
  for (const auto& p : pts)
    out += fmt_g(p.threshold) + "," + fmt_g(p.model) + "," + fmt_g(p.treat_all) + "," +
           fmt_g(p.treat_none) + "\n";
  return out;
}

models::TrainedModel train_named(const std::string& name, const Dataset& train,
                                 const RunConfig& cfg, std::uint64_t seed) {
  const auto weights = models::inverse_prevalence_weights(train.y);
  if (name == "logreg") return models::train_logreg(train, weights, cfg.logreg_l2, seed);
  if (name == "gnb") return models::train_gnb(train);
  models::MlpArchitecture arch{train.x.cols, 400};
  if (cfg.mlp_loss == "focal")
    return models::train_mlp(train, arch, models::default_focal(train.y), {}, seed);
  return models::train_mlp(train, arch, models::LossConfig{}, {}, seed, weights);
}

metrics::PredictionSet model_predictions(const models::TrainedModel& model, const Dataset& test,
                                         const std::string& name) {
  metrics::PredictionSet ps;
  ps.model = name;
  ps.score_kind = metrics::ScoreKind::Probability;
  ps.case_ids = test.case_ids;
  ps.labels = test.y;
  ps.scores = model.predict_proba(test.x);
  ps.hard_labels = model.predict(test.x);
  ps.sort_by_case_id();
  return ps;
}

std::vector<int> labels_of(std::span<const PatientRecord> records, const Schema& schema) {
  std::vector<int> out;
  for (const auto& r : records) {
    auto y = cohort::derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid);
    if (!y) throw ValidationError("record " + r.patient_id + " has no follow-up score");
    out.push_back(*y);
  }
  return out;
}

json config_echo(const RunConfig& c) {
  json genai = json::object();
  for (const auto& [name, s] : c.genai) {
    genai[name] = {{"live", s.live},
                   {"store", s.store.string()},
                   {"endpoint", s.endpoint},
                   {"identity", s.identity.display()},
                   {"rag", s.rag}};
  }
  json cmp = json::array();
  for (const auto& [a, b] : c.comparisons) cmp.push_back({a, b});
  return {{"run_id", c.run_id},
          {"seed", *c.seed},
          {"synthetic_n", c.synthetic_n},
          {"test_fraction", c.test_fraction},
          {"models", c.models},
          {"genai", genai},
          {"mlp_loss", c.mlp_loss},
          {"logreg_l2", c.logreg_l2},
          {"decoding",
           {{"temperature", c.decoding.temperature},
            {"top_p", c.decoding.top_p},
            {"max_tokens", c.decoding.max_tokens},
            {"seed", c.decoding.seed ? json(*c.decoding.seed) : json()}}},
          {"k", c.k},
          {"rag_k", c.rag_k},
          {"thresholds", c.thresholds},
          {"bootstrap_resamples", c.bootstrap_resamples},
          {"comparisons", cmp},
          {"importance_models", c.importance_models},
          {"importance_repeats", c.importance_repeats},
          {"report_formats", c.report_formats}};
}

}  // namespace

// ---- artifacts ----

json to_json(const metrics::PredictionSet& p) {
  json cases = json::array();
  for (std::size_t i = 0; i < p.size(); ++i)
    cases.push_back({{"case_id", p.case_ids[i]},
                     {"label", p.labels[i]},
                     {"score", p.scores[i]},
                     {"hard_label", p.hard_labels[i]}});
  return {{"format", "crs-predictions"},
          {"model", p.model},
          {"score_kind", p.score_kind == metrics::ScoreKind::Proxy ? "proxy" : "probability"},
          {"cases", cases}};
}

metrics::PredictionSet prediction_set_from_json(const json& doc) {
  metrics::PredictionSet p;
  try {
    if (doc.at("format") != "crs-predictions") throw ValidationError("not a prediction file");
    p.model = doc.at("model").get<std::string>();
    const auto kind = doc.at("score_kind").get<std::string>();
    if (kind == "proxy")
      p.score_kind = metrics::ScoreKind::Proxy;
    else if (kind == "probability")
      p.score_kind = metrics::ScoreKind::Probability;
    else
      throw ValidationError("unknown score kind '" + kind + "'");
    for (const auto& c : doc.at("cases")) {
      p.case_ids.push_back(c.at("case_id").get<std::string>());
      p.labels.push_back(c.at("label").get<int>());
      p.scores.push_back(c.at("score").get<double>());
      p.hard_labels.push_back(c.at("hard_label").get<int>());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed prediction file: ") + e.what());
  }
  p.validate();
  return p;
}

metrics::PredictionSet load_predictions(const fs::path& path) {
  try {
    return prediction_set_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("cannot parse " + path.string() + ": " + e.what());
  }
}

json to_json(const cohort::CohortSplit& s) {
  return {{"seed", s.seed},
          {"train_ids", s.train_ids},
          {"test_ids", s.test_ids},
          {"label_prevalence_train", s.label_prevalence_train},
          {"label_prevalence_test", s.label_prevalence_test}};
}

cohort::CohortSplit split_from_json(const json& doc) {
  try {
    cohort::CohortSplit s;
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.train_ids = doc.at("train_ids").get<std::vector<std::string>>();
    s.test_ids = doc.at("test_ids").get<std::vector<std::string>>();
    s.label_prevalence_train = doc.at("label_prevalence_train").get<double>();
    s.label_prevalence_test = doc.at("label_prevalence_test").get<double>();
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed split file: ") + e.what());
  }
}

json to_json(const cohort::Scaler& s) {
  return {{"id", s.id()}, {"columns", s.columns}, {"means", s.means}, {"sds", s.sds}};
}

std::string render_markdown(const metrics::EvaluationReport& r) {
  const auto& m = r.threshold;
  std::string md = "# Evaluation: " + r.model + "\n\n";
  md += "- Cases: " + std::to_string(r.n) + " (prevalence " + fmt(r.prevalence) + ")\n";
  md += "- Schema checksum: `" + r.schema_checksum + "`\n\n";
  md += "| | predicted 0 | predicted 1 |\n|---|---|---|\n";
  md += "| true 0 | " + std::to_string(r.cm.tn) + " | " + std::to_string(r.cm.fp) + " |\n";
  md += "| true 1 | " + std::to_string(r.cm.fn) + " | " + std::to_string(r.cm.tp) + " |\n\n";
  md += "| Metric | Value |\n|---|---|\n";
  md += "| Accuracy | " + fmt(m.accuracy) + " |\n";
  md += "| Precision (class 0) | " + fmt(m.precision0) + " |\n";
  md += "| Recall (class 0) | " + fmt(m.recall0) + " |\n";
  md += "| Precision (class 1) | " + fmt(m.precision1) + " |\n";
  md += "| Recall (class 1) | " + fmt(m.recall1) + " |\n";
  md += "| F1 (class 1) | " + fmt(m.f1_pos) + " |\n";
  md += "| Balanced accuracy | " + fmt(m.balanced_accuracy) + " |\n";
  std::string auc = r.auroc ? fmt(*r.auroc) : "n/a";
  if (r.auroc_ci) auc += " (95% CI " + fmt(r.auroc_ci->lo95) + "-" + fmt(r.auroc_ci->hi95) + ")";
  md += "| AUROC | " + auc + " |\n";
  md += "| Average precision | " + (r.average_precision ? fmt(*r.average_precision) : "n/a") + " |\n";
  md += "| Brier | " + fmt(r.brier) + " |\n";
  if (!m.undefined.empty()) {
    md += "\nUndefined ratios reported as 0:";
    for (const auto& u : m.undefined) md += " " + u;
    md += "\n";
  }
  md += "\n## Net benefit\n\n| threshold | model | treat all | treat none |\n|---|---|---|---|\n";
  for (const auto& p : r.net_benefit)
    md += "| " + fmt(p.threshold, 2) + " | " + fmt(p.model) + " | " + fmt(p.treat_all) + " | " +
          fmt(p.treat_none) + " |\n";
  md += "\n## Reliability\n\n| bin | count | mean probability | observed rate |\n|---|---|---|---|\n";
  for (const auto& b : r.reliability) {
    md += "| " + fmt(b.lower, 1) + "-" + fmt(b.upper, 1) + " | " + std::to_string(b.count) + " | " +
          (b.mean_probability ? fmt(*b.mean_probability) : "") + " | " +
          (b.empirical_rate ? fmt(*b.empirical_rate) : "") + " |\n";
  }
  return md;
}

json comparison_json(const metrics::PredictionSet& a, const metrics::PredictionSet& b,
                     const metrics::PairedComparison& c) {
  const auto ra = metrics::evaluate(a, {});
  const auto rb = metrics::evaluate(b, {});
  auto winner = [&](double va, double vb, bool higher_better) -> std::string {
    if (va == vb) return "tie";
    return (va > vb) == higher_better ? a.model : b.model;
  };
  const auto &ta = ra.threshold, &tb = rb.threshold;
  json winners{{"accuracy", winner(ta.accuracy, tb.accuracy, true)},
               {"balanced_accuracy", winner(ta.balanced_accuracy, tb.balanced_accuracy, true)},
               {"recall0", winner(ta.recall0, tb.recall0, true)},
               {"recall1", winner(ta.recall1, tb.recall1, true)},
               {"precision0", winner(ta.precision0, tb.precision0, true)},
               {"precision1", winner(ta.precision1, tb.precision1, true)},
               {"f1_pos", winner(ta.f1_pos, tb.f1_pos, true)},
               {"brier", winner(ra.brier, rb.brier, false)}};
  if (ra.auroc && rb.auroc) winners["auroc"] = winner(*ra.auroc, *rb.auroc, true);
  if (ra.average_precision && rb.average_precision)
    winners["average_precision"] = winner(*ra.average_precision, *rb.average_precision, true);
  return {{"format", "crs-comparison"},
          {"n", a.size()},
          {"model_a", a.model},
          {"model_b", b.model},
          {"confusion_a", metrics::to_json(ra.cm)},
          {"confusion_b", metrics::to_json(rb.cm)},
          {"metrics_a", metrics::to_json(ta)},
          {"metrics_b", metrics::to_json(tb)},
          {"auroc_a", ra.auroc ? json(*ra.auroc) : json()},
          {"auroc_b", rb.auroc ? json(*rb.auroc) : json()},
          {"average_precision_a", ra.average_precision ? json(*ra.average_precision) : json()},
          {"average_precision_b", rb.average_precision ? json(*rb.average_precision) : json()},
          {"brier_a", ra.brier},
          {"brier_b", rb.brier},
          {"tests", metrics::to_json(c)},
          {"winners", winners}};
}

std::string render_comparison_markdown(const json& c) {
  const auto a = c.at("model_a").get<std::string>();
  const auto b = c.at("model_b").get<std::string>();
  auto cm = [](const json& m) {
    return "[" + std::to_string(m.at("tn").get<int>()) + ", " + std::to_string(m.at("fp").get<int>()) +
           "; " + std::to_string(m.at("fn").get<int>()) + ", " +
           std::to_string(m.at("tp").get<int>()) + "]";
  };
  const auto& t = c.at("tests");
  std::string md = "# Comparison: " + a + " vs " + b + "\n\n";
  md += "- Cases: " + std::to_string(c.at("n").get<int>()) + "\n";
  md += "- Confusion " + a + ": " + cm(c.at("confusion_a")) + "\n";
  md += "- Confusion " + b + ": " + cm(c.at("confusion_b")) + "\n\n";
  const auto& d = t.at("delong");
  md += "| Test | Estimate | 95% CI | p |\n|---|---|---|---|\n";
  md += "| DeLong AUC difference | " + fmt(d.at("difference").get<double>()) + " | " +
        fmt(d.at("ci_95_diff")[0].get<double>()) + " to " +
        fmt(d.at("ci_95_diff")[1].get<double>()) + " | " + fmt(d.at("p_value").get<double>(), 4) +
        " |\n";
  const auto& bs = t.at("bootstrap_auc_difference");
  md += "| Bootstrap AUC difference | " + fmt(bs.at("difference").get<double>()) + " | " +
        fmt(bs.at("lo95").get<double>()) + " to " + fmt(bs.at("hi95").get<double>()) + " | " +
        fmt(bs.at("p_value").get<double>(), 4) + " |\n";
  const auto& mc = t.at("mcnemar");
  md += "| McNemar (b=" + std::to_string(mc.at("b_count").get<int>()) +
        ", c=" + std::to_string(mc.at("c_count").get<int>()) + ") | " +
        fmt(mc.at("statistic").get<double>()) + " | | " + fmt(mc.at("p_value").get<double>(), 4) +
        " |\n\n";
  md += "| Metric | " + a + " | " + b + " | Winner |\n|---|---|---|---|\n";
  for (const auto& [metric, w] : c.at("winners").items()) {
    const bool threshold_metric = c.at("metrics_a").contains(metric);
    const auto& ja = threshold_metric ? c.at("metrics_a").at(metric) : c.at(metric + "_a");
    const auto& jb = threshold_metric ? c.at("metrics_b").at(metric) : c.at(metric + "_b");
    const std::string va = fmt(ja.get<double>()), vb = fmt(jb.get<double>());
    md += "| " + metric + " | " + va + " | " + vb + " | " + w.get<std::string>() + " |\n";
  }
  return md;
}

// ---- config ----

RunConfig parse_run_config(const json& doc, const fs::path& base) {
  static const std::set<std::string, std::less<>> known{
      "run_id", "seed", "cohort", "synthetic_n", "schema", "corpus", "output_dir",
      "test_fraction", "models", "genai", "mlp_loss", "logreg_l2", "decoding", "k", "rag_k",
      "parallelism", "thresholds", "bootstrap_resamples", "comparisons", "importance",
      "report_formats"};
  if (!doc.is_object()) throw ValidationError("run config must be a JSON object");
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw ValidationError("unknown run config key '" + key + "'");
  RunConfig c;
  try {
    c.run_id = doc.value("run_id", c.run_id);
    if (doc.contains("seed") && !doc.at("seed").is_null()) c.seed = doc.at("seed").get<std::uint64_t>();
    c.cohort = resolve(base, doc.value("cohort", std::string()));
    c.synthetic_n = doc.value("synthetic_n", c.synthetic_n);
    c.schema = doc.contains("schema") ? resolve(base, doc.at("schema").get<std::string>())
                                      : default_schema_path();
    c.corpus = doc.contains("corpus") ? resolve(base, doc.at("corpus").get<std::string>())
                                      : default_corpus_path();
    c.output_dir = resolve(base, doc.value("output_dir", std::string("runs")));
    c.test_fraction = doc.value("test_fraction", c.test_fraction);
    c.models = doc.value("models", std::vector<std::string>{});
    c.mlp_loss = doc.value("mlp_loss", c.mlp_loss);
    c.logreg_l2 = doc.value("logreg_l2", c.logreg_l2);
    if (doc.contains("decoding")) {
      const auto& d = doc.at("decoding");
      c.decoding.temperature = d.value("temperature", c.decoding.temperature);
      c.decoding.top_p = d.value("top_p", c.decoding.top_p);
      c.decoding.max_tokens = d.value("max_tokens", c.decoding.max_tokens);
      if (d.contains("seed") && !d.at("seed").is_null())
        c.decoding.seed = d.at("seed").get<std::uint64_t>();
    }
    c.k = doc.value("k", c.k);
    c.rag_k = doc.value("rag_k", c.rag_k);
    c.parallelism = doc.value("parallelism", c.parallelism);
    c.thresholds = doc.value("thresholds", c.thresholds);
    c.bootstrap_resamples = doc.value("bootstrap_resamples", c.bootstrap_resamples);
    for (const auto& pair : doc.value("comparisons", json::array())) {
      if (!pair.is_array() || pair.size() != 2)
        throw ValidationError("comparisons entries must be [model_a, model_b]");
      c.comparisons.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
    }
    if (doc.contains("importance")) {
      const auto& imp = doc.at("importance");
      c.importance_models = imp.value("models", std::vector<std::string>{});
      c.importance_repeats = imp.value("repeats", c.importance_repeats);
    }
    c.report_formats = doc.value("report_formats", c.report_formats);
    const json genai = doc.value("genai", json::object());
    for (const auto& model : c.models) {
      if (!is_genai(model)) continue;
      const bool live = model.starts_with("live:");
      const std::string key = model.substr(model.find(':') + 1);
      if (!genai.contains(key)) throw ValidationError("no genai entry for model '" + model + "'");
      const auto& g = genai.at(key);
      GenAiSource s;
      s.name = model;
      s.live = live;
      s.store = resolve(base, g.value("store", std::string()));
      s.endpoint = g.value("endpoint", std::string());
      s.identity = {g.value("vendor", std::string()), g.value("model_id", std::string()),
                    g.value("access_date", std::string())};
      s.rag = g.value("rag", false);
      c.genai.emplace(model, std::move(s));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("cannot parse run config " + path.string() + ": " + e.what());
  }
  return parse_run_config(doc, fs::absolute(path).parent_path());
}

void validate_run_config(const RunConfig& c) {
  if (!c.seed) throw ValidationError("run config needs an explicit seed");
  if (c.run_id.empty() || c.run_id.find('/') != std::string::npos || c.run_id == "." ||
      c.run_id == "..")
    throw ValidationError("run_id must be a plain directory name");
  if (!fs::exists(c.schema)) throw ValidationError("schema file not found: " + c.schema.string());
  if (!c.cohort.empty() && !fs::exists(c.cohort))
    throw ValidationError("cohort file not found: " + c.cohort.string());
  if (c.cohort.empty() && c.synthetic_n < 1) throw ValidationError("synthetic_n must be positive");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    throw ValidationError("test_fraction must be in (0, 1)");
  if (c.models.empty()) throw ValidationError("run config selects no models");
  std::set<std::string, std::less<>> seen;
  bool needs_corpus = false;
  for (const auto& m : c.models) {
    if (!seen.insert(m).second) throw ValidationError("model listed twice: " + m);
    if (kTrainable.count(m) || m == "heuristic") continue;
    if (!is_genai(m)) throw ValidationError("unknown model '" + m + "'");
    const auto& s = c.genai.at(m);
    s.identity.display();
    if (!s.live && !fs::is_directory(s.store))
      throw ValidationError("replay store not found for " + m + ": " + s.store.string());
    if (s.live && s.endpoint.empty()) throw ValidationError("live model " + m + " needs an endpoint");
    needs_corpus = needs_corpus || s.rag;
  }
  if (needs_corpus && !fs::exists(c.corpus))
    throw ValidationError("corpus file not found: " + c.corpus.string());
  if (c.mlp_loss != "weighted" && c.mlp_loss != "focal")
    throw ValidationError("mlp_loss must be 'weighted' or 'focal'");
  if (c.k < 1) throw ValidationError("k must be at least 1");
  if (c.rag_k < 1) throw ValidationError("rag_k must be at least 1");
  c.decoding.validate();
  for (double t : c.thresholds)
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("thresholds must lie in (0, 1)");
  for (const auto& [a, b] : c.comparisons)
    if (!seen.count(a) || !seen.count(b))
      throw ValidationError("comparison references an unselected model: " + a + " vs " + b);
  for (const auto& m : c.importance_models)
    if (!kTrainable.count(m) || !seen.count(m))
      throw ValidationError("importance needs a selected trainable model, got '" + m + "'");
  for (const auto& f : c.report_formats)
    if (f != "json" && f != "markdown") throw ValidationError("unknown report format '" + f + "'");
}

// ---- stages ----

protocol::Prompt case_prompt(const PatientRecord& record, const Schema& schema,
                             const rag::Bm25Index* index, std::size_t rag_k) {
  const std::string block = protocol::serialize_case(record, schema);
  std::vector<rag::Passage> passages;
  if (index) {
    for (const auto& hit : rag::retrieve(*index, block, rag_k).hits) passages.push_back(*hit.passage);
  }
  const std::string blocks[] = {block};
  return protocol::build_prompt(blocks, protocol::canonical_prompt(), passages);
}

metrics::PredictionSet run_genai(protocol::ModelClient& client, const GenAiSource& source,
                                 std::span<const PatientRecord> records, const Schema& schema,
                                 const RunConfig& config, const rag::Bm25Index* index,
                                 protocol::AuditLog* log, const protocol::Clock& clock) {
  std::vector<std::string> blocklist = cohort::canonical_blocklist();
  blocklist.insert(blocklist.end(), schema.postop_blocklist.begin(), schema.postop_blocklist.end());
  cohort::enforce_no_leakage(schema.feature_names(), blocklist);
  std::vector<protocol::TrialRequest> requests;
  for (const auto& r : records)
    requests.push_back({r.patient_id, case_prompt(r, schema, source.rag ? index : nullptr, config.rag_k)});
  const auto transcripts = protocol::run_trials(client, source.identity, requests, config.decoding,
                                                config.k, log, config.parallelism, clock);
  metrics::PredictionSet ps;
  ps.model = source.name;
  ps.score_kind = metrics::ScoreKind::Proxy;
  ps.labels = labels_of(records, schema);
  for (const auto& t : transcripts) {
    ps.case_ids.push_back(t.case_id);
    ps.scores.push_back(t.aggregate.mean_proxy);
    ps.hard_labels.push_back(t.aggregate.final_label);
  }
  ps.sort_by_case_id();
  return ps;
}

metrics::PredictionSet heuristic_predictions(std::span<const PatientRecord> records,
                                             const Schema& schema) {
  metrics::PredictionSet ps;
  ps.model = "heuristic";
  ps.score_kind = metrics::ScoreKind::Proxy;
  ps.labels = labels_of(records, schema);
  for (const auto& r : records) {
    const auto h = heuristic::predict_heuristic(r);
    ps.case_ids.push_back(r.patient_id);
    ps.scores.push_back(protocol::proxy_score(h.label, h.confidence));
    ps.hard_labels.push_back(h.label);
  }
  ps.sort_by_case_id();
  return ps;
}

RunResult run_pipeline(const RunConfig& cfg, std::ostream& log) {
  validate_run_config(cfg);
  const std::uint64_t seed = *cfg.seed;
  const Schema schema = load_schema(cfg.schema);

  RunResult result;
  result.run_dir = cfg.output_dir / cfg.run_id;
  const auto& dir = result.run_dir;
  fs::create_directories(dir);
  RunLock lock(dir / "run.lock");
  for (const char* sub : {"transcripts", "predictions", "reports", "curves", "models"})
    fs::remove_all(dir / sub);
  std::map<std::string, std::string> artifacts;
  auto emit = [&](const std::string& rel, std::string_view bytes) {
    write_file(dir / rel, bytes);
    artifacts[rel] = sha256_hex(bytes);
  };
  auto emit_json = [&](const std::string& rel, const json& doc) { emit(rel, doc.dump(2) + "\n"); };

  json inputs{{"schema", {{"path", cfg.schema.string()}, {"sha256", schema.checksum}}}};
  std::string cohort_bytes;
  if (cfg.cohort.empty()) {
    const auto records = cohort::generate_synthetic(cfg.synthetic_n, seed,
                                                    cohort::default_generator_config(), schema);
    cohort_bytes = cohort::serialize_cohort(records, schema);
    inputs["cohort"] = {{"synthetic", {{"n", cfg.synthetic_n}, {"seed", seed}}},
                        {"sha256", sha256_hex(cohort_bytes)}};
  } else {
    cohort_bytes = read_file(cfg.cohort);
    inputs["cohort"] = {{"path", cfg.cohort.string()}, {"sha256", sha256_hex(cohort_bytes)}};
  }
  emit("cohort.csv", cohort_bytes);

  auto parsed = cohort::parse_cohort(cohort_bytes, schema);
  json rejections = json::array();
  for (const auto& r : parsed.rejections)
    rejections.push_back({{"row", r.row_index}, {"column", r.column}, {"reason", r.reason}});
  emit_json("rejections.json", rejections);
  const auto records = cohort::labeled_only(parsed.records, schema);
  log << "cohort: " << parsed.records.size() << " records, " << parsed.rejections.size()
      << " rejected, " << records.size() << " labeled\n";

  std::vector<std::string> blocklist = cohort::canonical_blocklist();
  blocklist.insert(blocklist.end(), schema.postop_blocklist.begin(), schema.postop_blocklist.end());
  cohort::enforce_no_leakage(schema.feature_names(), blocklist);

  const auto split = cohort::stratified_split(records, schema, cfg.test_fraction, seed);
  emit_json("split.json", to_json(split));
  const auto train = cohort::select(records, split.train_ids);
  const auto test = cohort::select(records, split.test_ids);
  const auto scaler = cohort::fit_scaler(train, schema);
  emit_json("scaler.json", to_json(scaler));
  const Dataset dtrain = cohort::encode_dataset(train, schema, scaler);
  const Dataset dtest = cohort::encode_dataset(test, schema, scaler);
  log << "split: train " << train.size() << " / test " << test.size() << " (prevalence "
      << fmt(split.label_prevalence_train) << " / " << fmt(split.label_prevalence_test) << ")\n";

  std::optional<rag::Bm25Index> index;
  for (const auto& [_, s] : cfg.genai) {
    if (s.rag && !index) {
      index.emplace(rag::load_corpus(cfg.corpus));
      inputs["corpus"] = {{"path", cfg.corpus.string()}, {"sha256", sha256_file(cfg.corpus)}};
    }
  }

  std::map<std::string, models::TrainedModel> trained;
  for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
    const auto& name = cfg.models[mi];
    const std::string file = safe_name(name);
    metrics::PredictionSet ps;
    if (kTrainable.count(name)) {
      auto model = train_named(name, dtrain, cfg, seed);
      model.schema_checksum = schema.checksum;
      emit("models/" + file + ".json", models::save_model_json(model));
      ps = model_predictions(model, dtest, name);
      trained.emplace(name, std::move(model));
    } else if (name == "heuristic") {
      ps = heuristic_predictions(test, schema);
    } else {
      const auto& source = cfg.genai.at(name);
      protocol::AuditLog audit(dir / "transcripts" / (file + ".jsonl"));
      if (source.live) {
        HttpJsonClient http(source.endpoint);
        protocol::ReplayStore store(dir / "replay" / file);
        protocol::RecordingClient client(http, store);
        ps = run_genai(client, source, test, schema, cfg, index ? &*index : nullptr, &audit);
      } else {
        protocol::ReplayStore store(source.store);
        protocol::ReplayClient client(store);
        ps = run_genai(client, source, test, schema, cfg, index ? &*index : nullptr, &audit);
      }
      inputs["replay:" + file] = {{"store", source.store.string()}};
    }
    emit_json("predictions/" + file + ".json", to_json(ps));
    metrics::EvaluateOptions opts;
    opts.thresholds = cfg.thresholds;
    opts.bootstrap_resamples = cfg.bootstrap_resamples;
    opts.seed = metrics::derive_seed(seed, mi);
    auto report = metrics::evaluate(ps, opts);
    report.schema_checksum = schema.checksum;
    for (const auto& f : cfg.report_formats) {
      if (f == "json") emit_json("reports/" + file + ".json", metrics::to_json(report));
      if (f == "markdown") emit("reports/" + file + ".md", render_markdown(report));
    }
    emit("curves/" + file + "_roc.csv", csv_roc(report.roc));
    emit("curves/" + file + "_pr.csv", csv_pr(report.pr));
    emit("curves/" + file + "_reliability.csv", csv_reliability(report.reliability));
    emit("curves/" + file + "_net_benefit.csv", csv_net_benefit(report.net_benefit));
    const auto& t = report.threshold;
    log << name << ": acc " << fmt(t.accuracy) << " recall0 " << fmt(t.recall0) << " recall1 "
        << fmt(t.recall1) << " auroc " << (report.auroc ? fmt(*report.auroc) : "n/a") << "\n";
    result.reports.emplace(name, std::move(report));
    result.predictions.emplace(name, std::move(ps));
  }

  for (std::size_t ci = 0; ci < cfg.comparisons.size(); ++ci) {
    const auto& [a, b] = cfg.comparisons[ci];
    const auto& pa = result.predictions.at(a);
    const auto& pb = result.predictions.at(b);
    const auto cmp = metrics::compare(pa, pb, cfg.bootstrap_resamples,
                                      metrics::derive_seed(seed, 1000 + ci));
    const auto doc = comparison_json(pa, pb, cmp);
    const std::string file = "reports/compare_" + safe_name(a) + "_vs_" + safe_name(b);
    for (const auto& f : cfg.report_formats) {
      if (f == "json") emit_json(file + ".json", doc);
      if (f == "markdown") emit(file + ".md", render_comparison_markdown(doc));
    }
  }

  for (const auto& name : cfg.importance_models) {
    const auto& model = trained.at(name);
    json rows = json::array();
    const metrics::BatchClassifier classify = [&](const Matrix& x) { return model.predict(x); };
    std::vector<metrics::ImportanceResult> results;
    for (std::size_t f = 0; f < dtest.x.cols; ++f)
      results.push_back(metrics::permutation_importance(classify, dtest, f, cfg.importance_repeats,
                                                        metrics::derive_seed(seed, 2000 + f)));
    std::stable_sort(results.begin(), results.end(), [](const auto& x, const auto& y) {
      return x.mean_delta_balanced_accuracy > y.mean_delta_balanced_accuracy;
    });
    std::string md = "# Permutation importance: " + name +
                     "\n\nMean decrease in balanced accuracy over " +
                     std::to_string(cfg.importance_repeats) +
                     " shuffles.\n\n| Feature | Mean | SD |\n|---|---|---|\n";
    for (const auto& r : results) {
      rows.push_back({{"feature", r.feature},
                      {"mean_delta_balanced_accuracy", r.mean_delta_balanced_accuracy},
                      {"sd", r.sd},
                      {"constant", r.constant}});
      md += "| " + r.feature + " | " + fmt(r.mean_delta_balanced_accuracy) + " | " + fmt(r.sd) +
            (r.constant ? " (constant)" : "") + " |\n";
    }
    const std::string file = "reports/importance_" + safe_name(name);
    for (const auto& f : cfg.report_formats) {
      if (f == "json") emit_json(file + ".json", {{"model", name}, {"features", rows}});
      if (f == "markdown") emit(file + ".md", md);
    }
  }

  json modules = json::object();
  for (const char* m : {"cohort", "models", "heuristic", "protocol", "rag", "metrics", "cli"})
    modules[m] = kSoftwareVersion;
  result.manifest = {{"format", "crs-run-manifest"},
                     {"software_version", kSoftwareVersion},
                     {"modules", modules},
                     {"run_id", cfg.run_id},
                     {"created_at", protocol::utc_timestamp()},
                     {"schema_checksum", schema.checksum},
                     {"scaler_id", scaler.id()},
                     {"inputs", inputs},
                     {"seeds",
                      {{"master", seed},
                       {"split", seed},
                       {"synthetic", seed},
                       {"training", seed},
                       {"bootstrap", "derive_seed(master, model index)"}}},
                     {"split",
                      {{"n_train", split.train_ids.size()},
                       {"n_test", split.test_ids.size()},
                       {"label_prevalence_train", split.label_prevalence_train},
                       {"label_prevalence_test", split.label_prevalence_test}}},
                     {"config", config_echo(cfg)},
                     {"artifacts", artifacts}};
  write_json(dir / "manifest.json", result.manifest);
  log << "run directory: " << dir.string() << "\n";
  return result;
}

}  // namespace crs::cli
