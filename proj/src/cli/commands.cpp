#include <algorithm>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "crs/checksum.hpp"
#include "crs/cli.hpp"
#include "crs/errors.hpp"
#include "crs/synthetic.hpp"

namespace crs::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CohortInputs {
  std::string cohort;
  std::string schema = default_schema_path().string();
  std::string split;
};

void add_cohort_options(CLI::App* cmd, CohortInputs& in, bool split_required) {
  cmd->add_option("--cohort", in.cohort, "Cohort CSV")->required();
  cmd->add_option("--schema", in.schema, "Schema JSON")->capture_default_str();
  auto* split = cmd->add_option("--split", in.split, "Split JSON from preprocess");
  if (split_required) split->required();
}

struct Loaded {
  Schema schema;
  std::vector<PatientRecord> records;  // labeled only
};

Loaded load(const CohortInputs& in, std::ostream& err) {
  Loaded l{load_schema(in.schema), {}};
  auto parsed = cohort::parse_cohort(read_file(in.cohort), l.schema);
  for (const auto& r : parsed.rejections)
    err << "rejected row " << r.row_index << " (" << r.column << "): " << r.reason << "\n";
  l.records = cohort::labeled_only(parsed.records, l.schema);
  return l;
}

cohort::CohortSplit read_split(const std::string& path) {
  try {
    return split_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("cannot parse split " + path + ": " + e.what());
  }
}

std::vector<std::string> effective_blocklist(const Schema& schema) {
  auto b = cohort::canonical_blocklist();
  b.insert(b.end(), schema.postop_blocklist.begin(), schema.postop_blocklist.end());
  return b;
}

struct Encoded {
  Dataset train;
  Dataset test;
  std::vector<PatientRecord> test_records;
};

Encoded encode_split(const Loaded& l, const cohort::CohortSplit& split) {
  cohort::enforce_no_leakage(l.schema.feature_names(), effective_blocklist(l.schema));
  const auto train = cohort::select(l.records, split.train_ids);
  auto test = cohort::select(l.records, split.test_ids);
  const auto scaler = cohort::fit_scaler(train, l.schema);
  return {cohort::encode_dataset(train, l.schema, scaler),
          cohort::encode_dataset(test, l.schema, scaler), std::move(test)};
}

void write_json(const std::string& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

void write_report(const std::string& prefix, const json& doc, const std::string& markdown) {
  write_json(prefix + ".json", doc);
  write_file(prefix + ".md", markdown);
}

std::string format_prevalence(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", p);
  return buf;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"crsbench: CRS surgical-outcome benchmarking toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kSoftwareVersion));

  // synth
  int n = 0;
  std::uint64_t seed = 0;
  std::string out_path, schema_path = default_schema_path().string();
  bool force = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled cohort CSV");
  synth->add_option("--n", n, "Number of cases")->required();
  synth->add_option("--seed", seed, "Random seed")->required();
  synth->add_option("--out", out_path, "Output CSV")->required();
  synth->add_option("--schema", schema_path, "Schema JSON")->capture_default_str();
  synth->add_flag("--force", force, "Overwrite an existing output file");

  // preprocess
  CohortInputs pre_in;
  double test_fraction = 0.2;
  std::string out_dir;
  auto* pre = app.add_subcommand("preprocess", "Validate a cohort and write the stratified split");
  add_cohort_options(pre, pre_in, false);
  pre->add_option("--seed", seed, "Split seed")->required();
  pre->add_option("--test-fraction", test_fraction)->capture_default_str();
  pre->add_option("--out-dir", out_dir, "Directory for split.json, scaler.json, rejections.json")
      ->required();

  // train
  CohortInputs train_in;
  std::string model_kind = "mlp", loss = "focal";
  double l2 = 1e-2;
  auto* train = app.add_subcommand("train", "Train a supervised model on the training split");
  add_cohort_options(train, train_in, true);
  train->add_option("--model", model_kind)->check(CLI::IsMember({"mlp", "logreg", "gnb"}))
      ->capture_default_str();
  train->add_option("--seed", seed)->required();
  train->add_option("--loss", loss, "MLP loss")->check(CLI::IsMember({"weighted", "focal"}))
      ->capture_default_str();
  train->add_option("--l2", l2, "Logistic regression L2 penalty")->capture_default_str();
  train->add_option("--out", out_path, "Model JSON")->required();

  // predict
  CohortInputs pred_in;
  std::string model_path, name;
  auto* predict = app.add_subcommand("predict", "Predict the test split with a model or the rule engine");
  add_cohort_options(predict, pred_in, true);
  predict->add_option("--model", model_path, "Model JSON, or 'heuristic'")->required();
  predict->add_option("--name", name, "Model label in reports");
  predict->add_option("--out", out_path, "Prediction JSON")->required();

  // genai
  CohortInputs gen_in;
  std::string mode = "replay", store, vendor, model_id, access_date, endpoint, audit_path,
              corpus_path = default_corpus_path().string();
  int k = 5;
  std::size_t rag_k = 5, parallelism = 1;
  bool use_rag = false;
  protocol::DecodingParams decoding;
  std::optional<std::uint64_t> decode_seed;
  auto* genai = app.add_subcommand("genai", "Run the LLM protocol (live or replay)");
  add_cohort_options(genai, gen_in, false);
  genai->add_option("--mode", mode)->check(CLI::IsMember({"live", "replay"}))->capture_default_str();
  genai->add_option("--store", store, "Replay store directory")->required();
  genai->add_option("--vendor", vendor)->required();
  genai->add_option("--model-id", model_id)->required();
  genai->add_option("--access-date", access_date)->required();
  genai->add_option("--name", name, "Model label in reports");
  genai->add_option("--endpoint", endpoint, "Live endpoint URL");
  genai->add_option("--k", k, "Replicates per case")->capture_default_str();
  genai->add_option("--temperature", decoding.temperature)->capture_default_str();
  genai->add_option("--top-p", decoding.top_p)->capture_default_str();
  genai->add_option("--max-tokens", decoding.max_tokens)->capture_default_str();
  genai->add_option("--decode-seed", decode_seed);
  genai->add_option("--parallelism", parallelism)->capture_default_str();
  genai->add_flag("--rag", use_rag, "Prepend BM25-retrieved passages");
  genai->add_option("--corpus", corpus_path)->capture_default_str();
  genai->add_option("--rag-k", rag_k)->capture_default_str();
  genai->add_option("--audit-log", audit_path, "Audit log (JSON Lines)")->required();
  genai->add_option("--out", out_path, "Prediction JSON")->required();

  // rag-build
  std::string query;
  auto* rag_build = app.add_subcommand("rag-build", "Index a passage corpus with BM25");
  rag_build->add_option("--corpus", corpus_path)->capture_default_str();
  rag_build->add_option("--out", out_path, "Index summary JSON")->required();
  rag_build->add_option("--query", query, "Optional query to retrieve against");
  rag_build->add_option("--k", rag_k)->capture_default_str();

  // evaluate
  std::string predictions_path;
  std::size_t resamples = 2000;
  std::string checksum;
  auto* evaluate = app.add_subcommand("evaluate", "Compute the evaluation report for predictions");
  evaluate->add_option("--predictions", predictions_path)->required();
  evaluate->add_option("--out", out_path, "Report path prefix (.json and .md)")->required();
  evaluate->add_option("--bootstrap", resamples, "AUROC bootstrap resamples")->capture_default_str();
  evaluate->add_option("--seed", seed)->required();
  evaluate->add_option("--schema", schema_path, "Schema stamped into the report")->capture_default_str();

  // compare
  std::string path_a, path_b;
  auto* compare = app.add_subcommand("compare", "Paired comparison of two prediction sets");
  compare->add_option("--a", path_a)->required();
  compare->add_option("--b", path_b)->required();
  compare->add_option("--out", out_path, "Report path prefix (.json and .md)")->required();
  compare->add_option("--bootstrap", resamples)->capture_default_str();
  compare->add_option("--seed", seed)->required();

  // importance
  CohortInputs imp_in;
  std::size_t repeats = 20;
  auto* importance = app.add_subcommand("importance", "Permutation importance on the test split");
  add_cohort_options(importance, imp_in, true);
  importance->add_option("--model", model_path, "Model JSON")->required();
  importance->add_option("--repeats", repeats)->capture_default_str();
  importance->add_option("--seed", seed)->required();
  importance->add_option("--out", out_path, "Report path prefix (.json and .md)")->required();

  // report
  std::string run_dir;
  auto* report = app.add_subcommand("report", "Summarize the reports of a run directory");
  report->add_option("--run-dir", run_dir)->required();

  // run
  std::string config_path, run_id;
  std::optional<std::uint64_t> seed_override;
  std::string output_override;
  auto* run = app.add_subcommand("run", "Execute the full pipeline from a run config");
  run->add_option("--config", config_path)->required();
  run->add_option("--seed", seed_override, "Overrides the config seed");
  run->add_option("--output-dir", output_override, "Overrides the config output directory");
  run->add_option("--run-id", run_id, "Overrides the config run id");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kSoftwareVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Validation);
  }

  try {
    if (*synth) {
      if (n < 1) throw ValidationError("--n must be at least 1");
      if (fs::exists(out_path) && !force)
        throw ValidationError(out_path + " exists; pass --force to overwrite");
      const auto schema = load_schema(schema_path);
      const auto records =
          cohort::generate_synthetic(n, seed, cohort::default_generator_config(), schema);
      write_file(out_path, cohort::serialize_cohort(records, schema));
      std::size_t ones = 0;
      for (const auto& r : records)
        ones += static_cast<std::size_t>(*cohort::derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid));
      out << "wrote " << records.size() << " cases to " << out_path << "; class 1 prevalence "
          << format_prevalence(static_cast<double>(ones) / static_cast<double>(records.size()))
          << " (" << ones << " of " << records.size() << ")\n";
    } else if (*pre) {
      const auto schema = load_schema(pre_in.schema);
      const auto parsed = cohort::parse_cohort(read_file(pre_in.cohort), schema);
      cohort::enforce_no_leakage(schema.feature_names(), effective_blocklist(schema));
      const auto records = cohort::labeled_only(parsed.records, schema);
      const auto split = cohort::stratified_split(records, schema, test_fraction, seed);
      const auto scaler = cohort::fit_scaler(cohort::select(records, split.train_ids), schema);
      json rejections = json::array();
      for (const auto& r : parsed.rejections)
        rejections.push_back({{"row", r.row_index}, {"column", r.column}, {"reason", r.reason}});
      const fs::path dir(out_dir);
      write_json(dir / "split.json", to_json(split));
      write_json(dir / "scaler.json", to_json(scaler));
      write_json(dir / "rejections.json", rejections);
      out << "records " << parsed.records.size() << ", rejected " << parsed.rejections.size()
          << ", labeled " << records.size() << "; train " << split.train_ids.size() << " / test "
          << split.test_ids.size() << " (prevalence " << format_prevalence(split.label_prevalence_train)
          << " / " << format_prevalence(split.label_prevalence_test) << ")\n";
    } else if (*train) {
      const auto l = load(train_in, err);
      const auto enc = encode_split(l, read_split(train_in.split));
      const auto weights = models::inverse_prevalence_weights(enc.train.y);
      models::TrainedModel model;
      if (model_kind == "logreg") {
        model = models::train_logreg(enc.train, weights, l2, seed);
      } else if (model_kind == "gnb") {
        model = models::train_gnb(enc.train);
      } else {
        models::MlpArchitecture arch{enc.train.x.cols, 400};
        model = loss == "focal"
                    ? models::train_mlp(enc.train, arch, models::default_focal(enc.train.y), {}, seed)
                    : models::train_mlp(enc.train, arch, {}, {}, seed, weights);
      }
      model.schema_checksum = l.schema.checksum;
      write_file(out_path, models::save_model_json(model));
      out << "trained " << model_kind << " on " << enc.train.size() << " cases -> " << out_path << "\n";
    } else if (*predict) {
      const auto l = load(pred_in, err);
      const auto split = read_split(pred_in.split);
      metrics::PredictionSet ps;
      if (model_path == "heuristic") {
        ps = heuristic_predictions(cohort::select(l.records, split.test_ids), l.schema);
      } else {
        const auto model = models::load_model_json(read_file(model_path), l.schema.checksum);
        const auto enc = encode_split(l, split);
        ps.model = std::string(models::to_string(model.kind));
        ps.case_ids = enc.test.case_ids;
        ps.labels = enc.test.y;
        ps.scores = model.predict_proba(enc.test.x);
        ps.hard_labels = model.predict(enc.test.x);
        ps.sort_by_case_id();
      }
      if (!name.empty()) ps.model = name;
      write_json(out_path, to_json(ps));
      out << "wrote " << ps.size() << " predictions to " << out_path << "\n";
    } else if (*genai) {
      const auto l = load(gen_in, err);
      const auto records = gen_in.split.empty()
                               ? l.records
                               : cohort::select(l.records, read_split(gen_in.split).test_ids);
      RunConfig cfg;
      decoding.seed = decode_seed;
      cfg.decoding = decoding;
      cfg.k = k;
      cfg.rag_k = rag_k;
      cfg.parallelism = parallelism;
      for (const auto& w : decoding.warnings()) err << "warning: " << w << "\n";
      GenAiSource source;
      source.live = mode == "live";
      source.name = name.empty() ? mode + ":" + model_id : name;
      source.store = store;
      source.endpoint = endpoint;
      source.identity = {vendor, model_id, access_date};
      source.rag = use_rag;
      std::optional<rag::Bm25Index> index;
      if (use_rag) index.emplace(rag::load_corpus(corpus_path));
      protocol::AuditLog audit(audit_path);
      protocol::ReplayStore replay(store);
      metrics::PredictionSet ps;
      if (source.live) {
        if (endpoint.empty()) throw ValidationError("--endpoint is required in live mode");
        const char* token = std::getenv("CRS_API_TOKEN");
        HttpJsonClient http(endpoint, token ? token : "");
        protocol::RecordingClient client(http, replay);
        ps = run_genai(client, source, records, l.schema, cfg, index ? &*index : nullptr, &audit);
      } else {
        if (!fs::is_directory(store)) throw ValidationError("replay store not found: " + store);
        protocol::ReplayClient client(replay);
        ps = run_genai(client, source, records, l.schema, cfg, index ? &*index : nullptr, &audit);
      }
      write_json(out_path, to_json(ps));
      const auto cm = metrics::confusion(ps.labels, ps.hard_labels);
      out << source.name << ": " << ps.size() << " cases, confusion [" << cm.tn << ", " << cm.fp
          << "; " << cm.fn << ", " << cm.tp << "]\n";
    } else if (*rag_build) {
      const rag::Bm25Index index(rag::load_corpus(corpus_path));
      json postings = json::object();
      for (const auto& [term, list] : index.postings()) {
        json entries = json::array();
        for (const auto& p : list)
          entries.push_back({index.passages()[p.doc].passage_id, p.term_frequency});
        postings[term] = entries;
      }
      json doc{{"corpus_sha256", sha256_file(corpus_path)},
               {"passages", index.size()},
               {"average_doc_length", index.average_doc_length()},
               {"k1", index.params().k1},
               {"b", index.params().b},
               {"postings", postings}};
      if (!query.empty()) {
        const auto r = rag::retrieve(index, query, rag_k);
        json hits = json::array();
        for (const auto& h : r.hits) {
          hits.push_back({{"passage_id", h.passage->passage_id}, {"score", h.score}});
          out << h.passage->passage_id << "\t" << h.score << "\t" << h.passage->source_tag << "\n";
        }
        doc["query"] = {{"text", query}, {"hits", hits}, {"corpus_smaller_than_k", r.corpus_smaller_than_k}};
      }
      write_json(out_path, doc);
      out << "indexed " << index.size() << " passages, " << index.postings().size() << " terms\n";
    } else if (*evaluate) {
      const auto ps = load_predictions(predictions_path);
      metrics::EvaluateOptions opts;
      opts.bootstrap_resamples = resamples;
      opts.seed = seed;
      auto r = metrics::evaluate(ps, opts);
      r.schema_checksum = load_schema(schema_path).checksum;
      write_report(out_path, metrics::to_json(r), render_markdown(r));
      out << render_markdown(r);
    } else if (*compare) {
      const auto a = load_predictions(path_a);
      const auto b = load_predictions(path_b);
      const auto cmp = metrics::compare(a, b, resamples, seed);
      const auto doc = comparison_json(a, b, cmp);
      const auto md = render_comparison_markdown(doc);
      write_report(out_path, doc, md);
      out << md;
    } else if (*importance) {
      const auto l = load(imp_in, err);
      const auto model = models::load_model_json(read_file(model_path), l.schema.checksum);
      const auto enc = encode_split(l, read_split(imp_in.split));
      const metrics::BatchClassifier classify = [&](const Matrix& x) { return model.predict(x); };
      json rows = json::array();
      std::string md = "# Permutation importance\n\n| Feature | Mean decrease in BA | SD |\n|---|---|---|\n";
      std::vector<metrics::ImportanceResult> results;
      for (std::size_t f = 0; f < enc.test.x.cols; ++f)
        results.push_back(metrics::permutation_importance(classify, enc.test, f, repeats,
                                                          metrics::derive_seed(seed, f)));
      std::stable_sort(results.begin(), results.end(), [](const auto& x, const auto& y) {
        return x.mean_delta_balanced_accuracy > y.mean_delta_balanced_accuracy;
      });
      for (const auto& r : results) {
        rows.push_back({{"feature", r.feature},
                        {"mean_delta_balanced_accuracy", r.mean_delta_balanced_accuracy},
                        {"sd", r.sd},
                        {"constant", r.constant}});
        md += "| " + r.feature + " | " + format_prevalence(r.mean_delta_balanced_accuracy) + " | " +
              format_prevalence(r.sd) + (r.constant ? " (constant)" : "") + " |\n";
      }
      write_report(out_path, {{"model", std::string(models::to_string(model.kind))}, {"features", rows}}, md);
      out << md;
    } else if (*report) {
      const fs::path dir(run_dir);
      if (!fs::exists(dir / "manifest.json")) throw ValidationError("no manifest in " + run_dir);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir / "reports"))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      std::string md = "# Run summary\n\n| Model | n | Accuracy | Recall 0 | Recall 1 | Balanced accuracy | AUROC | Brier |\n|---|---|---|---|---|---|---|---|\n";
      for (const auto& f : files) {
        const auto doc = json::parse(read_file(f));
        if (!doc.contains("threshold_metrics")) continue;
        const auto& t = doc.at("threshold_metrics");
        auto num = [](const json& v) { return v.is_null() ? std::string("n/a") : format_prevalence(v.get<double>()); };
        md += "| " + doc.at("model").get<std::string>() + " | " + std::to_string(doc.at("n").get<int>()) +
              " | " + num(t.at("accuracy")) + " | " + num(t.at("recall0")) + " | " + num(t.at("recall1")) +
              " | " + num(t.at("balanced_accuracy")) + " | " + num(doc.at("auroc")) + " | " +
              num(doc.at("brier")) + " |\n";
      }
      write_file(dir / "summary.md", md);
      out << md;
    } else if (*run) {
      auto cfg = load_run_config(config_path);
      if (seed_override) cfg.seed = seed_override;
      if (!output_override.empty()) cfg.output_dir = output_override;
      if (!run_id.empty()) cfg.run_id = run_id;
      const auto result = run_pipeline(cfg, out);
      return run_cli({"report", "--run-dir", result.run_dir.string()}, out, err);
    }
  } catch (const LeakageError& e) {
    err << "leakage: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace crs::cli
