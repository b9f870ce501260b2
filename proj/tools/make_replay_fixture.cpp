// Regenerates the replay fixtures under tests/fixtures from the default
// synthetic cohort (n=524, seed 2): the 105-case test split, a replay store
// whose majority votes give the confusion matrix [6,14;3,82], and an MLP
// prediction set with matrix [9,11;5,80].
#include <algorithm>
#include <iostream>
#include <random>

#include "crs/checksum.hpp"
#include "crs/cli.hpp"
#include "crs/errors.hpp"
#include "crs/heuristic.hpp"
#include "crs/synthetic.hpp"

namespace fs = std::filesystem;
using namespace crs;

namespace {

constexpr std::uint64_t kSeed = 2;

std::string respond(int label, Confidence c, int style, const heuristic::HeuristicPrediction& h) {
  const std::string p = "PREDICTION: " + std::to_string(label);
  const std::string conf = "CONFIDENCE: " + std::string(to_phrase(c));
  char delta[32];
  std::snprintf(delta, sizeof delta, "%.1f", h.adjusted_improvement);
  switch (style) {
    case 0: return p + "\n" + conf;
    case 1: return "**" + p.substr(0, 11) + "** " + std::to_string(label) + "\n**CONFIDENCE:** " +
                   std::string(to_phrase(c)) + "\n";
    case 2: return std::string("Estimated SNOT-22 improvement is about ") + delta +
                   " points.\n\n" + p + "\n" + conf + ".";
    default: return p + "\n" + conf + "\n\nThis is not medical advice.";
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_replay_fixture <fixtures-dir>\n";
    return 2;
  }
  try {
    const fs::path root(argv[1]);
    const Schema schema = load_schema(default_schema_path());
    const auto records = cohort::generate_synthetic(524, kSeed, cohort::default_generator_config(), schema);
    const auto split = cohort::stratified_split(records, schema, 0.2, kSeed);
    const auto test = cohort::select(records, split.test_ids);

    struct Case {
      const PatientRecord* record;
      int label;
      heuristic::HeuristicPrediction h;
    };
    std::vector<Case> cases;
    for (const auto& r : test)
      cases.push_back({&r, *cohort::derive_label(r.snot22_baseline, r.snot22_6mo, schema.mcid),
                       heuristic::predict_heuristic(r)});
    std::vector<const Case*> neg, pos;
    for (const auto& c : cases) (c.label ? pos : neg).push_back(&c);
    if (neg.size() != 20 || pos.size() != 85)
      throw ValidationError("default test split is not 20/85; fixtures need a different seed");
    auto by_delta = [](const Case* a, const Case* b) {
      return a->h.adjusted_improvement < b->h.adjusted_improvement;
    };
    std::sort(neg.begin(), neg.end(), by_delta);
    std::sort(pos.begin(), pos.end(), by_delta);

    // Claude: 6 of 20 class-0 and 3 of 85 class-1 cases called 0, lowest rule delta first.
    std::map<std::string, int> claude;
    for (std::size_t i = 0; i < neg.size(); ++i) claude[neg[i]->record->patient_id] = i < 6 ? 0 : 1;
    for (std::size_t i = 0; i < pos.size(); ++i) claude[pos[i]->record->patient_id] = i < 3 ? 0 : 1;

    const fs::path store_dir = root / "claude" / "replay";
    fs::remove_all(store_dir);
    protocol::ReplayStore store(store_dir);
    std::mt19937_64 rng(kSeed);
    std::uniform_int_distribution<int> pattern(0, 9), style(0, 3);
    for (const auto& c : cases) {
      const int target = claude.at(c.record->patient_id);
      const auto prompt = cli::case_prompt(*c.record, schema, nullptr, 5);
      const Confidence agree =
          c.h.label == target ? c.h.confidence : Confidence::SomewhatUnsure;
      std::vector<std::string> replies;
      const int kind = pattern(rng);
      for (int r = 0; r < 5; ++r) {
        int label = target;
        Confidence conf = agree;
        if (kind >= 6 && r == 4) {  // 4-1 split
          label = 1 - target;
          conf = Confidence::Neutral;
        } else if (kind == 8 && r == 3) {  // 3-2 split
          label = 1 - target;
          conf = Confidence::SomewhatUnsure;
        }
        std::string text = respond(label, conf, style(rng), c.h);
        if (kind == 9 && r == 2) {  // one unparseable replicate, 4 valid agree
          text = "I cannot determine this from the data provided.";
        }
        if (kind == 5 && r == 1) {  // vocabulary outside the closed set
          text = "PREDICTION: " + std::to_string(target) + "\nCONFIDENCE: fairly sure";
        }
        replies.push_back(std::move(text));
      }
      std::vector<protocol::ParsedOutput> parsed;
      for (const auto& t : replies) parsed.push_back(protocol::parse_response(t));
      if (protocol::aggregate_replicates(parsed).final_label != target)
        throw ValidationError("fixture replicates do not aggregate to the target label");
      for (int r = 0; r < 5; ++r) store.record(prompt.hash, r, replies[static_cast<std::size_t>(r)]);
    }
    write_file(root / "claude" / "cohort.csv", cohort::serialize_cohort(test, schema));

    // MLP: 9 of 20 class-0 correct, 5 of 85 class-1 missed.
    metrics::PredictionSet mlp;
    mlp.model = "mlp";
    std::uniform_real_distribution<double> high(0.5, 0.99), low(0.01, 0.4999);
    for (const auto& c : cases) {
      const auto& id = c.record->patient_id;
      const auto& group = c.label ? pos : neg;
      const auto rank = static_cast<std::size_t>(
          std::find(group.begin(), group.end(), &c) - group.begin());
      const int hard = c.label ? (rank < 5 ? 0 : 1) : (rank < 9 ? 0 : 1);
      mlp.case_ids.push_back(id);
      mlp.labels.push_back(c.label);
      mlp.hard_labels.push_back(hard);
      mlp.scores.push_back(hard ? high(rng) : low(rng));
    }
    mlp.sort_by_case_id();
    write_file(root / "mlp_fig2_predictions.json", cli::to_json(mlp).dump(2) + "\n");
    std::cout << "wrote " << cases.size() << " replay entries to " << store_dir.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
