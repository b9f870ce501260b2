#include "crs/rag.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "crs/checksum.hpp"
#include "crs/errors.hpp"
#include "json.hpp"

namespace crs::rag {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<Passage> parse_corpus(std::string_view json_text) {
  using nlohmann::json;
  std::vector<Passage> out;
  std::set<std::string> ids;
  try {
    const auto doc = json::parse(json_text);
    const auto& arr = doc.is_object() ? doc.at("passages") : doc;
    for (const auto& p : arr) {
      Passage passage{p.at("passage_id").get<std::string>(), p.at("source_tag").get<std::string>(),
                      p.at("text").get<std::string>(), 0};
      passage.token_count = tokenize(passage.text).size();
      if (passage.passage_id.empty()) throw ValidationError("passage with empty id");
      if (passage.token_count == 0)
        throw ValidationError("passage '" + passage.passage_id + "' has no text");
      if (!ids.insert(passage.passage_id).second)
        throw ValidationError("duplicate passage id '" + passage.passage_id + "'");
      out.push_back(std::move(passage));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed corpus: ") + e.what());
  }
  return out;
}

std::vector<Passage> load_corpus(const std::filesystem::path& path) {
  return parse_corpus(read_file(path));
}

Bm25Index::Bm25Index(std::vector<Passage> passages, Bm25Params params)
    : passages_(std::move(passages)), params_(params) {
  if (passages_.empty()) throw ValidationError("BM25 index needs at least one passage");
  std::set<std::string_view> ids;
  double total = 0.0;
  for (std::size_t d = 0; d < passages_.size(); ++d) {
    if (!ids.insert(passages_[d].passage_id).second)
      throw ValidationError("duplicate passage id '" + passages_[d].passage_id + "'");
    const auto terms = tokenize(passages_[d].text);
    if (terms.empty()) throw ValidationError("passage '" + passages_[d].passage_id + "' has no text");
    passages_[d].token_count = terms.size();
    std::map<std::string, std::size_t> tf;
    for (const auto& t : terms) ++tf[t];
    for (const auto& [term, n] : tf) postings_[term].push_back({d, n});
    doc_lengths_.push_back(terms.size());
    total += static_cast<double>(terms.size());
  }
  average_length_ = total / static_cast<double>(passages_.size());
}

double Bm25Index::idf(std::string_view term) const {
  auto it = postings_.find(term);
  if (it == postings_.end()) return 0.0;
  const double n = static_cast<double>(passages_.size());
  const double df = static_cast<double>(it->second.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::score(std::span<const std::string> query_terms, std::size_t doc) const {
  if (doc >= passages_.size()) throw ValidationError("passage index out of range");
  const double len_norm = 1.0 - params_.b +
                          params_.b * static_cast<double>(doc_lengths_[doc]) / average_length_;
  double s = 0.0;
  for (const auto& term : query_terms) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    auto p = std::lower_bound(it->second.begin(), it->second.end(), doc,
                              [](const Posting& a, std::size_t d) { return a.doc < d; });
    if (p == it->second.end() || p->doc != doc) continue;
    const double tf = static_cast<double>(p->term_frequency);
    s += idf(term) * tf * (params_.k1 + 1.0) / (tf + params_.k1 * len_norm);
  }
  return s;
}

double Bm25Index::score(std::span<const std::string> query_terms,
                        std::string_view passage_id) const {
  for (std::size_t d = 0; d < passages_.size(); ++d)
    if (passages_[d].passage_id == passage_id) return score(query_terms, d);
  throw ValidationError("unknown passage id '" + std::string(passage_id) + "'");
}

Retrieval retrieve(const Bm25Index& index, std::string_view query_text, std::size_t k) {
  if (k < 1) throw ValidationError("retrieve needs k >= 1");
  const auto terms = tokenize(query_text);
  Retrieval out;
  for (std::size_t d = 0; d < index.size(); ++d)
    out.hits.push_back({&index.passages()[d], index.score(terms, d)});
  std::sort(out.hits.begin(), out.hits.end(), [](const ScoredPassage& a, const ScoredPassage& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.passage->passage_id < b.passage->passage_id;
  });
  out.corpus_smaller_than_k = index.size() < k;
  if (out.hits.size() > k) out.hits.resize(k);
  return out;
}

std::string augment_prompt(std::string_view prompt_text, std::span<const Passage> passages) {
  if (passages.empty()) return std::string(prompt_text);
  std::string out = "REFERENCE PASSAGES:\n";
  for (std::size_t i = 0; i < passages.size(); ++i) {
    out += "[" + std::to_string(i + 1) + "] (" + passages[i].source_tag + ") ";
    out += passages[i].text;
    out += '\n';
  }
  out += '\n';
  out += prompt_text;
  return out;
}

}  // namespace crs::rag
