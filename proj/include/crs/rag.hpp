#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace crs::rag {

struct Passage {
  std::string passage_id;
  std::string source_tag;
  std::string text;
  std::size_t token_count = 0;
};

// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> tokenize(std::string_view text);

// JSON array of {passage_id, source_tag, text}. Ids must be unique and texts nonempty.
std::vector<Passage> parse_corpus(std::string_view json_text);
std::vector<Passage> load_corpus(const std::filesystem::path& path);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

struct Posting {
  std::size_t doc = 0;
  std::size_t term_frequency = 0;
};

// Okapi BM25 over an immutable passage set, with idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
 public:
  explicit Bm25Index(std::vector<Passage> passages, Bm25Params params = {});

  const std::vector<Passage>& passages() const { return passages_; }
  const std::map<std::string, std::vector<Posting>, std::less<>>& postings() const { return postings_; }
  const std::vector<std::size_t>& doc_lengths() const { return doc_lengths_; }
  double average_doc_length() const { return average_length_; }
  const Bm25Params& params() const { return params_; }
  std::size_t size() const { return passages_.size(); }

  double idf(std::string_view term) const;
  double score(std::span<const std::string> query_terms, std::size_t doc) const;
  // Throws ValidationError for an unknown passage id.
  double score(std::span<const std::string> query_terms, std::string_view passage_id) const;

 private:
  std::vector<Passage> passages_;
  Bm25Params params_;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
  std::vector<std::size_t> doc_lengths_;
  double average_length_ = 0.0;
};

struct ScoredPassage {
  const Passage* passage = nullptr;
  double score = 0.0;
};

struct Retrieval {
  std::vector<ScoredPassage> hits;  // descending score, ties by passage id
  bool corpus_smaller_than_k = false;
};

Retrieval retrieve(const Bm25Index& index, std::string_view query_text, std::size_t k = 5);

// Tagged passage blocks in the given order, followed by the prompt body.
// No passages leaves the prompt unchanged.
std::string augment_prompt(std::string_view prompt_text, std::span<const Passage> passages);

}  // namespace crs::rag
