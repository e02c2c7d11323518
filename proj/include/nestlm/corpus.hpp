#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nestlm/grammar.hpp"

namespace nestlm::corpus {

using grammar::Number;
using grammar::Token;
using grammar::TokenClass;

// Fixed 26-entry vocabulary: eos + 5 nouns x2 numbers + 5 verbs x2 + 5 adjectives.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  int size() const { return static_cast<int>(texts_.size()); }
  int eos_id() const { return 0; }
  int id(const std::string& text) const;  // throws ParseError on unknown token
  int id(const Token& t) const { return id(t.text()); }
  const std::string& text(int id) const;
  Token token(int id) const;
  uint64_t hash() const;  // FNV-1a over the ordered token texts

  int noun_id(int lexeme, Number n) const { return 1 + (lexeme - 1) * 2 + (n == Number::Pl); }
  int verb_id(int lexeme, Number n) const { return 11 + (lexeme - 1) * 2 + (n == Number::Pl); }
  int adj_id(int lexeme) const { return 21 + (lexeme - 1); }
  bool is_verb(int id) const { return id >= 11 && id <= 20; }
  bool is_noun(int id) const { return id >= 1 && id <= 10; }
  // the five verb ids carrying the given number
  std::vector<int> verb_ids(Number n) const;

 private:
  Vocabulary();
  std::vector<std::string> texts_;
  std::unordered_map<std::string, int> ids_;
};

struct DatasetId {
  double p1 = 0, p2 = 0;
  std::string split;  // train | valid | test
  uint64_t seed = 0;
  std::string name() const;
};

struct StreamStats {
  std::map<int, long> depth_hist;
  std::map<int, long> spacing_hist;  // max spacing per sentence
  std::map<int, long> length_hist;   // sentence token count (without eos)
  long sentences = 0;
  long tokens = 0;  // stream length including eos markers
  int max_depth = 0, max_spacing = 0, max_length = 0;
};

struct TokenStream {
  DatasetId id;
  std::vector<int32_t> ids;              // token ids, eos after every sentence
  std::vector<int64_t> sentence_starts;  // index of each sentence's first token
  StreamStats stats;
  double acceptance_rate = 1.0;  // fraction of sampled sentences inside the limits
};

// max consecutive adjectives between adjacent number-carrying tokens
int max_spacing(const std::vector<Token>& sentence);

TokenStream build_corpus(const grammar::GrammarParams& params,
                         const grammar::TruncationLimits& limits, long target_tokens,
                         uint64_t seed);

StreamStats dataset_statistics(const TokenStream& stream);

void save_corpus(const TokenStream& stream, const std::string& path);
TokenStream load_corpus(const std::string& path, const DatasetId& id);

// ---- Number-agreement tasks ----

struct NaTaskSpec {
  int d = 1;           // dependency count, 1..10
  int s = 1;           // spacing, 1..16 or 32
  int n_sentences = 1000;
  void validate() const;
  int sentence_length() const { return 2 * d + (2 * d + 1) * s; }
};

struct NaSentence {
  std::vector<int32_t> tokens;     // no eos
  std::vector<int> verb_pos;       // token index per verb, innermost first
  std::vector<Number> verb_num;    // expected number per verb, innermost first
  uint32_t noun_pattern = 0;       // bit k set iff noun k+1 (outermost first) is plural
};

struct NaTask {
  NaTaskSpec spec;
  uint64_t seed = 0;
  std::vector<NaSentence> sentences;
};

NaTask build_na_task(const NaTaskSpec& spec, uint64_t seed);

// the full d in 1..10 x s in {1..16, 32} grid (170 specs)
std::vector<NaTaskSpec> na_grid();

void save_na_task(const NaTask& task, const std::string& path);  // + ".idx" sidecar
NaTask load_na_task(const std::string& path);

// ---- Manifests ----

struct DatasetRecord {
  DatasetId id;
  grammar::GrammarParams params;
  grammar::TruncationLimits limits;
  long target_tokens = 0;
  long tokens = 0;
  long sentences = 0;
  int max_depth = 0, max_spacing = 0, max_length = 0;
  double acceptance_rate = 1.0;
  std::string path;
};

struct DatasetManifest {
  std::vector<DatasetRecord> datasets;
  std::string na_dir;
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
  const DatasetRecord* find(double p1, double p2, const std::string& split) const;
};

}  // namespace nestlm::corpus
