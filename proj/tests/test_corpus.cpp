#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nestlm/corpus.hpp"

using namespace nestlm;
using namespace nestlm::corpus;

namespace {
std::string slurp(const std::string& path) {
  std::ifstream is(path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}
}  // namespace

TEST_CASE("vocabulary is the fixed 26-token set") {
  const Vocabulary& v = Vocabulary::standard();
  CHECK(v.size() == 26);
  int id = v.id("n3[pl]");
  CHECK(v.text(id) == "n3[pl]");
  CHECK_THROWS_AS(v.id("v6[sg]"), ParseError);
  CHECK(v.eos_id() == 0);
  CHECK(v.verb_ids(Number::Sg).size() == 5);
  for (int i : v.verb_ids(Number::Pl)) {
    CHECK(v.is_verb(i));
    CHECK(v.token(i).number == Number::Pl);
  }
  CHECK(v.hash() == Vocabulary::standard().hash());
}

TEST_CASE("corpus hits the token target and is deterministic") {
  grammar::GrammarParams p;  // 0.5, 0.5
  Rng lim_rng(5);
  auto limits = grammar::estimate_truncation(p, 10000, lim_rng);
  TokenStream a = build_corpus(p, limits, 50000, 99);
  CHECK(a.stats.tokens >= 50000);
  CHECK(a.stats.tokens <= 50000 + limits.max_length + 1);
  CHECK(a.stats.sentences == static_cast<long>(a.sentence_starts.size()));
  CHECK(a.stats.max_depth <= limits.max_depth);
  CHECK(a.stats.max_length <= limits.max_length);
  CHECK(a.acceptance_rate > 0.5);

  TokenStream b = build_corpus(p, limits, 50000, 99);
  CHECK(a.ids == b.ids);

  auto tmp1 = std::filesystem::temp_directory_path() / "nestlm_corpus_a.txt";
  auto tmp2 = std::filesystem::temp_directory_path() / "nestlm_corpus_b.txt";
  save_corpus(a, tmp1.string());
  save_corpus(b, tmp2.string());
  CHECK(slurp(tmp1.string()) == slurp(tmp2.string()));

  TokenStream loaded = load_corpus(tmp1.string(), a.id);
  CHECK(loaded.ids == a.ids);
  std::filesystem::remove(tmp1);
  std::filesystem::remove(tmp2);
}

TEST_CASE("the 1M-token target lands within half a percent") {
  grammar::GrammarParams p;  // 0.5, 0.5
  Rng lim_rng(5);
  auto limits = grammar::estimate_truncation(p, 10000, lim_rng);
  TokenStream s = build_corpus(p, limits, 1000000, 44);
  CHECK(s.stats.tokens >= 995000);
  CHECK(s.stats.tokens <= 1005000);
}

TEST_CASE("p1=0 corpus has exactly one noun and verb per sentence") {
  grammar::GrammarParams p;
  p.p1 = 0;
  p.p2 = 0.3;
  grammar::TruncationLimits limits{1, 40, 0};
  TokenStream s = build_corpus(p, limits, 20000, 3);
  const Vocabulary& v = Vocabulary::standard();
  int nouns = 0, verbs = 0;
  long sentences = 0;
  for (int32_t id : s.ids) {
    if (id == v.eos_id()) {
      CHECK(nouns == 1);
      CHECK(verbs == 1);
      nouns = verbs = 0;
      ++sentences;
    } else if (v.is_noun(id)) {
      ++nouns;
    } else if (v.is_verb(id)) {
      ++verbs;
    }
  }
  CHECK(sentences == s.stats.sentences);
  CHECK(s.stats.depth_hist.size() == 1);
  CHECK(s.stats.depth_hist.at(1) == sentences);
}

TEST_CASE("misconfigured limits trip the acceptance-rate guard") {
  grammar::GrammarParams p;
  p.p1 = 0.95;
  p.p2 = 0.7;  // acceptance under the tight limits is ~0.5%
  grammar::TruncationLimits tight{1, 2, 0};
  CHECK_THROWS_AS(build_corpus(p, tight, 5000, 2), SampleError);
}

TEST_CASE("every corpus sentence parses back") {
  grammar::GrammarParams p;
  p.p1 = 0.3;
  p.p2 = 0.5;
  grammar::TruncationLimits limits{4, 30, 0};
  TokenStream s = build_corpus(p, limits, 10000, 12);
  const Vocabulary& v = Vocabulary::standard();
  std::vector<grammar::Token> sentence;
  for (int32_t id : s.ids) {
    if (id == v.eos_id()) {
      CHECK_NOTHROW(grammar::parse_sentence(p, sentence));
      sentence.clear();
    } else {
      sentence.push_back(v.token(id));
    }
  }
}

TEST_CASE("statistics recompute matches builder stats") {
  grammar::GrammarParams p;
  grammar::TruncationLimits limits{5, 40, 0};
  TokenStream s = build_corpus(p, limits, 15000, 8);
  StreamStats st = dataset_statistics(s);
  CHECK(st.sentences == s.stats.sentences);
  CHECK(st.depth_hist == s.stats.depth_hist);
  CHECK(st.spacing_hist == s.stats.spacing_hist);
  CHECK(st.length_hist == s.stats.length_hist);
  long total = 0;
  for (auto& [d, c] : st.depth_hist) total += c;
  CHECK(total == st.sentences);  // histogram total equals eos count
}

TEST_CASE("depth-2/depth-1 ratio matches the geometric law pre-truncation") {
  grammar::GrammarParams p;  // p1 = 0.5
  grammar::TruncationLimits loose{100, 100000, 0};
  TokenStream s = build_corpus(p, loose, 400000, 21);
  double d1 = static_cast<double>(s.stats.depth_hist.at(1));
  double d2 = static_cast<double>(s.stats.depth_hist.at(2));
  double ratio = d2 / d1;
  double sigma = ratio * std::sqrt(1 / d1 + 1 / d2);
  CHECK(std::abs(ratio - 0.5) <= 3 * sigma);
}

TEST_CASE("NA task obeys the template") {
  NaTaskSpec spec{2, 2, 1000};
  NaTask task = build_na_task(spec, 77);
  const Vocabulary& v = Vocabulary::standard();
  CHECK(task.sentences.size() == 1000);
  for (const NaSentence& sent : task.sentences) {
    CHECK(static_cast<int>(sent.tokens.size()) == 14);  // 2d + (2d+1)s
    REQUIRE(sent.verb_pos.size() == 2);
    // verbs counted inner to outer; verb k agrees with noun d-k+1
    std::vector<Number> noun_nums;
    int gap = 0;
    for (size_t i = 0; i < sent.tokens.size(); ++i) {
      int id = sent.tokens[i];
      if (v.is_noun(id) || v.is_verb(id)) {
        CHECK(gap == spec.s);  // s adjectives before every number token
        gap = 0;
        if (v.is_noun(id)) noun_nums.push_back(v.token(id).number);
      } else {
        ++gap;
      }
    }
    CHECK(gap == spec.s);  // trailing affix
    REQUIRE(noun_nums.size() == 2);
    CHECK(sent.verb_num[0] == noun_nums[1]);  // innermost verb, innermost noun
    CHECK(sent.verb_num[1] == noun_nums[0]);
    for (size_t k = 0; k < sent.verb_pos.size(); ++k) {
      int id = sent.tokens[static_cast<size_t>(sent.verb_pos[k])];
      CHECK(v.is_verb(id));
      CHECK(v.token(id).number == sent.verb_num[k]);
    }
    // pattern bit k set iff noun k+1 plural (outermost first)
    CHECK(((sent.noun_pattern >> 0) & 1) == (noun_nums[0] == Number::Pl ? 1 : 0));
    CHECK(((sent.noun_pattern >> 1) & 1) == (noun_nums[1] == Number::Pl ? 1 : 0));
  }
}

TEST_CASE("d=1 s=1 sentences have length 5") {
  NaTask task = build_na_task(NaTaskSpec{1, 1, 10}, 5);
  for (const auto& sent : task.sentences) CHECK(sent.tokens.size() == 5);
}

TEST_CASE("the NA grid has 170 specs and valid lengths") {
  auto grid = na_grid();
  CHECK(grid.size() == 170);
  for (const auto& spec : grid) {
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.sentence_length() == 2 * spec.d + (2 * spec.d + 1) * spec.s);
  }
  CHECK(grid.back().sentence_length() == 692);  // d=10, s=32
}

TEST_CASE("verb numbers are balanced per position") {
  NaTask task = build_na_task(NaTaskSpec{3, 2, 1000}, 123);
  for (int k = 0; k < 3; ++k) {
    int sg = 0;
    for (const auto& sent : task.sentences)
      if (sent.verb_num[static_cast<size_t>(k)] == Number::Sg) ++sg;
    CHECK(sg >= 453);  // 500 +- 3 sigma, sigma = sqrt(1000)/2
    CHECK(sg <= 547);
  }
}

TEST_CASE("NA task saves and loads") {
  NaTask task = build_na_task(NaTaskSpec{2, 3, 50}, 9);
  auto tmp = std::filesystem::temp_directory_path() / "nestlm_na.txt";
  save_na_task(task, tmp.string());
  NaTask loaded = load_na_task(tmp.string());
  CHECK(loaded.spec.d == 2);
  CHECK(loaded.spec.s == 3);
  CHECK(loaded.seed == 9);
  REQUIRE(loaded.sentences.size() == task.sentences.size());
  for (size_t i = 0; i < task.sentences.size(); ++i) {
    CHECK(loaded.sentences[i].tokens == task.sentences[i].tokens);
    CHECK(loaded.sentences[i].verb_pos == task.sentences[i].verb_pos);
    CHECK(loaded.sentences[i].verb_num == task.sentences[i].verb_num);
    CHECK(loaded.sentences[i].noun_pattern == task.sentences[i].noun_pattern);
  }
  std::filesystem::remove(tmp);
  std::filesystem::remove(tmp.string() + ".idx");
}

TEST_CASE("manifest round-trips") {
  DatasetManifest m;
  DatasetRecord r;
  r.id = DatasetId{0.5, 0.3, "train", 17};
  r.params.p1 = 0.5;
  r.params.p2 = 0.3;
  r.limits = grammar::TruncationLimits{4, 28, 100000};
  r.target_tokens = 1000000;
  r.tokens = 1000003;
  r.sentences = 120000;
  r.max_depth = 4;
  r.max_spacing = 13;
  r.max_length = 28;
  r.acceptance_rate = 0.93;
  r.path = "x/train.txt";
  m.datasets.push_back(r);
  m.na_dir = "x/na";
  auto tmp = std::filesystem::temp_directory_path() / "nestlm_manifest.json";
  m.save(tmp.string());
  DatasetManifest l = DatasetManifest::load(tmp.string());
  REQUIRE(l.datasets.size() == 1);
  CHECK(l.find(0.5, 0.3, "train") != nullptr);
  CHECK(l.find(0.1, 0.3, "train") == nullptr);
  CHECK(l.datasets[0].max_spacing == 13);
  CHECK(l.datasets[0].limits.max_length == 28);
  std::filesystem::remove(tmp);
}
