#include "nestlm/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace nestlm::corpus {

using json = nlohmann::json;

Vocabulary::Vocabulary() {
  texts_.push_back("<eos>");
  for (int lex = 1; lex <= 5; ++lex)
    for (Number n : {Number::Sg, Number::Pl})
      texts_.push_back(Token{TokenClass::Noun, lex, n}.text());
  for (int lex = 1; lex <= 5; ++lex)
    for (Number n : {Number::Sg, Number::Pl})
      texts_.push_back(Token{TokenClass::Verb, lex, n}.text());
  for (int lex = 1; lex <= 5; ++lex)
    texts_.push_back(Token{TokenClass::Adjective, lex, Number::None}.text());
  for (int i = 0; i < static_cast<int>(texts_.size()); ++i) ids_[texts_[i]] = i;
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v;
  return v;
}

int Vocabulary::id(const std::string& text) const {
  auto it = ids_.find(text);
  if (it == ids_.end()) throw ParseError(0, "unknown token '" + text + "'");
  return it->second;
}

const std::string& Vocabulary::text(int id) const {
  if (id < 0 || id >= size()) throw ParseError(0, "token id out of range");
  return texts_[id];
}

Token Vocabulary::token(int id) const { return Token::parse(text(id)); }

uint64_t Vocabulary::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : texts_) {
    for (char c : t) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<int> Vocabulary::verb_ids(Number n) const {
  std::vector<int> out;
  for (int lex = 1; lex <= 5; ++lex) out.push_back(verb_id(lex, n));
  return out;
}

std::string DatasetId::name() const {
  std::ostringstream os;
  os << "p1_" << p1 << "_p2_" << p2 << "_" << split;
  return os.str();
}

int max_spacing(const std::vector<Token>& sentence) {
  int best = 0, run = 0;
  bool seen_number = false;
  for (const Token& t : sentence) {
    if (t.cls == TokenClass::Adjective) {
      ++run;
    } else {
      if (seen_number) best = std::max(best, run);
      seen_number = true;
      run = 0;
    }
  }
  return best;
}

TokenStream build_corpus(const grammar::GrammarParams& params,
                         const grammar::TruncationLimits& limits, long target_tokens,
                         uint64_t seed) {
  params.validate();
  limits.validate();
  const Vocabulary& vocab = Vocabulary::standard();
  Rng rng(seed);
  TokenStream out;
  out.id.p1 = params.p1;
  out.id.p2 = params.p2;
  out.id.seed = seed;
  long sampled = 0, accepted = 0;
  while (static_cast<long>(out.ids.size()) < target_tokens) {
    grammar::Derivation d;
    try {
      d = grammar::sample_derivation(params, rng);
    } catch (const SampleError& e) {
      throw SampleError(std::string(e.what()) + " (corpus seed " + std::to_string(seed) + ")");
    }
    ++sampled;
    auto toks = d.yield();
    int len = static_cast<int>(toks.size());
    if (d.depth() > limits.max_depth || len > limits.max_length) {
      // Rejection sampling: acceptance below 1% means the limits are misconfigured.
      if (sampled >= 1000 && accepted * 100 < sampled)
        throw SampleError("sentence acceptance rate below 1% for dataset " + out.id.name());
      continue;
    }
    ++accepted;
    out.sentence_starts.push_back(static_cast<int64_t>(out.ids.size()));
    for (const Token& t : toks) out.ids.push_back(vocab.id(t));
    out.ids.push_back(vocab.eos_id());

    out.stats.sentences += 1;
    out.stats.depth_hist[d.depth()] += 1;
    int sp = max_spacing(toks);
    out.stats.spacing_hist[sp] += 1;
    out.stats.length_hist[len] += 1;
    out.stats.max_depth = std::max(out.stats.max_depth, d.depth());
    out.stats.max_spacing = std::max(out.stats.max_spacing, sp);
    out.stats.max_length = std::max(out.stats.max_length, len);
  }
  out.stats.tokens = static_cast<long>(out.ids.size());
  out.acceptance_rate = sampled ? static_cast<double>(accepted) / static_cast<double>(sampled) : 1.0;
  return out;
}

StreamStats dataset_statistics(const TokenStream& stream) {
  const Vocabulary& vocab = Vocabulary::standard();
  grammar::GrammarParams params;  // structural statistics only; probabilities unused
  StreamStats st;
  std::vector<Token> sentence;
  for (int32_t id : stream.ids) {
    if (id == vocab.eos_id()) {
      grammar::Derivation d = grammar::parse_sentence(params, sentence);
      st.sentences += 1;
      st.depth_hist[d.depth()] += 1;
      int sp = max_spacing(sentence);
      st.spacing_hist[sp] += 1;
      st.length_hist[static_cast<int>(sentence.size())] += 1;
      st.max_depth = std::max(st.max_depth, d.depth());
      st.max_spacing = std::max(st.max_spacing, sp);
      st.max_length = std::max(st.max_length, static_cast<int>(sentence.size()));
      sentence.clear();
    } else {
      sentence.push_back(vocab.token(id));
    }
  }
  st.tokens = static_cast<long>(stream.ids.size());
  return st;
}

void save_corpus(const TokenStream& stream, const std::string& path) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  bool at_line_start = true;
  for (int32_t id : stream.ids) {
    if (id == vocab.eos_id()) {
      os << '\n';
      at_line_start = true;
    } else {
      if (!at_line_start) os << ' ';
      os << vocab.text(id);
      at_line_start = false;
    }
  }
}

TokenStream load_corpus(const std::string& path, const DatasetId& id) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  TokenStream out;
  out.id = id;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.sentence_starts.push_back(static_cast<int64_t>(out.ids.size()));
    std::istringstream ls(line);
    std::string w;
    while (ls >> w) out.ids.push_back(vocab.id(w));
    out.ids.push_back(vocab.eos_id());
  }
  out.stats = dataset_statistics(out);
  return out;
}

void NaTaskSpec::validate() const {
  if (d < 1 || d > 10) throw ConfigError("NA task d must lie in 1..10");
  if (!((s >= 1 && s <= 16) || s == 32)) throw ConfigError("NA task s must lie in 1..16 or be 32");
  if (n_sentences < 1) throw ConfigError("NA task needs at least one sentence");
}

NaTask build_na_task(const NaTaskSpec& spec, uint64_t seed) {
  spec.validate();
  const Vocabulary& vocab = Vocabulary::standard();
  Rng rng(seed);
  NaTask task;
  task.spec = spec;
  task.seed = seed;
  task.sentences.reserve(spec.n_sentences);
  for (int i = 0; i < spec.n_sentences; ++i) {
    NaSentence sent;
    sent.tokens.reserve(spec.sentence_length());
    std::vector<Number> noun_num(spec.d);
    auto emit_adjs = [&] {
      for (int a = 0; a < spec.s; ++a)
        sent.tokens.push_back(vocab.adj_id(1 + rng.uniform_int(5)));
    };
    emit_adjs();
    for (int k = 0; k < spec.d; ++k) {
      noun_num[k] = rng.bernoulli(0.5) ? Number::Sg : Number::Pl;
      if (noun_num[k] == Number::Pl) sent.noun_pattern |= (1u << k);
      sent.tokens.push_back(vocab.noun_id(1 + rng.uniform_int(5), noun_num[k]));
      emit_adjs();
    }
    for (int k = spec.d - 1; k >= 0; --k) {
      sent.verb_pos.push_back(static_cast<int>(sent.tokens.size()));
      sent.verb_num.push_back(noun_num[k]);
      sent.tokens.push_back(vocab.verb_id(1 + rng.uniform_int(5), noun_num[k]));
      emit_adjs();
    }
    task.sentences.push_back(std::move(sent));
  }
  return task;
}

std::vector<NaTaskSpec> na_grid() {
  std::vector<NaTaskSpec> out;
  for (int d = 1; d <= 10; ++d) {
    for (int s = 1; s <= 16; ++s) out.push_back(NaTaskSpec{d, s, 1000});
    out.push_back(NaTaskSpec{d, 32, 1000});
  }
  return out;
}

void save_na_task(const NaTask& task, const std::string& path) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "d=" << task.spec.d << " s=" << task.spec.s << " seed=" << task.seed
     << " n=" << task.spec.n_sentences << '\n';
  std::ofstream idx(path + ".idx");
  if (!idx) throw std::runtime_error("cannot write " + path + ".idx");
  for (const NaSentence& sent : task.sentences) {
    for (size_t i = 0; i < sent.tokens.size(); ++i) {
      if (i) os << ' ';
      os << vocab.text(sent.tokens[i]);
    }
    os << '\n';
    for (size_t v = 0; v < sent.verb_pos.size(); ++v) {
      if (v) idx << ' ';
      idx << sent.verb_pos[v] << '/' << (sent.verb_num[v] == Number::Sg ? "sg" : "pl");
    }
    idx << '\n';
  }
}

NaTask load_na_task(const std::string& path) {
  const Vocabulary& vocab = Vocabulary::standard();
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ifstream idx(path + ".idx");
  if (!idx) throw std::runtime_error("cannot read " + path + ".idx");
  NaTask task;
  std::string header;
  std::getline(is, header);
  if (std::sscanf(header.c_str(), "d=%d s=%d seed=%llu n=%d", &task.spec.d, &task.spec.s,
                  reinterpret_cast<unsigned long long*>(&task.seed),
                  &task.spec.n_sentences) != 4)
    throw std::runtime_error("bad NA task header in " + path);
  std::string line, iline;
  while (std::getline(is, line) && std::getline(idx, iline)) {
    if (line.empty()) continue;
    NaSentence sent;
    std::istringstream ls(line);
    std::string w;
    int noun_idx = 0;
    while (ls >> w) {
      int id = vocab.id(w);
      if (vocab.is_noun(id)) {
        if (vocab.token(id).number == Number::Pl) sent.noun_pattern |= (1u << noun_idx);
        ++noun_idx;
      }
      sent.tokens.push_back(id);
    }
    std::istringstream isx(iline);
    while (isx >> w) {
      auto slash = w.find('/');
      if (slash == std::string::npos) throw std::runtime_error("bad index entry in " + path);
      sent.verb_pos.push_back(std::stoi(w.substr(0, slash)));
      sent.verb_num.push_back(w.substr(slash + 1) == "sg" ? Number::Sg : Number::Pl);
    }
    task.sentences.push_back(std::move(sent));
  }
  return task;
}

namespace {

json limits_to_json(const grammar::TruncationLimits& lim) {
  return json{{"max_depth", lim.max_depth},
              {"max_length", lim.max_length},
              {"presample_size", lim.presample_size}};
}

grammar::TruncationLimits limits_from_json(const json& j) {
  grammar::TruncationLimits lim;
  lim.max_depth = j.at("max_depth");
  lim.max_length = j.at("max_length");
  lim.presample_size = j.at("presample_size");
  return lim;
}

}  // namespace

void DatasetManifest::save(const std::string& path) const {
  json j;
  j["na_dir"] = na_dir;
  j["datasets"] = json::array();
  for (const DatasetRecord& r : datasets) {
    j["datasets"].push_back(json{{"p1", r.id.p1},
                                 {"p2", r.id.p2},
                                 {"split", r.id.split},
                                 {"seed", r.id.seed},
                                 {"params",
                                  {{"p1", r.params.p1},
                                   {"p2", r.params.p2},
                                   {"number_prob_sg", r.params.number_prob_sg}}},
                                 {"limits", limits_to_json(r.limits)},
                                 {"target_tokens", r.target_tokens},
                                 {"tokens", r.tokens},
                                 {"sentences", r.sentences},
                                 {"max_depth", r.max_depth},
                                 {"max_spacing", r.max_spacing},
                                 {"max_length", r.max_length},
                                 {"acceptance_rate", r.acceptance_rate},
                                 {"path", r.path}});
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  json j = json::parse(is);
  DatasetManifest m;
  m.na_dir = j.value("na_dir", "");
  for (const json& e : j.at("datasets")) {
    DatasetRecord r;
    r.id.p1 = e.at("p1");
    r.id.p2 = e.at("p2");
    r.id.split = e.at("split");
    r.id.seed = e.at("seed");
    r.params.p1 = e.at("params").at("p1");
    r.params.p2 = e.at("params").at("p2");
    r.params.number_prob_sg = e.at("params").at("number_prob_sg");
    r.limits = limits_from_json(e.at("limits"));
    r.target_tokens = e.at("target_tokens");
    r.tokens = e.at("tokens");
    r.sentences = e.at("sentences");
    r.max_depth = e.at("max_depth");
    r.max_spacing = e.at("max_spacing");
    r.max_length = e.at("max_length");
    r.acceptance_rate = e.at("acceptance_rate");
    r.path = e.at("path");
    m.datasets.push_back(std::move(r));
  }
  return m;
}

const DatasetRecord* DatasetManifest::find(double p1, double p2, const std::string& split) const {
  for (const DatasetRecord& r : datasets)
    if (r.id.p1 == p1 && r.id.p2 == p2 && r.id.split == split) return &r;
  return nullptr;
}

}  // namespace nestlm::corpus
