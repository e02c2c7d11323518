#include "nestlm/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace nestlm::grammar {

std::string Token::text() const {
  switch (cls) {
    case TokenClass::Noun:
      return "n" + std::to_string(lexeme) + (number == Number::Sg ? "[sg]" : "[pl]");
    case TokenClass::Verb:
      return "v" + std::to_string(lexeme) + (number == Number::Sg ? "[sg]" : "[pl]");
    case TokenClass::Adjective:
      return "a" + std::to_string(lexeme);
    case TokenClass::Eos:
      return "<eos>";
  }
  return "?";
}

Token Token::parse(const std::string& s) {
  if (s == "<eos>") return Token{};
  if (s.size() < 2) throw ParseError(0, "unrecognized token '" + s + "'");
  char k = s[0];
  size_t i = 1;
  int lex = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') lex = lex * 10 + (s[i++] - '0');
  if (lex < 1 || lex > 5) throw ParseError(0, "lexeme out of range in '" + s + "'");
  if (k == 'a') {
    if (i != s.size()) throw ParseError(0, "unexpected suffix in '" + s + "'");
    return Token{TokenClass::Adjective, lex, Number::None};
  }
  if (k != 'n' && k != 'v') throw ParseError(0, "unrecognized token '" + s + "'");
  Number num;
  if (s.compare(i, std::string::npos, "[sg]") == 0)
    num = Number::Sg;
  else if (s.compare(i, std::string::npos, "[pl]") == 0)
    num = Number::Pl;
  else
    throw ParseError(0, "missing number feature in '" + s + "'");
  return Token{k == 'n' ? TokenClass::Noun : TokenClass::Verb, lex, num};
}

void GrammarParams::validate() const {
  if (!(p1 >= 0.0 && p1 < 1.0)) throw ConfigError("p1 must lie in [0,1)");
  if (!(p2 >= 0.0 && p2 < 1.0)) throw ConfigError("p2 must lie in [0,1)");
  if (lexemes_per_class * lexeme_prob != 1.0)
    throw ConfigError("lexemes_per_class * lexeme_prob must equal 1");
  if (!(number_prob_sg >= 0.0 && number_prob_sg <= 1.0))
    throw ConfigError("number_prob_sg must lie in [0,1]");
}

std::vector<Token> Derivation::yield() const {
  std::vector<Token> out;
  for (const Level& lv : levels) {
    for (int a : lv.noun_adjs) out.push_back(Token{TokenClass::Adjective, a, Number::None});
    out.push_back(lv.noun);
  }
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
    for (int a : it->verb_adjs) out.push_back(Token{TokenClass::Adjective, a, Number::None});
    out.push_back(it->verb);
  }
  return out;
}

std::string Derivation::text() const {
  std::ostringstream os;
  auto toks = yield();
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) os << ' ';
    os << toks[i].text();
  }
  return os.str();
}

namespace {

void render_chain(std::ostringstream& os, const std::string& phrase, const char cls,
                  const std::vector<int>& adjs, const Token& t) {
  for (size_t i = 0; i < adjs.size(); ++i)
    os << "(" << phrase << " (A a" << adjs[i] << ") ";
  os << "(" << phrase << " (" << cls << " " << t.text() << "))";
  for (size_t i = 0; i < adjs.size(); ++i) os << ")";
}

void render_s(std::ostringstream& os, const Derivation& d, size_t level) {
  const Level& lv = d.levels[level];
  os << "(S ";
  render_chain(os, "NP", 'N', lv.noun_adjs, lv.noun);
  os << " ";
  if (level + 1 < d.levels.size()) {
    render_s(os, d, level + 1);
    os << " ";
  }
  render_chain(os, "VP", 'V', lv.verb_adjs, lv.verb);
  os << ")";
}

}  // namespace

std::string Derivation::bracketed() const {
  std::ostringstream os;
  if (!levels.empty()) render_s(os, *this, 0);
  return os.str();
}

void TruncationLimits::validate() const {
  if (max_depth < 1 || max_length < 2)
    throw ConfigError("truncation limits below the minimal sentence (depth 1, length 2)");
}

Derivation sample_derivation(const GrammarParams& params, Rng& rng) {
  params.validate();
  long budget = kExpansionBudget;
  auto spend = [&budget]() {
    if (--budget < 0)
      throw SampleError("derivation exceeded the expansion budget of " +
                        std::to_string(kExpansionBudget) + " steps");
  };

  // Draw order per S expansion: production branch, level number, NP chain
  // (adjective Bernoullis with lexemes, then noun lexeme), embedded S, VP chain.
  Derivation d;
  std::vector<bool> embeds;
  // First walk the S spine.
  for (;;) {
    spend();
    bool embed = rng.bernoulli(params.p1);
    Number num = rng.bernoulli(params.number_prob_sg) ? Number::Sg : Number::Pl;
    Level lv;
    lv.noun = Token{TokenClass::Noun, 0, num};
    lv.verb = Token{TokenClass::Verb, 0, num};
    // NP chain
    while (true) {
      spend();
      if (!rng.bernoulli(params.p2)) break;
      lv.noun_adjs.push_back(1 + rng.uniform_int(params.lexemes_per_class));
      spend();  // A -> a_i expansion
    }
    spend();  // N -> n_i
    lv.noun.lexeme = 1 + rng.uniform_int(params.lexemes_per_class);
    d.levels.push_back(std::move(lv));
    embeds.push_back(embed);
    if (!embed) break;
  }
  // Then close the VP chains innermost-first (matching left-to-right expansion
  // order of the productions).
  for (auto it = d.levels.rbegin(); it != d.levels.rend(); ++it) {
    while (true) {
      spend();
      if (!rng.bernoulli(params.p2)) break;
      it->verb_adjs.push_back(1 + rng.uniform_int(params.lexemes_per_class));
      spend();
    }
    spend();
    it->verb.lexeme = 1 + rng.uniform_int(params.lexemes_per_class);
  }
  return d;
}

double derivation_log_prob(const GrammarParams& params, const Derivation& d) {
  params.validate();
  if (d.levels.empty()) throw StructureError("derivation has no levels (depth must be >= 1)");
  double lp = 0.0;
  const double l_lex = std::log(params.lexeme_prob);
  const int depth = d.depth();
  for (int k = 0; k < depth; ++k) {
    const Level& lv = d.levels[k];
    if (lv.noun.cls != TokenClass::Noun || lv.verb.cls != TokenClass::Verb)
      throw StructureError("level " + std::to_string(k + 1) + " is not a noun/verb pair");
    if (lv.noun.number != lv.verb.number || lv.noun.number == Number::None)
      throw StructureError("agreement violated at level " + std::to_string(k + 1));
    if (lv.noun.lexeme < 1 || lv.noun.lexeme > params.lexemes_per_class ||
        lv.verb.lexeme < 1 || lv.verb.lexeme > params.lexemes_per_class)
      throw StructureError("lexeme out of range at level " + std::to_string(k + 1));
    // S branch: levels 1..depth-1 embed, the innermost does not.
    lp += (k + 1 < depth) ? std::log(params.p1) : std::log(1.0 - params.p1);
    lp += std::log(lv.noun.number == Number::Sg ? params.number_prob_sg
                                                : 1.0 - params.number_prob_sg);
    // NP chain: one p2 factor per adjective, one (1-p2) stop, lexemes throughout.
    for (const auto* adjs : {&lv.noun_adjs, &lv.verb_adjs}) {
      if (!adjs->empty()) {
        if (params.p2 == 0)
          throw StructureError("adjectives present but p2 = 0 at level " + std::to_string(k + 1));
        lp += static_cast<double>(adjs->size()) * std::log(params.p2);
      }
      lp += std::log(1.0 - params.p2) + static_cast<double>(adjs->size() + 1) * l_lex;
    }
  }
  return lp;
}

Derivation parse_sentence(const GrammarParams& params, const std::vector<Token>& tokens) {
  params.validate();
  // Collect (adjective run, number-carrying token) groups; the run attaches to
  // the next number-carrying token.
  struct Group {
    std::vector<int> adjs;
    Token head;
    int pos;  // index of head in tokens
  };
  std::vector<Group> groups;
  std::vector<int> run;
  int run_start = -1;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const Token& t = tokens[i];
    if (t.cls == TokenClass::Adjective) {
      if (run.empty()) run_start = i;
      if (t.lexeme < 1 || t.lexeme > params.lexemes_per_class)
        throw ParseError(i, "lexeme out of range");
      run.push_back(t.lexeme);
    } else if (t.cls == TokenClass::Noun || t.cls == TokenClass::Verb) {
      if (t.lexeme < 1 || t.lexeme > params.lexemes_per_class)
        throw ParseError(i, "lexeme out of range");
      groups.push_back(Group{std::move(run), t, i});
      run.clear();
    } else {
      throw ParseError(i, "eos inside sentence");
    }
  }
  if (!run.empty()) throw ParseError(run_start, "trailing adjectives after the final verb");
  if (groups.empty()) throw ParseError(0, "empty sentence");

  // The number-token sequence must be d nouns followed by d verbs.
  int d = 0;
  while (d < static_cast<int>(groups.size()) && groups[d].head.cls == TokenClass::Noun) ++d;
  if (d == 0) throw ParseError(groups[0].pos, "sentence must start with a noun phrase");
  for (int i = d; i < static_cast<int>(groups.size()); ++i)
    if (groups[i].head.cls != TokenClass::Verb)
      throw ParseError(groups[i].pos, "noun after the first verb");
  if (static_cast<int>(groups.size()) != 2 * d)
    throw ParseError(groups.back().pos, "unbalanced noun/verb counts");

  Derivation out;
  out.levels.resize(d);
  for (int k = 0; k < d; ++k) {
    Level& lv = out.levels[k];
    lv.noun = groups[k].head;
    lv.noun_adjs = groups[k].adjs;
    const Group& vg = groups[2 * d - 1 - k];
    lv.verb = vg.head;
    lv.verb_adjs = vg.adjs;
    if (lv.noun.number != lv.verb.number)
      throw ParseError(vg.pos, "agreement violated at level " + std::to_string(k + 1));
  }
  return out;
}

TruncationLimits estimate_truncation(const GrammarParams& params, long presample_size, Rng& rng) {
  params.validate();
  if (presample_size < 10000) throw ConfigError("presample_size must be >= 10^4");
  std::vector<int> depths, lengths;
  depths.reserve(presample_size);
  lengths.reserve(presample_size);
  for (long i = 0; i < presample_size; ++i) {
    Derivation d = sample_derivation(params, rng);
    depths.push_back(d.depth());
    int len = 0;
    for (const Level& lv : d.levels)
      len += 2 + static_cast<int>(lv.noun_adjs.size() + lv.verb_adjs.size());
    lengths.push_back(len);
  }
  auto pct95 = [](std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
    return v[std::min(idx, v.size() - 1)];
  };
  TruncationLimits lim;
  lim.max_depth = pct95(depths);
  lim.max_length = pct95(lengths);
  lim.presample_size = presample_size;
  lim.validate();
  return lim;
}

std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> out;
  std::istringstream is(line);
  std::string w;
  while (is >> w) out.push_back(Token::parse(w));
  return out;
}

}  // namespace nestlm::grammar
