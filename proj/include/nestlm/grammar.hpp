#pragma once

#include <string>
#include <vector>

#include "nestlm/common.hpp"

namespace nestlm::grammar {

// Production system:
//   S  -> NP VP {1-p1} | NP S VP {p1}
//   NP -> N {1-p2} | A NP {p2}
//   VP -> V {1-p2} | A VP {p2}
//   N/V/A -> 5 lexemes, 0.2 each; N and V carry a grammatical number shared
//   per nesting level (feature agreement).

enum class TokenClass { Noun, Verb, Adjective, Eos };
enum class Number { Sg, Pl, None };

struct Token {
  TokenClass cls = TokenClass::Eos;
  int lexeme = 0;  // 1..5 for content tokens
  Number number = Number::None;

  std::string text() const;
  static Token parse(const std::string& s);  // throws ParseError(0, ...) on bad text

  bool operator==(const Token&) const = default;
};

struct GrammarParams {
  double p1 = 0.5;  // center-embedding probability
  double p2 = 0.5;  // adjective-prefix probability
  int lexemes_per_class = 5;
  double lexeme_prob = 0.2;
  double number_prob_sg = 0.5;

  void validate() const;  // throws ConfigError
};

// One nesting level: its agreement pair plus the adjective lexemes drawn in
// front of the noun and in front of the verb.
struct Level {
  Token noun, verb;
  std::vector<int> noun_adjs;  // lexemes of adjectives preceding the noun
  std::vector<int> verb_adjs;

  bool operator==(const Level&) const = default;
};

// Compact canonical form of the (unique) parse tree: levels are ordered
// outermost to innermost; the yield is n_1 .. n_d v_d .. v_1 with the
// adjective runs in place.
struct Derivation {
  std::vector<Level> levels;

  int depth() const { return static_cast<int>(levels.size()); }
  std::vector<Token> yield() const;
  std::string text() const;        // space-separated token text
  std::string bracketed() const;   // (S (NP (A a3) (N n5[sg])) ...) rendering

  bool operator==(const Derivation&) const = default;
};

struct TruncationLimits {
  int max_depth = 1;
  int max_length = 2;  // sentence token count
  long presample_size = 0;

  void validate() const;
};

// Number of production expansions after which a single derivation is aborted.
inline constexpr long kExpansionBudget = 10000;

Derivation sample_derivation(const GrammarParams& params, Rng& rng);

// Natural-log probability of the derivation under the grammar (productions,
// lexeme choices and number choices). Throws StructureError on invariant
// violations.
double derivation_log_prob(const GrammarParams& params, const Derivation& d);

// Inverse of Derivation::yield(); the grammar is unambiguous so this either
// returns the unique parse or throws ParseError with the failing position.
Derivation parse_sentence(const GrammarParams& params, const std::vector<Token>& tokens);

TruncationLimits estimate_truncation(const GrammarParams& params, long presample_size, Rng& rng);

std::vector<Token> tokenize(const std::string& line);

}  // namespace nestlm::grammar
