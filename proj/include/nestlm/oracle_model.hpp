#pragma once

#include "nestlm/evaluation.hpp"

namespace nestlm::evaluation {

// Constructed cheat model used to test the evaluation and ablation machinery.
// It solves the agreement task symbolically, but routes all cross-step memory
// through an explicit state vector so ablation semantics match real models:
//   - the designated unit holds the whole pending-number stack in a base-3
//     code (push: h = sign + h/3; pop: h = (h - top) * 3),
//   - two redundant units both hold the most recent noun's number and two
//     redundant units count consumed verbs, so no single ablation can break
//     the innermost dependency,
//   - logits put mass on the verb forms of the decoded number: the stack top
//     while the designated unit is alive; before any verb has been consumed
//     the redundant pair serves as fallback, afterwards a dead stack yields
//     no preference (ties, counted incorrect).
// Net effect: ablating the designated unit floors every outer verb and leaves
// the innermost one intact; ablating any other unit changes nothing.
class DesignatedUnitOracle : public EvalModel {
 public:
  DesignatedUnitOracle(int hidden = 8, int designated = 5, double logit_gain = 8.0)
      : hidden_(hidden), unit_(designated), gain_(logit_gain) {
    if (hidden_ < 6) throw ConfigError("oracle needs at least 6 units");
    int ids[4];
    int next = 0;
    for (int i = 0; next < 4; ++i)
      if (i != unit_) ids[next++] = i;
    ra_ = ids[0];
    rb_ = ids[1];
    ca_ = ids[2];
    cb_ = ids[3];
  }

  int designated_unit() const { return unit_; }
  int ablatable_units() const override { return hidden_; }
  int vocab_size() const override { return 26; }

  void reset(int batch) override { state_ = Mat64::Zero(batch, hidden_); }

  void set_ablation(AblationSpec spec) override { abl_ = std::move(spec); }

  Mat64 step(const std::vector<int>& tokens) override {
    const corpus::Vocabulary& vocab = corpus::Vocabulary::standard();
    const int B = static_cast<int>(tokens.size());
    Mat64 logits = Mat64::Zero(B, 26);
    for (int b = 0; b < B; ++b) {
      const grammar::Token tok = vocab.token(tokens[b]);
      double& stack = state_(b, unit_);
      if (tok.cls == grammar::TokenClass::Noun) {
        const double sign = tok.number == corpus::Number::Sg ? 1.0 : -1.0;
        stack = sign + stack / 3.0;
        state_(b, ra_) = sign;
        state_(b, rb_) = sign;
      } else if (tok.cls == grammar::TokenClass::Verb) {
        if (std::abs(stack) >= 0.25) stack = (stack - (stack > 0 ? 1.0 : -1.0)) * 3.0;
        state_(b, ca_) += 1.0;
        state_(b, cb_) += 1.0;
      }
    }
    for (int u : abl_.units) state_.col(u).setZero();
    for (int b = 0; b < B; ++b) {
      double sign = 0;
      if (std::abs(state_(b, unit_)) >= 0.25) {
        sign = state_(b, unit_) > 0 ? 1.0 : -1.0;
      } else if (std::max(state_(b, ca_), state_(b, cb_)) < 0.5) {
        // nothing popped yet: the most recent noun governs the next verb
        const double r = 0.5 * (state_(b, ra_) + state_(b, rb_));
        if (std::abs(r) >= 0.25) sign = r > 0 ? 1.0 : -1.0;
      }
      if (sign != 0) {
        const corpus::Number num = sign > 0 ? corpus::Number::Sg : corpus::Number::Pl;
        for (int id : vocab.verb_ids(num)) logits(b, id) = gain_;
      }
    }
    return logits;
  }

  Mat64 state_snapshot(bool cell_kind) const override {
    if (cell_kind) throw ConfigError("the oracle has no cell state");
    return state_;
  }

 private:
  int hidden_, unit_, ra_, rb_, ca_, cb_;
  double gain_;
  Mat64 state_;
  AblationSpec abl_;
};

}  // namespace nestlm::evaluation
