#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nestlm/tape.hpp"

namespace nestlm::cells {

using numcore::Mat;
using numcore::Mat64;
using numcore::Parameter;
using numcore::Tape;

enum class Arch { Srn, Gru, Lstm, OnLstm, StackRnn, StackLstm };

std::string arch_name(Arch a);
Arch arch_from(const std::string& name);

struct ModelConfig {
  Arch arch = Arch::Lstm;
  int layers = 1;
  int hidden = 32;
  int embedding = 8;
  double dropout = 0.1;
  int chunk = 1;  // ON-LSTM master-gate group size
  int n_stacks = 1;
  int stack_depth = 1024;
  int readout_k = 2;
  bool stack_noop = false;
  int vocab = 26;

  void validate() const;
  bool lstm_family() const {
    return arch == Arch::Lstm || arch == Arch::OnLstm || arch == Arch::StackLstm;
  }
  bool has_stack() const { return arch == Arch::StackRnn || arch == Arch::StackLstm; }
  int n_actions() const { return stack_noop ? 3 : 2; }
  int stack_width() const { return hidden; }
  std::string name() const;
};

template <class T>
struct LayerState {
  Mat<T> h, c;                 // (batch x hidden); c only for the LSTM family
  std::vector<Mat<T>> stacks;  // per stack: (batch x depth*width)
};

template <class T>
using StateV = std::vector<LayerState<T>>;

struct LayerRefs {
  int h = -1, c = -1;
  std::vector<int> stacks;
};
using StateRefs = std::vector<LayerRefs>;

// Per-step dropout masks as tape refs: site 0 is the embedding output,
// site l (1-based) the input of layer l. Masks are never applied to
// recurrent state.
using SiteMasks = std::vector<int>;

template <class T>
class LanguageModel {
 public:
  LanguageModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    init(rng);
  }
  explicit LanguageModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  long param_count() const {
    long n = 0;
    for (const auto& p : params_) n += static_cast<long>(p->size());
    return n;
  }

  StateV<T> zero_state(int batch) const {
    StateV<T> s(cfg_.layers);
    for (auto& ls : s) {
      ls.h = Mat<T>::Zero(batch, cfg_.hidden);
      if (cfg_.lstm_family()) ls.c = Mat<T>::Zero(batch, cfg_.hidden);
      if (cfg_.has_stack())
        ls.stacks.assign(cfg_.n_stacks,
                         Mat<T>::Zero(batch, cfg_.stack_depth * cfg_.stack_width()));
    }
    return s;
  }

  StateRefs state_refs(Tape<T>& tape, StateV<T> s) const {
    StateRefs refs(s.size());
    for (size_t l = 0; l < s.size(); ++l) {
      refs[l].h = tape.input(std::move(s[l].h));
      if (cfg_.lstm_family()) refs[l].c = tape.input(std::move(s[l].c));
      for (auto& st : s[l].stacks) refs[l].stacks.push_back(tape.input(std::move(st)));
    }
    return refs;
  }

  StateV<T> detach_state(const Tape<T>& tape, const StateRefs& refs) const {
    StateV<T> s(refs.size());
    for (size_t l = 0; l < refs.size(); ++l) {
      s[l].h = tape.val(refs[l].h);
      if (cfg_.lstm_family()) s[l].c = tape.val(refs[l].c);
      for (int r : refs[l].stacks) s[l].stacks.push_back(tape.val(r));
    }
    return s;
  }

  // One timestep over all layers; returns the logits ref. `state` is updated
  // to the new state refs; input states are left untouched on the tape.
  // `ablate_units`, when given, clamps those hidden components (and cell
  // components unless ablate_cell is false) to zero right after the targeted
  // layer's update, so both the decoder and the recurrent carry see zeros.
  int step(Tape<T>& tape, StateRefs& state, const std::vector<int>& tokens,
           const SiteMasks* masks = nullptr, const std::vector<int>* ablate_units = nullptr,
           bool ablate_cell = true, bool ablate_all_layers = false) const {
    int x = tape.embed(tape.use(*emb_), tokens);
    if (masks) x = tape.mul(x, (*masks)[0]);
    int unit_mask = -1;
    if (ablate_units && !ablate_units->empty()) {
      Mat<T> m = Mat<T>::Ones(static_cast<Eigen::Index>(tokens.size()), cfg_.hidden);
      for (int u : *ablate_units) {
        if (u < 0 || u >= cfg_.hidden) throw ConfigError("ablation unit id out of range");
        m.col(u).setZero();
      }
      unit_mask = tape.input(std::move(m));
    }
    for (int l = 0; l < cfg_.layers; ++l) {
      if (masks && l > 0) x = tape.mul(x, (*masks)[l]);
      LayerRefs& st = state[static_cast<size_t>(l)];
      x = step_layer(tape, l, st, x);
      if (unit_mask >= 0 && (ablate_all_layers || l == cfg_.layers - 1)) {
        st.h = tape.mul(st.h, unit_mask);
        if (ablate_cell && cfg_.lstm_family()) st.c = tape.mul(st.c, unit_mask);
        x = st.h;
      }
    }
    return tape.affine(x, tape.use(*dec_w_), tape.use(*dec_b_));
  }

  // Eval-mode step without recording; state advances in place.
  Mat<T> step_eval(StateV<T>& state, const std::vector<int>& tokens) const {
    Tape<T> tape(false);
    StateRefs refs = state_refs(tape, std::move(state));
    int logits = step(tape, refs, tokens, nullptr);
    state = detach_state(tape, refs);
    return tape.val(logits);
  }

 private:
  struct LayerParams {
    // dense cell weights
    Parameter<T>*Wx = nullptr, *Wh = nullptr, *b = nullptr;
    Parameter<T>* Whn = nullptr;              // GRU candidate recurrence
    Parameter<T>*Wmx = nullptr, *Wmh = nullptr, *bm = nullptr;  // ON-LSTM master gates
    Parameter<T>* Wr = nullptr;               // stack readout
    std::vector<Parameter<T>*> Wa, ba, Wv, bv;  // per-stack action/push heads
  };

  Parameter<T>* make(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    params_.push_back(std::make_unique<Parameter<T>>(name, rows, cols));
    return params_.back().get();
  }

  void build() {
    emb_ = make("emb", cfg_.vocab, cfg_.embedding);
    const int h = cfg_.hidden;
    const int w = cfg_.stack_width();
    for (int l = 0; l < cfg_.layers; ++l) {
      const int in = l == 0 ? cfg_.embedding : h;
      std::string pre = "l" + std::to_string(l) + ".";
      LayerParams lp;
      switch (cfg_.arch) {
        case Arch::Srn:
          lp.Wx = make(pre + "Wx", in, h);
          lp.Wh = make(pre + "Wh", h, h);
          lp.b = make(pre + "b", 1, h);
          break;
        case Arch::Gru:
          lp.Wx = make(pre + "Wx", in, 3 * h);   // [z r n]
          lp.Wh = make(pre + "Wh", h, 2 * h);    // [z r]
          lp.Whn = make(pre + "Whn", h, h);
          lp.b = make(pre + "b", 1, 3 * h);
          break;
        case Arch::Lstm:
        case Arch::StackLstm:
          lp.Wx = make(pre + "Wx", in, 4 * h);   // [i f g o]
          lp.Wh = make(pre + "Wh", h, 4 * h);
          lp.b = make(pre + "b", 1, 4 * h);
          break;
        case Arch::OnLstm: {
          lp.Wx = make(pre + "Wx", in, 4 * h);
          lp.Wh = make(pre + "Wh", h, 4 * h);
          lp.b = make(pre + "b", 1, 4 * h);
          const int m = h / cfg_.chunk;
          lp.Wmx = make(pre + "Wmx", in, 2 * m);  // [master-f master-i]
          lp.Wmh = make(pre + "Wmh", h, 2 * m);
          lp.bm = make(pre + "bm", 1, 2 * m);
          break;
        }
        case Arch::StackRnn:
          lp.Wx = make(pre + "Wx", in, h);
          lp.Wh = make(pre + "Wh", h, h);
          lp.b = make(pre + "b", 1, h);
          break;
      }
      if (cfg_.has_stack()) {
        lp.Wr = make(pre + "Wr", cfg_.n_stacks * cfg_.readout_k * w, h);
        for (int s = 0; s < cfg_.n_stacks; ++s) {
          std::string sp = pre + "s" + std::to_string(s) + ".";
          lp.Wa.push_back(make(sp + "Wa", h, cfg_.n_actions()));
          lp.ba.push_back(make(sp + "ba", 1, cfg_.n_actions()));
          lp.Wv.push_back(make(sp + "Wv", h, w));
          lp.bv.push_back(make(sp + "bv", 1, w));
        }
      }
      layers_.push_back(lp);
    }
    dec_w_ = make("dec.W", h, cfg_.vocab);
    dec_b_ = make("dec.b", 1, cfg_.vocab);
  }

  void init(Rng& rng) {
    for (auto& up : params_) {
      Parameter<T>& p = *up;
      if (p.name == "emb") {
        for (Eigen::Index i = 0; i < p.value.size(); ++i)
          p.value.data()[i] = static_cast<T>(rng.uniform(-0.1, 0.1));
      } else if (p.value.rows() == 1) {
        p.value.setZero();  // biases
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows()));
        for (Eigen::Index i = 0; i < p.value.size(); ++i)
          p.value.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
      }
    }
    if (cfg_.lstm_family()) {
      // forget-gate bias starts at 1
      for (int l = 0; l < cfg_.layers; ++l) {
        Parameter<T>& b = *layers_[static_cast<size_t>(l)].b;
        b.value.row(0).segment(cfg_.hidden, cfg_.hidden).setConstant(T(1));
      }
    }
  }

  int stack_readout(Tape<T>& tape, const LayerRefs& st) const {
    const int w = cfg_.stack_width();
    int r = -1;
    for (int s = 0; s < cfg_.n_stacks; ++s) {
      int top = tape.slice_cols(st.stacks[static_cast<size_t>(s)], 0, cfg_.readout_k * w);
      r = (r < 0) ? top : tape.concat_cols(r, top);
    }
    return r;
  }

  void stack_update(Tape<T>& tape, int l, LayerRefs& st, int h_new) const {
    const LayerParams& lp = layers_[static_cast<size_t>(l)];
    const int w = cfg_.stack_width();
    for (int s = 0; s < cfg_.n_stacks; ++s) {
      int a = tape.softmax_rows(
          tape.affine(h_new, tape.use(*lp.Wa[static_cast<size_t>(s)]),
                      tape.use(*lp.ba[static_cast<size_t>(s)])));
      int v = tape.sigmoid(tape.affine(h_new, tape.use(*lp.Wv[static_cast<size_t>(s)]),
                                       tape.use(*lp.bv[static_cast<size_t>(s)])));
      st.stacks[static_cast<size_t>(s)] = tape.stack_blend(
          st.stacks[static_cast<size_t>(s)], a, v, cfg_.stack_depth, w);
    }
  }

  // standard LSTM gate algebra from a preactivation ref; updates h/c refs
  void lstm_core(Tape<T>& tape, int gates, LayerRefs& st) const {
    const int h = cfg_.hidden;
    int i = tape.sigmoid(tape.slice_cols(gates, 0, h));
    int f = tape.sigmoid(tape.slice_cols(gates, h, h));
    int g = tape.tanh_(tape.slice_cols(gates, 2 * h, h));
    int o = tape.sigmoid(tape.slice_cols(gates, 3 * h, h));
    st.c = tape.add(tape.mul(f, st.c), tape.mul(i, g));
    st.h = tape.mul(o, tape.tanh_(st.c));
  }

  int step_layer(Tape<T>& tape, int l, LayerRefs& st, int x) const {
    const LayerParams& lp = layers_[static_cast<size_t>(l)];
    const int h = cfg_.hidden;
    switch (cfg_.arch) {
      case Arch::Srn: {
        int pre = tape.add_bias(
            tape.add(tape.matmul(x, tape.use(*lp.Wx)), tape.matmul(st.h, tape.use(*lp.Wh))),
            tape.use(*lp.b));
        st.h = tape.tanh_(pre);
        return st.h;
      }
      case Arch::Gru: {
        int xg = tape.add_bias(tape.matmul(x, tape.use(*lp.Wx)), tape.use(*lp.b));
        int hg = tape.matmul(st.h, tape.use(*lp.Wh));
        int z = tape.sigmoid(tape.add(tape.slice_cols(xg, 0, h), tape.slice_cols(hg, 0, h)));
        int r = tape.sigmoid(tape.add(tape.slice_cols(xg, h, h), tape.slice_cols(hg, h, h)));
        int n = tape.tanh_(tape.add(tape.slice_cols(xg, 2 * h, h),
                                    tape.matmul(tape.mul(r, st.h), tape.use(*lp.Whn))));
        st.h = tape.add(tape.mul(z, st.h), tape.mul(tape.one_minus(z), n));
        return st.h;
      }
      case Arch::Lstm: {
        int gates = tape.add_bias(
            tape.add(tape.matmul(x, tape.use(*lp.Wx)), tape.matmul(st.h, tape.use(*lp.Wh))),
            tape.use(*lp.b));
        lstm_core(tape, gates, st);
        return st.h;
      }
      case Arch::OnLstm: {
        int gates = tape.add_bias(
            tape.add(tape.matmul(x, tape.use(*lp.Wx)), tape.matmul(st.h, tape.use(*lp.Wh))),
            tape.use(*lp.b));
        int mg = tape.add_bias(tape.add(tape.matmul(x, tape.use(*lp.Wmx)),
                                        tape.matmul(st.h, tape.use(*lp.Wmh))),
                               tape.use(*lp.bm));
        const int m = h / cfg_.chunk;
        int mf = tape.cumax_rows(tape.slice_cols(mg, 0, m));
        int mi = tape.one_minus(tape.cumax_rows(tape.slice_cols(mg, m, m)));
        if (cfg_.chunk > 1) {
          mf = tape.repeat_cols(mf, cfg_.chunk);
          mi = tape.repeat_cols(mi, cfg_.chunk);
        }
        int omega = tape.mul(mf, mi);
        int i = tape.sigmoid(tape.slice_cols(gates, 0, h));
        int f = tape.sigmoid(tape.slice_cols(gates, h, h));
        int g = tape.tanh_(tape.slice_cols(gates, 2 * h, h));
        int o = tape.sigmoid(tape.slice_cols(gates, 3 * h, h));
        int fhat = tape.add(tape.mul(f, omega), tape.sub(mf, omega));
        int ihat = tape.add(tape.mul(i, omega), tape.sub(mi, omega));
        st.c = tape.add(tape.mul(fhat, st.c), tape.mul(ihat, g));
        st.h = tape.mul(o, tape.tanh_(st.c));
        return st.h;
      }
      case Arch::StackRnn: {
        int r = stack_readout(tape, st);
        int pre = tape.add_bias(
            tape.add(tape.add(tape.matmul(x, tape.use(*lp.Wx)),
                              tape.matmul(st.h, tape.use(*lp.Wh))),
                     tape.matmul(r, tape.use(*lp.Wr))),
            tape.use(*lp.b));
        st.h = tape.sigmoid(pre);
        stack_update(tape, l, st, st.h);
        return st.h;
      }
      case Arch::StackLstm: {
        int r = stack_readout(tape, st);
        int htilde = tape.add(st.h, tape.matmul(r, tape.use(*lp.Wr)));
        int gates = tape.add_bias(
            tape.add(tape.matmul(x, tape.use(*lp.Wx)), tape.matmul(htilde, tape.use(*lp.Wh))),
            tape.use(*lp.b));
        lstm_core(tape, gates, st);
        stack_update(tape, l, st, st.h);
        return st.h;
      }
    }
    throw ConfigError("unknown architecture");
  }

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<LayerParams> layers_;
  Parameter<T>* emb_ = nullptr;
  Parameter<T>*dec_w_ = nullptr, *dec_b_ = nullptr;
};

// ---- unrolled LM window ----

template <class T>
struct DropoutPlan {
  std::vector<std::vector<Mat<T>>> masks;  // [step][site]

  static DropoutPlan draw(const ModelConfig& cfg, int steps, int batch, Rng& rng) {
    DropoutPlan plan;
    if (cfg.dropout == 0) return plan;
    plan.masks.resize(static_cast<size_t>(steps));
    for (auto& sites : plan.masks) {
      sites.push_back(numcore::dropout_mask<T>(batch, cfg.embedding, cfg.dropout, rng));
      for (int l = 1; l < cfg.layers; ++l)
        sites.push_back(numcore::dropout_mask<T>(batch, cfg.hidden, cfg.dropout, rng));
    }
    return plan;
  }
};

template <class T>
struct WindowResult {
  int loss = -1;            // (1 x 1) mean cross-entropy per token, nats
  std::vector<int> logits;  // per step
  StateRefs state;
};

// xs/ys are [step][batch]; ys may be empty for logits-only runs. The plan,
// when nonempty, must cover all steps.
template <class T>
WindowResult<T> lm_window(const LanguageModel<T>& lm, Tape<T>& tape, StateV<T> s0,
                          const std::vector<std::vector<int>>& xs,
                          const std::vector<std::vector<int>>& ys,
                          const DropoutPlan<T>* plan = nullptr) {
  WindowResult<T> out;
  out.state = lm.state_refs(tape, std::move(s0));
  std::vector<int> step_losses;
  for (size_t t = 0; t < xs.size(); ++t) {
    SiteMasks masks;
    const SiteMasks* masks_ptr = nullptr;
    if (plan && !plan->masks.empty()) {
      for (const Mat<T>& m : plan->masks[t]) masks.push_back(tape.input(m));
      masks_ptr = &masks;
    }
    int logits = lm.step(tape, out.state, xs[t], masks_ptr);
    out.logits.push_back(logits);
    if (!ys.empty()) step_losses.push_back(tape.ce_mean(logits, ys[t]));
  }
  if (!step_losses.empty()) {
    int acc = step_losses[0];
    for (size_t i = 1; i < step_losses.size(); ++i) acc = tape.add(acc, step_losses[i]);
    out.loss = tape.scale(acc, 1.0 / static_cast<double>(step_losses.size()));
  }
  return out;
}

// ---- checkpoints ----

struct Provenance {
  std::string dataset;
  uint64_t seed = 0;
  int epoch = 0;
  double valid_ppl = 0;
  std::map<std::string, std::string> extra;
};

struct Checkpoint {
  int version = 1;
  ModelConfig config;
  uint64_t vocab_hash = 0;
  Provenance prov;
  std::vector<std::pair<std::string, Mat64>> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  template <class T>
  static Checkpoint from_model(const LanguageModel<T>& model, uint64_t vocab_hash,
                               Provenance prov) {
    Checkpoint ck;
    ck.config = model.config();
    ck.vocab_hash = vocab_hash;
    ck.prov = std::move(prov);
    auto& m = const_cast<LanguageModel<T>&>(model);
    for (Parameter<T>* p : m.parameters())
      ck.tensors.emplace_back(p->name, p->value.template cast<double>());
    return ck;
  }

  template <class T>
  LanguageModel<T> to_model() const {
    LanguageModel<T> model(config);
    for (const auto& [name, value] : tensors) {
      Parameter<T>* p = model.find(name);
      if (!p) throw ConfigError("checkpoint tensor '" + name + "' has no matching parameter");
      if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
        throw ConfigError("checkpoint tensor '" + name + "' has mismatched shape");
      p->value = value.template cast<T>();
    }
    return model;
  }
};

}  // namespace nestlm::cells
