#include "nestlm/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace nestlm::training {

using cells::Arch;
using cells::Checkpoint;
using cells::DropoutPlan;
using cells::LanguageModel;
using cells::lm_window;
using cells::ModelConfig;
using cells::StateV;
using numcore::AdamConfig;
using numcore::Parameter;
using numcore::Tape;
using json = nlohmann::json;

void TrainingConfig::validate() const {
  if (bptt_len < 1 || batch < 1 || epochs < 1 || stack_epochs < 1)
    throw ConfigError("training config values must be positive");
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
}

namespace {

// contiguous split of the stream into `batch` lanes
struct Lanes {
  std::vector<const int32_t*> base;
  long len = 0;  // tokens per lane
};

Lanes split_lanes(const corpus::TokenStream& stream, int batch) {
  Lanes lanes;
  lanes.len = static_cast<long>(stream.ids.size()) / batch;
  if (lanes.len < 2) throw ConfigError("stream too short for the requested batch size");
  for (int b = 0; b < batch; ++b) lanes.base.push_back(stream.ids.data() + b * lanes.len);
  return lanes;
}

template <class T>
double grad_global_norm(const std::vector<Parameter<T>*>& params) {
  double acc = 0;
  for (const Parameter<T>* p : params) acc += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(acc);
}

template <class T>
TrainResult train_impl(const ModelConfig& mc, const TrainingConfig& tc,
                       const corpus::TokenStream& train_stream,
                       const corpus::TokenStream& valid_stream,
                       const std::string& dataset_label) {
  TrainResult out;
  out.model_config = mc;
  out.train_config = tc;
  out.dataset = dataset_label;

  Rng rng(tc.seed);
  LanguageModel<T> lm(mc, rng);
  out.param_count = lm.param_count();
  auto params = lm.parameters();
  AdamConfig adam;
  adam.lr = tc.lr;

  Lanes lanes = split_lanes(train_stream, tc.batch);
  const int epochs = tc.effective_epochs(mc.arch);
  const uint64_t vocab_hash = corpus::Vocabulary::standard().hash();

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    StateV<T> state = lm.zero_state(tc.batch);
    double loss_acc = 0;
    long token_acc = 0;
    for (long pos = 0; pos + 1 < lanes.len;) {
      const int w = static_cast<int>(std::min<long>(tc.bptt_len, lanes.len - 1 - pos));
      std::vector<std::vector<int>> xs(w, std::vector<int>(tc.batch));
      std::vector<std::vector<int>> ys(w, std::vector<int>(tc.batch));
      for (int t = 0; t < w; ++t)
        for (int b = 0; b < tc.batch; ++b) {
          xs[t][b] = lanes.base[b][pos + t];
          ys[t][b] = lanes.base[b][pos + t + 1];
        }
      Tape<T> tape(true);
      DropoutPlan<T> plan = DropoutPlan<T>::draw(mc, w, tc.batch, rng);
      auto res = lm_window(lm, tape, std::move(state), xs, ys, &plan);
      const double loss = static_cast<double>(tape.val(res.loss)(0, 0));
      if (!std::isfinite(loss)) {
        out.status = "diverged: loss " + std::to_string(loss) + " at epoch " +
                     std::to_string(epoch) + " pos " + std::to_string(pos);
        return out;
      }
      tape.backward(res.loss);
      if (tc.clip_norm > 0) {
        const double norm = grad_global_norm<T>(params);
        if (norm > tc.clip_norm)
          for (Parameter<T>* p : params) p->grad *= static_cast<T>(tc.clip_norm / norm);
      }
      for (Parameter<T>* p : params) numcore::adam_step(*p, adam);
      state = lm.detach_state(tape, res.state);  // gradient boundary between windows
      loss_acc += loss * w * tc.batch;
      token_acc += static_cast<long>(w) * tc.batch;
      pos += w;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_acc / static_cast<double>(token_acc);
    em.valid_ppl = std::exp(mean_cross_entropy(lm, valid_stream));
    out.curves.push_back(em);
    if (em.valid_ppl < out.best_valid_ppl) {
      out.best_valid_ppl = em.valid_ppl;
      out.best_epoch = epoch;
      cells::Provenance prov;
      prov.dataset = dataset_label;
      prov.seed = tc.seed;
      prov.epoch = epoch;
      prov.valid_ppl = em.valid_ppl;
      prov.extra["precision"] = tc.precision == TrainingConfig::Precision::F64 ? "f64" : "f32";
      prov.extra["clip_norm"] = std::to_string(tc.clip_norm);
      out.checkpoint = Checkpoint::from_model(lm, vocab_hash, std::move(prov));
    }
  }
  return out;
}

}  // namespace

TrainResult train(const ModelConfig& mc, const TrainingConfig& tc,
                  const corpus::TokenStream& train_stream,
                  const corpus::TokenStream& valid_stream, const std::string& dataset_label) {
  mc.validate();
  tc.validate();
  if (tc.precision == TrainingConfig::Precision::F64)
    return train_impl<double>(mc, tc, train_stream, valid_stream, dataset_label);
  return train_impl<float>(mc, tc, train_stream, valid_stream, dataset_label);
}

template <class T>
double mean_cross_entropy(const LanguageModel<T>& lm, const corpus::TokenStream& stream,
                          int window) {
  const long n = static_cast<long>(stream.ids.size());
  if (n < 2) throw ConfigError("stream too short to evaluate");
  if (window < 1) throw ConfigError("window must be positive");
  StateV<T> state = lm.zero_state(1);
  double total = 0;
  for (long pos = 0; pos + 1 < n;) {
    const int w = static_cast<int>(std::min<long>(window, n - 1 - pos));
    std::vector<std::vector<int>> xs(w, std::vector<int>(1));
    std::vector<std::vector<int>> ys(w, std::vector<int>(1));
    for (int t = 0; t < w; ++t) {
      xs[t][0] = stream.ids[pos + t];
      ys[t][0] = stream.ids[pos + t + 1];
    }
    Tape<T> tape(false);
    auto res = lm_window<T>(lm, tape, std::move(state), xs, ys, nullptr);
    total += static_cast<double>(tape.val(res.loss)(0, 0)) * w;
    state = lm.detach_state(tape, res.state);
    pos += w;
  }
  return total / static_cast<double>(n - 1);
}

template double mean_cross_entropy<float>(const LanguageModel<float>&,
                                          const corpus::TokenStream&, int);
template double mean_cross_entropy<double>(const LanguageModel<double>&,
                                           const corpus::TokenStream&, int);

double perplexity(const Checkpoint& ck, const corpus::TokenStream& stream) {
  if (ck.vocab_hash != corpus::Vocabulary::standard().hash())
    throw ConfigError("checkpoint vocabulary hash does not match this build's vocabulary");
  LanguageModel<double> lm = ck.to_model<double>();
  return std::exp(mean_cross_entropy(lm, stream));
}

double stream_entropy_oracle(const grammar::GrammarParams& params,
                             const corpus::TokenStream& stream, double acceptance_rate) {
  if (acceptance_rate <= 0 || acceptance_rate > 1)
    throw ConfigError("acceptance rate must lie in (0,1]");
  const corpus::Vocabulary& vocab = corpus::Vocabulary::standard();
  const double log_z = std::log(acceptance_rate);
  double total_lp = 0;
  long tokens = 0;
  std::vector<grammar::Token> sentence;
  for (int32_t id : stream.ids) {
    if (id == vocab.eos_id()) {
      grammar::Derivation d = grammar::parse_sentence(params, sentence);
      total_lp += grammar::derivation_log_prob(params, d) - log_z;
      tokens += static_cast<long>(sentence.size()) + 1;  // + eos
      sentence.clear();
    } else {
      sentence.push_back(vocab.token(id));
    }
  }
  if (tokens == 0) throw ConfigError("stream has no complete sentences");
  return -total_lp / static_cast<double>(tokens);
}

const TrainResult& GridResult::best_result() const {
  if (best < 0) throw ConfigError("grid produced no successful result");
  return results[static_cast<size_t>(best)];
}

std::vector<ModelConfig> full_grid(Arch arch) {
  std::vector<ModelConfig> grid;
  for (int layers : {1, 2, 4})
    for (int hidden : {4, 8, 16, 32})
      for (int embedding : {4, 8})
        for (double dropout : {0.1, 0.3}) {
          ModelConfig mc;
          mc.arch = arch;
          mc.layers = layers;
          mc.hidden = hidden;
          mc.embedding = embedding;
          mc.dropout = dropout;
          if (arch == Arch::OnLstm) {
            for (int chunk : {1, 4}) {
              if (hidden % chunk != 0) continue;
              mc.chunk = chunk;
              grid.push_back(mc);
            }
          } else {
            grid.push_back(mc);
          }
        }
  return grid;
}

std::vector<ModelConfig> reduced_grid(Arch arch) {
  std::vector<ModelConfig> grid;
  for (int layers : {1, 2})
    for (int hidden : {16, 32}) {
      ModelConfig mc;
      mc.arch = arch;
      mc.layers = layers;
      mc.hidden = hidden;
      mc.embedding = 8;
      mc.dropout = 0.1;
      grid.push_back(mc);
    }
  return grid;
}

GridResult grid_search(const std::vector<ModelConfig>& grid, const TrainingConfig& tc,
                       const corpus::TokenStream& train_stream,
                       const corpus::TokenStream& valid_stream, const std::string& dataset_label,
                       int workers, const std::function<void(const TrainResult&)>& on_done) {
  if (grid.empty()) throw ConfigError("grid must not be empty");
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(grid.size())));

  GridResult out;
  out.results.resize(grid.size());
  std::mutex mu;
  size_t next = 0;
  auto worker = [&] {
    for (;;) {
      size_t idx;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= grid.size()) return;
        idx = next++;
      }
      TrainResult r;
      try {
        r = train(grid[idx], tc, train_stream, valid_stream, dataset_label);
      } catch (const std::exception& e) {
        r.model_config = grid[idx];
        r.train_config = tc;
        r.status = std::string("error: ") + e.what();
      }
      {
        std::lock_guard<std::mutex> lock(mu);
        out.results[idx] = std::move(r);
        if (on_done) on_done(out.results[idx]);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (size_t i = 0; i < out.results.size(); ++i) {
    const TrainResult& r = out.results[i];
    if (!r.ok()) continue;
    if (out.best < 0) {
      out.best = static_cast<int>(i);
      continue;
    }
    const TrainResult& b = out.results[static_cast<size_t>(out.best)];
    if (r.best_valid_ppl < b.best_valid_ppl ||
        (r.best_valid_ppl == b.best_valid_ppl && r.param_count < b.param_count))
      out.best = static_cast<int>(i);
  }
  return out;
}

void save_run(const TrainResult& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  json cfg;
  cfg["arch"] = cells::arch_name(r.model_config.arch);
  cfg["model"] = {{"layers", r.model_config.layers},
                  {"hidden", r.model_config.hidden},
                  {"embedding", r.model_config.embedding},
                  {"dropout", r.model_config.dropout},
                  {"chunk", r.model_config.chunk},
                  {"n_stacks", r.model_config.n_stacks},
                  {"stack_depth", r.model_config.stack_depth},
                  {"stack_noop", r.model_config.stack_noop}};
  cfg["training"] = {{"bptt_len", r.train_config.bptt_len},
                     {"batch", r.train_config.batch},
                     {"lr", r.train_config.lr},
                     {"epochs", r.train_config.epochs},
                     {"stack_epochs", r.train_config.stack_epochs},
                     {"seed", r.train_config.seed},
                     {"clip_norm", r.train_config.clip_norm},
                     {"precision",
                      r.train_config.precision == TrainingConfig::Precision::F64 ? "f64" : "f32"}};
  cfg["dataset"] = r.dataset;
  cfg["status"] = r.status;
  cfg["best_valid_ppl"] = r.best_valid_ppl;
  cfg["best_epoch"] = r.best_epoch;
  cfg["param_count"] = r.param_count;
  std::ofstream(dir + "/config.json") << cfg.dump(2) << '\n';

  std::ofstream metrics(dir + "/metrics.csv");
  metrics << "epoch,train_loss,valid_ppl\n";
  for (const EpochMetrics& em : r.curves)
    metrics << em.epoch << ',' << em.train_loss << ',' << em.valid_ppl << '\n';

  if (r.ok()) r.checkpoint.save(dir + "/checkpoint.json");
}

}  // namespace nestlm::training
