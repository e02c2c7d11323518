#pragma once

#include <functional>
#include <limits>

#include "nestlm/cells.hpp"
#include "nestlm/corpus.hpp"

namespace nestlm::training {

struct TrainingConfig {
  int bptt_len = 32;
  int batch = 32;
  double lr = 1e-3;
  int epochs = 20;       // stack architectures train for stack_epochs instead
  int stack_epochs = 3;
  uint64_t seed = 1;
  enum class Precision { F32, F64 };
  Precision precision = Precision::F32;
  double clip_norm = 0;  // 0 disables clipping

  void validate() const;
  int effective_epochs(cells::Arch arch) const {
    return (arch == cells::Arch::StackRnn || arch == cells::Arch::StackLstm) ? stack_epochs
                                                                             : epochs;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;  // nats/token
  double valid_ppl = 0;
};

struct TrainResult {
  cells::ModelConfig model_config;
  TrainingConfig train_config;
  std::string dataset;
  std::vector<EpochMetrics> curves;
  double best_valid_ppl = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  long param_count = 0;
  std::string status = "ok";  // or "diverged: ..."
  cells::Checkpoint checkpoint;

  bool ok() const { return status == "ok"; }
};

TrainResult train(const cells::ModelConfig& mc, const TrainingConfig& tc,
                  const corpus::TokenStream& train_stream,
                  const corpus::TokenStream& valid_stream, const std::string& dataset_label);

// exp(mean next-token cross-entropy in nats); state reset at stream start only
double perplexity(const cells::Checkpoint& ck, const corpus::TokenStream& stream);

// single continuous pass, windowed internally with state carryover; the
// result does not depend on the window partitioning
template <class T>
double mean_cross_entropy(const cells::LanguageModel<T>& lm, const corpus::TokenStream& stream,
                          int window = 512);

// nats/token of the true source on this stream including the eos accounting;
// the rejection-sampling acceptance rate conditions the distribution.
double stream_entropy_oracle(const grammar::GrammarParams& params,
                             const corpus::TokenStream& stream, double acceptance_rate);

struct GridResult {
  std::vector<TrainResult> results;
  int best = -1;
  const TrainResult& best_result() const;
};

// the full hyperparameter grid: layers {1,2,4} x hidden {4,8,16,32} x
// embedding {4,8} x dropout {0.1,0.3} (x chunk {1,4} for onlstm)
std::vector<cells::ModelConfig> full_grid(cells::Arch arch);
// reduced grid for the acceptance runs: layers {1,2} x hidden {16,32},
// embedding 8, dropout 0.1
std::vector<cells::ModelConfig> reduced_grid(cells::Arch arch);

// Trains every config; per-config failures are recorded, not fatal. Ties on
// validation perplexity break toward fewer parameters, then grid order.
GridResult grid_search(const std::vector<cells::ModelConfig>& grid, const TrainingConfig& tc,
                       const corpus::TokenStream& train_stream,
                       const corpus::TokenStream& valid_stream, const std::string& dataset_label,
                       int workers = 0,
                       const std::function<void(const TrainResult&)>& on_done = nullptr);

// run directory: config.json, metrics.csv, checkpoint.json
void save_run(const TrainResult& r, const std::string& dir);

}  // namespace nestlm::training
