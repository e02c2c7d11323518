#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "nestlm/training.hpp"

using namespace nestlm;
using namespace nestlm::training;
using cells::Arch;
using cells::ModelConfig;

namespace {

// small shared corpus fixture
struct Fixture {
  grammar::GrammarParams params;
  grammar::TruncationLimits limits;
  corpus::TokenStream train, valid;
  Fixture() {
    Rng rng(1);
    limits = grammar::estimate_truncation(params, 10000, rng);
    train = corpus::build_corpus(params, limits, 30000, 11);
    valid = corpus::build_corpus(params, limits, 6000, 12);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

ModelConfig small_lstm() {
  ModelConfig mc;
  mc.arch = Arch::Lstm;
  mc.layers = 1;
  mc.hidden = 16;
  mc.embedding = 8;
  mc.dropout = 0.1;
  return mc;
}

}  // namespace

TEST_CASE("training config validation") {
  TrainingConfig tc;
  tc.lr = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainingConfig{};
  tc.batch = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainingConfig{};
  CHECK(tc.effective_epochs(Arch::Lstm) == 20);
  CHECK(tc.effective_epochs(Arch::StackRnn) == 3);
  CHECK(tc.effective_epochs(Arch::StackLstm) == 3);
}

TEST_CASE("one epoch of training beats the uniform baseline") {
  TrainingConfig tc;
  tc.epochs = 1;
  tc.seed = 5;
  TrainResult r = train(small_lstm(), tc, fixture().train, fixture().valid, "unit");
  REQUIRE(r.ok());
  REQUIRE(r.curves.size() == 1);
  // the first training loss is near the ln 26 uniform baseline (averaged over
  // the epoch it is already below it, so allow a generous band downward)
  CHECK(r.curves[0].train_loss < std::log(26.0) + 0.15);
  CHECK(r.curves[0].valid_ppl < 26.0);
  CHECK(r.best_epoch == 1);
  CHECK(r.checkpoint.prov.valid_ppl == r.best_valid_ppl);
}

TEST_CASE("loss at step zero is the uniform baseline") {
  // evaluate an untrained model: perplexity ~ 26 within 10%
  Rng rng(3);
  cells::LanguageModel<double> lm(small_lstm(), rng);
  double ppl = std::exp(mean_cross_entropy(lm, fixture().valid));
  CHECK(ppl == doctest::Approx(26.0).epsilon(0.10));
}

TEST_CASE("a uniform model scores exactly the vocabulary size") {
  cells::LanguageModel<double> lm(small_lstm());  // zero parameters -> uniform logits
  double ppl = std::exp(mean_cross_entropy(lm, fixture().valid));
  CHECK(ppl == doctest::Approx(26.0).epsilon(1e-9));
}

TEST_CASE("perplexity is invariant to the evaluation window partitioning") {
  Rng rng(41);
  cells::ModelConfig mc = small_lstm();
  mc.hidden = 8;
  cells::LanguageModel<double> lm(mc, rng);
  double a = mean_cross_entropy(lm, fixture().valid, 512);
  double b = mean_cross_entropy(lm, fixture().valid, 64);
  double c = mean_cross_entropy(lm, fixture().valid, 1000000);
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
  CHECK(a == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("training is deterministic in 64-bit single-threaded mode") {
  TrainingConfig tc;
  tc.epochs = 1;
  tc.seed = 9;
  tc.precision = TrainingConfig::Precision::F64;
  ModelConfig mc = small_lstm();
  mc.hidden = 8;
  TrainResult a = train(mc, tc, fixture().train, fixture().valid, "unit");
  TrainResult b = train(mc, tc, fixture().train, fixture().valid, "unit");
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a.best_valid_ppl == b.best_valid_ppl);
  REQUIRE(a.checkpoint.tensors.size() == b.checkpoint.tensors.size());
  for (size_t i = 0; i < a.checkpoint.tensors.size(); ++i)
    CHECK(a.checkpoint.tensors[i].second == b.checkpoint.tensors[i].second);  // bit-identical
}

TEST_CASE("returned checkpoint is epoch-best") {
  TrainingConfig tc;
  tc.epochs = 3;
  tc.seed = 2;
  ModelConfig mc = small_lstm();
  mc.hidden = 8;
  TrainResult r = train(mc, tc, fixture().train, fixture().valid, "unit");
  REQUIRE(r.ok());
  for (const EpochMetrics& em : r.curves) CHECK(r.best_valid_ppl <= em.valid_ppl);
}

TEST_CASE("perplexity of trained checkpoint and vocabulary check") {
  TrainingConfig tc;
  tc.epochs = 1;
  tc.seed = 4;
  tc.precision = TrainingConfig::Precision::F64;  // same arithmetic as perplexity()
  ModelConfig mc = small_lstm();
  mc.hidden = 8;
  TrainResult r = train(mc, tc, fixture().train, fixture().valid, "unit");
  REQUIRE(r.ok());
  double ppl = perplexity(r.checkpoint, fixture().valid);
  CHECK(ppl == doctest::Approx(r.best_valid_ppl).epsilon(1e-9));

  cells::Checkpoint bad = r.checkpoint;
  bad.vocab_hash = 1;
  CHECK_THROWS_AS(perplexity(bad, fixture().valid), ConfigError);
}

TEST_CASE("no model beats the source: entropy floor") {
  double h = stream_entropy_oracle(fixture().params, fixture().valid,
                                   fixture().valid.acceptance_rate);
  CHECK(h > 0);
  double floor_ppl = std::exp(h);
  CHECK(floor_ppl > 5.0);
  CHECK(floor_ppl < 26.0);
  TrainingConfig tc;
  tc.epochs = 2;
  tc.seed = 6;
  TrainResult r = train(small_lstm(), tc, fixture().train, fixture().valid, "unit");
  REQUIRE(r.ok());
  CHECK(r.best_valid_ppl >= floor_ppl - 0.35);  // small estimation slack
}

TEST_CASE("gradient-flow boundary: windows depend only on the detached state") {
  // two identical windows fed the same carried state give identical gradients
  // regardless of what produced that state
  Rng rng(7);
  ModelConfig mc = small_lstm();
  mc.hidden = 4;
  mc.dropout = 0;
  cells::LanguageModel<double> lm(mc, rng);
  std::vector<std::vector<int>> xs{{1}, {2}}, ys{{2}, {3}};
  auto grads_from = [&](const cells::StateV<double>& s0) {
    for (auto* p : lm.parameters()) p->grad.setZero();
    numcore::Tape<double> tape(true);
    auto res = cells::lm_window<double>(lm, tape, s0, xs, ys, nullptr);
    tape.backward(res.loss);
    std::vector<numcore::Mat64> out;
    for (auto* p : lm.parameters()) out.push_back(p->grad);
    return out;
  };
  // produce the same detached state via two different histories
  auto sA = lm.zero_state(1);
  lm.step_eval(sA, {5});
  auto sB = sA;  // same values, different "history"
  auto ga = grads_from(sA);
  auto gb = grads_from(sB);
  for (size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == gb[i]);
}

TEST_CASE("grid search picks the best and tolerates failures") {
  TrainingConfig tc;
  tc.epochs = 1;
  tc.seed = 8;
  ModelConfig a = small_lstm();
  a.hidden = 8;
  ModelConfig b = small_lstm();
  b.hidden = 4;
  GridResult gr = grid_search({a, b, a}, tc, fixture().train, fixture().valid, "unit", 2);
  REQUIRE(gr.best >= 0);
  const TrainResult& best = gr.best_result();
  for (const TrainResult& r : gr.results)
    if (r.ok()) CHECK(best.best_valid_ppl <= r.best_valid_ppl);
  // duplicate configs give identical perplexities (determinism), so the tie
  // breaks toward the earlier grid entry
  CHECK(gr.results[0].best_valid_ppl == gr.results[2].best_valid_ppl);
  CHECK(gr.best != 2);
}

TEST_CASE("grid of one config returns that config") {
  TrainingConfig tc;
  tc.epochs = 1;
  ModelConfig mc = small_lstm();
  mc.hidden = 4;
  GridResult gr = grid_search({mc}, tc, fixture().train, fixture().valid, "unit", 1);
  CHECK(gr.best == 0);
  CHECK(gr.best_result().model_config.hidden == 4);
}

TEST_CASE("grids have the documented shapes") {
  CHECK(full_grid(Arch::Lstm).size() == 48);
  CHECK(full_grid(Arch::OnLstm).size() == 96);
  CHECK(reduced_grid(Arch::Srn).size() == 4);
}

TEST_CASE("run directory layout") {
  TrainingConfig tc;
  tc.epochs = 1;
  ModelConfig mc = small_lstm();
  mc.hidden = 4;
  TrainResult r = train(mc, tc, fixture().train, fixture().valid, "unit");
  auto dir = (std::filesystem::temp_directory_path() / "nestlm_run").string();
  save_run(r, dir);
  CHECK(std::filesystem::exists(dir + "/config.json"));
  CHECK(std::filesystem::exists(dir + "/metrics.csv"));
  CHECK(std::filesystem::exists(dir + "/checkpoint.json"));
  std::filesystem::remove_all(dir);
}
