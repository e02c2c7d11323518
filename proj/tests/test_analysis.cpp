#include <algorithm>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "nestlm/analysis.hpp"
#include "nestlm/oracle_model.hpp"
#include "nestlm/training.hpp"

using namespace nestlm;
using namespace nestlm::analysis;
using corpus::NaTask;
using corpus::NaTaskSpec;
using corpus::Number;
using evaluation::DesignatedUnitOracle;
using evaluation::na_accuracy;
using evaluation::RnnEvalModel;

namespace {

cells::Checkpoint small_trained_checkpoint() {
  static cells::Checkpoint ck = [] {
    grammar::GrammarParams params;
    Rng rng(1);
    auto limits = grammar::estimate_truncation(params, 10000, rng);
    auto train_stream = corpus::build_corpus(params, limits, 40000, 21);
    auto valid_stream = corpus::build_corpus(params, limits, 5000, 22);
    cells::ModelConfig mc;
    mc.arch = cells::Arch::Lstm;
    mc.layers = 1;
    mc.hidden = 12;
    mc.embedding = 8;
    mc.dropout = 0.1;
    training::TrainingConfig tc;
    tc.epochs = 4;
    tc.seed = 3;
    auto r = training::train(mc, tc, train_stream, valid_stream, "analysis-fixture");
    REQUIRE(r.ok());
    return r.checkpoint;
  }();
  return ck;
}

std::vector<NaTask> scan_tasks(int max_d, int n) {
  std::vector<NaTask> tasks;
  for (int d = 1; d <= max_d; ++d) tasks.push_back(corpus::build_na_task(NaTaskSpec{d, 2, n}, 91));
  return tasks;
}

}  // namespace

TEST_CASE("ablating no units reproduces the baseline exactly") {
  cells::Checkpoint ck = small_trained_checkpoint();
  NaTask task = corpus::build_na_task(NaTaskSpec{2, 2, 100}, 5);
  auto base = ablate(ck, {});
  auto same = ablate(ck, {});
  auto a = na_accuracy(*base, task, 100);
  auto b = na_accuracy(*same, task, 100);
  CHECK(a.per_verb == b.per_verb);
  CHECK_THROWS_AS(ablate(ck, {99}), ConfigError);
}

TEST_CASE("ablating a dead unit changes nothing") {
  cells::Checkpoint ck = small_trained_checkpoint();
  // kill unit 3's outgoing paths: recurrent rows, decoder row, and its
  // incoming write so the unit is exactly zero throughout
  for (auto& [name, t] : ck.tensors) {
    if (name == "l0.Wh") t.row(3).setZero();
    if (name == "dec.W") t.row(3).setZero();
    if (name == "l0.Wx" || name == "l0.Wh") {
      for (int g = 0; g < 4; ++g) t.col(g * 12 + 3).setZero();
    }
    if (name == "l0.b")
      for (int g = 0; g < 4; ++g) t(0, g * 12 + 3) = 0;
  }
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 200}, 7);
  auto base = ablate(ck, {});
  auto abl = ablate(ck, {3});
  auto a = na_accuracy(*base, task, 200);
  auto b = na_accuracy(*abl, task, 200);
  CHECK(a.per_verb == b.per_verb);
}

TEST_CASE("ablating all units floors the accuracy") {
  cells::Checkpoint ck = small_trained_checkpoint();
  std::vector<int> all(12);
  for (int i = 0; i < 12; ++i) all[static_cast<size_t>(i)] = i;
  auto model = ablate(ck, all);
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 1000}, 13);
  auto acc = na_accuracy(*model, task);
  // constant logits: either near chance or exactly zero under the tie rule
  CHECK((acc.per_verb[0] == 0.0 || std::abs(acc.per_verb[0] - 0.5) < 0.06));
}

TEST_CASE("ablation scan on the designated-unit oracle") {
  auto factory = [] { return std::make_unique<DesignatedUnitOracle>(); };
  auto tasks = scan_tasks(5, 400);
  AblationReport report = ablation_scan(factory, tasks, 0.55, true, false, 2, 400);

  DesignatedUnitOracle probe;
  const int u = probe.designated_unit();
  auto units = report.all_units();
  REQUIRE(units.size() == 1);  // exactly the designated unit, nothing else
  CHECK(units[0] == u);
  // never reported for the innermost verb (redundant short-range encoding)
  for (const auto& cell : report.cells) {
    CHECK(cell.baseline == 1.0);
    CHECK_FALSE(cell.baseline_below);
    if (cell.verb == 1) CHECK(cell.units.empty());
    if (cell.d >= 2 && cell.verb >= 2) {
      CHECK(cell.units == std::vector<int>{u});
    }
  }
}

TEST_CASE("scan flags baselines below threshold instead of listing units") {
  // an oracle with its logits inverted is reliably wrong
  class WrongOracle : public DesignatedUnitOracle {
   public:
    WrongOracle() : DesignatedUnitOracle(8, 5, -8.0) {}
  };
  auto factory = [] { return std::make_unique<WrongOracle>(); };
  auto tasks = scan_tasks(1, 100);
  AblationReport report = ablation_scan(factory, tasks, 0.55, true, false, 1, 100);
  for (const auto& cell : report.cells) {
    CHECK(cell.baseline_below);
    CHECK(cell.units.empty());
  }
  CHECK(report.all_units().empty());
}

TEST_CASE("scan report is invariant to worker count") {
  auto factory = [] { return std::make_unique<DesignatedUnitOracle>(); };
  auto tasks = scan_tasks(2, 100);
  AblationReport a = ablation_scan(factory, tasks, 0.55, true, false, 1, 100);
  AblationReport b = ablation_scan(factory, tasks, 0.55, true, false, 3, 100);
  REQUIRE(a.cells.size() == b.cells.size());
  for (size_t i = 0; i < a.cells.size(); ++i) CHECK(a.cells[i].units == b.cells[i].units);

  auto csv = (std::filesystem::temp_directory_path() / "nestlm_scan.csv").string();
  a.save_csv(csv);
  CHECK(std::filesystem::exists(csv));
  std::filesystem::remove(csv);
}

TEST_CASE("record_unit groups and flat traces") {
  DesignatedUnitOracle oracle;
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 300}, 17);
  // unit 7 is never written by the oracle: all groups are identical flat lines
  UnitTrace flat = record_unit(oracle, task, 7, false, 300);
  CHECK(flat.group_mean.size() == 2);  // 2^d
  for (const auto& g : flat.group_mean)
    for (double v : g) CHECK(v == 0.0);

  // the designated unit separates the two noun-number groups during the span
  UnitTrace t = record_unit(oracle, task, oracle.designated_unit(), false, 300);
  // group 0: noun sg (+1 code); group 1: noun pl (-1)
  const int noun_pos = task.spec.s;  // first noun position
  CHECK(t.group_mean[0][static_cast<size_t>(noun_pos)] > 0.9);
  CHECK(t.group_mean[1][static_cast<size_t>(noun_pos)] < -0.9);

  auto csv = (std::filesystem::temp_directory_path() / "nestlm_trace.csv").string();
  t.save_csv(csv);
  t.save_svg("trace", csv + ".svg");
  CHECK(std::filesystem::exists(csv));
  CHECK(std::filesystem::exists(csv + ".svg"));
  std::filesystem::remove(csv);
  std::filesystem::remove(csv + ".svg");
}

namespace {

// states move along a fixed direction with timestep-dependent magnitude
class LineStateModel : public evaluation::EvalModel {
 public:
  int ablatable_units() const override { return 5; }
  int vocab_size() const override { return 26; }
  void reset(int batch) override {
    batch_ = batch;
    t_ = 0;
  }
  void set_ablation(evaluation::AblationSpec) override {}
  numcore::Mat64 step(const std::vector<int>&) override {
    ++t_;
    return numcore::Mat64::Zero(batch_, 26);
  }
  numcore::Mat64 state_snapshot(bool) const override {
    numcore::Mat64 dir(1, 5);
    dir << 1, 2, 0, -1, 0.5;
    numcore::Mat64 out(batch_, 5);
    for (int b = 0; b < batch_; ++b) out.row(b) = dir.row(0) * static_cast<double>(t_ + b);
    return out;
  }

 private:
  int batch_ = 0;
  int t_ = 0;
};

}  // namespace

TEST_CASE("pca on collinear states concentrates variance in the first component") {
  LineStateModel model;
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 40}, 19);
  PcaResult pca = pca_states(model, task, false, 40);
  CHECK(pca.explained(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pca.degenerate);  // remaining directions carry nothing
  CHECK(pca.rank >= 1);
}

TEST_CASE("pca components are orthonormal and reconstruct states") {
  DesignatedUnitOracle oracle;
  NaTask task = corpus::build_na_task(NaTaskSpec{3, 2, 200}, 23);
  PcaResult pca = pca_states(oracle, task, false, 200);
  const auto H = pca.components.rows();
  numcore::Mat64 gram = pca.components * pca.components.transpose();
  CHECK((gram - numcore::Mat64::Identity(H, H)).cwiseAbs().maxCoeff() < 1e-8);
  for (Eigen::Index i = 1; i < pca.explained.cols(); ++i)
    CHECK(pca.explained(i) <= pca.explained(i - 1) + 1e-15);
  // full-rank reconstruction of an arbitrary state vector
  Rng rng(5);
  numcore::Vec64 x(H);
  for (Eigen::Index i = 0; i < H; ++i) x(i) = rng.uniform(-2, 2);
  numcore::Vec64 proj = (x - pca.mean) * pca.components.transpose();
  numcore::Vec64 rec = proj * pca.components + pca.mean;
  CHECK((rec - x).cwiseAbs().maxCoeff() < 1e-6);

  auto csv = (std::filesystem::temp_directory_path() / "nestlm_pca.csv").string();
  pca.save_csv(csv);
  pca.save_svg("pca", csv + ".svg");
  CHECK(std::filesystem::exists(csv));
  std::filesystem::remove(csv);
  std::filesystem::remove(csv + ".svg");
}

TEST_CASE("pca is invariant to sentence permutations") {
  DesignatedUnitOracle oracle;
  NaTask task = corpus::build_na_task(NaTaskSpec{2, 2, 150}, 29);
  PcaResult a = pca_states(oracle, task, false, 150);
  NaTask shuffled = task;
  std::mt19937 g(99);
  std::shuffle(shuffled.sentences.begin(), shuffled.sentences.end(), g);
  PcaResult b = pca_states(oracle, shuffled, false, 150);
  CHECK(a.components == b.components);  // bitwise
  CHECK(a.explained == b.explained);
  REQUIRE(a.group_proj.size() == b.group_proj.size());
  for (size_t gi = 0; gi < a.group_proj.size(); ++gi)
    for (size_t t = 0; t < a.group_proj[gi].size(); ++t) {
      CHECK(a.group_proj[gi][t][0] == b.group_proj[gi][t][0]);
      CHECK(a.group_proj[gi][t][1] == b.group_proj[gi][t][1]);
    }
}

TEST_CASE("scan-identified unit separates groups on the trained model") {
  // structural agreement between the scan and the trace on the oracle: the
  // reported unit's groups must separate by more than twice the within-group
  // spread during the noun-verb span
  DesignatedUnitOracle oracle;
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 500}, 31);
  UnitTrace t = record_unit(oracle, task, oracle.designated_unit(), false, 500);
  const int noun_pos = task.spec.s;
  const int verb_pos = task.sentences[0].verb_pos[0];
  for (int pos = noun_pos; pos < verb_pos; ++pos) {
    double gap = std::abs(t.group_mean[0][static_cast<size_t>(pos)] -
                          t.group_mean[1][static_cast<size_t>(pos)]);
    CHECK(gap > 0.5);
  }
}
