#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nestlm/evaluation.hpp"
#include "nestlm/oracle_model.hpp"
#include "nestlm/training.hpp"

using namespace nestlm;
using namespace nestlm::evaluation;
using corpus::NaTask;
using corpus::NaTaskSpec;
using corpus::Number;

namespace {

// emits constant logits; tiny per-call perturbation optional
class StubModel : public EvalModel {
 public:
  StubModel(Mat64 logits_row, double jitter = 0, uint64_t seed = 1)
      : row_(std::move(logits_row)), jitter_(jitter), rng_(seed) {}
  int ablatable_units() const override { return 4; }
  int vocab_size() const override { return 26; }
  void reset(int batch) override { batch_ = batch; }
  void set_ablation(AblationSpec) override {}
  Mat64 step(const std::vector<int>&) override {
    Mat64 out(batch_, 26);
    for (int b = 0; b < batch_; ++b) {
      out.row(b) = row_.row(0);
      if (jitter_ > 0)
        for (int c = 0; c < 26; ++c) out(b, c) += rng_.uniform(-jitter_, jitter_);
    }
    return out;
  }
  Mat64 state_snapshot(bool) const override { return Mat64::Zero(batch_, 4); }

 private:
  Mat64 row_;
  double jitter_;
  Rng rng_;
  int batch_ = 0;
};

}  // namespace

TEST_CASE("exactly uniform logits lose every comparison by the tie rule") {
  StubModel model(Mat64::Zero(1, 26));
  NaTask task = corpus::build_na_task(NaTaskSpec{2, 2, 200}, 3);
  NaAccuracy acc = na_accuracy(model, task);
  CHECK(acc.overall == 0.0);
  CHECK(acc.per_verb[0] == 0.0);
}

TEST_CASE("near-uniform random logits sit at chance") {
  StubModel model(Mat64::Zero(1, 26), 1e-3, 17);
  NaTask task = corpus::build_na_task(NaTaskSpec{1, 2, 1000}, 5);
  NaAccuracy acc = na_accuracy(model, task);
  CHECK(acc.per_verb[0] > 0.5 - 0.047);  // 3 sigma over 1000 sentences
  CHECK(acc.per_verb[0] < 0.5 + 0.047);
}

TEST_CASE("the oracle model is perfect on every task shape") {
  DesignatedUnitOracle oracle;
  for (const NaTaskSpec spec : {NaTaskSpec{1, 1, 120}, NaTaskSpec{3, 2, 120},
                                NaTaskSpec{5, 4, 120}, NaTaskSpec{10, 32, 40}}) {
    NaTask task = corpus::build_na_task(spec, 7);
    NaAccuracy acc = na_accuracy(oracle, task);
    CHECK(acc.overall == 1.0);
    CHECK(acc.overall_all_correct == 1.0);
    CHECK(acc.per_verb_lexeme.back() == 1.0);
    for (double v : acc.per_verb) CHECK(v == 1.0);
  }
}

TEST_CASE("overall equals the count-weighted mean of per-verb accuracies") {
  StubModel model(Mat64::Zero(1, 26), 0.5, 23);
  NaTask task = corpus::build_na_task(NaTaskSpec{3, 1, 300}, 9);
  NaAccuracy acc = na_accuracy(model, task);
  double mean = 0;
  for (double v : acc.per_verb) mean += v;
  mean /= static_cast<double>(acc.per_verb.size());
  CHECK(acc.overall == doctest::Approx(mean).epsilon(1e-12));
  // split counts cover every sentence
  for (int k = 0; k < 3; ++k)
    CHECK(acc.per_verb_split_n[static_cast<size_t>(k)][0] +
              acc.per_verb_split_n[static_cast<size_t>(k)][1] ==
          300);
}

TEST_CASE("accuracy matrix on the oracle is all ones and round-trips via CSV") {
  std::vector<NaTask> tasks;
  for (const auto& spec : corpus::na_grid())
    tasks.push_back(corpus::build_na_task(NaTaskSpec{spec.d, spec.s, 20}, 11));
  DesignatedUnitOracle oracle;
  AccuracyMatrix m = accuracy_matrix(oracle, tasks, 4, 13, 20);
  CHECK(m.mean_over_verbs.rows() == 10);
  CHECK(m.mean_over_verbs.cols() == 17);
  CHECK(m.mean_over_verbs.minCoeff() == 1.0);
  CHECK(m.all_verbs_correct.minCoeff() == 1.0);
  CHECK(m.counts.minCoeff() == 20);

  auto csv = (std::filesystem::temp_directory_path() / "nestlm_fig2.csv").string();
  save_matrix_csv(m.mean_over_verbs, m.depths, m.spacings, m.marker_depth, m.marker_spacing,
                  "fig2", "mean_over_verbs", csv);
  Mat64 loaded = load_matrix_csv(csv);
  CHECK(loaded == m.mean_over_verbs);
  std::filesystem::remove(csv);

  auto svg_path = (std::filesystem::temp_directory_path() / "nestlm_fig2.svg").string();
  save_matrix_svg(m.mean_over_verbs, m.depths, m.spacings, 4, 13, "fig2", "oracle", svg_path);
  std::ifstream is(svg_path);
  std::string text(std::istreambuf_iterator<char>(is), {});
  CHECK(text.find("figure: fig2") != std::string::npos);
  CHECK(text.find("stroke-dasharray") != std::string::npos);
  std::filesystem::remove(svg_path);
}

TEST_CASE("missing cells are reported, not skipped") {
  std::vector<NaTask> tasks;
  for (const auto& spec : corpus::na_grid())
    if (!(spec.d == 4 && spec.s == 7))
      tasks.push_back(corpus::build_na_task(NaTaskSpec{spec.d, spec.s, 5}, 11));
  DesignatedUnitOracle oracle;
  CHECK_THROWS_WITH_AS(accuracy_matrix(oracle, tasks, 1, 1, 5),
                       doctest::Contains("(d=4,s=7)"), ConfigError);
}

TEST_CASE("per-verb matrix has triangular rows") {
  std::vector<NaTask> tasks;
  for (int d = 1; d <= 10; ++d) tasks.push_back(corpus::build_na_task(NaTaskSpec{d, 2, 10}, 3));
  DesignatedUnitOracle oracle;
  PerVerbMatrix m = per_verb_matrix(oracle, tasks, 5, 10);
  REQUIRE(m.rows.size() == 10);
  for (int d = 1; d <= 10; ++d) CHECK(m.rows[static_cast<size_t>(d - 1)].size() ==
                                      static_cast<size_t>(d));
  auto csv = (std::filesystem::temp_directory_path() / "nestlm_fig3.csv").string();
  save_per_verb_csv(m, csv);
  CHECK(std::filesystem::exists(csv));
  std::filesystem::remove(csv);
}

TEST_CASE("evaluation leaves the checkpoint bytes untouched") {
  Rng rng(3);
  cells::ModelConfig mc;
  mc.arch = cells::Arch::Lstm;
  mc.layers = 1;
  mc.hidden = 6;
  mc.embedding = 4;
  mc.dropout = 0;
  cells::LanguageModel<float> lm(mc, rng);
  cells::Checkpoint ck =
      cells::Checkpoint::from_model(lm, corpus::Vocabulary::standard().hash(), {});
  auto path = (std::filesystem::temp_directory_path() / "nestlm_ro.json").string();
  ck.save(path);
  std::ifstream is1(path);
  std::string before(std::istreambuf_iterator<char>(is1), {});

  cells::Checkpoint loaded = cells::Checkpoint::load(path);
  RnnEvalModel model(loaded);
  NaTask task = corpus::build_na_task(NaTaskSpec{2, 2, 50}, 3);
  na_accuracy(model, task, 50);
  loaded.save(path);  // re-save after evaluation
  std::ifstream is2(path);
  std::string after(std::istreambuf_iterator<char>(is2), {});
  CHECK(before == after);
  std::filesystem::remove(path);
}

TEST_CASE("rnn eval model rejects vocabulary mismatches") {
  Rng rng(3);
  cells::ModelConfig mc;
  mc.arch = cells::Arch::Srn;
  mc.hidden = 4;
  mc.embedding = 4;
  mc.dropout = 0;
  cells::LanguageModel<float> lm(mc, rng);
  cells::Checkpoint ck = cells::Checkpoint::from_model(lm, 12345, {});
  CHECK_THROWS_AS(RnnEvalModel{ck}, ConfigError);
}
