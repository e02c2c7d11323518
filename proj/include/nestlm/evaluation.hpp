#pragma once

#include <array>
#include <memory>

#include "nestlm/cells.hpp"
#include "nestlm/corpus.hpp"

namespace nestlm::evaluation {

using numcore::Mat64;

struct AblationSpec {
  std::vector<int> units;    // empty disables ablation
  bool include_cell = true;  // also zero LSTM-family cell components
  bool all_layers = false;   // default: top recurrent layer only
};

// Batched inference surface shared by trained checkpoints and constructed
// test models. Implementations must apply any active ablation after every
// state update, before the output is formed.
class EvalModel {
 public:
  virtual ~EvalModel() = default;
  virtual int ablatable_units() const = 0;  // top-layer hidden size
  virtual int vocab_size() const = 0;
  virtual void reset(int batch) = 0;
  virtual void set_ablation(AblationSpec spec) = 0;
  virtual Mat64 step(const std::vector<int>& tokens) = 0;  // returns (batch x vocab) logits
  // current top-layer state, (batch x hidden); cell kind for the LSTM family
  virtual Mat64 state_snapshot(bool cell_kind) const = 0;
};

class RnnEvalModel : public EvalModel {
 public:
  explicit RnnEvalModel(const cells::Checkpoint& ck);

  int ablatable_units() const override { return lm_.config().hidden; }
  int vocab_size() const override { return lm_.config().vocab; }
  void reset(int batch) override;
  void set_ablation(AblationSpec spec) override { abl_ = std::move(spec); }
  Mat64 step(const std::vector<int>& tokens) override;
  Mat64 state_snapshot(bool cell_kind) const override;

 private:
  cells::LanguageModel<double> lm_;
  cells::StateV<double> state_;
  AblationSpec abl_;
};

struct NaAccuracy {
  int d = 0, s = 0;
  long n_sentences = 0;
  std::vector<double> per_verb;                        // inner -> outer
  std::vector<std::array<double, 2>> per_verb_split;   // [verb][sg=0 / pl=1]
  std::vector<std::array<long, 2>> per_verb_split_n;
  std::vector<double> per_verb_lexeme;                 // per-lexeme comparison variant
  double overall = 0;              // mean over (sentence, verb) pairs
  double overall_all_correct = 0;  // sentences with every verb right
  double overall_lexeme = 0;
};

// State is zeroed per sentence; tokens are fed one position at a time and the
// output distribution is read one step before each verb. A verb counts correct
// iff the probability mass on its number's five verb forms exceeds the mass on
// the other number's forms; ties count incorrect.
NaAccuracy na_accuracy(EvalModel& model, const corpus::NaTask& task, int eval_batch = 1000);

struct AccuracyMatrix {
  std::vector<int> depths;
  std::vector<int> spacings;
  Mat64 mean_over_verbs;     // headline metric
  Mat64 all_verbs_correct;   // alternative aggregation
  Mat64 per_lexeme;          // per-lexeme comparison metric
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;
  int marker_depth = 0, marker_spacing = 0;  // training limits (from the manifest)
};

AccuracyMatrix accuracy_matrix(EvalModel& model, const std::vector<corpus::NaTask>& tasks,
                               int marker_depth, int marker_spacing, int eval_batch = 1000);

struct PerVerbMatrix {
  int s = 2;
  std::vector<std::vector<double>> rows;  // rows[d-1]: accuracies inner -> outer
  int marker_depth = 0;
};

PerVerbMatrix per_verb_matrix(EvalModel& model, const std::vector<corpus::NaTask>& tasks_s2,
                              int marker_depth, int eval_batch = 1000);

// CSV / SVG emission; `figure` tags the layout (fig2 for d x s grids, fig3 for
// per-verb grids, fig4 for the model-comparison grid) in the header comment.
void save_matrix_csv(const Mat64& values, const std::vector<int>& depths,
                     const std::vector<int>& spacings, int marker_depth, int marker_spacing,
                     const std::string& figure, const std::string& metric,
                     const std::string& path);
Mat64 load_matrix_csv(const std::string& path);
void save_matrix_svg(const Mat64& values, const std::vector<int>& depths,
                     const std::vector<int>& spacings, int marker_depth, int marker_spacing,
                     const std::string& figure, const std::string& title,
                     const std::string& path);
void save_per_verb_csv(const PerVerbMatrix& m, const std::string& path);
void save_per_verb_svg(const PerVerbMatrix& m, const std::string& title, const std::string& path);

}  // namespace nestlm::evaluation
