#pragma once

#include <array>
#include <functional>
#include <memory>

#include "nestlm/evaluation.hpp"

namespace nestlm::analysis {

using evaluation::AblationSpec;
using evaluation::EvalModel;
using numcore::Mat64;
using numcore::Vec64;

// Inference model with the given units forced to zero at every timestep; the
// checkpoint itself is untouched.
std::unique_ptr<EvalModel> ablate(const cells::Checkpoint& ck, std::vector<int> units,
                                  bool include_cell = true, bool all_layers = false);

struct AblationReport {
  double threshold = 0.55;
  int spacing = 2;
  struct Cell {
    int d = 0;
    int verb = 0;  // 1-based, inner -> outer
    corpus::Number split = corpus::Number::Sg;
    double baseline = 0;
    bool baseline_below = false;  // baseline under threshold: no unit list
    std::vector<int> units;       // ascending unit ids
  };
  std::vector<Cell> cells;

  std::vector<int> all_units() const;
  const Cell* find(int d, int verb, corpus::Number split) const;
  void save_csv(const std::string& path) const;
};

using ModelFactory = std::function<std::unique_ptr<EvalModel>()>;

// Per-unit single-ablation scan over the given tasks (the protocol uses
// d in 1..5 at s=2). For every (d, verb, split-by-expected-number) cell the
// report lists the units whose ablation drives accuracy below the threshold.
AblationReport ablation_scan(const ModelFactory& factory,
                             const std::vector<corpus::NaTask>& tasks, double threshold = 0.55,
                             bool include_cell = true, bool all_layers = false, int workers = 1,
                             int eval_batch = 1000);

struct UnitTrace {
  int unit = 0;
  bool cell_kind = false;
  corpus::NaTaskSpec spec;
  std::vector<std::vector<double>> group_mean;  // [group (d-bit pattern)][timestep]
  std::vector<long> group_n;

  void save_csv(const std::string& path) const;
  void save_svg(const std::string& title, const std::string& path) const;
};

UnitTrace record_unit(EvalModel& model, const corpus::NaTask& task, int unit, bool cell_kind,
                      int eval_batch = 1000);

struct PcaResult {
  Mat64 components;        // (rank x hidden), orthonormal rows, leading first
  Vec64 explained;         // variance ratios, non-increasing
  Vec64 mean;              // feature means used for centering
  int rank = 0;
  bool degenerate = false;
  std::vector<std::vector<std::array<double, 2>>> group_proj;  // [group][t] -> (pc1, pc2)
  std::vector<long> group_n;

  void save_csv(const std::string& path) const;
  void save_svg(const std::string& title, const std::string& path) const;
};

// States are pooled over all sentences and timesteps into one basis; input
// sentences are canonicalized by sorting, making the result independent of
// their order.
PcaResult pca_states(EvalModel& model, const corpus::NaTask& task, bool cell_kind = false,
                     int eval_batch = 1000);

}  // namespace nestlm::analysis
