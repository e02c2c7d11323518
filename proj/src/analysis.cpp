#include "nestlm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "nestlm/svg.hpp"

namespace nestlm::analysis {

using corpus::NaTask;
using corpus::Number;
using evaluation::na_accuracy;
using evaluation::NaAccuracy;
using evaluation::RnnEvalModel;

std::unique_ptr<EvalModel> ablate(const cells::Checkpoint& ck, std::vector<int> units,
                                  bool include_cell, bool all_layers) {
  auto model = std::make_unique<RnnEvalModel>(ck);
  for (int u : units)
    if (u < 0 || u >= model->ablatable_units())
      throw ConfigError("ablation unit " + std::to_string(u) + " out of range");
  model->set_ablation(AblationSpec{std::move(units), include_cell, all_layers});
  return model;
}

std::vector<int> AblationReport::all_units() const {
  std::set<int> s;
  for (const Cell& c : cells) s.insert(c.units.begin(), c.units.end());
  return {s.begin(), s.end()};
}

const AblationReport::Cell* AblationReport::find(int d, int verb, Number split) const {
  for (const Cell& c : cells)
    if (c.d == d && c.verb == verb && c.split == split) return &c;
  return nullptr;
}

void AblationReport::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# ablation scan, threshold " << threshold << ", spacing " << spacing << "\n";
  os << "depth,verb,split,baseline,units\n";
  for (const Cell& c : cells) {
    os << c.d << ',' << c.verb << ',' << (c.split == Number::Sg ? "S" : "P") << ','
       << c.baseline << ',';
    if (c.baseline_below) {
      os << "baseline-below-threshold";
    } else {
      for (size_t i = 0; i < c.units.size(); ++i) {
        if (i) os << ';';
        os << c.units[i];
      }
    }
    os << '\n';
  }
}

AblationReport ablation_scan(const ModelFactory& factory, const std::vector<NaTask>& tasks,
                             double threshold, bool include_cell, bool all_layers, int workers,
                             int eval_batch) {
  if (tasks.empty()) throw ConfigError("ablation scan needs at least one task");
  AblationReport report;
  report.threshold = threshold;
  report.spacing = tasks[0].spec.s;

  auto baseline_model = factory();
  const int n_units = baseline_model->ablatable_units();

  std::vector<NaAccuracy> baseline;
  for (const NaTask& t : tasks) baseline.push_back(na_accuracy(*baseline_model, t, eval_batch));

  for (size_t ti = 0; ti < tasks.size(); ++ti) {
    const int d = tasks[ti].spec.d;
    for (int k = 0; k < d; ++k) {
      for (int split = 0; split < 2; ++split) {
        AblationReport::Cell cell;
        cell.d = d;
        cell.verb = k + 1;
        cell.split = split == 0 ? Number::Sg : Number::Pl;
        cell.baseline = baseline[ti].per_verb_split[static_cast<size_t>(k)][split];
        cell.baseline_below = cell.baseline < threshold;
        report.cells.push_back(cell);
      }
    }
  }

  // per-unit accuracies; units are independent given one model instance each
  std::vector<std::vector<NaAccuracy>> per_unit(static_cast<size_t>(n_units));
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, n_units));
  std::mutex mu;
  int next_unit = 0;
  auto run = [&] {
    auto model = factory();
    for (;;) {
      int u;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next_unit >= n_units) return;
        u = next_unit++;
      }
      model->set_ablation(AblationSpec{{u}, include_cell, all_layers});
      std::vector<NaAccuracy> accs;
      for (const NaTask& t : tasks) accs.push_back(na_accuracy(*model, t, eval_batch));
      std::lock_guard<std::mutex> lock(mu);
      per_unit[static_cast<size_t>(u)] = std::move(accs);
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }

  for (int u = 0; u < n_units; ++u) {
    size_t cell_idx = 0;
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
      const int d = tasks[ti].spec.d;
      for (int k = 0; k < d; ++k) {
        for (int split = 0; split < 2; ++split, ++cell_idx) {
          AblationReport::Cell& cell = report.cells[cell_idx];
          if (cell.baseline_below) continue;
          const double acc =
              per_unit[static_cast<size_t>(u)][ti].per_verb_split[static_cast<size_t>(k)][split];
          if (acc < threshold) cell.units.push_back(u);
        }
      }
    }
  }
  return report;
}

namespace {

// chunked forward over a task calling `sink(t, batch_offset, snapshot)` after
// every consumed token
void forward_task(EvalModel& model, const std::vector<const corpus::NaSentence*>& sentences,
                  bool cell_kind, int eval_batch,
                  const std::function<void(int, long, const Mat64&)>& sink) {
  const long n = static_cast<long>(sentences.size());
  const int len = static_cast<int>(sentences[0]->tokens.size());
  for (long start = 0; start < n; start += eval_batch) {
    const int B = static_cast<int>(std::min<long>(eval_batch, n - start));
    model.reset(B);
    std::vector<int> tokens(B);
    for (int t = 0; t < len; ++t) {
      for (int b = 0; b < B; ++b) tokens[b] = sentences[start + b]->tokens[static_cast<size_t>(t)];
      model.step(tokens);
      sink(t, start, model.state_snapshot(cell_kind));
    }
  }
}

std::string pattern_label(uint32_t pattern, int d) {
  std::string s;
  for (int k = 0; k < d; ++k) s += (pattern >> k) & 1 ? 'p' : 's';
  return s;
}

}  // namespace

UnitTrace record_unit(EvalModel& model, const NaTask& task, int unit, bool cell_kind,
                      int eval_batch) {
  if (unit < 0 || unit >= model.ablatable_units())
    throw ConfigError("unit id out of range");
  const int d = task.spec.d;
  const int groups = 1 << d;
  const int len = task.spec.sentence_length();
  UnitTrace trace;
  trace.unit = unit;
  trace.cell_kind = cell_kind;
  trace.spec = task.spec;
  trace.group_mean.assign(static_cast<size_t>(groups), std::vector<double>(len, 0.0));
  trace.group_n.assign(static_cast<size_t>(groups), 0);

  std::vector<const corpus::NaSentence*> sentences;
  for (const auto& s : task.sentences) sentences.push_back(&s);
  for (const auto* s : sentences) trace.group_n[s->noun_pattern] += 1;

  forward_task(model, sentences, cell_kind, eval_batch,
               [&](int t, long start, const Mat64& snap) {
                 for (Eigen::Index b = 0; b < snap.rows(); ++b) {
                   uint32_t g = sentences[start + b]->noun_pattern;
                   trace.group_mean[g][static_cast<size_t>(t)] += snap(b, unit);
                 }
               });
  for (int g = 0; g < groups; ++g)
    if (trace.group_n[static_cast<size_t>(g)] > 0)
      for (double& v : trace.group_mean[static_cast<size_t>(g)])
        v /= static_cast<double>(trace.group_n[static_cast<size_t>(g)]);
  return trace;
}

void UnitTrace::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# figure: fig3 trace\n# unit: " << unit << "\n# kind: " << (cell_kind ? "cell" : "hidden")
     << "\n# d: " << spec.d << "\n# s: " << spec.s << "\n";
  os.precision(17);
  os << "t";
  for (size_t g = 0; g < group_mean.size(); ++g)
    os << ',' << pattern_label(static_cast<uint32_t>(g), spec.d);
  os << '\n';
  for (size_t t = 0; t < group_mean[0].size(); ++t) {
    os << t;
    for (const auto& gm : group_mean) os << ',' << gm[t];
    os << '\n';
  }
}

void UnitTrace::save_svg(const std::string& title, const std::string& path) const {
  const double w = 640, h = 240, left = 46, right = 12, top = 30, bottom = 26;
  svg::Svg img(w, h);
  img.comment("figure: fig3 trace; colors: noun1 sg=red pl=blue; dash: noun2 pl; width: noun3 sg");
  img.text(left, 16, title, 11, "start");
  double lo = 1e300, hi = -1e300;
  for (const auto& gm : group_mean)
    for (double v : gm) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1;
  const int len = static_cast<int>(group_mean[0].size());
  auto xmap = [&](int t) { return left + (w - left - right) * t / std::max(1, len - 1); };
  auto ymap = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  img.line(left, h - bottom, w - right, h - bottom, "#888888");
  img.line(left, top, left, h - bottom, "#888888");
  for (size_t g = 0; g < group_mean.size(); ++g) {
    std::ostringstream pts;
    for (int t = 0; t < len; ++t) pts << xmap(t) << ',' << ymap(group_mean[g][static_cast<size_t>(t)]) << ' ';
    const bool n1_pl = g & 1, n2_pl = g & 2, n3_sg = !(g & 4);
    img.polyline(pts.str(), n1_pl ? "#2050c0" : "#c03030", spec.d >= 3 && n3_sg ? 2.4 : 1.2,
                 spec.d >= 2 && n2_pl);
  }
  img.text(w / 2, h - 6, "timestep", 10);
  img.save(path);
}

PcaResult pca_states(EvalModel& model, const NaTask& task, bool cell_kind, int eval_batch) {
  const int d = task.spec.d;
  const int groups = 1 << d;
  const int len = task.spec.sentence_length();
  const long n = static_cast<long>(task.sentences.size());
  if (n == 0) throw ConfigError("NA task has no sentences");

  // canonical sentence order: results are independent of input permutation
  std::vector<const corpus::NaSentence*> sentences;
  for (const auto& s : task.sentences) sentences.push_back(&s);
  std::sort(sentences.begin(), sentences.end(),
            [](const corpus::NaSentence* a, const corpus::NaSentence* b) {
              return a->tokens < b->tokens;
            });

  Mat64 data;
  long rows = n * len;
  bool sized = false;
  long row = 0;
  std::vector<std::vector<Vec64>> group_state_sum;  // [group][t]
  PcaResult out;
  out.group_n.assign(static_cast<size_t>(groups), 0);
  for (const auto* s : sentences) out.group_n[s->noun_pattern] += 1;

  forward_task(model, sentences, cell_kind, eval_batch,
               [&](int t, long start, const Mat64& snap) {
                 if (!sized) {
                   data.resize(rows, snap.cols());
                   group_state_sum.assign(
                       static_cast<size_t>(groups),
                       std::vector<Vec64>(static_cast<size_t>(len),
                                          Vec64::Zero(snap.cols())));
                   sized = true;
                 }
                 for (Eigen::Index b = 0; b < snap.rows(); ++b) {
                   data.row(row++) = snap.row(b);
                   group_state_sum[sentences[start + b]->noun_pattern][static_cast<size_t>(t)] +=
                       snap.row(b);
                 }
               });

  out.mean = data.colwise().mean();
  Eigen::MatrixXd centered = (data.rowwise() - out.mean.row(0)).eval();
  Eigen::MatrixXd cov = centered.transpose() * centered /
                        static_cast<double>(std::max<long>(1, rows - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const Eigen::Index H = cov.rows();
  Eigen::VectorXd evals = solver.eigenvalues().reverse();
  Eigen::MatrixXd evecs = solver.eigenvectors().rowwise().reverse();

  const double total = std::max(evals.sum(), 0.0);
  const double tol = std::max(1e-12 * std::max(evals.maxCoeff(), 0.0), 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < H; ++i)
    if (evals(i) > tol && evals(i) > 0) ++rank;
  out.degenerate = rank < static_cast<int>(H);
  out.rank = rank;
  out.components = Mat64(H, H);
  for (Eigen::Index i = 0; i < H; ++i) out.components.row(i) = evecs.col(i).transpose();
  out.explained = Vec64::Zero(H);
  if (total > 0)
    for (Eigen::Index i = 0; i < H; ++i) out.explained(i) = std::max(evals(i), 0.0) / total;

  out.group_proj.assign(static_cast<size_t>(groups),
                        std::vector<std::array<double, 2>>(static_cast<size_t>(len), {0, 0}));
  for (int g = 0; g < groups; ++g) {
    if (out.group_n[static_cast<size_t>(g)] == 0) continue;
    for (int t = 0; t < len; ++t) {
      Vec64 mean_state = group_state_sum[static_cast<size_t>(g)][static_cast<size_t>(t)] /
                         static_cast<double>(out.group_n[static_cast<size_t>(g)]);
      Vec64 cent = mean_state - out.mean;
      out.group_proj[static_cast<size_t>(g)][static_cast<size_t>(t)][0] =
          cent.row(0).dot(out.components.row(0));
      if (H > 1)
        out.group_proj[static_cast<size_t>(g)][static_cast<size_t>(t)][1] =
            cent.row(0).dot(out.components.row(1));
    }
  }
  return out;
}

void PcaResult::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# figure: fig3e\n# rank: " << rank << (degenerate ? " (degenerate covariance)" : "")
     << "\n";
  os.precision(17);
  os << "# explained";
  for (Eigen::Index i = 0; i < explained.cols(); ++i) os << ',' << explained(i);
  os << "\ngroup,t,pc1,pc2\n";
  const int d = group_proj.empty() ? 0 : static_cast<int>(std::log2(group_proj.size()) + 0.5);
  for (size_t g = 0; g < group_proj.size(); ++g) {
    if (group_n[g] == 0) continue;
    for (size_t t = 0; t < group_proj[g].size(); ++t)
      os << pattern_label(static_cast<uint32_t>(g), d) << ',' << t << ',' << group_proj[g][t][0]
         << ',' << group_proj[g][t][1] << '\n';
  }
}

void PcaResult::save_svg(const std::string& title, const std::string& path) const {
  const double w = 900, h = 260, left = 46, mid = 40, right = 12, top = 30, bottom = 26;
  const double panel_w = (w - left - mid - right) / 2;
  svg::Svg img(w, h);
  img.comment("figure: fig3e; left: pc1, right: pc2");
  img.text(left, 16, title, 11, "start");
  const int len = group_proj.empty() ? 0 : static_cast<int>(group_proj[0].size());
  const int d = group_proj.empty() ? 0 : static_cast<int>(std::log2(group_proj.size()) + 0.5);
  for (int pc = 0; pc < 2; ++pc) {
    const double x0 = left + pc * (panel_w + mid);
    double lo = 1e300, hi = -1e300;
    for (size_t g = 0; g < group_proj.size(); ++g) {
      if (group_n[g] == 0) continue;
      for (const auto& p : group_proj[g]) {
        lo = std::min(lo, p[static_cast<size_t>(pc)]);
        hi = std::max(hi, p[static_cast<size_t>(pc)]);
      }
    }
    if (hi <= lo) hi = lo + 1;
    auto xmap = [&](int t) { return x0 + panel_w * t / std::max(1, len - 1); };
    auto ymap = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
    img.line(x0, h - bottom, x0 + panel_w, h - bottom, "#888888");
    img.line(x0, top, x0, h - bottom, "#888888");
    for (size_t g = 0; g < group_proj.size(); ++g) {
      if (group_n[g] == 0) continue;
      std::ostringstream pts;
      for (int t = 0; t < len; ++t)
        pts << xmap(t) << ',' << ymap(group_proj[g][static_cast<size_t>(t)][static_cast<size_t>(pc)]) << ' ';
      const bool n1_pl = g & 1, n2_pl = g & 2, n3_sg = !(g & 4);
      img.polyline(pts.str(), n1_pl ? "#2050c0" : "#c03030", d >= 3 && n3_sg ? 2.4 : 1.2,
                   d >= 2 && n2_pl);
    }
    img.text(x0 + panel_w / 2, h - 6, pc == 0 ? "pc1" : "pc2", 10);
  }
  img.save(path);
}

}  // namespace nestlm::analysis
