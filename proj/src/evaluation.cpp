#include "nestlm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "nestlm/svg.hpp"

namespace nestlm::evaluation {

using corpus::NaTask;
using corpus::Number;
using corpus::Vocabulary;

RnnEvalModel::RnnEvalModel(const cells::Checkpoint& ck) : lm_(ck.to_model<double>()) {
  if (ck.vocab_hash != Vocabulary::standard().hash())
    throw ConfigError("checkpoint vocabulary hash does not match this build's vocabulary");
}

void RnnEvalModel::reset(int batch) { state_ = lm_.zero_state(batch); }

Mat64 RnnEvalModel::step(const std::vector<int>& tokens) {
  numcore::Tape<double> tape(false);
  cells::StateRefs refs = lm_.state_refs(tape, std::move(state_));
  const std::vector<int>* units = abl_.units.empty() ? nullptr : &abl_.units;
  int logits = lm_.step(tape, refs, tokens, nullptr, units, abl_.include_cell, abl_.all_layers);
  state_ = lm_.detach_state(tape, refs);
  return tape.val(logits);
}

Mat64 RnnEvalModel::state_snapshot(bool cell_kind) const {
  if (state_.empty()) throw ConfigError("state_snapshot before reset");
  if (cell_kind) {
    if (!lm_.config().lstm_family())
      throw ConfigError("cell state requested from an architecture without one");
    return state_.back().c;
  }
  return state_.back().h;
}

NaAccuracy na_accuracy(EvalModel& model, const NaTask& task, int eval_batch) {
  const Vocabulary& vocab = Vocabulary::standard();
  const int d = task.spec.d;
  const long n = static_cast<long>(task.sentences.size());
  if (n == 0) throw ConfigError("NA task has no sentences");
  const int len = static_cast<int>(task.sentences[0].tokens.size());
  for (const auto& s : task.sentences)
    if (static_cast<int>(s.tokens.size()) != len || static_cast<int>(s.verb_pos.size()) != d)
      throw ConfigError("NA task sentences must share the fixed template");
  const std::vector<int>& verb_pos = task.sentences[0].verb_pos;

  const std::vector<int> sg_ids = vocab.verb_ids(Number::Sg);
  const std::vector<int> pl_ids = vocab.verb_ids(Number::Pl);

  std::vector<long> correct(d, 0);
  std::vector<double> lexeme_correct(d, 0);
  std::vector<std::array<long, 2>> split_correct(d, {0, 0}), split_n(d, {0, 0});
  long all_correct_sentences = 0;

  for (long start = 0; start < n; start += eval_batch) {
    const int B = static_cast<int>(std::min<long>(eval_batch, n - start));
    model.reset(B);
    std::vector<int> tokens(B);
    std::vector<char> sentence_all_ok(B, 1);
    for (int t = 0; t + 1 < len; ++t) {
      for (int b = 0; b < B; ++b) tokens[b] = task.sentences[start + b].tokens[t];
      Mat64 logits = model.step(tokens);
      auto vp = std::find(verb_pos.begin(), verb_pos.end(), t + 1);
      if (vp == verb_pos.end()) continue;
      const int k = static_cast<int>(vp - verb_pos.begin());
      Mat64 probs = numcore::softmax_rows<double>(logits);
      for (int b = 0; b < B; ++b) {
        const corpus::NaSentence& sent = task.sentences[start + b];
        const bool expect_sg = sent.verb_num[static_cast<size_t>(k)] == Number::Sg;
        double mass_sg = 0, mass_pl = 0;
        for (int i : sg_ids) mass_sg += probs(b, i);
        for (int i : pl_ids) mass_pl += probs(b, i);
        const double corr = expect_sg ? mass_sg : mass_pl;
        const double wrong = expect_sg ? mass_pl : mass_sg;
        const bool ok = corr > wrong;  // ties incorrect
        if (ok)
          correct[static_cast<size_t>(k)] += 1;
        else
          sentence_all_ok[b] = 0;
        const int split = expect_sg ? 0 : 1;
        split_n[static_cast<size_t>(k)][split] += 1;
        if (ok) split_correct[static_cast<size_t>(k)][split] += 1;
        int lex_ok = 0;
        for (int i = 0; i < 5; ++i) {
          const double pc = probs(b, expect_sg ? sg_ids[i] : pl_ids[i]);
          const double pw = probs(b, expect_sg ? pl_ids[i] : sg_ids[i]);
          if (pc > pw) ++lex_ok;
        }
        lexeme_correct[static_cast<size_t>(k)] += lex_ok / 5.0;
      }
    }
    for (int b = 0; b < B; ++b)
      if (sentence_all_ok[b]) ++all_correct_sentences;
  }

  NaAccuracy out;
  out.d = d;
  out.s = task.spec.s;
  out.n_sentences = n;
  double total = 0, total_lex = 0;
  for (int k = 0; k < d; ++k) {
    out.per_verb.push_back(static_cast<double>(correct[k]) / n);
    out.per_verb_lexeme.push_back(lexeme_correct[k] / n);
    std::array<double, 2> sp{};
    for (int i = 0; i < 2; ++i)
      sp[i] = split_n[k][i] ? static_cast<double>(split_correct[k][i]) / split_n[k][i] : 0.0;
    out.per_verb_split.push_back(sp);
    out.per_verb_split_n.push_back(split_n[k]);
    total += static_cast<double>(correct[k]);
    total_lex += lexeme_correct[k];
  }
  out.overall = total / static_cast<double>(n * d);
  out.overall_lexeme = total_lex / static_cast<double>(n * d);
  out.overall_all_correct = static_cast<double>(all_correct_sentences) / n;
  return out;
}

AccuracyMatrix accuracy_matrix(EvalModel& model, const std::vector<NaTask>& tasks,
                               int marker_depth, int marker_spacing, int eval_batch) {
  AccuracyMatrix m;
  for (int d = 1; d <= 10; ++d) m.depths.push_back(d);
  for (int s = 1; s <= 16; ++s) m.spacings.push_back(s);
  m.spacings.push_back(32);
  m.marker_depth = marker_depth;
  m.marker_spacing = marker_spacing;
  const auto rows = static_cast<Eigen::Index>(m.depths.size());
  const auto cols = static_cast<Eigen::Index>(m.spacings.size());
  m.mean_over_verbs = Mat64::Constant(rows, cols, -1);
  m.all_verbs_correct = Mat64::Constant(rows, cols, -1);
  m.per_lexeme = Mat64::Constant(rows, cols, -1);
  m.counts.setZero(rows, cols);

  std::map<std::pair<int, int>, const NaTask*> index;
  for (const NaTask& t : tasks) index[{t.spec.d, t.spec.s}] = &t;
  std::string missing;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      auto it = index.find({m.depths[static_cast<size_t>(r)], m.spacings[static_cast<size_t>(c)]});
      if (it == index.end()) {
        missing += " (d=" + std::to_string(m.depths[static_cast<size_t>(r)]) +
                   ",s=" + std::to_string(m.spacings[static_cast<size_t>(c)]) + ")";
        continue;
      }
      NaAccuracy acc = na_accuracy(model, *it->second, eval_batch);
      m.mean_over_verbs(r, c) = acc.overall;
      m.all_verbs_correct(r, c) = acc.overall_all_correct;
      m.per_lexeme(r, c) = acc.overall_lexeme;
      m.counts(r, c) = acc.n_sentences;
    }
  if (!missing.empty()) throw ConfigError("missing NA task cells:" + missing);
  return m;
}

PerVerbMatrix per_verb_matrix(EvalModel& model, const std::vector<NaTask>& tasks_s2,
                              int marker_depth, int eval_batch) {
  PerVerbMatrix m;
  m.marker_depth = marker_depth;
  std::map<int, const NaTask*> index;
  for (const NaTask& t : tasks_s2)
    if (t.spec.s == 2) index[t.spec.d] = &t;
  for (int d = 1; d <= 10; ++d) {
    auto it = index.find(d);
    if (it == index.end()) throw ConfigError("missing s=2 NA task for d=" + std::to_string(d));
    m.rows.push_back(na_accuracy(model, *it->second, eval_batch).per_verb);
  }
  return m;
}

void save_matrix_csv(const Mat64& values, const std::vector<int>& depths,
                     const std::vector<int>& spacings, int marker_depth, int marker_spacing,
                     const std::string& figure, const std::string& metric,
                     const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# figure: " << figure << "\n# metric: " << metric << "\n# marker_depth: " << marker_depth
     << "\n# marker_spacing: " << marker_spacing << "\n";
  os.precision(17);
  os << "d\\s";
  for (int s : spacings) os << ',' << s;
  os << '\n';
  for (size_t r = 0; r < depths.size(); ++r) {
    os << depths[r];
    for (size_t c = 0; c < spacings.size(); ++c) os << ',' << values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    os << '\n';
  }
}

Mat64 load_matrix_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {  // column header
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cellv;
    bool first = true;
    while (std::getline(ls, cellv, ',')) {
      if (first) {  // row label
        first = false;
        continue;
      }
      row.push_back(std::stod(cellv));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty matrix in " + path);
  Mat64 m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

namespace {
std::string fmt2(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
}  // namespace

void save_matrix_svg(const Mat64& values, const std::vector<int>& depths,
                     const std::vector<int>& spacings, int marker_depth, int marker_spacing,
                     const std::string& figure, const std::string& title,
                     const std::string& path) {
  const double cell = 34, left = 52, top = 44, bottom = 30;
  const double w = left + cell * static_cast<double>(spacings.size()) + 16;
  const double h = top + cell * static_cast<double>(depths.size()) + bottom;
  svg::Svg img(w, h);
  img.comment("figure: " + figure);
  img.text(left, 18, title, 12, "start");
  img.text(left + cell * static_cast<double>(spacings.size()) / 2, h - 6, "spacing s", 11);
  for (size_t r = 0; r < depths.size(); ++r) {
    img.text(left - 8, top + (static_cast<double>(r) + 0.65) * cell, std::to_string(depths[r]),
             10, "end");
    for (size_t c = 0; c < spacings.size(); ++c) {
      double v = values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      double x = left + static_cast<double>(c) * cell, y = top + static_cast<double>(r) * cell;
      if (v < 0) {
        img.rect(x, y, cell, cell, "#dddddd", "#ffffff");
        continue;
      }
      img.rect(x, y, cell, cell, svg::heat_color(v), "#ffffff");
      img.text(x + cell / 2, y + cell / 2 + 3, fmt2(v), 8.5, "middle",
               v > 0.35 && v < 0.8 ? "#ffffff" : "#000000");
    }
  }
  for (size_t c = 0; c < spacings.size(); ++c)
    img.text(left + (static_cast<double>(c) + 0.5) * cell, top - 6,
             std::to_string(spacings[c]), 10);
  // dashed training-limit guides
  size_t drow = 0;
  while (drow < depths.size() && depths[drow] <= marker_depth) ++drow;
  if (drow > 0 && drow < depths.size())
    img.line(left, top + static_cast<double>(drow) * cell,
             left + cell * static_cast<double>(spacings.size()),
             top + static_cast<double>(drow) * cell, "#000000", 1.5, true);
  size_t scol = 0;
  while (scol < spacings.size() && spacings[scol] <= marker_spacing) ++scol;
  if (scol > 0 && scol < spacings.size())
    img.line(left + static_cast<double>(scol) * cell, top,
             left + static_cast<double>(scol) * cell,
             top + cell * static_cast<double>(depths.size()), "#000000", 1.5, true);
  img.save(path);
}

void save_per_verb_csv(const PerVerbMatrix& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# figure: fig3\n# spacing: " << m.s << "\n# marker_depth: " << m.marker_depth << "\n";
  os.precision(17);
  os << "d\\verb";
  for (size_t k = 1; k <= m.rows.size(); ++k) os << ',' << k;
  os << '\n';
  for (size_t d = 0; d < m.rows.size(); ++d) {
    os << d + 1;
    for (size_t k = 0; k < m.rows.size(); ++k) {
      os << ',';
      if (k < m.rows[d].size()) os << m.rows[d][k];
    }
    os << '\n';
  }
}

void save_per_verb_svg(const PerVerbMatrix& m, const std::string& title,
                       const std::string& path) {
  const size_t n = m.rows.size();
  const double cell = 34, left = 52, top = 44, bottom = 30;
  const double w = left + cell * static_cast<double>(n) + 16;
  const double h = top + cell * static_cast<double>(n) + bottom;
  svg::Svg img(w, h);
  img.comment("figure: fig3");
  img.text(left, 18, title, 12, "start");
  img.text(left + cell * static_cast<double>(n) / 2, h - 6, "verb position (inner to outer)", 11);
  for (size_t d = 0; d < n; ++d) {
    img.text(left - 8, top + (static_cast<double>(d) + 0.65) * cell, std::to_string(d + 1), 10,
             "end");
    for (size_t k = 0; k < n; ++k) {
      double x = left + static_cast<double>(k) * cell, y = top + static_cast<double>(d) * cell;
      if (k < m.rows[d].size()) {
        double v = m.rows[d][k];
        img.rect(x, y, cell, cell, svg::heat_color(v), "#ffffff");
        img.text(x + cell / 2, y + cell / 2 + 3, fmt2(v), 8.5, "middle",
                 v > 0.35 && v < 0.8 ? "#ffffff" : "#000000");
      } else {
        img.rect(x, y, cell, cell, "#eeeeee", "#ffffff");
      }
    }
  }
  for (size_t k = 0; k < n; ++k)
    img.text(left + (static_cast<double>(k) + 0.5) * cell, top - 6, std::to_string(k + 1), 10);
  size_t drow = 0;
  while (drow < n && static_cast<int>(drow) + 1 <= m.marker_depth) ++drow;
  if (drow > 0 && drow < n)
    img.line(left, top + static_cast<double>(drow) * cell, left + cell * static_cast<double>(n),
             top + static_cast<double>(drow) * cell, "#000000", 1.5, true);
  img.save(path);
}

}  // namespace nestlm::evaluation
