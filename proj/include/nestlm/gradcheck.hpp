#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nestlm/numcore.hpp"

namespace nestlm::numcore {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0;
  Eigen::Index worst_row = 0, worst_col = 0;
  double analytic = 0, numeric = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  double tolerance = 0;
  std::vector<GradCheckEntry> entries;
  bool pass() const { return max_rel_err < tolerance; }
  std::string summary() const;
};

// loss_fn(true) must populate Parameter::grad accumulators; loss_fn(false)
// evaluates the loss only. Relative error uses a 1e-4 floor in the denominator
// so near-zero coordinates compare against finite-difference noise sanely.
inline GradCheckReport grad_check(const std::function<double(bool)>& loss_fn,
                                  const std::vector<Parameter<double>*>& params, double h,
                                  double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  for (Parameter<double>* p : params) p->grad.setZero();
  loss_fn(true);
  std::vector<Mat64> analytic;
  analytic.reserve(params.size());
  for (Parameter<double>* p : params) {
    analytic.push_back(p->grad);
    p->grad.setZero();
  }
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter<double>& p = *params[pi];
    GradCheckEntry entry;
    entry.param = p.name;
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
        const double saved = p.value(r, c);
        p.value(r, c) = saved + h;
        const double fp = loss_fn(false);
        p.value(r, c) = saved - h;
        const double fm = loss_fn(false);
        p.value(r, c) = saved;
        const double numeric = (fp - fm) / (2 * h);
        const double a = analytic[pi](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > entry.max_rel_err) {
          entry.max_rel_err = rel;
          entry.worst_row = r;
          entry.worst_col = c;
          entry.analytic = a;
          entry.numeric = numeric;
        }
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

inline std::string GradCheckReport::summary() const {
  std::string s = pass() ? "pass" : "FAIL";
  s += " (max rel err " + std::to_string(max_rel_err) + ", tol " + std::to_string(tolerance) + ")";
  for (const GradCheckEntry& e : entries)
    if (e.max_rel_err >= tolerance)
      s += "\n  " + e.param + "[" + std::to_string(e.worst_row) + "," +
           std::to_string(e.worst_col) + "] analytic=" + std::to_string(e.analytic) +
           " numeric=" + std::to_string(e.numeric);
  return s;
}

}  // namespace nestlm::numcore
