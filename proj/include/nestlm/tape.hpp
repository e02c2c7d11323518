#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "nestlm/numcore.hpp"

namespace nestlm::numcore {

// Reverse-mode tape over matrix-valued nodes. Values are (batch x features)
// matrices; each op records a closure that scatters the output gradient to its
// inputs. With recording off the tape is a plain eager evaluator.
template <class T>
class Tape {
 public:
  using M = Mat<T>;
  using Ref = int;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  const M& val(Ref i) const { return nodes_[i].val; }
  const M& grad(Ref i) const { return nodes_[i].grad; }

  void reset() {
    nodes_.clear();
    bound_.clear();
    param_refs_.clear();
  }

  Ref input(M v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr});
    return static_cast<Ref>(nodes_.size() - 1);
  }

  Ref zeros(Eigen::Index rows, Eigen::Index cols) { return input(M::Zero(rows, cols)); }

  // Leaf bound to a parameter; memoized so repeated uses share one node.
  Ref use(Parameter<T>& p) {
    auto it = param_refs_.find(&p);
    if (it != param_refs_.end()) return it->second;
    Ref r = input(p.value);
    param_refs_.emplace(&p, r);
    if (record_) bound_.push_back({r, &p});
    return r;
  }

  Ref matmul(Ref a, Ref b) {
    M v = nodes_[a].val * nodes_[b].val;
    return emit(std::move(v), [this, a, b](const M& g) {
      nodes_[a].grad.noalias() += g * nodes_[b].val.transpose();
      nodes_[b].grad.noalias() += nodes_[a].val.transpose() * g;
    });
  }

  // bias (1 x n) broadcast over rows
  Ref add_bias(Ref a, Ref bias) {
    M v = nodes_[a].val.rowwise() + nodes_[bias].val.row(0);
    return emit(std::move(v), [this, a, bias](const M& g) {
      nodes_[a].grad += g;
      nodes_[bias].grad.row(0) += g.colwise().sum();
    });
  }

  Ref affine(Ref x, Ref w, Ref b) { return add_bias(matmul(x, w), b); }

  Ref add(Ref a, Ref b) {
    M v = nodes_[a].val + nodes_[b].val;
    return emit(std::move(v), [this, a, b](const M& g) {
      nodes_[a].grad += g;
      nodes_[b].grad += g;
    });
  }

  Ref sub(Ref a, Ref b) {
    M v = nodes_[a].val - nodes_[b].val;
    return emit(std::move(v), [this, a, b](const M& g) {
      nodes_[a].grad += g;
      nodes_[b].grad -= g;
    });
  }

  Ref mul(Ref a, Ref b) {
    M v = nodes_[a].val.cwiseProduct(nodes_[b].val);
    return emit(std::move(v), [this, a, b](const M& g) {
      nodes_[a].grad.array() += g.array() * nodes_[b].val.array();
      nodes_[b].grad.array() += g.array() * nodes_[a].val.array();
    });
  }

  Ref scale(Ref a, double c) {
    M v = nodes_[a].val * static_cast<T>(c);
    return emit(std::move(v), [this, a, c](const M& g) {
      nodes_[a].grad += g * static_cast<T>(c);
    });
  }

  Ref one_minus(Ref a) {
    M v = (T(1) - nodes_[a].val.array()).matrix();
    return emit(std::move(v), [this, a](const M& g) { nodes_[a].grad -= g; });
  }

  Ref sigmoid(Ref a) {
    M v = numcore::sigmoid<T>(nodes_[a].val);
    Ref out = emit(M(v), [this, a, out_idx = next_index()](const M& g) {
      const M& s = nodes_[out_idx].val;
      nodes_[a].grad.array() += g.array() * s.array() * (T(1) - s.array());
    });
    return out;
  }

  Ref tanh_(Ref a) {
    M v = tanh_of<T>(nodes_[a].val);
    Ref out = emit(M(v), [this, a, out_idx = next_index()](const M& g) {
      const M& s = nodes_[out_idx].val;
      nodes_[a].grad.array() += g.array() * (T(1) - s.array().square());
    });
    return out;
  }

  Ref softmax_rows(Ref a) {
    M v = numcore::softmax_rows<T>(nodes_[a].val);
    Ref out = emit(M(v), [this, a, out_idx = next_index()](const M& g) {
      const M& p = nodes_[out_idx].val;
      Mat<T> dot = (g.array() * p.array()).rowwise().sum();
      nodes_[a].grad.array() +=
          p.array() * (g.array().colwise() - dot.col(0).array());
    });
    return out;
  }

  Ref cumax_rows(Ref a) {
    M p = numcore::softmax_rows<T>(nodes_[a].val);
    M v = p;
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 1; c < v.cols(); ++c) v(r, c) += v(r, c - 1);
    return emit(std::move(v), [this, a, p = std::move(p)](const M& g) {
      // suffix-sum the gradient back through the cumsum, then softmax backward
      M gp = g;
      for (Eigen::Index r = 0; r < gp.rows(); ++r)
        for (Eigen::Index c = gp.cols() - 2; c >= 0; --c) gp(r, c) += gp(r, c + 1);
      Mat<T> dot = (gp.array() * p.array()).rowwise().sum();
      nodes_[a].grad.array() +=
          p.array() * (gp.array().colwise() - dot.col(0).array());
    });
  }

  // (b x m) -> (b x m*k): every input column repeated k consecutive times
  Ref repeat_cols(Ref a, int k) {
    const M& x = nodes_[a].val;
    M v(x.rows(), x.cols() * k);
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      for (int j = 0; j < k; ++j) v.col(c * k + j) = x.col(c);
    return emit(std::move(v), [this, a, k](const M& g) {
      for (Eigen::Index c = 0; c < nodes_[a].val.cols(); ++c)
        for (int j = 0; j < k; ++j) nodes_[a].grad.col(c) += g.col(c * k + j);
    });
  }

  Ref concat_cols(Ref a, Ref b) {
    const M& x = nodes_[a].val;
    const M& y = nodes_[b].val;
    M v(x.rows(), x.cols() + y.cols());
    v << x, y;
    return emit(std::move(v), [this, a, b, na = x.cols()](const M& g) {
      nodes_[a].grad += g.leftCols(na);
      nodes_[b].grad += g.rightCols(g.cols() - na);
    });
  }

  Ref slice_cols(Ref a, Eigen::Index off, Eigen::Index n) {
    M v = nodes_[a].val.middleCols(off, n);
    return emit(std::move(v), [this, a, off, n](const M& g) {
      nodes_[a].grad.middleCols(off, n) += g;
    });
  }

  // embedding gather: rows of table indexed by ids
  Ref embed(Ref table, const std::vector<int>& ids) {
    const M& e = nodes_[table].val;
    M v(static_cast<Eigen::Index>(ids.size()), e.cols());
    for (size_t b = 0; b < ids.size(); ++b) v.row(static_cast<Eigen::Index>(b)) = e.row(ids[b]);
    return emit(std::move(v), [this, table, ids](const M& g) {
      for (size_t b = 0; b < ids.size(); ++b)
        nodes_[table].grad.row(ids[b]) += g.row(static_cast<Eigen::Index>(b));
    });
  }

  // Soft stack update. Layout: stack (batch x depth*width) with cell i at
  // columns [i*width, (i+1)*width); actions (batch x n_actions) columns
  // [push, pop(, noop)]; push_vals (batch x width). Bottom row drops on push.
  Ref stack_blend(Ref stack, Ref actions, Ref push_vals, int depth, int width) {
    const M& s = nodes_[stack].val;
    const M& a = nodes_[actions].val;
    const M& pv = nodes_[push_vals].val;
    const bool noop = a.cols() == 3;
    const Eigen::Index w = width, rest = static_cast<Eigen::Index>(depth - 1) * w;
    M v = M::Zero(s.rows(), s.cols());
    auto apush = a.col(0), apop = a.col(1);
    v.leftCols(w).array() += pv.array().colwise() * apush.array();
    if (depth > 1) {
      v.rightCols(rest).array() += s.leftCols(rest).array().colwise() * apush.array();
      v.leftCols(rest).array() += s.rightCols(rest).array().colwise() * apop.array();
    }
    if (noop) v.array() += s.array().colwise() * a.col(2).array();
    return emit(std::move(v), [this, stack, actions, push_vals, depth, w, rest,
                               noop](const M& g) {
      const M& s2 = nodes_[stack].val;
      const M& a2 = nodes_[actions].val;
      const M& pv2 = nodes_[push_vals].val;
      auto apush = a2.col(0), apop = a2.col(1);
      nodes_[push_vals].grad.array() += g.leftCols(w).array().colwise() * apush.array();
      nodes_[actions].grad.col(0).array() +=
          (g.leftCols(w).array() * pv2.array()).rowwise().sum();
      if (depth > 1) {
        nodes_[stack].grad.leftCols(rest).array() +=
            g.rightCols(rest).array().colwise() * apush.array();
        nodes_[stack].grad.rightCols(rest).array() +=
            g.leftCols(rest).array().colwise() * apop.array();
        nodes_[actions].grad.col(0).array() +=
            (g.rightCols(rest).array() * s2.leftCols(rest).array()).rowwise().sum();
        nodes_[actions].grad.col(1).array() +=
            (g.leftCols(rest).array() * s2.rightCols(rest).array()).rowwise().sum();
      }
      if (noop) {
        nodes_[stack].grad.array() += g.array().colwise() * a2.col(2).array();
        nodes_[actions].grad.col(2).array() += (g.array() * s2.array()).rowwise().sum();
      }
    });
  }

  // mean cross-entropy over rows, in nats; returns a (1 x 1) node
  Ref ce_mean(Ref logits, const std::vector<int>& targets) {
    const M& x = nodes_[logits].val;
    if (static_cast<Eigen::Index>(targets.size()) != x.rows())
      throw ConfigError("ce_mean: one target per row required");
    double total = 0;
    M p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      auto row = x.row(r).array();
      T mx = row.maxCoeff();
      Eigen::Array<T, 1, Eigen::Dynamic> e = (row - mx).exp();
      T z = e.sum();
      p.row(r) = (e / z).matrix();
      total += static_cast<double>(std::log(z) + mx - x(r, targets[r]));
    }
    M v(1, 1);
    v(0, 0) = static_cast<T>(total / static_cast<double>(x.rows()));
    return emit(std::move(v), [this, logits, targets, p = std::move(p)](const M& g) {
      const T scale = g(0, 0) / static_cast<T>(targets.size());
      M d = p * scale;
      for (size_t r = 0; r < targets.size(); ++r)
        d(static_cast<Eigen::Index>(r), targets[r]) -= scale;
      nodes_[logits].grad += d;
    });
  }

  // Runs reverse accumulation from the (1 x 1) loss node, then adds bound
  // parameter gradients into their Parameter::grad accumulators.
  void backward(Ref loss) {
    if (!record_) throw ConfigError("backward on a non-recording tape");
    for (Node& n : nodes_) n.grad = M::Zero(n.val.rows(), n.val.cols());
    nodes_[loss].grad.setConstant(T(1));
    for (int i = loss; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(nodes_[i].grad);
    for (auto& [ref, p] : bound_) p->grad += nodes_[ref].grad;
  }

  M detach(Ref i) const { return nodes_[i].val; }

 private:
  struct Node {
    M val;
    M grad;
    std::function<void(const M&)> back;
  };

  Ref next_index() const { return static_cast<Ref>(nodes_.size()); }

  template <class F>
  Ref emit(M v, F&& back) {
    if (record_)
      nodes_.push_back(Node{std::move(v), {}, std::forward<F>(back)});
    else
      nodes_.push_back(Node{std::move(v), {}, nullptr});
    return static_cast<Ref>(nodes_.size() - 1);
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Ref, Parameter<T>*>> bound_;
  std::unordered_map<const Parameter<T>*, Ref> param_refs_;
};

}  // namespace nestlm::numcore
