#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "nestlm/common.hpp"

namespace nestlm::numcore {

// Row-major dense storage; batched activations are (batch x features).
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Mat64 = Mat<double>;
using Vec64 = Vec<double>;

// y = x * W + b with W (in x out), x (1 x in), b (1 x out)
template <class T>
Vec<T> affine(const Mat<T>& W, const Vec<T>& x, const Vec<T>& b) {
  if (x.cols() != W.rows() || b.cols() != W.cols())
    throw ConfigError("affine: shape mismatch");
  return x * W + b;
}

template <class T, class D>
auto sigmoid_expr(const Eigen::ArrayBase<D>& x) {
  return T(0.5) * ((T(0.5) * x).tanh() + T(1));  // stable for large |x|
}

template <class T>
Mat<T> sigmoid(const Mat<T>& x) {
  return sigmoid_expr<T>(x.array()).matrix();
}

template <class T>
Mat<T> tanh_of(const Mat<T>& x) {
  return x.array().tanh().matrix();
}

template <class T>
Mat<T> softmax_rows(const Mat<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    auto row = x.row(r).array();
    T mx = row.maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (row - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

template <class T>
Vec<T> softmax(const Vec<T>& x) {
  Mat<T> m = x;
  return softmax_rows(m).row(0);
}

// cumulative sum of the softmax; nondecreasing, last entry 1
template <class T>
Mat<T> cumax_rows(const Mat<T>& x) {
  Mat<T> p = softmax_rows(x);
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 1; c < p.cols(); ++c) p(r, c) += p(r, c - 1);
  return p;
}

template <class T>
Vec<T> cumax(const Vec<T>& x) {
  Mat<T> m = x;
  return cumax_rows(m).row(0);
}

struct CrossEntropy {
  double loss;   // nats
  Vec64 grad;    // d loss / d logits = softmax - onehot
};

inline CrossEntropy cross_entropy(const Vec64& logits, int target) {
  if (target < 0 || target >= logits.cols()) throw ConfigError("cross_entropy: target out of range");
  double mx = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - mx).transpose();
  double z = e.exp().sum();
  CrossEntropy out;
  out.loss = std::log(z) + mx - logits(target);
  out.grad = ((e - std::log(z)).exp()).transpose().matrix();
  out.grad(target) -= 1.0;
  return out;
}

enum class Mode { Train, Eval };

// Inverted dropout: kept units scaled by 1/(1-rate) in train mode, identity in eval.
template <class T>
Vec<T> dropout(const Vec<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must lie in [0,1)");
  if (mode == Mode::Eval || rate == 0) return x;
  Vec<T> out(x.cols());
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    out(i) = rng.bernoulli(rate) ? T(0) : x(i) * scale;
  return out;
}

template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<T> m(rows, cols);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(rate) ? T(0) : scale;
  return m;
}

template <class T>
struct Parameter {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  Mat<T> adam_m, adam_v;
  long step = 0;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols) : name(std::move(n)) {
    value = Mat<T>::Zero(rows, cols);
    grad = Mat<T>::Zero(rows, cols);
    adam_m = Mat<T>::Zero(rows, cols);
    adam_v = Mat<T>::Zero(rows, cols);
  }
  Eigen::Index size() const { return value.size(); }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
void adam_step(Parameter<T>& p, const AdamConfig& c) {
  p.step += 1;
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  p.adam_m = b1 * p.adam_m + (1 - b1) * p.grad;
  p.adam_v = (b2 * p.adam_v.array() + (1 - b2) * p.grad.array().square()).matrix();
  const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, p.step));
  const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, p.step));
  p.value.array() -= static_cast<T>(c.lr) * (p.adam_m.array() / corr1) /
                     ((p.adam_v.array() / corr2).sqrt() + static_cast<T>(c.eps));
  p.grad.setZero();
}

}  // namespace nestlm::numcore
