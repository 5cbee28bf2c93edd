// Copyright 2026 The alphada Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/density.hpp"
#include "alphada/divergence.hpp"

namespace alphada {
namespace detail {

// Value and backward-pass ingredients of the mini-batch divergence
// estimator between mixture(other) and mixture(eval), evaluated at the
// eval points:
//   c_a [ (1/Ne) sum_i exp((1-a) u_i) - 1 ],
//   u_i = log mixture(other)(e_i) - log mixture(eval)(e_i), clamped.
struct MixtureDivergenceParts {
  double value;
  Matrix g;          // (n_eval x 1) dvalue/du_i, zero where clamped
  Matrix gamma_num;  // kernel responsibilities, (n_eval x n_other)
  Matrix gamma_den;  // kernel responsibilities, (n_eval x n_eval)
};

inline Matrix pairwise_exponents(const Matrix& a, const Matrix& b,
                                 double sigma2) {
  Matrix d2 = -2.0 * a * b.transpose();
  d2.colwise() += a.rowwise().squaredNorm();
  d2.rowwise() += b.rowwise().squaredNorm().transpose();
  return d2 * (-0.5 / sigma2);
}

inline MixtureDivergenceParts mixture_divergence_parts(const Matrix& eval,
                                                       const Matrix& other,
                                                       double alpha,
                                                       double sigma2,
                                                       bool leave_one_out) {
  const Eigen::Index ne = eval.rows();
  Matrix e_num = pairwise_exponents(eval, other, sigma2);
  Matrix e_den = pairwise_exponents(eval, eval, sigma2);
  if (leave_one_out)
    e_den.diagonal().setConstant(-std::numeric_limits<double>::infinity());

  MixtureDivergenceParts parts;
  parts.g = Matrix(ne, 1);
  parts.gamma_num = Matrix(ne, other.rows());
  parts.gamma_den = Matrix(ne, ne);

  double den_count = static_cast<double>(leave_one_out ? ne - 1 : ne);
  double log_count_ratio =
      std::log(den_count) - std::log(static_cast<double>(other.rows()));

  double mean = 0.0;
  for (Eigen::Index i = 0; i < ne; ++i) {
    double m_num = e_num.row(i).maxCoeff();
    Eigen::RowVectorXd w_num = (e_num.row(i).array() - m_num).exp();
    double s_num = w_num.sum();
    parts.gamma_num.row(i) = w_num / s_num;

    // m_den is finite: off-diagonal exponents are finite even under
    // leave-one-out, so exp(-inf - m_den) = 0 falls out of the sum.
    double m_den = e_den.row(i).maxCoeff();
    Eigen::RowVectorXd w_den = (e_den.row(i).array() - m_den).exp();
    double s_den = w_den.sum();
    parts.gamma_den.row(i) = w_den / s_den;

    // log ratio at the eval point; the (d/2) log(2 pi s2) terms cancel
    double u = (m_num + std::log(s_num)) - (m_den + std::log(s_den)) +
               log_count_ratio;
    bool clamped = u > kLogRatioClamp || u < -kLogRatioClamp;
    u = clamp_log_ratio(u);
    double w = std::exp((1.0 - alpha) * u);
    mean += w;
    parts.g(i, 0) = clamped ? 0.0 : (1.0 - alpha) * w;
  }
  mean /= static_cast<double>(ne);
  double c = 1.0 / (alpha * (alpha - 1.0));
  parts.value = c * (mean - 1.0);
  parts.g *= c / static_cast<double>(ne);
  return parts;
}

}  // namespace detail

// Reverse-mode differentiation over a small registered operation set:
// affine maps, the ramp activation, floored softmax, cross-entropy,
// row-wise log-sum-exp, the mixture divergence estimator, plus add/scale
// for composing objectives. Values are eagerly computed matrices; scalars
// are 1x1. Node creation order is the topological order, so backward is a
// single reverse sweep.
class Tape {
 public:
  using Id = int;

  enum class Op {
    leaf,
    affine,
    relu,
    softmax_floor,
    cross_entropy,
    logsumexp_rows,
    mixture_divergence,
    add,
    scale,
  };

  Id leaf(Matrix v) { return push(Op::leaf, {}, std::move(v)); }

  // y = x * w + 1 b^T. w is (in x out), b is (out x 1).
  Id affine(Id x, Id w, Id b) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    const Matrix& bv = value(b);
    if (xv.cols() != wv.rows())
      throw ShapeMismatch("affine: input has " + std::to_string(xv.cols()) +
                          " columns, weight has " + std::to_string(wv.rows()) +
                          " rows");
    if (bv.rows() != wv.cols() || bv.cols() != 1)
      throw ShapeMismatch("affine: bias must be (out x 1)");
    Matrix y = xv * wv;
    y.rowwise() += bv.col(0).transpose();
    return push(Op::affine, {x, w, b}, std::move(y));
  }

  // max(0, x); the subgradient at 0 is taken as 0.
  Id relu(Id x) {
    return push(Op::relu, {x}, value(x).cwiseMax(0.0));
  }

  // p = p_min + (1 - C p_min) softmax(row), an exact floor: every output
  // lies in [p_min, 1 - (C-1) p_min] and rows sum to 1.
  Id softmax_floor(Id logits, double p_min) {
    const Matrix& l = value(logits);
    double c = static_cast<double>(l.cols());
    if (!(p_min >= 0.0 && p_min < 1.0 / c))
      throw ConfigInvalid("p_min must lie in [0, 1/C)");
    Matrix s(l.rows(), l.cols());
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      Eigen::RowVectorXd row =
          (l.row(i).array() - l.row(i).maxCoeff()).exp();
      s.row(i) = row / row.sum();
    }
    Matrix p = (s.array() * (1.0 - c * p_min) + p_min).matrix();
    Id id = push(Op::softmax_floor, {logits}, std::move(p));
    nodes_[id].scalar = p_min;
    nodes_[id].cache = std::move(s);
    return id;
  }

  // -(1/N) sum_i ln p[i, y_i], a 1x1 scalar.
  Id cross_entropy(Id probs, std::vector<int> labels) {
    const Matrix& p = value(probs);
    if (static_cast<Eigen::Index>(labels.size()) != p.rows())
      throw ShapeMismatch("cross_entropy: one label per row required");
    double loss = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      int y = labels[i];
      if (y < 0 || y >= p.cols())
        throw LabelOutOfRange("label " + std::to_string(y) + " at row " +
                              std::to_string(i) + " with " +
                              std::to_string(p.cols()) + " classes");
      loss -= std::log(p(i, y));
    }
    loss /= static_cast<double>(p.rows());
    Id id = push(Op::cross_entropy, {probs}, Matrix::Constant(1, 1, loss));
    nodes_[id].labels = std::move(labels);
    return id;
  }

  // Column vector of per-row log-sum-exp values.
  Id logsumexp_rows(Id x) {
    const Matrix& xv = value(x);
    Matrix y(xv.rows(), 1);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      double mx = xv.row(i).maxCoeff();
      y(i, 0) = mx + std::log((xv.row(i).array() - mx).exp().sum());
    }
    return push(Op::logsumexp_rows, {x}, std::move(y));
  }

  // The mini-batch divergence estimator over two kernel mixtures, fused
  // into one node. Gradients flow into both embedding batches; the eval
  // batch contributes through its points and through its own mixture
  // centers, and both paths are accumulated.
  Id mixture_divergence(Id z_source, Id z_target, const Alpha& a,
                        double sigma2, Direction dir,
                        bool leave_one_out = false) {
    a.require_unit_interval("mixture divergence");
    if (!(sigma2 > 0.0)) throw ConfigInvalid("sigma2 must be positive");
    const Matrix& zs = value(z_source);
    const Matrix& zt = value(z_target);
    if (zs.rows() < 1 || zt.rows() < 1)
      throw EmptyBatch("both embedding batches must be non-empty");
    if (zs.cols() != zt.cols())
      throw DimensionMismatch("embedding dimensions differ");

    const Matrix& eval = dir == Direction::forward ? zt : zs;
    const Matrix& other = dir == Direction::forward ? zs : zt;
    if (leave_one_out && eval.rows() < 2)
      throw EmptyBatch("leave-one-out needs at least two eval points");

    detail::MixtureDivergenceParts parts = detail::mixture_divergence_parts(
        eval, other, a.value(), sigma2, leave_one_out);
    Id id = push(Op::mixture_divergence, {z_source, z_target},
                 Matrix::Constant(1, 1, parts.value));
    Node& n = nodes_[id];
    n.alpha = a.value();
    n.scalar = sigma2;
    n.direction = dir;
    n.leave_one_out = leave_one_out;
    n.cache = std::move(parts.g);           // dvalue/du_i, column vector
    n.cache2 = std::move(parts.gamma_num);  // responsibilities, eval x other
    n.cache3 = std::move(parts.gamma_den);  // responsibilities, eval x eval
    return id;
  }

  Id add(Id a, Id b) {
    const Matrix& av = value(a);
    const Matrix& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw ShapeMismatch("add: shapes differ");
    return push(Op::add, {a, b}, av + bv);
  }

  Id scale(Id a, double c) {
    Id id = push(Op::scale, {a}, c * value(a));
    nodes_[id].scalar = c;
    return id;
  }

  const Matrix& value(Id id) const { return at(id).value; }
  std::size_t size() const { return nodes_.size(); }

  // Adjoints of every node with respect to the scalar at `loss`.
  std::vector<Matrix> backward(Id loss) const {
    const Node& top = at(loss);
    if (top.value.rows() != 1 || top.value.cols() != 1)
      throw ShapeMismatch("backward expects a scalar loss node");
    std::vector<Matrix> adj(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      adj[i] = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    adj[loss](0, 0) = 1.0;
    for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id)
      propagate(id, adj);
    return adj;
  }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<Id> inputs;
    Matrix value;
    // op-specific state
    double scalar = 0.0;  // p_min, scale factor, or sigma2
    double alpha = 0.0;
    Direction direction = Direction::forward;
    bool leave_one_out = false;
    std::vector<int> labels;
    Matrix cache, cache2, cache3;
  };

  const Node& at(Id id) const {
    if (id < 0 || id >= static_cast<Id>(nodes_.size()))
      throw ShapeMismatch("unknown tape node " + std::to_string(id));
    return nodes_[id];
  }

  Id push(Op op, std::vector<Id> inputs, Matrix v) {
    for (Id i : inputs) (void)at(i);
    Node node;
    node.op = op;
    node.inputs = std::move(inputs);
    node.value = std::move(v);
    nodes_.push_back(std::move(node));
    return static_cast<Id>(nodes_.size()) - 1;
  }

  void propagate(Id id, std::vector<Matrix>& adj) const {
    const Node& n = nodes_[id];
    const Matrix& up = adj[id];
    if (up.isZero(0.0) && n.op != Op::leaf) return;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::affine: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        const Matrix& w = nodes_[n.inputs[1]].value;
        adj[n.inputs[0]] += up * w.transpose();
        adj[n.inputs[1]] += x.transpose() * up;
        adj[n.inputs[2]] += up.colwise().sum().transpose();
        break;
      }
      case Op::relu: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        adj[n.inputs[0]] +=
            (x.array() > 0.0).select(up, Matrix::Zero(up.rows(), up.cols()));
        break;
      }
      case Op::softmax_floor: {
        const Matrix& s = n.cache;
        double gain = 1.0 - static_cast<double>(s.cols()) * n.scalar;
        Matrix& down = adj[n.inputs[0]];
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
          double dot = (up.row(i).array() * s.row(i).array()).sum() * gain;
          down.row(i) +=
              (s.row(i).array() * (gain * up.row(i).array() - dot)).matrix();
        }
        break;
      }
      case Op::cross_entropy: {
        const Matrix& p = nodes_[n.inputs[0]].value;
        double scale = -up(0, 0) / static_cast<double>(p.rows());
        Matrix& down = adj[n.inputs[0]];
        for (Eigen::Index i = 0; i < p.rows(); ++i)
          down(i, n.labels[i]) += scale / p(i, n.labels[i]);
        break;
      }
      case Op::logsumexp_rows: {
        const Matrix& x = nodes_[n.inputs[0]].value;
        Matrix& down = adj[n.inputs[0]];
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          Eigen::RowVectorXd soft =
              (x.row(i).array() - x.row(i).maxCoeff()).exp();
          soft /= soft.sum();
          down.row(i) += up(i, 0) * soft;
        }
        break;
      }
      case Op::mixture_divergence:
        propagate_divergence(n, up(0, 0), adj);
        break;
      case Op::add:
        adj[n.inputs[0]] += up;
        adj[n.inputs[1]] += up;
        break;
      case Op::scale:
        adj[n.inputs[0]] += n.scalar * up;
        break;
    }
  }

  void propagate_divergence(const Node& n, double up,
                            std::vector<Matrix>& adj) const {
    Id zs = n.inputs[0], zt = n.inputs[1];
    const Matrix& eval =
        n.direction == Direction::forward ? nodes_[zt].value : nodes_[zs].value;
    const Matrix& other =
        n.direction == Direction::forward ? nodes_[zs].value : nodes_[zt].value;
    Matrix& d_eval =
        n.direction == Direction::forward ? adj[zt] : adj[zs];
    Matrix& d_other =
        n.direction == Direction::forward ? adj[zs] : adj[zt];

    const Matrix& g = n.cache;           // (ne x 1)
    const Matrix& gamma_num = n.cache2;  // (ne x no)
    const Matrix& gamma_den = n.cache3;  // (ne x ne)
    const double inv_s2 = 1.0 / n.scalar;

    // du_i/d other_k = gamma_num(i,k) (e_i - o_k) / s2
    Matrix a_num = g.col(0).asDiagonal() * gamma_num;
    d_other += up * inv_s2 *
               (a_num.transpose() * eval -
                a_num.colwise().sum().transpose().asDiagonal() * other);

    // eval-point path: du_j/d e_j = (gamma_num_j . O - gamma_den_j . E) / s2
    d_eval += up * inv_s2 *
              (g.col(0).asDiagonal() * (gamma_num * other - gamma_den * eval));

    // den-center path: du_i/d e_j = -gamma_den(i,j) (e_i - e_j) / s2
    Matrix a_den = g.col(0).asDiagonal() * gamma_den;
    d_eval += up * inv_s2 *
              (a_den.colwise().sum().transpose().asDiagonal() * eval -
               a_den.transpose() * eval);
  }

  std::vector<Node> nodes_;
};

}  // namespace alphada
