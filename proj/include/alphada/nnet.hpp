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
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/rng.hpp"
#include "alphada/tape.hpp"

namespace alphada {

// Encoder: fully connected layers with ramp activations on every hidden
// layer and a linear output. sizes = [input, hidden..., embedding].
struct Mlp {
  std::vector<int> sizes;
  std::vector<Matrix> weights;  // sizes[i] x sizes[i+1]
  std::vector<Vector> biases;   // sizes[i+1]

  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn layer by
  // layer in row-major order from the given stream; biases start at zero.
  static Mlp init(std::vector<int> layer_sizes, Rng& rng) {
    if (layer_sizes.size() < 2)
      throw ConfigInvalid("encoder needs at least input and output sizes");
    for (int s : layer_sizes)
      if (s < 1) throw ConfigInvalid("layer sizes must be positive");
    Mlp net;
    net.sizes = std::move(layer_sizes);
    for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
      int fan_in = net.sizes[l], fan_out = net.sizes[l + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Matrix w(fan_in, fan_out);
      for (int r = 0; r < fan_in; ++r)
        for (int c = 0; c < fan_out; ++c) w(r, c) = rng.uniform(-bound, bound);
      net.weights.push_back(std::move(w));
      net.biases.push_back(Vector::Zero(fan_out));
    }
    return net;
  }

  int input_dim() const { return sizes.front(); }
  int embedding_dim() const { return sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

// z = f_theta(x) for a batch, one sample per row.
inline Matrix forward_encoder(const Mlp& net, const Matrix& x) {
  if (x.cols() != net.input_dim())
    throw DimensionMismatch("encoder expects " +
                            std::to_string(net.input_dim()) +
                            " input columns, got " + std::to_string(x.cols()));
  Matrix h = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    h = h * net.weights[l];
    h.rowwise() += net.biases[l].transpose();
    if (l + 1 < net.layer_count()) h = h.cwiseMax(0.0);
  }
  return h;
}

// Linear classifier with an exact probability floor. M = -ln(p_min) caps
// the per-sample cross-entropy, which is what the target-loss bound needs.
struct Classifier {
  Matrix weight;  // d x C
  Vector bias;    // C
  double p_min = 1e-6;

  Classifier(Matrix w, Vector b, double floor)
      : weight(std::move(w)), bias(std::move(b)), p_min(floor) {
    if (bias.size() != weight.cols())
      throw ShapeMismatch("classifier bias length must equal class count");
    int classes = static_cast<int>(weight.cols());
    if (!(p_min > 0.0 && p_min < 1.0 / classes))
      throw ConfigInvalid("p_min must lie in (0, 1/C)");
  }

  static Classifier init(int dim, int classes, double p_min, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    Matrix w(dim, classes);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < classes; ++c) w(r, c) = rng.uniform(-bound, bound);
    return Classifier(std::move(w), Vector::Zero(classes), p_min);
  }

  int classes() const { return static_cast<int>(weight.cols()); }
  double loss_cap() const { return -std::log(p_min); }
};

// Floored softmax probabilities, rows summing to 1 exactly:
//   p = p_min + (1 - C p_min) softmax(z W + b).
inline Matrix forward_classifier(const Classifier& c, const Matrix& z) {
  if (z.cols() != c.weight.rows())
    throw DimensionMismatch("classifier expects " +
                            std::to_string(c.weight.rows()) +
                            " embedding columns, got " +
                            std::to_string(z.cols()));
  Matrix logits = z * c.weight;
  logits.rowwise() += c.bias.transpose();
  double cls = static_cast<double>(c.classes());
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd e =
        (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    p.row(i) = (e / e.sum()).array() * (1.0 - cls * c.p_min) + c.p_min;
  }
  return p;
}

// -(1/N) sum_i ln p[i, y_i]. With floored probabilities the result lies in
// [0, -ln p_min].
inline double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows())
    throw ShapeMismatch("one label per probability row required");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    int y = labels[i];
    if (y < 0 || y >= probs.cols())
      throw LabelOutOfRange("label " + std::to_string(y) + " out of range");
    loss -= std::log(probs(i, y));
  }
  return loss / static_cast<double>(probs.rows());
}

// argmax per row; exact ties resolve to the lowest class index.
inline std::vector<int> predict(const Matrix& probs) {
  std::vector<int> out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
      if (probs(i, j) > probs(i, best)) best = static_cast<int>(j);
    out[i] = best;
  }
  return out;
}

// Parameter-shaped gradient container for one encoder + classifier pair.
struct Gradients {
  std::vector<Matrix> enc_w;
  std::vector<Vector> enc_b;
  Matrix cls_w;
  Vector cls_b;
};

// SGD with momentum and weight decay:
//   v <- momentum v + g + wd p;  p <- p - lr v.
struct SgdState {
  double learning_rate;
  double momentum;
  double weight_decay;
  std::vector<Matrix> vel_enc_w;
  std::vector<Vector> vel_enc_b;
  Matrix vel_cls_w;
  Vector vel_cls_b;

  SgdState(double lr, double mom, double wd, const Mlp& net,
           const Classifier& cls)
      : learning_rate(lr), momentum(mom), weight_decay(wd) {
    if (!(lr > 0.0)) throw ConfigInvalid("learning rate must be positive");
    if (!(mom >= 0.0 && mom < 1.0))
      throw ConfigInvalid("momentum must lie in [0, 1)");
    if (!(wd >= 0.0)) throw ConfigInvalid("weight decay must be nonnegative");
    for (const Matrix& w : net.weights)
      vel_enc_w.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const Vector& b : net.biases) vel_enc_b.push_back(Vector::Zero(b.size()));
    vel_cls_w = Matrix::Zero(cls.weight.rows(), cls.weight.cols());
    vel_cls_b = Vector::Zero(cls.bias.size());
  }
};

namespace detail {

template <typename T>
void sgd_update(T& param, const T& grad, T& vel, const SgdState& s) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw ShapeMismatch("gradient shape does not match parameter shape");
  vel = s.momentum * vel + grad + s.weight_decay * param;
  param -= s.learning_rate * vel;
}

}  // namespace detail

inline void sgd_step(Mlp& net, Classifier& cls, const Gradients& g,
                     SgdState& state) {
  if (g.enc_w.size() != net.weights.size() ||
      g.enc_b.size() != net.biases.size())
    throw ShapeMismatch("gradient layer count does not match the encoder");
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    detail::sgd_update(net.weights[l], g.enc_w[l], state.vel_enc_w[l], state);
    detail::sgd_update(net.biases[l], g.enc_b[l], state.vel_enc_b[l], state);
  }
  detail::sgd_update(cls.weight, g.cls_w, state.vel_cls_w, state);
  detail::sgd_update(cls.bias, g.cls_b, state.vel_cls_b, state);
}

// Builds the encoder forward chain on a tape. Returns the output node and
// appends the created parameter leaves to w_ids / b_ids.
inline Tape::Id encoder_graph(Tape& tape, const Mlp& net, Tape::Id x,
                              std::vector<Tape::Id>& w_ids,
                              std::vector<Tape::Id>& b_ids) {
  Tape::Id h = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Tape::Id w = tape.leaf(net.weights[l]);
    Tape::Id b = tape.leaf(net.biases[l]);
    w_ids.push_back(w);
    b_ids.push_back(b);
    h = tape.affine(h, w, b);
    if (l + 1 < net.layer_count()) h = tape.relu(h);
  }
  return h;
}

// Max over parameters of |analytic - central difference| over
// (|central difference| + 1e-12), with the difference taken at +-step.
inline double finite_diff_check(const std::function<double()>& loss,
                                const std::vector<Matrix*>& params,
                                const std::vector<Matrix>& analytic,
                                double step) {
  if (!(step > 0.0)) throw ConfigInvalid("step must be positive");
  if (params.size() != analytic.size())
    throw ShapeMismatch("one analytic gradient per parameter block required");
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    if (p.rows() != analytic[k].rows() || p.cols() != analytic[k].cols())
      throw ShapeMismatch("analytic gradient shape mismatch");
    for (Eigen::Index i = 0; i < p.rows(); ++i)
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        double saved = p(i, j);
        p(i, j) = saved + step;
        double up = loss();
        p(i, j) = saved - step;
        double down = loss();
        p(i, j) = saved;
        double central = (up - down) / (2.0 * step);
        double err = std::abs(analytic[k](i, j) - central) /
                     (std::abs(central) + 1e-12);
        worst = std::max(worst, err);
      }
  }
  return worst;
}

// Checkpoint format (CSV, shortest round-trip floats):
//   layer_sizes,<m>,<h1>,...,<d>
//   classifier,<d>,<C>,<p_min>
//   W<l>,<fan_in * fan_out values, row-major>   for each encoder layer l
//   b<l>,<fan_out values>
//   Wc,<d * C values, row-major>
//   bc,<C values>
inline void save_checkpoint(const Mlp& net, const Classifier& cls,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out << "layer_sizes";
  for (int s : net.sizes) out << ',' << s;
  out << "\nclassifier," << cls.weight.rows() << ',' << cls.classes() << ','
      << format_double(cls.p_min) << '\n';
  auto write_row_major = [&out](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        out << ',' << format_double(m(r, c));
    out << '\n';
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    out << 'W' << l;
    write_row_major(net.weights[l]);
    out << 'b' << l;
    write_row_major(net.biases[l].transpose());
  }
  out << "Wc";
  write_row_major(cls.weight);
  out << "bc";
  write_row_major(cls.bias.transpose());
  if (!out) throw IoFailure("failed writing " + path);
}

inline std::pair<Mlp, Classifier> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  auto next_fields = [&in, &path](const std::string& tag) {
    std::string line;
    if (!std::getline(in, line))
      throw ParseFailure(path + ": missing '" + tag + "' record");
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(cell);
    if (fields.empty() || fields.front() != tag)
      throw ParseFailure(path + ": expected '" + tag + "' record, got '" +
                         (fields.empty() ? "" : fields.front()) + "'");
    return fields;
  };

  auto sizes_fields = next_fields("layer_sizes");
  std::vector<int> sizes;
  for (std::size_t i = 1; i < sizes_fields.size(); ++i)
    sizes.push_back(static_cast<int>(
        parse_double(sizes_fields[i], path + " layer_sizes")));
  if (sizes.size() < 2) throw ParseFailure(path + ": bad layer_sizes record");

  auto cls_fields = next_fields("classifier");
  if (cls_fields.size() != 4)
    throw ParseFailure(path + ": bad classifier record");
  int dim = static_cast<int>(parse_double(cls_fields[1], path));
  int classes = static_cast<int>(parse_double(cls_fields[2], path));
  double p_min = parse_double(cls_fields[3], path);
  if (dim != sizes.back())
    throw ParseFailure(path + ": classifier dim does not match encoder");

  auto read_matrix = [&](const std::string& tag, Eigen::Index rows,
                         Eigen::Index cols) {
    auto fields = next_fields(tag);
    if (static_cast<Eigen::Index>(fields.size()) != rows * cols + 1)
      throw ParseFailure(path + ": '" + tag + "' expects " +
                         std::to_string(rows * cols) + " values");
    Matrix m(rows, cols);
    Eigen::Index k = 1;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        m(r, c) = parse_double(fields[k++], path + " " + tag);
    return m;
  };

  Mlp net;
  net.sizes = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    net.weights.push_back(
        read_matrix("W" + std::to_string(l), sizes[l], sizes[l + 1]));
    net.biases.push_back(
        read_matrix("b" + std::to_string(l), 1, sizes[l + 1]).row(0));
  }
  Matrix wc = read_matrix("Wc", dim, classes);
  Vector bc = read_matrix("bc", 1, classes).row(0);
  return {std::move(net), Classifier(std::move(wc), std::move(bc), p_min)};
}

}  // namespace alphada
