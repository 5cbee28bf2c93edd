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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/density.hpp"
#include "alphada/divergence.hpp"
#include "alphada/nnet.hpp"
#include "alphada/rng.hpp"
#include "alphada/synthbench.hpp"
#include "alphada/tape.hpp"

namespace alphada {

// Full experiment specification. Defaults: alpha 0.7, gamma 0.1, batch 64,
// unit kernel variance, SGD momentum 0.9 with weight decay 5e-4.
struct AdaptationConfig {
  double alpha = 0.7;
  double gamma = 0.1;
  double sigma2 = 1.0;
  int batch_size = 64;
  int epochs = 60;
  double learning_rate = 0.05;
  AdaptMode mode = AdaptMode::osda;
  std::uint64_t seed = 1;
  std::vector<int> layers = {2, 16, 2};  // encoder sizes [m, ..., d]
  double p_min = 1e-6;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool leave_one_out = false;

  void validate() const {
    Alpha(alpha).require_unit_interval("training");
    if (!(gamma >= 0.0)) throw ConfigInvalid("gamma must be nonnegative");
    if (!(sigma2 > 0.0)) throw ConfigInvalid("sigma2 must be positive");
    if (batch_size < 2) throw ConfigInvalid("batch_size must be at least 2");
    if (epochs < 1) throw ConfigInvalid("epochs must be at least 1");
    if (!(learning_rate > 0.0))
      throw ConfigInvalid("learning_rate must be positive");
    if (layers.size() < 2)
      throw ConfigInvalid("layers must name input and embedding sizes");
    for (int s : layers)
      if (s < 1) throw ConfigInvalid("layer sizes must be positive");
    if (!(p_min > 0.0)) throw ConfigInvalid("p_min must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigInvalid("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
      throw ConfigInvalid("weight_decay must be nonnegative");
  }

  // Step decay: halve every ceil(epochs/3) epochs. epoch is zero-based.
  double lr_at_epoch(int epoch) const {
    int period = (epochs + 2) / 3;
    return learning_rate * std::pow(0.5, epoch / period);
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based in reports
  double class_loss = 0.0;
  double divergence = 0.0;
  double objective = 0.0;
  double target_shared_accuracy = std::nan("");  // NaN when unavailable
  double learning_rate = 0.0;
};

// Mean per-class accuracy over the shared classes only; private-class
// samples never enter this metric.
struct OsStarResult {
  std::vector<int> class_ids;
  std::vector<double> per_class;
  double mean = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  OsStarResult os_star;
  bool has_os_star = false;
  std::uint64_t seed = 0;
  AdaptationConfig config;
};

struct TrainResult {
  Mlp encoder;
  Classifier classifier;
  TrainingReport report;
};

// Divergence between the per-batch kernel mixtures. Open-set mode evaluates
// the forward estimator at the target embeddings (outliers live in the
// target); partial mode evaluates the reverse estimator at the source
// embeddings. leave_one_out drops the kernel centered at each eval point
// from its own mixture.
inline DivergenceEstimate batch_divergence(const Matrix& z_source,
                                           const Matrix& z_target,
                                           const Alpha& a, double sigma2,
                                           AdaptMode mode,
                                           bool leave_one_out = false) {
  if (z_source.rows() < 1 || z_target.rows() < 1)
    throw EmptyBatch("both embedding batches must be non-empty");
  if (z_source.cols() != z_target.cols())
    throw DimensionMismatch("embedding dimensions differ");
  if (!leave_one_out) {
    KernelMixture p(z_source, sigma2);
    KernelMixture q(z_target, sigma2);
    LogDensity lp = [&p](const Eigen::Ref<const Vector>& z) {
      return log_density(p, z);
    };
    LogDensity lq = [&q](const Eigen::Ref<const Vector>& z) {
      return log_density(q, z);
    };
    return mode == AdaptMode::osda
               ? mc_alpha_divergence(z_target, lp, lq, a)
               : mc_reverse_alpha_divergence(z_source, lp, lq, a);
  }
  a.require_unit_interval("batch divergence");
  const bool forward = mode == AdaptMode::osda;
  const Matrix& eval = forward ? z_target : z_source;
  const Matrix& other = forward ? z_source : z_target;
  if (eval.rows() < 2)
    throw EmptyBatch("leave-one-out needs at least two eval points");
  auto parts = detail::mixture_divergence_parts(eval, other, a.value(), sigma2,
                                                true);
  return DivergenceEstimate{parts.value, static_cast<std::size_t>(eval.rows()),
                            a.value(),
                            forward ? Direction::forward : Direction::reverse};
}

// The differentiable joint objective L_c + gamma * D_hat built on a tape.
// Returns the node ids needed by the training loop.
struct ObjectiveGraph {
  Tape tape;
  Tape::Id loss;
  Tape::Id class_loss;
  Tape::Id divergence;
  std::vector<Tape::Id> enc_w, enc_b;
  Tape::Id cls_w, cls_b;
};

inline ObjectiveGraph joint_objective(const Matrix& x_source,
                                      const std::vector<int>& labels,
                                      const Matrix& x_target, const Mlp& net,
                                      const Classifier& cls,
                                      const AdaptationConfig& cfg) {
  ObjectiveGraph g;
  Tape& tape = g.tape;
  Tape::Id xs = tape.leaf(x_source);
  Tape::Id xt = tape.leaf(x_target);

  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    g.enc_w.push_back(tape.leaf(net.weights[l]));
    g.enc_b.push_back(tape.leaf(net.biases[l]));
  }
  g.cls_w = tape.leaf(cls.weight);
  g.cls_b = tape.leaf(cls.bias);

  auto encode = [&](Tape::Id x) {
    Tape::Id h = x;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      h = tape.affine(h, g.enc_w[l], g.enc_b[l]);
      if (l + 1 < net.layer_count()) h = tape.relu(h);
    }
    return h;
  };
  Tape::Id zs = encode(xs);
  Tape::Id zt = encode(xt);

  Tape::Id probs =
      tape.softmax_floor(tape.affine(zs, g.cls_w, g.cls_b), cls.p_min);
  g.class_loss = tape.cross_entropy(probs, labels);
  g.divergence = tape.mixture_divergence(
      zs, zt, Alpha(cfg.alpha), cfg.sigma2,
      cfg.mode == AdaptMode::osda ? Direction::forward : Direction::reverse,
      cfg.leave_one_out);
  // gamma = 0 keeps the divergence reported but out of the gradient path.
  g.loss = cfg.gamma > 0.0
               ? tape.add(g.class_loss, tape.scale(g.divergence, cfg.gamma))
               : g.class_loss;
  return g;
}

inline OsStarResult evaluate_os_star(const Mlp& net, const Classifier& cls,
                                     const Dataset& eval,
                                     const std::vector<int>& shared_classes) {
  if (eval.labels.size() != static_cast<std::size_t>(eval.size()))
    throw ConfigInvalid("evaluation set must be labeled");
  if (shared_classes.empty())
    throw ConfigInvalid("no shared classes given");
  std::vector<int> preds =
      predict(forward_classifier(cls, forward_encoder(net, eval.samples)));

  OsStarResult result;
  result.class_ids = shared_classes;
  for (int c : shared_classes) {
    long total = 0, correct = 0;
    for (std::size_t i = 0; i < eval.labels.size(); ++i) {
      if (eval.labels[i] != c) continue;
      ++total;
      correct += preds[i] == c;
    }
    if (total == 0)
      throw MissingClass("shared class " + std::to_string(c) +
                         " has no evaluation samples");
    result.per_class.push_back(static_cast<double>(correct) /
                               static_cast<double>(total));
  }
  double sum = 0.0;
  for (double a : result.per_class) sum += a;
  result.mean = sum / static_cast<double>(result.per_class.size());
  return result;
}

namespace detail {

// Cycling batch sampler over a dataset: consumes a shuffled permutation and
// reshuffles whenever it runs out, so every batch draw is deterministic in
// the stream order.
class BatchCycler {
 public:
  BatchCycler(Eigen::Index n, Rng& rng) : rng_(rng), perm_(n) {
    for (Eigen::Index i = 0; i < n; ++i) perm_[i] = i;
    cursor_ = perm_.size();  // first draw triggers a shuffle
  }

  std::vector<Eigen::Index> take(std::size_t count) {
    std::vector<Eigen::Index> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == perm_.size()) {
        rng_.shuffle(perm_);
        cursor_ = 0;
      }
      out.push_back(perm_[cursor_++]);
    }
    return out;
  }

 private:
  Rng& rng_;
  std::vector<Eigen::Index> perm_;
  std::size_t cursor_ = 0;
};

inline Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(idx.size(), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = m.row(idx[i]);
  return out;
}

inline std::vector<int> shared_class_ids(const Dataset& source,
                                         const Dataset& target) {
  std::set<int> s(source.labels.begin(), source.labels.end());
  std::set<int> shared;
  for (int y : target.labels)
    if (s.count(y)) shared.insert(y);
  return {shared.begin(), shared.end()};
}

}  // namespace detail

// Mini-batch training of the joint objective. One epoch makes
// ceil(N_s / batch) paired batches: source indices pass once through a
// per-epoch shuffle, target indices come from a reshuffling cycle of the
// same per-batch size. Target labels are never read by the gradient path.
inline TrainResult train(const AdaptationConfig& cfg, const Dataset& source,
                         const Dataset& target) {
  cfg.validate();
  if (source.labels.size() != static_cast<std::size_t>(source.size()))
    throw ConfigInvalid("source dataset must be labeled");
  if (source.dim() != cfg.layers.front() || target.dim() != cfg.layers.front())
    throw ConfigInvalid("dataset dimension does not match encoder input");
  if (target.size() < 1) throw ConfigInvalid("target dataset is empty");

  int classes = 0;
  for (int y : source.labels) {
    if (y < 0) throw ConfigInvalid("negative source label");
    classes = std::max(classes, y + 1);
  }

  Rng rng(cfg.seed);
  Mlp net = Mlp::init(cfg.layers, rng);
  Classifier cls = Classifier::init(net.embedding_dim(), classes, cfg.p_min, rng);
  SgdState sgd(cfg.learning_rate, cfg.momentum, cfg.weight_decay, net, cls);

  const bool target_labeled =
      target.labels.size() == static_cast<std::size_t>(target.size());
  std::vector<int> shared =
      target_labeled ? detail::shared_class_ids(source, target)
                     : std::vector<int>{};

  const Eigen::Index n_source = source.size();
  const int batches_per_epoch =
      static_cast<int>((n_source + cfg.batch_size - 1) / cfg.batch_size);

  std::vector<Eigen::Index> source_perm(n_source);
  for (Eigen::Index i = 0; i < n_source; ++i) source_perm[i] = i;
  detail::BatchCycler target_batches(target.size(), rng);

  TrainingReport report;
  report.seed = cfg.seed;
  report.config = cfg;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    sgd.learning_rate = cfg.lr_at_epoch(epoch);
    rng.shuffle(source_perm);

    double sum_class = 0.0, sum_div = 0.0, sum_obj = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      Eigen::Index lo = static_cast<Eigen::Index>(b) * cfg.batch_size;
      Eigen::Index hi = std::min<Eigen::Index>(lo + cfg.batch_size, n_source);
      if (hi - lo < 2)
        throw DegenerateBatch("source batch " + std::to_string(b) +
                              " has fewer than 2 samples");
      std::vector<Eigen::Index> src_idx(source_perm.begin() + lo,
                                        source_perm.begin() + hi);
      std::vector<Eigen::Index> tgt_idx = target_batches.take(src_idx.size());

      Matrix xs = detail::gather_rows(source.samples, src_idx);
      Matrix xt = detail::gather_rows(target.samples, tgt_idx);
      std::vector<int> ys(src_idx.size());
      for (std::size_t i = 0; i < src_idx.size(); ++i)
        ys[i] = source.labels[src_idx[i]];

      ObjectiveGraph g = joint_objective(xs, ys, xt, net, cls, cfg);
      std::vector<Matrix> adj = g.tape.backward(g.loss);

      Gradients grads;
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        grads.enc_w.push_back(adj[g.enc_w[l]]);
        grads.enc_b.push_back(adj[g.enc_b[l]].col(0));
      }
      grads.cls_w = adj[g.cls_w];
      grads.cls_b = adj[g.cls_b].col(0);
      sgd_step(net, cls, grads, sgd);

      sum_class += g.tape.value(g.class_loss)(0, 0);
      sum_div += g.tape.value(g.divergence)(0, 0);
      sum_obj += g.tape.value(g.loss)(0, 0);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.class_loss = sum_class / batches_per_epoch;
    rec.divergence = sum_div / batches_per_epoch;
    rec.objective = sum_obj / batches_per_epoch;
    rec.learning_rate = sgd.learning_rate;
    if (target_labeled && !shared.empty())
      rec.target_shared_accuracy =
          evaluate_os_star(net, cls, target, shared).mean;
    report.epochs.push_back(rec);
  }

  if (target_labeled && !shared.empty()) {
    report.os_star = evaluate_os_star(net, cls, target, shared);
    report.has_os_star = true;
  }
  return TrainResult{std::move(net), std::move(cls), std::move(report)};
}

}  // namespace alphada
