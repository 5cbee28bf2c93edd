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
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/divergence.hpp"

namespace alphada {

// Uniform-weight Gaussian mixture with one shared isotropic variance,
// centered on a batch of embeddings. This is the density model placed over
// each mini-batch: every row of `centers` carries a kernel N(mu_i, s2 I).
struct KernelMixture {
  Matrix centers;  // N x d
  double variance = 1.0;

  KernelMixture(Matrix c, double s2) : centers(std::move(c)), variance(s2) {
    if (centers.rows() < 1 || centers.cols() < 1)
      throw EmptyBatch("kernel mixture needs at least one center");
    if (!(variance > 0.0)) throw ConfigInvalid("kernel variance must be positive");
    if (!centers.allFinite())
      throw NonFiniteDensity("kernel centers must be finite");
  }

  Eigen::Index dim() const { return centers.cols(); }
  Eigen::Index size() const { return centers.rows(); }
};

// Single Gaussian with diagonal covariance; the model fitted in the robust
// density demonstration.
struct GaussianModel {
  Vector mean;
  Vector variance;  // per-coordinate, all positive

  GaussianModel(Vector mu, Vector var)
      : mean(std::move(mu)), variance(std::move(var)) {
    if (mean.size() != variance.size())
      throw DimensionMismatch("mean and variance dimensions differ");
    if ((variance.array() <= 0.0).any())
      throw ConfigInvalid("variance entries must be positive");
  }

  double log_density(const Eigen::Ref<const Vector>& z) const {
    if (z.size() != mean.size())
      throw DimensionMismatch("point dimension does not match the model");
    double quad = ((z - mean).array().square() / variance.array()).sum();
    double norm = (variance.array() * 2.0 * std::numbers::pi).log().sum();
    return -0.5 * (quad + norm);
  }
};

// Empirical sample batch, one row per sample.
struct SampleSet {
  Matrix samples;  // N x d

  explicit SampleSet(Matrix s) : samples(std::move(s)) {
    if (samples.rows() < 1) throw EmptyBatch("sample set is empty");
    if (!samples.allFinite()) throw NonFiniteDensity("samples must be finite");
  }

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
};

namespace detail {

// Row vector of log kernel weights -|z - mu_k|^2 / (2 s2) for all centers.
inline Vector kernel_exponents(const KernelMixture& m,
                               const Eigen::Ref<const Vector>& z) {
  if (z.size() != m.dim())
    throw DimensionMismatch("point dimension " + std::to_string(z.size()) +
                            " does not match mixture dimension " +
                            std::to_string(m.dim()));
  return (-0.5 / m.variance) *
         (m.centers.rowwise() - z.transpose()).rowwise().squaredNorm();
}

inline double logsumexp(const Vector& v) {
  double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace detail

// log[(1/N) sum_k N(z; mu_k, s2 I)], computed through log-sum-exp so deep
// tails stay finite.
inline double log_density(const KernelMixture& m,
                          const Eigen::Ref<const Vector>& z) {
  Vector e = detail::kernel_exponents(m, z);
  double d = static_cast<double>(m.dim());
  return detail::logsumexp(e) - std::log(static_cast<double>(m.size())) -
         0.5 * d * std::log(2.0 * std::numbers::pi * m.variance);
}

// Softmax of the kernel exponents: the posterior weight of each kernel at z.
// These are the building block of every mixture gradient.
inline Vector responsibilities(const KernelMixture& m,
                               const Eigen::Ref<const Vector>& z) {
  Vector e = detail::kernel_exponents(m, z);
  Vector w = (e.array() - e.maxCoeff()).exp();
  return w / w.sum();
}

// d log_density / d z = sum_k gamma_k (mu_k - z) / s2.
inline Vector log_density_grad_point(const KernelMixture& m,
                                     const Eigen::Ref<const Vector>& z) {
  Vector gamma = responsibilities(m, z);
  return (m.centers.transpose() * gamma - z) / m.variance;
}

// d log_density / d mu_k = gamma_k (z - mu_k) / s2, returned as an N x d
// matrix congruent with the centers.
inline Matrix log_density_grad_centers(const KernelMixture& m,
                                       const Eigen::Ref<const Vector>& z) {
  Vector gamma = responsibilities(m, z);
  return gamma.asDiagonal() *
         ((-m.centers).rowwise() + z.transpose()) / m.variance;
}

// Robust fitting objective
//   (1 / (a(a-1))) sum_i N(z_i | mu, s2)^(1-a),
// the alpha-divergence between the empirical distribution of the samples
// and the model, up to an additive constant. Evaluated in log domain.
inline double robust_fit_objective(const SampleSet& s, const GaussianModel& model,
                                   const Alpha& a) {
  if (s.dim() != model.mean.size())
    throw DimensionMismatch("sample dimension does not match the model");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    sum += std::exp((1.0 - a.value()) *
                    model.log_density(s.samples.row(i).transpose()));
  return a.scale() * sum;
}

// Gradient of robust_fit_objective with respect to (mean, log variance),
// scaled by 1/N. The 1/N factor leaves minimizers unchanged and makes the
// descent step size independent of the sample count.
inline std::pair<Vector, Vector> robust_fit_gradient(const SampleSet& s,
                                                     const GaussianModel& model,
                                                     const Alpha& a) {
  const double one_minus_a = 1.0 - a.value();
  Vector g_mean = Vector::Zero(model.mean.size());
  Vector g_logvar = Vector::Zero(model.mean.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    Vector z = s.samples.row(i).transpose();
    double w = std::exp(one_minus_a * model.log_density(z));
    Vector diff = z - model.mean;
    g_mean += w * (diff.array() / model.variance.array()).matrix();
    g_logvar +=
        w * (0.5 * diff.array().square() / model.variance.array() - 0.5)
                .matrix();
  }
  double c = a.scale() * one_minus_a / static_cast<double>(s.size());
  return {c * g_mean, c * g_logvar};
}

struct FitSettings {
  double step = 0.01;
  int max_iters = 5000;
  double param_tol = 1e-7;  // stop when the parameter step falls below this
};

struct FitResult {
  GaussianModel model;
  bool converged = false;
  int iterations = 0;
  std::vector<double> objective_trace;  // per-iteration objective (1/N scaled)
};

// Plain gradient descent on (mu, log s2) from a median / sample-variance
// start. The median start keeps small-alpha fits in the inlier basin.
inline FitResult fit_robust_gaussian(const SampleSet& s, const Alpha& a,
                                     const FitSettings& opt = {}) {
  if (s.size() < 2) throw EmptyBatch("fit needs at least two samples");
  const Eigen::Index d = s.dim();
  const double n = static_cast<double>(s.size());

  Vector mean(d), logvar(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    std::vector<double> col(s.samples.col(j).data(),
                            s.samples.col(j).data() + s.size());
    std::nth_element(col.begin(), col.begin() + col.size() / 2, col.end());
    mean[j] = col[col.size() / 2];
    double mu = s.samples.col(j).mean();
    double var = (s.samples.col(j).array() - mu).square().sum() / n;
    logvar[j] = std::log(std::max(var, 1e-12));
  }

  FitResult result{GaussianModel(mean, logvar.array().exp().matrix()), false,
                   0, {}};
  for (int it = 0; it < opt.max_iters; ++it) {
    GaussianModel model(mean, logvar.array().exp().matrix());
    auto [g_mean, g_logvar] = robust_fit_gradient(s, model, a);
    result.objective_trace.push_back(robust_fit_objective(s, model, a) / n);
    mean -= opt.step * g_mean;
    logvar -= opt.step * g_logvar;
    result.iterations = it + 1;
    double step_norm = std::sqrt(opt.step * opt.step *
                                 (g_mean.squaredNorm() + g_logvar.squaredNorm()));
    if (step_norm < opt.param_tol) {
      result.converged = true;
      break;
    }
  }
  result.model = GaussianModel(mean, logvar.array().exp().matrix());
  return result;
}

// SampleSet CSV: one row per sample, plain decimal floats, no header.
inline void save_sample_set(const SampleSet& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    for (Eigen::Index j = 0; j < s.dim(); ++j) {
      if (j) out << ',';
      out << format_double(s.samples(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoFailure("failed writing " + path);
}

inline SampleSet load_sample_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      row.push_back(parse_double(cell, path + ":" + std::to_string(lineno)));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseFailure(path + ":" + std::to_string(lineno) +
                         ": expected " + std::to_string(rows.front().size()) +
                         " columns, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseFailure(path + ": no samples");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return SampleSet(std::move(m));
}

}  // namespace alphada
