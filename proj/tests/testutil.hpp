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

// Test-side oracles. These deliberately re-derive every quantity along an
// independent route (std::pow sums, quadrature, exhaustive enumeration) so
// the library implementations are checked against something they do not
// share code with.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "alphada/divergence.hpp"
#include "alphada/rng.hpp"

namespace oracle {

// Direct summation of (1 / (a(a-1))) [ sum p_i^a q_i^(1-a) - 1 ].
inline double alpha_divergence(const std::vector<double>& p,
                               const std::vector<double>& q, double a) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += std::pow(p[i], a) * std::pow(q[i], 1.0 - a);
  return (s - 1.0) / (a * (a - 1.0));
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline double renyi(const std::vector<double>& p, const std::vector<double>& q,
                    double a) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += std::pow(p[i], a) * std::pow(q[i], 1.0 - a);
  return std::log(s) / (a - 1.0);
}

// Random distribution with entries bounded away from zero, normalized.
inline std::vector<double> random_distribution(alphada::Rng& rng, int size,
                                               double floor = 0.05) {
  std::vector<double> v(size);
  double sum = 0.0;
  for (double& x : v) {
    x = floor + rng.uniform01();
    sum += x;
  }
  for (double& x : v) x /= sum;
  return v;
}

// Trapezoid rule over a uniform grid.
inline double trapezoid(const std::function<double(double)>& f, double lo,
                        double hi, int n) {
  double h = (hi - lo) / n;
  double s = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) s += f(lo + i * h);
  return s * h;
}

inline double trapezoid2d(const std::function<double(double, double)>& f,
                          double lo, double hi, int n) {
  double h = (hi - lo) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    double wi = (i == 0 || i == n) ? 0.5 : 1.0;
    for (int j = 0; j <= n; ++j) {
      double wj = (j == 0 || j == n) ? 0.5 : 1.0;
      s += wi * wj * f(lo + i * h, lo + j * h);
    }
  }
  return s * h * h;
}

// Exhaustively computed expected loss E_(z,y)~joint[-ln p_hat(y|z)] for a
// discrete joint given as a (|Z| x |Y|) table and a row-stochastic
// classifier table of the same shape.
inline double expected_loss(const std::vector<std::vector<double>>& joint,
                            const std::vector<std::vector<double>>& p_hat) {
  double s = 0.0;
  for (std::size_t z = 0; z < joint.size(); ++z)
    for (std::size_t y = 0; y < joint[z].size(); ++y)
      if (joint[z][y] > 0.0) s += joint[z][y] * -std::log(p_hat[z][y]);
  return s;
}

}  // namespace oracle
