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
#include <functional>
#include <string>
#include <vector>

#include "alphada/common.hpp"

namespace alphada {

// Order parameter of the alpha-divergence family. The family is singular at
// 0 and 1 (those limits are reverse KL and KL), so values within 1e-6 of
// either are rejected at construction. Training-facing code additionally
// requires value in (0, 1).
class Alpha {
 public:
  explicit Alpha(double value) : value_(value) {
    if (!std::isfinite(value) || std::abs(value) < 1e-6 ||
        std::abs(value - 1.0) < 1e-6)
      throw ConfigInvalid("alpha must be finite and away from {0, 1}, got " +
                          std::to_string(value));
  }

  double value() const { return value_; }

  // 1 / (alpha * (alpha - 1)), the leading constant of the divergence.
  double scale() const { return 1.0 / (value_ * (value_ - 1.0)); }

  bool in_unit_interval() const { return value_ > 0.0 && value_ < 1.0; }

  void require_unit_interval(const std::string& op) const {
    if (!in_unit_interval())
      throw ConfigInvalid(op + " requires alpha in (0, 1), got " +
                          std::to_string(value_));
  }

 private:
  double value_;
};

// Finite probability vector. Entries nonnegative, summing to 1 within 1e-12.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(std::vector<double> probs)
      : probs_(std::move(probs)) {
    if (probs_.empty()) throw InvalidDistribution("empty distribution");
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw InvalidDistribution("negative or non-finite probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw InvalidDistribution("probabilities sum to " + format_double(sum));
  }

  // Normalizes a nonnegative weight vector; convenience for fixtures.
  static DiscreteDistribution normalized(std::vector<double> weights) {
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (!(sum > 0.0)) throw InvalidDistribution("weights sum to zero");
    for (double& w : weights) w /= sum;
    return DiscreteDistribution(std::move(weights));
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
};

enum class Direction { forward, reverse };

inline const char* to_string(Direction d) {
  return d == Direction::forward ? "forward" : "reverse";
}

// Result of a Monte-Carlo or batch divergence evaluation. Exact evaluations
// are nonnegative; sample estimates may be slightly negative and are
// reported unclamped so that gradients stay unbiased.
struct DivergenceEstimate {
  double value = 0.0;
  std::size_t n_points = 0;
  double alpha = 0.0;
  Direction direction = Direction::forward;
};

namespace detail {

// One term p^a * q^(1-a) with the zero conventions of the family:
// a term with a zero entry is 0 whenever its exponents keep it finite.
inline double power_term(double p, double q, double a) {
  if (p == q) return p;  // the sum telescopes to 1 exactly when p = q
  if (p == 0.0 && q == 0.0) return 0.0;
  if (p == 0.0) {
    if (a > 0.0) return 0.0;
    throw InvalidDistribution("p_i = 0 with alpha < 0 makes the sum infinite");
  }
  if (q == 0.0) {
    if (a < 1.0) return 0.0;
    throw InvalidDistribution("q_i = 0 with alpha > 1 makes the sum infinite");
  }
  return std::exp(a * std::log(p) + (1.0 - a) * std::log(q));
}

inline void require_same_length(const DiscreteDistribution& p,
                                const DiscreteDistribution& q) {
  if (p.size() != q.size())
    throw MismatchedLength("distributions have lengths " +
                           std::to_string(p.size()) + " and " +
                           std::to_string(q.size()));
}

// Sum_i p_i^a q_i^(1-a), sequential in index order.
inline double power_sum(const DiscreteDistribution& p,
                        const DiscreteDistribution& q, double a) {
  require_same_length(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += power_term(p[i], q[i], a);
  return s;
}

}  // namespace detail

// D_a(p || q) = (1 / (a (a - 1))) [ sum_i p_i^a q_i^(1-a) - 1 ].
// Nonnegative, zero iff p = q. Tiny negative round-off is clamped to 0.
inline double exact_alpha_divergence(const DiscreteDistribution& p,
                                     const DiscreteDistribution& q,
                                     const Alpha& a) {
  double d = a.scale() * (detail::power_sum(p, q, a.value()) - 1.0);
  if (d < 0.0 && d > -1e-12) d = 0.0;
  return d;
}

// KL(p || q) = sum_i p_i ln(p_i / q_i), with 0 ln(0/q) = 0.
inline double kl_divergence(const DiscreteDistribution& p,
                            const DiscreteDistribution& q) {
  detail::require_same_length(p, q);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0)
      throw AbsoluteContinuityViolated("p_" + std::to_string(i) +
                                       " > 0 but q_" + std::to_string(i) +
                                       " = 0");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s < 0.0 && s > -1e-12 ? 0.0 : s;
}

// Renyi divergence R_a'(p || q) = ln( sum_i p_i^a' q_i^(1-a') ) / (a' - 1).
inline double renyi_exact(const DiscreteDistribution& p,
                          const DiscreteDistribution& q, double alpha_prime) {
  if (!(alpha_prime > 0.0 && alpha_prime < 1.0))
    throw ConfigInvalid("alpha' must lie in (0, 1)");
  double s = detail::power_sum(p, q, alpha_prime);
  if (!(s > 0.0)) throw LogDomainViolation("power sum is not positive");
  double r = std::log(s) / (alpha_prime - 1.0);
  return r < 0.0 && r > -1e-12 ? 0.0 : r;
}

// R_a'(p || q) = ln(1 - a'(1 - a') D_a'(p || q)) / (a' - 1): the exact
// transform between the two families.
inline double renyi_from_alpha_divergence(double d_alpha, double alpha_prime) {
  if (!(alpha_prime > 0.0 && alpha_prime < 1.0))
    throw ConfigInvalid("alpha' must lie in (0, 1)");
  double arg = 1.0 - alpha_prime * (1.0 - alpha_prime) * d_alpha;
  if (!(arg > 0.0))
    throw LogDomainViolation("1 - a'(1-a') d = " + format_double(arg) +
                             " is not positive");
  return std::log(arg) / (alpha_prime - 1.0);
}

// Inputs to the target-loss bound. M caps the per-sample loss (a floored
// classifier guarantees -ln p_hat <= M); divergence is D_a'(p(z,y) || q(z,y))
// between the source and target joints.
struct BoundInputs {
  double source_loss = 0.0;
  double loss_cap_m = 0.0;
  double alpha_prime = 0.5;
  double divergence = 0.0;

  void validate() const {
    if (!(loss_cap_m > 0.0)) throw ConfigInvalid("loss cap M must be positive");
    if (!(source_loss >= 0.0 && source_loss <= loss_cap_m))
      throw ConfigInvalid("source loss must lie in [0, M]");
    if (!(alpha_prime > 0.0 && alpha_prime < 1.0))
      throw ConfigInvalid("alpha' must lie in (0, 1)");
    if (!(1.0 - alpha_prime * (1.0 - alpha_prime) * divergence > 0.0))
      throw LogDomainViolation("bound log argument not positive");
  }
};

// Upper bound on the expected target loss:
//   l_source + (M / sqrt(2)) * sqrt( ln(1 - a'(1-a') D) / (a'(a' - 1)) ).
// All logs natural. Numerator and denominator under the root are both
// nonpositive, so the root argument is nonnegative.
inline double target_loss_bound(const BoundInputs& in) {
  in.validate();
  double log_arg =
      1.0 - in.alpha_prime * (1.0 - in.alpha_prime) * in.divergence;
  double ratio =
      std::log(log_arg) / (in.alpha_prime * (in.alpha_prime - 1.0));
  if (ratio < 0.0) ratio = 0.0;  // round-off when divergence ~ 0
  return in.source_loss + in.loss_cap_m / std::sqrt(2.0) * std::sqrt(ratio);
}

using LogDensity = std::function<double(const Eigen::Ref<const Vector>&)>;

namespace detail {

// Log ratios are clamped here before exponentiation; +-50 is far outside
// any in-distribution value but keeps deep-tail kernel evaluations finite.
constexpr double kLogRatioClamp = 50.0;

inline double clamp_log_ratio(double u) {
  if (u > kLogRatioClamp) return kLogRatioClamp;
  if (u < -kLogRatioClamp) return -kLogRatioClamp;
  return u;
}

inline DivergenceEstimate mc_estimate(const Matrix& eval_points,
                                      const LogDensity& log_num,
                                      const LogDensity& log_den,
                                      const Alpha& a, Direction dir) {
  a.require_unit_interval("Monte-Carlo alpha-divergence");
  const Eigen::Index n = eval_points.rows();
  if (n < 1) throw EmptyBatch("no evaluation points");
  double mean = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double lp = log_num(eval_points.row(i).transpose());
    double lq = log_den(eval_points.row(i).transpose());
    if (!std::isfinite(lp) || !std::isfinite(lq))
      throw NonFiniteDensity("density evaluator returned a non-finite value");
    mean += std::exp((1.0 - a.value()) * clamp_log_ratio(lp - lq));
  }
  mean /= static_cast<double>(n);
  return DivergenceEstimate{a.scale() * (mean - 1.0),
                            static_cast<std::size_t>(n), a.value(), dir};
}

}  // namespace detail

// Mini-batch estimator
//   (1 / (a(a-1))) [ (1/N) sum_i exp((1-a)(log p(z_i) - log q(z_i))) - 1 ]
// with eval points drawn from (or representing) q. Single points may give
// negative estimates; they are reported unclamped.
inline DivergenceEstimate mc_alpha_divergence(const Matrix& eval_points,
                                              const LogDensity& log_p,
                                              const LogDensity& log_q,
                                              const Alpha& a) {
  return detail::mc_estimate(eval_points, log_p, log_q, a, Direction::forward);
}

// Same estimator with p and q exchanged; eval points drawn from p. This is
// the variant used for partial adaptation, where the outliers live in the
// distribution the points are drawn from.
inline DivergenceEstimate mc_reverse_alpha_divergence(const Matrix& eval_points,
                                                      const LogDensity& log_p,
                                                      const LogDensity& log_q,
                                                      const Alpha& a) {
  return detail::mc_estimate(eval_points, log_q, log_p, a, Direction::reverse);
}

// |d/dr (1 - r^(1-a))| = (1/a) r^(-a): gradient magnitude of the per-sample
// loss term at density ratio r.
inline double grad_magnitude(double r, const Alpha& a) {
  if (!(r > 0.0)) throw NonPositiveRatio("ratio must be positive");
  return std::exp(-a.value() * std::log(r)) / a.value();
}

// Largest alpha <= alpha_max whose gradient magnitude at the outlier ratio
// r_threshold stays below rho. The magnitude is minimized at
// a* = 1 / (-ln r) and increases on [a*, 1), so the search bisects that
// branch; choosing the largest feasible alpha keeps the estimator closest
// to KL for inliers.
inline Alpha tune_alpha(double r_threshold, double rho, double alpha_max = 0.999,
                        double tol = 1e-9) {
  if (!(r_threshold > 0.0 && r_threshold < 1.0))
    throw ConfigInvalid("r_threshold must lie in (0, 1)");
  if (!(rho > 0.0)) throw ConfigInvalid("rho must be positive");
  if (!(tol > 0.0)) throw ConfigInvalid("tol must be positive");
  if (!(alpha_max > 0.0 && alpha_max <= 1.0 - 1e-6))
    throw ConfigInvalid("alpha_max must lie in (0, 1 - 1e-6]");

  auto grad = [&](double a) { return grad_magnitude(r_threshold, Alpha(a)); };
  if (grad(alpha_max) <= rho) return Alpha(alpha_max);

  double a_star = 1.0 / (-std::log(r_threshold));
  if (alpha_max <= a_star || grad(a_star) > rho)
    throw NoFeasibleAlpha("gradient bound " + format_double(rho) +
                          " is below the attainable minimum " +
                          format_double(grad(std::min(a_star, alpha_max))));

  double lo = a_star, hi = alpha_max;  // grad(lo) <= rho < grad(hi)
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    (grad(mid) <= rho ? lo : hi) = mid;
  }
  return Alpha(lo);
}

}  // namespace alphada
