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
#include <cstdint>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/divergence.hpp"
#include "alphada/rng.hpp"

namespace alphada {

// One randomized instance for checking the target-loss bound: a pair of
// small discrete joints p(z,y), q(z,y) over |Z| x |Y| outcomes and a
// row-stochastic classifier table with an exact probability floor
// (every entry >= p_min), so the per-outcome loss never exceeds
// M = -ln(p_min).
struct BoundInstance {
  std::vector<std::vector<double>> p_joint;  // |Z| x |Y|, sums to 1
  std::vector<std::vector<double>> q_joint;
  std::vector<std::vector<double>> classifier;  // rows sum to 1, floored
  double p_min = 1e-3;

  double loss_cap() const { return -std::log(p_min); }

  // E_(z,y)~joint[-ln classifier(y|z)] by exhaustive enumeration.
  double expected_loss(const std::vector<std::vector<double>>& joint) const {
    double s = 0.0;
    for (std::size_t z = 0; z < joint.size(); ++z)
      for (std::size_t y = 0; y < joint[z].size(); ++y)
        if (joint[z][y] > 0.0) s -= joint[z][y] * std::log(classifier[z][y]);
    return s;
  }

  DiscreteDistribution flattened(
      const std::vector<std::vector<double>>& joint) const {
    std::vector<double> flat;
    for (const auto& row : joint)
      for (double v : row) flat.push_back(v);
    return DiscreteDistribution::normalized(std::move(flat));
  }
};

inline BoundInstance random_bound_instance(Rng& rng, int z_card, int y_card,
                                           double p_min) {
  if (z_card < 1 || y_card < 2)
    throw ConfigInvalid("bound instance needs |Z| >= 1 and |Y| >= 2");
  if (!(p_min > 0.0 && p_min < 1.0 / y_card))
    throw ConfigInvalid("p_min must lie in (0, 1/|Y|)");

  BoundInstance inst;
  inst.p_min = p_min;
  auto random_joint = [&]() {
    std::vector<std::vector<double>> joint(z_card, std::vector<double>(y_card));
    double total = 0.0;
    for (auto& row : joint)
      for (double& v : row) {
        v = 0.02 + rng.uniform01();
        total += v;
      }
    for (auto& row : joint)
      for (double& v : row) v /= total;
    return joint;
  };
  inst.p_joint = random_joint();
  inst.q_joint = random_joint();

  inst.classifier.assign(z_card, std::vector<double>(y_card));
  for (auto& row : inst.classifier) {
    double rowsum = 0.0;
    for (double& v : row) {
      v = rng.uniform01();
      rowsum += v;
    }
    for (double& v : row) v = p_min + (1.0 - y_card * p_min) * v / rowsum;
  }
  return inst;
}

struct BoundCheckRecord {
  double alpha_prime = 0.0;
  double l_source = 0.0;
  double l_target = 0.0;
  double divergence = 0.0;
  double bound = 0.0;
  double slack = 0.0;  // bound - l_target; nonnegative when the bound holds
};

inline BoundCheckRecord check_bound_instance(const BoundInstance& inst,
                                             double alpha_prime) {
  BoundCheckRecord rec;
  rec.alpha_prime = alpha_prime;
  rec.l_source = inst.expected_loss(inst.p_joint);
  rec.l_target = inst.expected_loss(inst.q_joint);
  rec.divergence = exact_alpha_divergence(inst.flattened(inst.p_joint),
                                          inst.flattened(inst.q_joint),
                                          Alpha(alpha_prime));
  rec.bound = target_loss_bound(
      BoundInputs{rec.l_source, inst.loss_cap(), alpha_prime, rec.divergence});
  rec.slack = rec.bound - rec.l_target;
  return rec;
}

}  // namespace alphada
