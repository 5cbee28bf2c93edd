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

// Acceptance suite. Runs every release criterion at its pinned tolerance
// and prints one PASS/FAIL line per criterion. Exit code is the number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "alphada/adapt.hpp"
#include "alphada/bound_check.hpp"
#include "alphada/density.hpp"
#include "alphada/divergence.hpp"
#include "alphada/nnet.hpp"
#include "alphada/synthbench.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace alphada;

namespace {

struct Check {
  int failures = 0;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    ++failures;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }

  void require_near(double actual, double expected, double tol,
                    const std::string& what) {
    require(std::isfinite(actual) && std::abs(actual - expected) <= tol,
            what + " = " + format_double(actual) + ", want " +
                format_double(expected) + " +- " + format_double(tol));
  }
};

// --------------------------------------------------------------------------

void criterion_oracle_equivalence(Check& c) {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 2 + static_cast<int>(rng.index(12));
    auto pv = oracle::random_distribution(rng, n);
    auto qv = oracle::random_distribution(rng, n);
    DiscreteDistribution p(pv), q(qv);
    for (int k = 1; k <= 9; ++k) {
      double a = 0.1 * k;
      double lib = exact_alpha_divergence(p, q, Alpha(a));
      double ref = oracle::alpha_divergence(pv, qv, a);
      if (std::abs(lib - ref) > 1e-10) {
        c.require(false, "oracle mismatch at trial " + std::to_string(trial) +
                             " alpha " + format_double(a) + ": |" +
                             format_double(lib - ref) + "|");
        return;
      }
    }
  }
  DiscreteDistribution p({0.5, 0.5}), q({0.9, 0.1});
  c.require_near(exact_alpha_divergence(p, q, Alpha(0.5)), 0.422291, 1e-5,
                 "fixture divergence");
}

void criterion_identities(Check& c) {
  Rng rng(202);
  double worst_skew = 0.0, worst_renyi = 0.0, worst_kl = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    int n = 2 + static_cast<int>(rng.index(8));
    auto pv = oracle::random_distribution(rng, n);
    auto qv = oracle::random_distribution(rng, n);
    DiscreteDistribution p(pv), q(qv);
    for (int k = 1; k <= 9; ++k) {
      double a = 0.1 * k;
      double d = exact_alpha_divergence(p, q, Alpha(a));
      worst_skew = std::max(
          worst_skew,
          std::abs(d - exact_alpha_divergence(q, p, Alpha(1.0 - a))));
      worst_renyi = std::max(
          worst_renyi,
          std::abs(renyi_from_alpha_divergence(d, a) - renyi_exact(p, q, a)));
    }
    double kl_pq = kl_divergence(p, q), kl_qp = kl_divergence(q, p);
    worst_kl = std::max(
        worst_kl,
        std::abs(exact_alpha_divergence(p, q, Alpha(0.999)) - kl_pq));
    worst_kl = std::max(
        worst_kl,
        std::abs(exact_alpha_divergence(p, q, Alpha(0.001)) - kl_qp));
  }
  c.require(worst_skew <= 1e-10,
            "skew symmetry worst " + format_double(worst_skew));
  c.require(worst_renyi <= 1e-9,
            "Renyi identity worst " + format_double(worst_renyi));
  c.require(worst_kl <= 5e-3, "KL limit worst " + format_double(worst_kl));
}

void criterion_bound_validity(Check& c) {
  Rng rng(303);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    BoundInstance inst = random_bound_instance(rng, 2 + i % 4, 2 + i % 3, 1e-3);
    // independent exhaustive target loss, recomputed here rather than via
    // the instance helper used by the CLI
    double l_target = 0.0;
    for (std::size_t z = 0; z < inst.q_joint.size(); ++z)
      for (std::size_t y = 0; y < inst.q_joint[z].size(); ++y)
        l_target -= inst.q_joint[z][y] * std::log(inst.classifier[z][y]);
    for (int k = 1; k <= 9; ++k) {
      BoundCheckRecord rec = check_bound_instance(inst, 0.1 * k);
      violations += rec.bound + 1e-12 < l_target;
    }
  }
  c.require(violations == 0,
            std::to_string(violations) + " bound violations out of 9000");
  double bound = target_loss_bound(
      BoundInputs{0.5, -std::log(1e-6), 0.5, 0.422291});
  c.require_near(bound, 7.026, 0.01, "fixed bound fixture");
}

void criterion_mc_consistency(Check& c) {
  LogDensity lp = [](const Eigen::Ref<const Vector>& z) {
    return -0.5 * z.squaredNorm() - 0.9189385332046727;
  };
  LogDensity lq = [](const Eigen::Ref<const Vector>& z) {
    return -0.5 * (z.array() - 1.0).square().sum() - 0.9189385332046727;
  };
  Rng rng(404);
  Matrix pts(100000, 1);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) pts(i, 0) = 1.0 + rng.normal();
  double big = mc_alpha_divergence(pts, lp, lq, Alpha(0.5)).value;
  double small =
      mc_alpha_divergence(pts.topRows(1000), lp, lq, Alpha(0.5)).value;
  c.require_near(big, 0.470012, 0.02, "MC estimate at 1e5 points");
  c.require_near(small, 0.470012, 0.1, "MC estimate at 1e3 points");
}

void criterion_gradient_exactness(Check& c) {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    AdaptationConfig cfg;
    cfg.layers = {3, 6, 2};
    cfg.alpha = 0.4 + 0.05 * static_cast<double>(seed % 5);
    cfg.gamma = 0.25;
    Mlp net = Mlp::init(cfg.layers, rng);
    Classifier cls = Classifier::init(2, 3, cfg.p_min, rng);
    Matrix xs(6, 3), xt(6, 3);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) {
        xs(i, j) = rng.normal();
        xt(i, j) = rng.normal() + 0.4;
      }
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i)
      labels.push_back(static_cast<int>(rng.index(3)));

    ObjectiveGraph g = joint_objective(xs, labels, xt, net, cls, cfg);
    auto adj = g.tape.backward(g.loss);
    std::vector<Matrix*> params;
    std::vector<Matrix> analytic;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      params.push_back(&net.weights[l]);
      analytic.push_back(adj[g.enc_w[l]]);
    }
    params.push_back(&cls.weight);
    analytic.push_back(adj[g.cls_w]);

    auto loss_fn = [&]() {
      ObjectiveGraph g2 = joint_objective(xs, labels, xt, net, cls, cfg);
      return g2.tape.value(g2.loss)(0, 0);
    };
    worst = std::max(worst, finite_diff_check(loss_fn, params, analytic, 1e-5));
  }
  c.require(worst <= 1e-4,
            "composed objective gradient error " + format_double(worst));
}

SampleSet contaminated_mixture(std::uint64_t seed) {
  Rng rng(seed);
  Matrix samples(10000, 1);
  for (int i = 0; i < 10000; ++i)
    samples(i, 0) =
        rng.uniform01() <= 0.8 ? rng.normal() : 4.0 + 0.1 * rng.normal();
  return SampleSet(std::move(samples));
}

void criterion_robust_fit(Check& c) {
  for (std::uint64_t seed : {1, 2, 3}) {
    SampleSet s = contaminated_mixture(seed);
    FitResult kl_like = fit_robust_gaussian(s, Alpha(0.999));
    c.require_near(kl_like.model.mean[0], 0.8, 0.1,
                   "alpha=0.999 mean (seed " + std::to_string(seed) + ")");
    c.require_near(kl_like.model.variance[0], 3.362, 0.3,
                   "alpha=0.999 variance (seed " + std::to_string(seed) + ")");

    FitResult robust = fit_robust_gaussian(s, Alpha(0.5));
    c.require(std::abs(robust.model.mean[0]) < std::abs(kl_like.model.mean[0]),
              "robust mean not closer to 0 (seed " + std::to_string(seed) +
                  ")");

    double best_mu = 0.0, best_sigma = 1.0, best = 1e300;
    for (double mu = -1.0; mu <= 2.0 + 1e-9; mu += 0.02)
      for (double sigma = 0.5; sigma <= 3.0 + 1e-9; sigma += 0.02) {
        Vector m(1), v(1);
        m << mu;
        v << sigma * sigma;
        double obj = robust_fit_objective(s, GaussianModel(m, v), Alpha(0.5));
        if (obj < best) {
          best = obj;
          best_mu = mu;
          best_sigma = sigma;
        }
      }
    c.require_near(robust.model.mean[0], best_mu, 0.02,
                   "grid oracle mean (seed " + std::to_string(seed) + ")");
    c.require_near(std::sqrt(robust.model.variance[0]), best_sigma, 0.02,
                   "grid oracle sigma (seed " + std::to_string(seed) + ")");
  }
}

void criterion_synthetic_robustness(AdaptMode mode, Check& c) {
  double sum_src = 0.0, sum_robust = 0.0, sum_kl = 0.0;
  int strict = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    DomainSpec spec = DomainSpec::default_benchmark(mode, seed);
    auto [source, target] = generate_pair(spec, mode);
    AdaptationConfig cfg;
    cfg.mode = mode;
    cfg.seed = seed;

    cfg.gamma = 0.0;
    double os_src = train(cfg, source, target).report.os_star.mean;
    cfg.gamma = 0.1;
    cfg.alpha = 0.7;
    double os_robust = train(cfg, source, target).report.os_star.mean;
    cfg.alpha = 0.999;
    double os_kl = train(cfg, source, target).report.os_star.mean;

    sum_src += os_src;
    sum_robust += os_robust;
    sum_kl += os_kl;
    strict += os_robust > os_kl;
  }
  double mean_src = sum_src / 3, mean_robust = sum_robust / 3,
         mean_kl = sum_kl / 3;
  c.require(mean_robust >= mean_src + 0.05,
            "mean OS* " + format_double(mean_robust) +
                " does not beat source-only " + format_double(mean_src) +
                " by 5 points");
  c.require(mean_robust >= mean_kl - 0.01,
            "mean OS* " + format_double(mean_robust) +
                " trails alpha=0.999 " + format_double(mean_kl) +
                " by over 1 point");
  c.require(strict >= 2, "strict improvement over alpha=0.999 in only " +
                             std::to_string(strict) + "/3 seeds");
}

void criterion_alpha_tuning(Check& c) {
  c.require_near(tune_alpha(0.01, 20.0).value(), 0.5, 1e-3, "tuned alpha");
  bool threw = false;
  try {
    tune_alpha(0.01, 10.0);
  } catch (const NoFeasibleAlpha&) {
    threw = true;
  }
  c.require(threw, "rho=10 did not raise NoFeasibleAlpha");
  double prev = 0.0;
  for (double rho : {12.6, 14.0, 20.0, 50.0, 99.0}) {
    double a = tune_alpha(0.01, rho).value();
    c.require(a >= prev, "tuned alpha not monotone at rho " +
                             format_double(rho));
    prev = a;
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_reproducibility(Check& c) {
  fs::path dir = fs::temp_directory_path() / "alphada_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto run = [&](const std::string& args) {
    std::string cmd = std::string(ALPHADA_CLI_PATH) + " " + args + " > " +
                      (dir / "stdout.txt").string() + " 2>&1";
    return std::system(cmd.c_str()) == 0;
  };

  // gen-data, then replay from the manifest
  c.require(run("gen-data --mode osda --seed 31 --out " +
                (dir / "gen1").string()),
            "gen-data run failed");
  c.require(run("gen-data --config " + (dir / "gen1" / "manifest.json").string() +
                " --out " + (dir / "gen2").string()),
            "gen-data replay failed");
  for (const char* f : {"source.csv", "target.csv", "spec.json"})
    c.require(slurp(dir / "gen1" / f) == slurp(dir / "gen2" / f),
              std::string("gen-data artifact differs: ") + f);

  // mc estimate over the generated data, then replay
  {
    std::ofstream cfg(dir / "estimate.json");
    cfg << "{\"kind\":\"mc\",\"alpha\":0.7,\"sigma2\":1.0,"
        << "\"source_csv\":\"" << (dir / "gen1" / "source.csv").string()
        << "\",\"target_csv\":\"" << (dir / "gen1" / "target.csv").string()
        << "\"}";
  }
  c.require(run("estimate --config " + (dir / "estimate.json").string() +
                " --out " + (dir / "est1").string()),
            "estimate run failed");
  c.require(run("estimate --config " + (dir / "est1" / "manifest.json").string() +
                " --out " + (dir / "est2").string()),
            "estimate replay failed");
  c.require(slurp(dir / "est1" / "estimate.json") ==
                slurp(dir / "est2" / "estimate.json"),
            "estimate.json differs across replay");

  // short training run, then replay
  {
    std::ofstream cfg(dir / "train.json");
    cfg << "{\"epochs\":5,\"seed\":31,\"benchmark\":{\"mode\":\"osda\"}}";
  }
  c.require(run("train --config " + (dir / "train.json").string() + " --out " +
                (dir / "tr1").string()),
            "train run failed");
  c.require(run("train --config " + (dir / "tr1" / "manifest.json").string() +
                " --out " + (dir / "tr2").string()),
            "train replay failed");
  for (const char* f : {"report.jsonl", "summary.json", "checkpoint.csv"})
    c.require(slurp(dir / "tr1" / f) == slurp(dir / "tr2" / f),
              std::string("train artifact differs: ") + f);
  fs::remove_all(dir);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Check&)> fn;
  };
  std::vector<Criterion> criteria = {
      {1, "divergence oracle equivalence", criterion_oracle_equivalence},
      {2, "skew/Renyi/KL identity suite", criterion_identities},
      {3, "target-loss bound validity", criterion_bound_validity},
      {4, "MC estimator consistency", criterion_mc_consistency},
      {5, "composed-objective gradient exactness",
       criterion_gradient_exactness},
      {6, "robust density fit", criterion_robust_fit},
      {7, "synthetic OSDA robustness",
       [](Check& c) { criterion_synthetic_robustness(AdaptMode::osda, c); }},
      {8, "synthetic PDA robustness",
       [](Check& c) { criterion_synthetic_robustness(AdaptMode::pda, c); }},
      {9, "alpha tuning rule", criterion_alpha_tuning},
      {10, "CLI manifest reproducibility", criterion_reproducibility},
  };

  int failed = 0;
  for (const Criterion& crit : criteria) {
    auto start = std::chrono::steady_clock::now();
    Check check;
    try {
      crit.fn(check);
    } catch (const std::exception& e) {
      check.require(false, std::string("exception: ") + e.what());
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    bool ok = check.failures == 0;
    failed += !ok;
    std::printf("[%2d] %-42s %s (%.1fs)%s%s\n", crit.id, crit.name,
                ok ? "PASS" : "FAIL", seconds, ok ? "" : " -- ",
                ok ? "" : check.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed;
}
