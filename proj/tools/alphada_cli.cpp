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

// Experiment driver. Subcommands:
//   estimate | fit-density | train | tune-alpha | check-bound | gen-data |
//   grad-check
// Every run resolves its config (file < flags), writes machine-readable
// outputs under --out, and drops exactly one manifest.json naming the
// resolved config and every artifact. Re-running a subcommand with
// --config <manifest.json> reproduces the artifacts byte for byte.
//
// Exit codes: 0 success, 2 validation error, 3 infeasible / no convergence,
// 4 I/O error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "alphada/adapt.hpp"
#include "alphada/bound_check.hpp"
#include "alphada/density.hpp"
#include "alphada/divergence.hpp"
#include "alphada/nnet.hpp"
#include "alphada/synthbench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace alphada;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitIo = 4;

// ---------------------------------------------------------------------------
// Output plumbing

struct RunContext {
  std::string subcommand;
  fs::path out_dir;
  json resolved_config;
  std::vector<std::string> artifacts;
  std::chrono::steady_clock::time_point started =
      std::chrono::steady_clock::now();

  fs::path path_for(const std::string& name) const { return out_dir / name; }

  void write_text(const std::string& name, const std::string& body) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(path_for(name), std::ios::binary);
    if (!out) throw IoFailure("cannot open " + path_for(name).string());
    out << body;
    if (!out) throw IoFailure("failed writing " + path_for(name).string());
    artifacts.push_back(name);
  }

  void write_json(const std::string& name, const json& j) {
    write_text(name, j.dump(2) + "\n");
  }

  void track(const std::string& name) { artifacts.push_back(name); }

  void finish() {
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      started)
            .count();
    json manifest{{"subcommand", subcommand},
                  {"config", resolved_config},
                  {"artifacts", artifacts},
                  {"duration_seconds", seconds}};
    if (resolved_config.contains("seed"))
      manifest["seed"] = resolved_config["seed"];
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream out(path_for("manifest.json"), std::ios::binary);
    if (!out) throw IoFailure("cannot open manifest.json");
    out << manifest.dump(2) << "\n";
  }
};

// Loads a config file; a manifest for the same subcommand is accepted and
// unwrapped so any run can be replayed from its manifest.
json load_config_file(const std::string& path, const std::string& subcommand) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseFailure("config " + path + ": " + e.what());
  }
  if (j.is_object() && j.contains("subcommand") && j.contains("config")) {
    if (j["subcommand"] != subcommand)
      throw ConfigInvalid("manifest " + path + " belongs to subcommand '" +
                          std::string(j["subcommand"]) + "'");
    return j["config"];
  }
  return j;
}

template <typename T>
T field_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid("config field '" + key + "' has the wrong type");
  }
}

json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

// ---------------------------------------------------------------------------
// Config <-> JSON for the domain types the CLI exposes

json spec_to_json(const DomainSpec& spec) {
  json proto = json::array(), priv_proto = json::array();
  for (const Vector& p : spec.prototypes) {
    json row = json::array();
    for (Eigen::Index i = 0; i < p.size(); ++i) row.push_back(p[i]);
    proto.push_back(row);
  }
  for (const Vector& p : spec.private_prototypes) {
    json row = json::array();
    for (Eigen::Index i = 0; i < p.size(); ++i) row.push_back(p[i]);
    priv_proto.push_back(row);
  }
  json translation = json::array();
  for (Eigen::Index i = 0; i < spec.translation.size(); ++i)
    translation.push_back(spec.translation[i]);
  return json{{"input_dim", spec.input_dim},
              {"shared_classes", spec.shared_classes},
              {"private_source", spec.private_source},
              {"private_target", spec.private_target},
              {"prototypes", proto},
              {"private_prototypes", priv_proto},
              {"spreads", spec.spreads},
              {"private_spreads", spec.private_spreads},
              {"rotation_rad", spec.rotation_rad},
              {"translation", translation},
              {"samples_per_class", spec.samples_per_class},
              {"seed", spec.seed}};
}

Vector vector_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigInvalid(where + " must be an array");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

// Benchmark block: {"mode": ..., "seed": ..., "private_count": ...} picks
// the default benchmark; any explicit DomainSpec field overrides it.
DomainSpec spec_from_json(const json& j, AdaptMode mode) {
  DomainSpec spec = DomainSpec::default_benchmark(
      mode, field_or<std::uint64_t>(j, "seed", 1),
      field_or<int>(j, "private_count", 1));
  spec.input_dim = field_or<int>(j, "input_dim", spec.input_dim);
  spec.shared_classes = field_or<int>(j, "shared_classes", spec.shared_classes);
  spec.private_source = field_or<int>(j, "private_source", spec.private_source);
  spec.private_target = field_or<int>(j, "private_target", spec.private_target);
  spec.samples_per_class =
      field_or<int>(j, "samples_per_class", spec.samples_per_class);
  spec.rotation_rad = field_or<double>(j, "rotation_rad", spec.rotation_rad);
  if (j.contains("spreads"))
    spec.spreads = j.at("spreads").get<std::vector<double>>();
  if (j.contains("private_spreads"))
    spec.private_spreads = j.at("private_spreads").get<std::vector<double>>();
  if (j.contains("translation"))
    spec.translation = vector_from_json(j.at("translation"), "translation");
  if (j.contains("prototypes")) {
    spec.prototypes.clear();
    for (const json& row : j.at("prototypes"))
      spec.prototypes.push_back(vector_from_json(row, "prototypes"));
  }
  if (j.contains("private_prototypes")) {
    spec.private_prototypes.clear();
    for (const json& row : j.at("private_prototypes"))
      spec.private_prototypes.push_back(
          vector_from_json(row, "private_prototypes"));
  }
  return spec;
}

json adapt_config_to_json(const AdaptationConfig& cfg) {
  return json{{"alpha", cfg.alpha},
              {"gamma", cfg.gamma},
              {"sigma2", cfg.sigma2},
              {"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},
              {"learning_rate", cfg.learning_rate},
              {"mode", to_string(cfg.mode)},
              {"seed", cfg.seed},
              {"layers", cfg.layers},
              {"p_min", cfg.p_min},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"leave_one_out", cfg.leave_one_out}};
}

AdaptationConfig adapt_config_from_json(const json& j) {
  AdaptationConfig cfg;
  cfg.alpha = field_or<double>(j, "alpha", cfg.alpha);
  cfg.gamma = field_or<double>(j, "gamma", cfg.gamma);
  cfg.sigma2 = field_or<double>(j, "sigma2", cfg.sigma2);
  cfg.batch_size = field_or<int>(j, "batch_size", cfg.batch_size);
  cfg.epochs = field_or<int>(j, "epochs", cfg.epochs);
  cfg.learning_rate = field_or<double>(j, "learning_rate", cfg.learning_rate);
  if (j.contains("mode"))
    cfg.mode = adapt_mode_from_string(j.at("mode").get<std::string>());
  cfg.seed = field_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.layers = field_or<std::vector<int>>(j, "layers", cfg.layers);
  cfg.p_min = field_or<double>(j, "p_min", cfg.p_min);
  cfg.momentum = field_or<double>(j, "momentum", cfg.momentum);
  cfg.weight_decay = field_or<double>(j, "weight_decay", cfg.weight_decay);
  cfg.leave_one_out = field_or<bool>(j, "leave_one_out", cfg.leave_one_out);
  return cfg;
}

// ---------------------------------------------------------------------------
// estimate

// Accepts either a plain sample-set CSV (no header) or a labeled dataset
// CSV produced by gen-data; only the coordinates are used.
Matrix load_points(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw IoFailure("cannot open " + path);
  std::string first;
  std::getline(probe, first);
  probe.close();
  if (first.rfind("label,domain", 0) == 0) return load_dataset(path).samples;
  return load_sample_set(path).samples;
}

int cmd_estimate(const json& cfg, RunContext& ctx) {
  std::string kind = field_or<std::string>(cfg, "kind", "discrete");
  double alpha_value = field_or<double>(cfg, "alpha", 0.5);
  Alpha alpha(alpha_value);

  json report;
  if (kind == "discrete") {
    if (!cfg.contains("p") || !cfg.contains("q"))
      throw ConfigInvalid("discrete estimate needs fields 'p' and 'q'");
    DiscreteDistribution p(cfg.at("p").get<std::vector<double>>());
    DiscreteDistribution q(cfg.at("q").get<std::vector<double>>());
    double value = exact_alpha_divergence(p, q, alpha);
    report["kind"] = "discrete";
    report["alpha"] = alpha.value();
    report["value"] = value;
    report["n_points"] = p.size();
    report["direction"] = "forward";
    if (alpha.in_unit_interval()) {
      report["renyi_exact"] = renyi_exact(p, q, alpha.value());
      report["renyi_from_identity"] =
          renyi_from_alpha_divergence(value, alpha.value());
    }
    try {
      report["kl"] = kl_divergence(p, q);
    } catch (const AbsoluteContinuityViolated&) {
      report["kl"] = nullptr;
    }
  } else if (kind == "mc") {
    alpha.require_unit_interval("estimate");
    double sigma2 = field_or<double>(cfg, "sigma2", 1.0);
    std::string direction = field_or<std::string>(cfg, "direction", "forward");
    if (!cfg.contains("source_csv") || !cfg.contains("target_csv"))
      throw ConfigInvalid("mc estimate needs 'source_csv' and 'target_csv'");
    Matrix source = load_points(cfg.at("source_csv").get<std::string>());
    Matrix target = load_points(cfg.at("target_csv").get<std::string>());
    AdaptMode mode;
    if (direction == "forward")
      mode = AdaptMode::osda;
    else if (direction == "reverse")
      mode = AdaptMode::pda;
    else
      throw ConfigInvalid("direction must be 'forward' or 'reverse'");
    DivergenceEstimate est =
        batch_divergence(source, target, alpha, sigma2, mode,
                         field_or<bool>(cfg, "leave_one_out", false));
    report["kind"] = "mc";
    report["alpha"] = est.alpha;
    report["value"] = est.value;
    report["n_points"] = est.n_points;
    report["direction"] = to_string(est.direction);
    double arg = 1.0 - alpha.value() * (1.0 - alpha.value()) * est.value;
    report["renyi_from_identity"] =
        arg > 0.0 ? json(renyi_from_alpha_divergence(est.value, alpha.value()))
                  : json(nullptr);
  } else {
    throw ConfigInvalid("kind must be 'discrete' or 'mc', got '" + kind + "'");
  }

  ctx.write_json("estimate.json", report);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fit-density

int cmd_fit_density(const json& cfg, RunContext& ctx) {
  Alpha alpha(field_or<double>(cfg, "alpha", 0.5));
  alpha.require_unit_interval("fit-density");

  SampleSet samples = [&]() {
    if (cfg.contains("samples_csv"))
      return load_sample_set(cfg.at("samples_csv").get<std::string>());
    // Inline generator: 1-D mixture of Gaussian components.
    json gen = field_or<json>(cfg, "generate", json::object());
    int n = field_or<int>(gen, "n", 10000);
    std::uint64_t seed = field_or<std::uint64_t>(gen, "seed", 1);
    json comps = gen.contains("components")
                     ? gen.at("components")
                     : json::array({{{"weight", 0.8}, {"mean", 0.0},
                                     {"variance", 1.0}},
                                    {{"weight", 0.2}, {"mean", 4.0},
                                     {"variance", 0.01}}});
    std::vector<double> weights, means, sds;
    for (const json& c : comps) {
      weights.push_back(c.at("weight").get<double>());
      means.push_back(c.at("mean").get<double>());
      sds.push_back(std::sqrt(c.at("variance").get<double>()));
    }
    if (weights.empty()) throw ConfigInvalid("generate.components is empty");
    Rng rng(seed);
    Matrix m(n, 1);
    for (int i = 0; i < n; ++i) {
      double u = rng.uniform01();
      std::size_t k = 0;
      double acc = 0.0;
      for (; k + 1 < weights.size(); ++k) {
        acc += weights[k];
        if (u <= acc) break;
      }
      m(i, 0) = means[k] + sds[k] * rng.normal();
    }
    return SampleSet(std::move(m));
  }();

  FitSettings opt;
  opt.step = field_or<double>(cfg, "step", opt.step);
  opt.max_iters = field_or<int>(cfg, "max_iters", opt.max_iters);
  opt.param_tol = field_or<double>(cfg, "param_tol", opt.param_tol);

  FitResult fit = fit_robust_gaussian(samples, alpha, opt);

  json report{{"alpha", alpha.value()},
              {"converged", fit.converged},
              {"iterations", fit.iterations},
              {"n_samples", samples.size()}};
  for (Eigen::Index j = 0; j < fit.model.mean.size(); ++j) {
    report["mean"].push_back(fit.model.mean[j]);
    report["variance"].push_back(fit.model.variance[j]);
  }
  ctx.write_json("fit.json", report);

  std::string trace = "iteration,objective\n";
  for (std::size_t i = 0; i < fit.objective_trace.size(); ++i)
    trace += std::to_string(i) + "," + format_double(fit.objective_trace[i]) +
             "\n";
  ctx.write_text("trace.csv", trace);
  std::cout << report.dump(2) << "\n";
  return fit.converged ? kExitOk : kExitInfeasible;
}

// ---------------------------------------------------------------------------
// train

struct TrainData {
  Dataset source;
  Dataset target;
};

TrainData resolve_train_data(const json& cfg, AdaptMode mode) {
  if (cfg.contains("source_csv") && cfg.contains("target_csv")) {
    return TrainData{load_dataset(cfg.at("source_csv").get<std::string>()),
                     load_dataset(cfg.at("target_csv").get<std::string>())};
  }
  json bench = field_or<json>(cfg, "benchmark", json::object());
  DomainSpec spec = spec_from_json(bench, mode);
  auto [source, target] = generate_pair(spec, mode);
  return TrainData{std::move(source), std::move(target)};
}

json epoch_to_json(const EpochRecord& rec) {
  return json{{"epoch", rec.epoch},
              {"class_loss", rec.class_loss},
              {"divergence", rec.divergence},
              {"objective", rec.objective},
              {"target_shared_accuracy",
               number_or_null(rec.target_shared_accuracy)},
              {"learning_rate", rec.learning_rate}};
}

json summary_to_json(const TrainingReport& report) {
  json j{{"seed", report.seed},
         {"epochs", report.epochs.size()},
         {"config", adapt_config_to_json(report.config)}};
  if (report.has_os_star) {
    j["os_star"] = report.os_star.mean;
    json per = json::object();
    for (std::size_t i = 0; i < report.os_star.class_ids.size(); ++i)
      per[std::to_string(report.os_star.class_ids[i])] =
          report.os_star.per_class[i];
    j["per_class_accuracy"] = per;
  } else {
    j["os_star"] = nullptr;
  }
  if (!report.epochs.empty()) {
    j["final_class_loss"] = report.epochs.back().class_loss;
    j["final_divergence"] = report.epochs.back().divergence;
    j["final_objective"] = report.epochs.back().objective;
  }
  return j;
}

void run_one_training(const AdaptationConfig& cfg, const TrainData& data,
                      const std::string& suffix, RunContext& ctx,
                      json* sweep_entry) {
  TrainResult result = train(cfg, data.source, data.target);

  std::string lines;
  for (const EpochRecord& rec : result.report.epochs)
    lines += epoch_to_json(rec).dump() + "\n";
  ctx.write_text("report" + suffix + ".jsonl", lines);

  json summary = summary_to_json(result.report);
  ctx.write_json("summary" + suffix + ".json", summary);

  fs::path ckpt = ctx.path_for("checkpoint" + suffix + ".csv");
  save_checkpoint(result.encoder, result.classifier, ckpt.string());
  ctx.track("checkpoint" + suffix + ".csv");

  if (sweep_entry) *sweep_entry = summary;
}

struct SweepSpec {
  std::string key;
  std::vector<double> values;
};

SweepSpec parse_sweep(const std::string& text) {
  auto eq = text.find('=');
  if (eq == std::string::npos)
    throw ConfigInvalid("--sweep expects key=start:end:count");
  SweepSpec spec;
  spec.key = text.substr(0, eq);
  std::string rest = text.substr(eq + 1);
  auto c1 = rest.find(':');
  auto c2 = rest.find(':', c1 == std::string::npos ? 0 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw ConfigInvalid("--sweep expects key=start:end:count");
  double start = parse_double(rest.substr(0, c1), "--sweep start");
  double end = parse_double(rest.substr(c1 + 1, c2 - c1 - 1), "--sweep end");
  int count = static_cast<int>(parse_double(rest.substr(c2 + 1), "--sweep count"));
  if (count < 1) throw ConfigInvalid("--sweep count must be >= 1");
  for (int i = 0; i < count; ++i)
    spec.values.push_back(count == 1
                              ? start
                              : start + i * (end - start) / (count - 1));
  return spec;
}

int cmd_train(const json& cfg, const std::string& sweep_flag, RunContext& ctx) {
  AdaptationConfig base = adapt_config_from_json(cfg);
  base.validate();

  if (sweep_flag.empty()) {
    TrainData data = resolve_train_data(cfg, base.mode);
    run_one_training(base, data, "", ctx, nullptr);
    std::cout << "trained: os_star in summary.json\n";
    return kExitOk;
  }

  SweepSpec sweep = parse_sweep(sweep_flag);
  json sweep_report = json::array();
  for (std::size_t i = 0; i < sweep.values.size(); ++i) {
    AdaptationConfig cfg_i = base;
    json cfg_json = cfg;
    double v = sweep.values[i];
    if (sweep.key == "alpha") {
      cfg_i.alpha = v;
    } else if (sweep.key == "gamma") {
      cfg_i.gamma = v;
    } else if (sweep.key == "batch_size") {
      cfg_i.batch_size = static_cast<int>(v);
    } else if (sweep.key == "learning_rate") {
      cfg_i.learning_rate = v;
    } else if (sweep.key == "sigma2") {
      cfg_i.sigma2 = v;
    } else if (sweep.key == "private_count") {
      json bench = field_or<json>(cfg_json, "benchmark", json::object());
      bench["private_count"] = static_cast<int>(v);
      cfg_json["benchmark"] = bench;
    } else {
      throw ConfigInvalid("unknown sweep key '" + sweep.key + "'");
    }
    TrainData data = resolve_train_data(cfg_json, cfg_i.mode);
    std::string suffix = "_" + sweep.key + "_" + std::to_string(i);
    json entry;
    run_one_training(cfg_i, data, suffix, ctx, &entry);
    entry["sweep_value"] = v;
    sweep_report.push_back(entry);
  }
  ctx.write_json("sweep.json",
                 json{{"key", sweep.key},
                      {"values", sweep.values},
                      {"runs", sweep_report}});
  std::cout << "sweep complete: " << sweep.values.size() << " runs\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// tune-alpha

int cmd_tune_alpha(const json& cfg, RunContext& ctx) {
  double r = field_or<double>(cfg, "r_threshold", 0.01);
  double rho = field_or<double>(cfg, "rho", 20.0);
  double alpha_max = field_or<double>(cfg, "alpha_max", 0.999);
  double tol = field_or<double>(cfg, "tol", 1e-9);
  Alpha tuned = tune_alpha(r, rho, alpha_max, tol);
  json report{{"alpha", tuned.value()},
              {"r_threshold", r},
              {"rho", rho},
              {"gradient_magnitude", grad_magnitude(r, tuned)}};
  ctx.write_json("tune.json", report);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check-bound

int cmd_check_bound(const json& cfg, RunContext& ctx) {
  int instances = field_or<int>(cfg, "instances", 100);
  int z_card = field_or<int>(cfg, "z_card", 4);
  int y_card = field_or<int>(cfg, "y_card", 3);
  double p_min = field_or<double>(cfg, "p_min", 1e-3);
  std::uint64_t seed = field_or<std::uint64_t>(cfg, "seed", 1);
  std::vector<double> alphas = field_or<std::vector<double>>(
      cfg, "alphas", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});
  if (instances < 1) throw ConfigInvalid("instances must be >= 1");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0))
      throw ConfigInvalid("alphas entries must lie in (0, 1)");

  Rng rng(seed);
  json rows = json::array();
  int violations = 0;
  double min_slack = std::numeric_limits<double>::infinity();
  for (int i = 0; i < instances; ++i) {
    BoundInstance inst = random_bound_instance(rng, z_card, y_card, p_min);
    for (double a : alphas) {
      BoundCheckRecord rec = check_bound_instance(inst, a);
      violations += rec.slack < 0.0;
      min_slack = std::min(min_slack, rec.slack);
      rows.push_back(json{{"instance", i},
                          {"alpha_prime", rec.alpha_prime},
                          {"l_source", rec.l_source},
                          {"l_target", rec.l_target},
                          {"divergence", rec.divergence},
                          {"bound", rec.bound},
                          {"slack", rec.slack}});
    }
  }
  json report{{"instances", instances},
              {"alphas", alphas},
              {"violations", violations},
              {"min_slack", min_slack},
              {"records", rows}};
  ctx.write_json("bound_report.json", report);
  std::cout << "checked " << rows.size() << " bound evaluations, "
            << violations << " violations, min slack "
            << format_double(min_slack) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const json& cfg, RunContext& ctx) {
  AdaptMode mode =
      adapt_mode_from_string(field_or<std::string>(cfg, "mode", "osda"));
  json bench = field_or<json>(cfg, "benchmark", json::object());
  DomainSpec spec = spec_from_json(bench, mode);
  auto [source, target] = generate_pair(spec, mode);

  save_dataset(source, ctx.path_for("source.csv").string());
  ctx.track("source.csv");
  save_dataset(target, ctx.path_for("target.csv").string());
  ctx.track("target.csv");
  ctx.write_json("spec.json",
                 json{{"mode", to_string(mode)}, {"spec", spec_to_json(spec)},
                      {"source_samples", source.size()},
                      {"target_samples", target.size()}});
  std::cout << "wrote source.csv (" << source.size() << " rows), target.csv ("
            << target.size() << " rows)\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-check

double graph_loss(const std::string& fixture, const std::vector<std::string>& ops,
                  Mlp& net, Classifier& cls, const Matrix& xs, const Matrix& xt,
                  const std::vector<int>& labels, const AdaptationConfig& cfg,
                  std::vector<Matrix>* grads_out) {
  if (fixture == "encoder_ce") {
    Tape tape;
    std::vector<Tape::Id> w_ids, b_ids;
    Tape::Id z = encoder_graph(tape, net, tape.leaf(xs), w_ids, b_ids);
    Tape::Id cls_w = tape.leaf(cls.weight);
    Tape::Id probs = tape.softmax_floor(
        tape.affine(z, cls_w, tape.leaf(cls.bias)), cls.p_min);
    Tape::Id loss = tape.cross_entropy(probs, labels);
    if (grads_out) {
      auto adj = tape.backward(loss);
      grads_out->clear();
      for (Tape::Id id : w_ids) grads_out->push_back(adj[id]);
      grads_out->push_back(adj[cls_w]);
    }
    return tape.value(loss)(0, 0);
  }
  if (fixture == "encoder_divergence") {
    Tape tape;
    std::vector<Tape::Id> w_ids, b_ids;
    Tape::Id enc_in_s = tape.leaf(xs);
    Tape::Id enc_in_t = tape.leaf(xt);
    std::vector<Tape::Id> ws, bs;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      ws.push_back(tape.leaf(net.weights[l]));
      bs.push_back(tape.leaf(net.biases[l]));
    }
    auto encode = [&](Tape::Id x) {
      Tape::Id h = x;
      for (std::size_t l = 0; l < net.layer_count(); ++l) {
        h = tape.affine(h, ws[l], bs[l]);
        if (l + 1 < net.layer_count()) h = tape.relu(h);
      }
      return h;
    };
    Tape::Id div = tape.mixture_divergence(encode(enc_in_s), encode(enc_in_t),
                                           Alpha(cfg.alpha), cfg.sigma2,
                                           Direction::forward, false);
    if (grads_out) {
      auto adj = tape.backward(div);
      grads_out->clear();
      for (Tape::Id id : ws) grads_out->push_back(adj[id]);
    }
    return tape.value(div)(0, 0);
  }
  if (fixture == "composed_osda" || fixture == "composed_pda") {
    AdaptationConfig local = cfg;
    local.mode = fixture == "composed_osda" ? AdaptMode::osda : AdaptMode::pda;
    ObjectiveGraph g = joint_objective(xs, labels, xt, net, cls, local);
    if (grads_out) {
      auto adj = g.tape.backward(g.loss);
      grads_out->clear();
      for (Tape::Id id : g.enc_w) grads_out->push_back(adj[id]);
      grads_out->push_back(adj[g.cls_w]);
    }
    return g.tape.value(g.loss)(0, 0);
  }
  if (fixture == "chain") {
    static const std::vector<std::string> registered = {
        "affine", "relu", "softmax_floor", "logsumexp_rows", "cross_entropy",
        "mixture_divergence", "add", "scale"};
    for (const std::string& op : ops)
      if (std::find(registered.begin(), registered.end(), op) ==
          registered.end())
        throw UnregisteredOperation("operation '" + op +
                                    "' has no registered analytic partial");
    Tape tape;
    Rng aux(7);
    Tape::Id x = tape.leaf(xs);
    Tape::Id cur = x;
    for (const std::string& op : ops) {
      const Matrix& v = tape.value(cur);
      if (op == "affine") {
        Matrix w(v.cols(), v.cols());
        for (Eigen::Index i = 0; i < w.rows(); ++i)
          for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = aux.normal();
        cur = tape.affine(cur, tape.leaf(w),
                          tape.leaf(Matrix::Zero(v.cols(), 1)));
      } else if (op == "relu") {
        cur = tape.relu(cur);
      } else if (op == "softmax_floor") {
        cur = tape.softmax_floor(cur, 1e-6);
      } else if (op == "logsumexp_rows") {
        cur = tape.logsumexp_rows(cur);
      } else if (op == "cross_entropy") {
        cur = tape.cross_entropy(tape.softmax_floor(cur, 1e-6),
                                 std::vector<int>(v.rows(), 0));
      } else if (op == "mixture_divergence") {
        cur = tape.mixture_divergence(cur, tape.leaf(xt.leftCols(v.cols())),
                                      Alpha(0.6), 1.0, Direction::forward,
                                      false);
      } else if (op == "add") {
        cur = tape.add(cur, cur);
      } else if (op == "scale") {
        cur = tape.scale(cur, 0.5);
      }
    }
    const Matrix& v = tape.value(cur);
    Tape::Id scalar =
        v.rows() == 1 && v.cols() == 1
            ? cur
            : tape.cross_entropy(tape.softmax_floor(cur, 1e-6),
                                 std::vector<int>(v.rows(), 0));
    if (grads_out) {
      auto adj = tape.backward(scalar);
      grads_out->assign(1, adj[x]);
    }
    return tape.value(scalar)(0, 0);
  }
  throw ConfigInvalid("unknown fixture '" + fixture + "'");
}

int cmd_grad_check(const json& cfg, RunContext& ctx) {
  std::string fixture = field_or<std::string>(cfg, "fixture", "composed_osda");
  std::uint64_t seed = field_or<std::uint64_t>(cfg, "seed", 1);
  double step = field_or<double>(cfg, "step", 1e-5);
  std::vector<std::string> ops =
      field_or<std::vector<std::string>>(cfg, "ops", {});

  double max_err = 0.0;
  if (fixture == "quadratic") {
    Matrix p = Matrix::Constant(1, 1, 1.0);
    std::vector<Matrix*> params = {&p};
    std::vector<Matrix> analytic = {Matrix::Constant(1, 1, 2.0)};
    max_err = finite_diff_check([&p]() { return p(0, 0) * p(0, 0); }, params,
                                analytic, step);
  } else {
    Rng rng(seed);
    AdaptationConfig tcfg;
    tcfg.layers = {3, 6, 2};
    tcfg.alpha = 0.6;
    Mlp net = Mlp::init(tcfg.layers, rng);
    Classifier cls = Classifier::init(2, 3, 1e-6, rng);
    auto rand_batch = [&rng](int n, int d) {
      Matrix m(n, d);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
      return m;
    };
    Matrix xs = rand_batch(6, 3);
    Matrix xt = rand_batch(6, 3).array() + 0.4;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i)
      labels.push_back(static_cast<int>(rng.index(3)));

    std::vector<Matrix> analytic;
    graph_loss(fixture, ops, net, cls, xs, xt, labels, tcfg, &analytic);

    std::vector<Matrix*> params;
    if (fixture == "chain") {
      params = {&xs};
    } else {
      for (std::size_t l = 0; l < net.layer_count(); ++l)
        params.push_back(&net.weights[l]);
      if (fixture != "encoder_divergence") params.push_back(&cls.weight);
    }
    auto loss_fn = [&]() {
      return graph_loss(fixture, ops, net, cls, xs, xt, labels, tcfg, nullptr);
    };
    max_err = finite_diff_check(loss_fn, params, analytic, step);
  }

  json report{{"fixture", fixture}, {"step", step}, {"max_rel_error", max_err}};
  ctx.write_json("gradcheck.json", report);
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

int dispatch(const std::string& name, const json& cfg,
             const std::string& sweep_flag, RunContext& ctx) {
  ctx.subcommand = name;
  ctx.resolved_config = cfg;
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw IoFailure("cannot create " + ctx.out_dir.string());
  int rc;
  if (name == "estimate")
    rc = cmd_estimate(cfg, ctx);
  else if (name == "fit-density")
    rc = cmd_fit_density(cfg, ctx);
  else if (name == "train")
    rc = cmd_train(cfg, sweep_flag, ctx);
  else if (name == "tune-alpha")
    rc = cmd_tune_alpha(cfg, ctx);
  else if (name == "check-bound")
    rc = cmd_check_bound(cfg, ctx);
  else if (name == "gen-data")
    rc = cmd_gen_data(cfg, ctx);
  else if (name == "grad-check")
    rc = cmd_grad_check(cfg, ctx);
  else
    throw ConfigInvalid("unknown subcommand " + name);
  ctx.finish();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"alpha-divergence domain adaptation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", sweep_flag;
  long long seed_flag = 0;
  double alpha_flag = 0.0, gamma_flag = 0.0, rho_flag = 0.0, r_flag = 0.0;
  double alpha_max_flag = 0.0, tol_flag = 0.0;
  int epochs_flag = 0, batch_flag = 0, instances_flag = 0;
  std::string mode_flag, kind_flag;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config (or manifest) path");
    cmd->add_option("--seed", seed_flag, "override config seed");
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* c_estimate = app.add_subcommand("estimate", "divergence report");
  add_common(c_estimate);
  c_estimate->add_option("--alpha", alpha_flag, "divergence order");
  c_estimate->add_option("--kind", kind_flag, "discrete | mc");

  CLI::App* c_fit = app.add_subcommand("fit-density", "robust Gaussian fit");
  add_common(c_fit);
  c_fit->add_option("--alpha", alpha_flag, "divergence order");

  CLI::App* c_train = app.add_subcommand("train", "adaptation training run");
  add_common(c_train);
  c_train->add_option("--alpha", alpha_flag, "divergence order");
  c_train->add_option("--gamma", gamma_flag, "trade-off weight");
  c_train->add_option("--epochs", epochs_flag, "training epochs");
  c_train->add_option("--batch-size", batch_flag, "mini-batch size");
  c_train->add_option("--mode", mode_flag, "osda | pda");
  c_train->add_option("--sweep", sweep_flag, "key=start:end:count");

  CLI::App* c_tune = app.add_subcommand("tune-alpha", "gradient-bound tuning");
  add_common(c_tune);
  c_tune->add_option("--r", r_flag, "outlier density ratio threshold");
  c_tune->add_option("--rho", rho_flag, "gradient magnitude bound");
  c_tune->add_option("--alpha-max", alpha_max_flag, "upper cap on alpha");
  c_tune->add_option("--tol", tol_flag, "bisection tolerance");

  CLI::App* c_bound = app.add_subcommand("check-bound", "target-loss bound check");
  add_common(c_bound);
  c_bound->add_option("--instances", instances_flag, "number of random joints");

  CLI::App* c_gen = app.add_subcommand("gen-data", "synthetic domain pair");
  add_common(c_gen);
  c_gen->add_option("--mode", mode_flag, "osda | pda");

  CLI::App* c_grad = app.add_subcommand("grad-check", "finite-difference check");
  add_common(c_grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  CLI::App* active = app.get_subcommands().front();
  std::string name = active->get_name();
  auto passed = [&](const std::string& flag) {
    const CLI::Option* opt = active->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };

  try {
    json cfg = json::object();
    if (!config_path.empty()) cfg = load_config_file(config_path, name);
    if (!cfg.is_object()) throw ConfigInvalid("config root must be an object");

    // flags override their config keys
    if (passed("--seed")) cfg["seed"] = seed_flag;
    if (passed("--alpha")) cfg["alpha"] = alpha_flag;
    if (passed("--gamma")) cfg["gamma"] = gamma_flag;
    if (passed("--epochs")) cfg["epochs"] = epochs_flag;
    if (passed("--batch-size")) cfg["batch_size"] = batch_flag;
    if (passed("--mode")) cfg["mode"] = mode_flag;
    if (passed("--kind")) cfg["kind"] = kind_flag;
    if (passed("--r")) cfg["r_threshold"] = r_flag;
    if (passed("--rho")) cfg["rho"] = rho_flag;
    if (passed("--alpha-max")) cfg["alpha_max"] = alpha_max_flag;
    if (passed("--tol")) cfg["tol"] = tol_flag;
    if (passed("--instances")) cfg["instances"] = instances_flag;

    RunContext ctx;
    ctx.out_dir = out_dir;
    return dispatch(name, cfg, sweep_flag, ctx);
  } catch (const NoFeasibleAlpha& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
