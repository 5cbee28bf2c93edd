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
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "alphada/common.hpp"
#include "alphada/rng.hpp"

namespace alphada {

enum class AdaptMode { osda, pda };

inline const char* to_string(AdaptMode m) {
  return m == AdaptMode::osda ? "osda" : "pda";
}

inline AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "osda") return AdaptMode::osda;
  if (s == "pda") return AdaptMode::pda;
  throw ConfigInvalid("mode must be 'osda' or 'pda', got '" + s + "'");
}

enum class DomainTag { source, target };

inline const char* to_string(DomainTag t) {
  return t == DomainTag::source ? "source" : "target";
}

// Labeled sample set for one domain. Labels on the target side are carried
// for evaluation only; training never reads them.
struct Dataset {
  Matrix samples;           // N x m
  std::vector<int> labels;  // N
  DomainTag domain = DomainTag::source;

  Eigen::Index size() const { return samples.rows(); }
  Eigen::Index dim() const { return samples.cols(); }
};

// Generator spec for one synthetic domain pair. Shared classes sit at the
// given prototypes in both domains; the target domain is mapped through a
// rotation (in the first two coordinates) plus translation. Private classes
// become extra target labels (open-set) or extra source labels (partial).
struct DomainSpec {
  int input_dim = 2;
  int shared_classes = 3;
  int private_source = 0;
  int private_target = 1;
  std::vector<Vector> prototypes;          // shared-class means
  std::vector<Vector> private_prototypes;  // one per private class
  std::vector<double> spreads;             // per shared class
  std::vector<double> private_spreads;     // per private class
  double rotation_rad = std::numbers::pi / 6.0;
  Vector translation;
  int samples_per_class = 200;
  std::uint64_t seed = 1;

  void validate() const {
    if (input_dim < 1) throw SpecInvalid("input_dim must be >= 1");
    if (shared_classes < 2) throw SpecInvalid("need at least 2 shared classes");
    if (private_source < 0 || private_target < 0)
      throw SpecInvalid("private class counts must be nonnegative");
    if (private_source > 0 && private_target > 0)
      throw SpecInvalid("at most one domain may carry private classes");
    if (samples_per_class < 1)
      throw SpecInvalid("samples_per_class must be >= 1");
    if (static_cast<int>(prototypes.size()) != shared_classes)
      throw SpecInvalid("one prototype per shared class required");
    if (static_cast<int>(spreads.size()) != shared_classes)
      throw SpecInvalid("one spread per shared class required");
    int n_private = private_source + private_target;
    if (static_cast<int>(private_prototypes.size()) != n_private)
      throw SpecInvalid("one prototype per private class required");
    if (static_cast<int>(private_spreads.size()) != n_private)
      throw SpecInvalid("one spread per private class required");
    for (const Vector& p : prototypes)
      if (p.size() != input_dim) throw SpecInvalid("prototype dimension mismatch");
    for (const Vector& p : private_prototypes)
      if (p.size() != input_dim) throw SpecInvalid("prototype dimension mismatch");
    for (double s : spreads)
      if (!(s > 0.0)) throw SpecInvalid("spreads must be positive");
    for (double s : private_spreads)
      if (!(s > 0.0)) throw SpecInvalid("spreads must be positive");
    if (translation.size() != input_dim)
      throw SpecInvalid("translation dimension mismatch");
    if (input_dim < 2 && rotation_rad != 0.0)
      throw SpecInvalid("rotation needs at least two dimensions");

    // Private prototypes must stay clear of every shared prototype.
    double max_spread = 0.0;
    for (double s : spreads) max_spread = std::max(max_spread, s);
    for (double s : private_spreads) max_spread = std::max(max_spread, s);
    for (const Vector& priv : private_prototypes)
      for (const Vector& shared : prototypes)
        if ((priv - shared).norm() < 3.0 * max_spread)
          throw SpecInvalid("private prototype closer than 3 spreads to a shared one");
  }

  // The desk-scale default: three classes on the unit circle, 30 degree
  // rotation plus a (0.5, 0.25) shift, and private classes on the radius
  // sqrt(18) circle starting at (3, 3), on whichever side the mode puts
  // the outliers. private_count > 1 raises the outlier fraction.
  static DomainSpec default_benchmark(AdaptMode mode, std::uint64_t seed = 1,
                                      int private_count = 1) {
    if (private_count < 0)
      throw SpecInvalid("private_count must be nonnegative");
    DomainSpec spec;
    spec.seed = seed;
    spec.private_source = mode == AdaptMode::pda ? private_count : 0;
    spec.private_target = mode == AdaptMode::osda ? private_count : 0;
    for (int c = 0; c < spec.shared_classes; ++c) {
      double angle = 2.0 * std::numbers::pi * c / spec.shared_classes;
      Vector p(2);
      p << std::cos(angle), std::sin(angle);
      spec.prototypes.push_back(p);
      spec.spreads.push_back(0.25);
    }
    double radius = std::sqrt(18.0);
    for (int k = 0; k < private_count; ++k) {
      double angle = std::numbers::pi / 4.0 +
                     k * 2.0 * std::numbers::pi / private_count;
      Vector outlier(2);
      outlier << radius * std::cos(angle), radius * std::sin(angle);
      spec.private_prototypes.push_back(outlier);
      spec.private_spreads.push_back(0.25);
    }
    spec.translation = Vector(2);
    spec.translation << 0.5, 0.25;
    return spec;
  }
};

namespace detail {

inline Vector apply_shift(const DomainSpec& spec, const Vector& x) {
  Vector y = x;
  if (spec.input_dim >= 2) {
    double c = std::cos(spec.rotation_rad), s = std::sin(spec.rotation_rad);
    y[0] = c * x[0] - s * x[1];
    y[1] = s * x[0] + c * x[1];
  }
  return y + spec.translation;
}

inline Vector invert_shift(const DomainSpec& spec, const Vector& x) {
  Vector y = x - spec.translation;
  if (spec.input_dim >= 2) {
    double c = std::cos(spec.rotation_rad), s = std::sin(spec.rotation_rad);
    double y0 = c * y[0] + s * y[1];
    double y1 = -s * y[0] + c * y[1];
    y[0] = y0;
    y[1] = y1;
  }
  return y;
}

}  // namespace detail

// Draws the source/target pair. Stream order is fixed: source classes in
// label order, then target classes in label order, one sample at a time,
// coordinates in index order. The target shift is applied to every target
// sample, private classes included.
inline std::pair<Dataset, Dataset> generate_pair(const DomainSpec& spec,
                                                 AdaptMode mode) {
  spec.validate();
  if (mode == AdaptMode::osda && spec.private_source > 0)
    throw SpecInvalid("osda mode forbids private source classes");
  if (mode == AdaptMode::pda && spec.private_target > 0)
    throw SpecInvalid("pda mode forbids private target classes");

  Rng rng(spec.seed);
  auto draw = [&](const Vector& proto, double spread) {
    Vector x(spec.input_dim);
    for (int j = 0; j < spec.input_dim; ++j)
      x[j] = proto[j] + spread * rng.normal();
    return x;
  };

  int c_shared = spec.shared_classes;
  int n_source_classes = c_shared + spec.private_source;
  int n_target_classes = c_shared + spec.private_target;

  Dataset source;
  source.domain = DomainTag::source;
  source.samples = Matrix(n_source_classes * spec.samples_per_class,
                          spec.input_dim);
  Eigen::Index row = 0;
  for (int c = 0; c < n_source_classes; ++c) {
    const Vector& proto =
        c < c_shared ? spec.prototypes[c] : spec.private_prototypes[c - c_shared];
    double spread =
        c < c_shared ? spec.spreads[c] : spec.private_spreads[c - c_shared];
    for (int i = 0; i < spec.samples_per_class; ++i) {
      source.samples.row(row++) = draw(proto, spread).transpose();
      source.labels.push_back(c);
    }
  }

  Dataset target;
  target.domain = DomainTag::target;
  target.samples = Matrix(n_target_classes * spec.samples_per_class,
                          spec.input_dim);
  row = 0;
  for (int c = 0; c < n_target_classes; ++c) {
    const Vector& proto =
        c < c_shared ? spec.prototypes[c] : spec.private_prototypes[c - c_shared];
    double spread =
        c < c_shared ? spec.spreads[c] : spec.private_spreads[c - c_shared];
    for (int i = 0; i < spec.samples_per_class; ++i) {
      target.samples.row(row++) =
          detail::apply_shift(spec, draw(proto, spread)).transpose();
      target.labels.push_back(c);
    }
  }
  return {std::move(source), std::move(target)};
}

// Dataset CSV: header `label,domain,x0,...,x{m-1}`, floats in shortest
// round-trip form so that load(save(d)) == d exactly.
inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out << "label,domain";
  for (Eigen::Index j = 0; j < d.dim(); ++j) out << ",x" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    out << d.labels[i] << ',' << to_string(d.domain);
    for (Eigen::Index j = 0; j < d.dim(); ++j)
      out << ',' << format_double(d.samples(i, j));
    out << '\n';
  }
  if (!out) throw IoFailure("failed writing " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,domain", 0) != 0)
    throw ParseFailure(path + ": missing dataset header");
  std::size_t columns = 1;
  for (char ch : line) columns += ch == ',';
  if (columns < 3) throw ParseFailure(path + ": header names no coordinates");
  std::size_t dim = columns - 2;

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  DomainTag tag = DomainTag::source;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> fields;
    while (std::getline(ss, cell, ',')) fields.push_back(cell);
    if (fields.size() != columns)
      throw ParseFailure(path + " line " + std::to_string(lineno) +
                         ": expected " + std::to_string(columns) +
                         " fields, got " + std::to_string(fields.size()));
    labels.push_back(static_cast<int>(
        parse_double(fields[0], path + " line " + std::to_string(lineno))));
    if (fields[1] == "source")
      tag = DomainTag::source;
    else if (fields[1] == "target")
      tag = DomainTag::target;
    else
      throw ParseFailure(path + " line " + std::to_string(lineno) +
                         ": unknown domain '" + fields[1] + "'");
    std::vector<double> coords(dim);
    for (std::size_t j = 0; j < dim; ++j)
      coords[j] = parse_double(fields[2 + j],
                               path + " line " + std::to_string(lineno));
    rows.push_back(std::move(coords));
  }
  if (rows.empty()) throw ParseFailure(path + ": no samples");

  Dataset d;
  d.domain = tag;
  d.labels = std::move(labels);
  d.samples = Matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j)
      d.samples(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  return d;
}

}  // namespace alphada
