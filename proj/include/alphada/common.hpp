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

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace alphada {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. Every failure mode raised by the library derives from
// Error so callers can catch one type at the boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments / violated preconditions (CLI maps these to exit code 2).
struct ValidationError : Error {
  using Error::Error;
};
// Feasibility / convergence failures (CLI exit code 3).
struct InfeasibleError : Error {
  using Error::Error;
};
// Filesystem and parsing failures (CLI exit code 4).
struct IoError : Error {
  using Error::Error;
};

struct MismatchedLength : ValidationError {
  using ValidationError::ValidationError;
};
struct InvalidDistribution : ValidationError {
  using ValidationError::ValidationError;
};
struct AbsoluteContinuityViolated : ValidationError {
  using ValidationError::ValidationError;
};
struct LogDomainViolation : ValidationError {
  using ValidationError::ValidationError;
};
struct NonPositiveRatio : ValidationError {
  using ValidationError::ValidationError;
};
struct NoFeasibleAlpha : InfeasibleError {
  using InfeasibleError::InfeasibleError;
};
struct EmptyBatch : ValidationError {
  using ValidationError::ValidationError;
};
struct NonFiniteDensity : ValidationError {
  using ValidationError::ValidationError;
};
struct DimensionMismatch : ValidationError {
  using ValidationError::ValidationError;
};
struct ShapeMismatch : ValidationError {
  using ValidationError::ValidationError;
};
struct LabelOutOfRange : ValidationError {
  using ValidationError::ValidationError;
};
struct UnregisteredOperation : ValidationError {
  using ValidationError::ValidationError;
};
struct ConfigInvalid : ValidationError {
  using ValidationError::ValidationError;
};
struct DegenerateBatch : ValidationError {
  using ValidationError::ValidationError;
};
struct MissingClass : ValidationError {
  using ValidationError::ValidationError;
};
struct SpecInvalid : ValidationError {
  using ValidationError::ValidationError;
};
struct ParseFailure : IoError {
  using IoError::IoError;
};
struct IoFailure : IoError {
  using IoError::IoError;
};

// Shortest decimal representation that round-trips through strtod.
// Used for every float written to CSV so that save/load is exact.
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ParseFailure("not a number in " + where + ": '" + s + "'");
  return v;
}

}  // namespace alphada
