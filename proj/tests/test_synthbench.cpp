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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "alphada/synthbench.hpp"

namespace alphada {
namespace {

Vector class_mean(const Dataset& d, int label) {
  Vector sum = Vector::Zero(d.dim());
  long count = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d.labels[i] != label) continue;
    sum += d.samples.row(i).transpose();
    ++count;
  }
  return sum / static_cast<double>(count);
}

TEST(DomainSpec, DefaultBenchmarkValidates) {
  DomainSpec::default_benchmark(AdaptMode::osda).validate();
  DomainSpec::default_benchmark(AdaptMode::pda).validate();
}

TEST(DomainSpec, RejectsBadSpecs) {
  DomainSpec spec = DomainSpec::default_benchmark(AdaptMode::osda);
  spec.spreads[0] = -1.0;
  EXPECT_THROW(spec.validate(), SpecInvalid);

  DomainSpec close = DomainSpec::default_benchmark(AdaptMode::osda);
  close.private_prototypes[0] << 1.0, 0.3;  // on top of a shared class
  EXPECT_THROW(close.validate(), SpecInvalid);

  DomainSpec both = DomainSpec::default_benchmark(AdaptMode::osda);
  both.private_source = 1;
  both.private_prototypes.push_back(both.private_prototypes[0]);
  both.private_spreads.push_back(0.25);
  EXPECT_THROW(both.validate(), SpecInvalid);
}

TEST(GeneratePair, ModeAndPrivateSideMustAgree) {
  DomainSpec osda_spec = DomainSpec::default_benchmark(AdaptMode::osda);
  EXPECT_THROW(generate_pair(osda_spec, AdaptMode::pda), SpecInvalid);
  DomainSpec pda_spec = DomainSpec::default_benchmark(AdaptMode::pda);
  EXPECT_THROW(generate_pair(pda_spec, AdaptMode::osda), SpecInvalid);
}

TEST(GeneratePair, LabelSets) {
  auto [source, target] =
      generate_pair(DomainSpec::default_benchmark(AdaptMode::osda), AdaptMode::osda);
  std::set<int> src_labels(source.labels.begin(), source.labels.end());
  std::set<int> tgt_labels(target.labels.begin(), target.labels.end());
  EXPECT_EQ(src_labels, (std::set<int>{0, 1, 2}));
  EXPECT_EQ(tgt_labels, (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(source.size(), 600);
  EXPECT_EQ(target.size(), 800);
  EXPECT_EQ(source.domain, DomainTag::source);
  EXPECT_EQ(target.domain, DomainTag::target);

  auto [psrc, ptgt] =
      generate_pair(DomainSpec::default_benchmark(AdaptMode::pda), AdaptMode::pda);
  std::set<int> psrc_labels(psrc.labels.begin(), psrc.labels.end());
  std::set<int> ptgt_labels(ptgt.labels.begin(), ptgt.labels.end());
  EXPECT_EQ(psrc_labels, (std::set<int>{0, 1, 2, 3}));
  EXPECT_EQ(ptgt_labels, (std::set<int>{0, 1, 2}));
}

TEST(GeneratePair, DeterministicBySeed) {
  DomainSpec spec = DomainSpec::default_benchmark(AdaptMode::osda, 17);
  auto [s1, t1] = generate_pair(spec, AdaptMode::osda);
  auto [s2, t2] = generate_pair(spec, AdaptMode::osda);
  EXPECT_TRUE(s1.samples == s2.samples);
  EXPECT_TRUE(t1.samples == t2.samples);
  EXPECT_EQ(s1.labels, s2.labels);

  DomainSpec other = DomainSpec::default_benchmark(AdaptMode::osda, 18);
  auto [s3, t3] = generate_pair(other, AdaptMode::osda);
  EXPECT_FALSE(s1.samples == s3.samples);
  (void)t3;
}

TEST(GeneratePair, IdentityShiftGivesMatchingDomains) {
  DomainSpec spec = DomainSpec::default_benchmark(AdaptMode::osda, 5);
  spec.private_target = 0;
  spec.private_prototypes.clear();
  spec.private_spreads.clear();
  spec.rotation_rad = 0.0;
  spec.translation.setZero();
  auto [source, target] = generate_pair(spec, AdaptMode::osda);
  double tol = 3.0 * 0.25 / std::sqrt(200.0);
  for (int c = 0; c < 3; ++c) {
    EXPECT_LT((class_mean(source, c) - class_mean(target, c)).norm(), tol)
        << "class " << c;
  }
}

TEST(GeneratePair, InverseShiftRecoversSourceMeans) {
  DomainSpec spec = DomainSpec::default_benchmark(AdaptMode::osda, 9);
  auto [source, target] = generate_pair(spec, AdaptMode::osda);
  Dataset undone = target;
  for (Eigen::Index i = 0; i < undone.size(); ++i)
    undone.samples.row(i) =
        detail::invert_shift(spec, undone.samples.row(i).transpose())
            .transpose();
  double tol = 3.0 * 0.25 / std::sqrt(200.0);
  for (int c = 0; c < 3; ++c)
    EXPECT_LT((class_mean(source, c) - class_mean(undone, c)).norm(), tol)
        << "class " << c;
}

TEST(GeneratePair, PrivatePrototypeSeparationHolds) {
  DomainSpec spec = DomainSpec::default_benchmark(AdaptMode::osda, 2);
  spec.validate();
  double max_spread = 0.0;
  for (double s : spec.spreads) max_spread = std::max(max_spread, s);
  for (const Vector& priv : spec.private_prototypes)
    for (const Vector& shared : spec.prototypes)
      EXPECT_GE((priv - shared).norm(), 3.0 * max_spread);
}

TEST(DatasetCsv, RoundTripIsExact) {
  auto [source, target] =
      generate_pair(DomainSpec::default_benchmark(AdaptMode::osda, 3),
                    AdaptMode::osda);
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "alphada_ds.csv").string();
  save_dataset(target, path);
  Dataset back = load_dataset(path);
  EXPECT_TRUE(back.samples == target.samples);
  EXPECT_EQ(back.labels, target.labels);
  EXPECT_EQ(back.domain, target.domain);
  std::remove(path.c_str());
  (void)source;
}

TEST(DatasetCsv, MalformedInputsName) {
  namespace fs = std::filesystem;
  std::string ragged = (fs::temp_directory_path() / "alphada_bad.csv").string();
  {
    std::ofstream out(ragged);
    out << "label,domain,x0,x1\n0,source,1.0\n";
  }
  try {
    load_dataset(ragged);
    FAIL() << "expected ParseFailure";
  } catch (const ParseFailure& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::remove(ragged.c_str());

  std::string empty = (fs::temp_directory_path() / "alphada_bad2.csv").string();
  { std::ofstream out(empty); }
  EXPECT_THROW(load_dataset(empty), ParseFailure);
  std::remove(empty.c_str());
}

}  // namespace
}  // namespace alphada
