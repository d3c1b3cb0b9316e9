// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Free-response ROC evaluation of nodule candidates.
//
// A candidate hits a nodule when it lies within the nodule radius
// (inclusive). Every candidate within the radius of some nodule is absorbed,
// duplicates included; only the rest are false positives. Thresholds sweep
// the distinct candidate probabilities in descending order, and the
// sensitivity at an FP budget is the best sweep point within the budget.

#pragma once

#include <array>
#include <filesystem>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sgda/ct.hpp"

namespace sgda::froc {

using ct::Annotation;
using ct::Vec3;

inline constexpr std::array<double, 7> kOperatingPoints = {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct Candidate {
  std::string series_id;
  Vec3 center{0.0, 0.0, 0.0};
  double probability = 0.0;
};

struct CurvePoint {
  double threshold = 0.0;
  double fp_per_scan = 0.0;
  double sensitivity = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct FrocResult {
  std::array<double, 7> sensitivities{};
  double average = 0.0;
  std::vector<CurvePoint> curve;  // descending threshold

  bool operator==(const FrocResult&) const = default;
};

struct Options {
  /// Throw DataError on candidates of unknown scans instead of counting them.
  bool strict = false;
  /// Known scan ids; defaults to the series ids that carry annotations.
  std::optional<std::set<std::string>> scans;
  std::size_t jobs = 1;
};

struct MatchResult {
  std::vector<bool> detected;  // per annotation
  std::size_t hits = 0;
  std::size_t fp_count = 0;
  std::size_t absorbed = 0;
  std::vector<std::string> unknown_series;  // sorted, unique
};

MatchResult match(const std::vector<Candidate>& cands, const std::vector<Annotation>& anns, double threshold,
                  const Options& opts = {});

FrocResult froc(const std::vector<Candidate>& cands, const std::vector<Annotation>& anns, std::size_t scan_count,
                const Options& opts = {});

/// Curve rows `threshold,fp_per_scan,sensitivity`, a blank line, then the
/// summary block `operating_point,sensitivity` with 7 rows and `average`.
void emit_curve(const FrocResult& r, std::ostream& os);
void emit_curve(const FrocResult& r, const std::filesystem::path& path);
FrocResult parse_curve(std::istream& is, const std::string& source = "curve");
FrocResult parse_curve(const std::filesystem::path& path);

/// Header `seriesuid,coordX,coordY,coordZ,probability`.
std::vector<Candidate> parse_candidates(std::istream& is, const std::string& source = "candidates");
std::vector<Candidate> parse_candidates(const std::filesystem::path& path);
void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& cands);

}  // namespace sgda::froc
