// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/froc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "sgda/csv.hpp"
#include "sgda/errors.hpp"
#include "sgda/parallel.hpp"

namespace sgda::froc {

namespace fs = std::filesystem;

namespace {

double dist2(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

bool within(const Vec3& p, const Annotation& a) { return dist2(p, a.center) <= a.radius() * a.radius(); }

std::set<std::string> known_scans(const std::vector<Annotation>& anns, const Options& opts) {
  if (opts.scans) return *opts.scans;
  std::set<std::string> s;
  for (const auto& a : anns) s.insert(a.series_id);
  return s;
}

void check_candidates(const std::vector<Candidate>& cands) {
  for (const auto& c : cands) {
    if (!std::isfinite(c.probability) || c.probability < 0.0 || c.probability > 1.0) {
      throw DataError("candidate probability " + csv::format(c.probability) + " on " + c.series_id +
                      " is outside [0, 1]");
    }
  }
}

// Per candidate: absorbed or not, and which annotations it reaches.
struct Reach {
  bool absorbed = false;
  std::vector<std::size_t> nodules;
};

std::vector<Reach> reach(const std::vector<Candidate>& cands, const std::vector<Annotation>& anns,
                         std::size_t jobs) {
  std::map<std::string, std::vector<std::size_t>> by_scan;
  for (std::size_t i = 0; i < anns.size(); ++i) by_scan[anns[i].series_id].push_back(i);
  std::vector<Reach> out(cands.size());
  parallel_for(cands.size(), jobs, [&](std::size_t i) {
    auto it = by_scan.find(cands[i].series_id);
    if (it == by_scan.end()) return;
    for (std::size_t a : it->second) {
      if (within(cands[i].center, anns[a])) out[i].nodules.push_back(a);
    }
    out[i].absorbed = !out[i].nodules.empty();
  });
  return out;
}

std::vector<std::string> unknown_of(const std::vector<Candidate>& cands, const std::set<std::string>& known,
                                    bool strict) {
  std::set<std::string> unknown;
  for (const auto& c : cands)
    if (!known.count(c.series_id)) unknown.insert(c.series_id);
  if (strict && !unknown.empty()) {
    throw DataError("candidates reference unknown scan " + *unknown.begin() + " (" +
                    std::to_string(unknown.size()) + " unknown in total)");
  }
  return {unknown.begin(), unknown.end()};
}

}  // namespace

MatchResult match(const std::vector<Candidate>& cands, const std::vector<Annotation>& anns, double threshold,
                  const Options& opts) {
  check_candidates(cands);
  MatchResult r;
  r.unknown_series = unknown_of(cands, known_scans(anns, opts), opts.strict);
  r.detected.assign(anns.size(), false);
  const auto rc = reach(cands, anns, opts.jobs);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (cands[i].probability < threshold) continue;
    if (!rc[i].absorbed) {
      ++r.fp_count;
      continue;
    }
    ++r.absorbed;
    for (std::size_t a : rc[i].nodules) r.detected[a] = true;
  }
  r.hits = static_cast<std::size_t>(std::count(r.detected.begin(), r.detected.end(), true));
  return r;
}

FrocResult froc(const std::vector<Candidate>& cands, const std::vector<Annotation>& anns, std::size_t scan_count,
                const Options& opts) {
  if (scan_count == 0) throw UsageError("scan count must be at least 1");
  if (anns.empty()) throw DataError("no annotated nodules: sensitivity is undefined");
  check_candidates(cands);
  unknown_of(cands, known_scans(anns, opts), opts.strict);
  const auto rc = reach(cands, anns, opts.jobs);

  // Best probability reaching each nodule; -1 if none.
  std::vector<double> best(anns.size(), -1.0);
  std::vector<double> fp_probs;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (!rc[i].absorbed) fp_probs.push_back(cands[i].probability);
    for (std::size_t a : rc[i].nodules) best[a] = std::max(best[a], cands[i].probability);
  }
  std::vector<double> thresholds;
  for (const auto& c : cands) thresholds.push_back(c.probability);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::sort(fp_probs.begin(), fp_probs.end(), std::greater<>());
  std::sort(best.begin(), best.end(), std::greater<>());

  FrocResult r;
  std::size_t fp = 0, hits = 0;
  for (double t : thresholds) {
    while (fp < fp_probs.size() && fp_probs[fp] >= t) ++fp;
    while (hits < best.size() && best[hits] >= t) ++hits;
    r.curve.push_back({t, static_cast<double>(fp) / static_cast<double>(scan_count),
                       static_cast<double>(hits) / static_cast<double>(anns.size())});
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < kOperatingPoints.size(); ++k) {
    double s = 0.0;
    for (const auto& p : r.curve)
      if (p.fp_per_scan <= kOperatingPoints[k]) s = std::max(s, p.sensitivity);
    r.sensitivities[k] = s;
    sum += s;
  }
  r.average = sum / static_cast<double>(kOperatingPoints.size());
  return r;
}

// ---- files ----------------------------------------------------------------

void emit_curve(const FrocResult& r, std::ostream& os) {
  os << "threshold,fp_per_scan,sensitivity\n";
  for (const auto& p : r.curve) {
    os << csv::format(p.threshold) << ',' << csv::format(p.fp_per_scan) << ',' << csv::format(p.sensitivity)
       << '\n';
  }
  os << "\noperating_point,sensitivity\n";
  for (std::size_t k = 0; k < kOperatingPoints.size(); ++k) {
    os << csv::format(kOperatingPoints[k]) << ',' << csv::format(r.sensitivities[k]) << '\n';
  }
  os << "average," << csv::format(r.average) << '\n';
}

void emit_curve(const FrocResult& r, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  emit_curve(r, os);
  if (!os) throw Error("write failed: " + path.string());
}

FrocResult parse_curve(std::istream& is, const std::string& source) {
  FrocResult r;
  std::string line;
  std::size_t n = 0;
  int section = 0;  // 0 curve header, 1 curve rows, 2 summary header, 3 summary rows
  std::size_t k = 0;
  bool have_average = false;
  while (std::getline(is, line)) {
    ++n;
    const std::string where = source + ": line " + std::to_string(n);
    const auto t = csv::trim(line);
    if (section == 0) {
      if (t != "threshold,fp_per_scan,sensitivity") throw ParseError(where + ": bad curve header");
      section = 1;
    } else if (section == 1) {
      if (t.empty()) {
        section = 2;
        continue;
      }
      const auto f = csv::split(t);
      if (f.size() != 3) throw ParseError(where + ": expected 3 fields");
      r.curve.push_back({csv::to_double(f[0], where), csv::to_double(f[1], where), csv::to_double(f[2], where)});
    } else if (section == 2) {
      if (t != "operating_point,sensitivity") throw ParseError(where + ": bad summary header");
      section = 3;
    } else {
      if (t.empty()) continue;
      const auto f = csv::split(t);
      if (f.size() != 2) throw ParseError(where + ": expected 2 fields");
      if (f[0] == "average") {
        r.average = csv::to_double(f[1], where);
        have_average = true;
      } else {
        if (k >= kOperatingPoints.size() || csv::to_double(f[0], where) != kOperatingPoints[k]) {
          throw ParseError(where + ": unexpected operating point " + f[0]);
        }
        r.sensitivities[k++] = csv::to_double(f[1], where);
      }
    }
  }
  if (k != kOperatingPoints.size() || !have_average) throw ParseError(source + ": incomplete summary block");
  return r;
}

FrocResult parse_curve(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path.string());
  return parse_curve(is, path.string());
}

std::vector<Candidate> parse_candidates(std::istream& is, const std::string& source) {
  std::vector<Candidate> out;
  for (const auto& row : csv::read_rows(is, source)) {
    const std::string where = source + ": line " + std::to_string(row.line);
    if (row.fields.size() != 5) {
      throw ParseError(where + ": expected 5 fields, got " + std::to_string(row.fields.size()));
    }
    Candidate c;
    c.series_id = row.fields[0];
    if (c.series_id.empty()) throw ParseError(where + ": empty series id");
    for (int a = 0; a < 3; ++a) c.center[a] = csv::to_double(row.fields[a + 1], where);
    c.probability = csv::to_double(row.fields[4], where);
    if (c.probability < 0.0 || c.probability > 1.0) throw ParseError(where + ": probability outside [0, 1]");
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Candidate> parse_candidates(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path.string());
  return parse_candidates(is, path.string());
}

void write_candidates(const fs::path& path, const std::vector<Candidate>& cands) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "seriesuid,coordX,coordY,coordZ,probability\n";
  for (const auto& c : cands) {
    os << c.series_id << ',' << csv::format(c.center[0]) << ',' << csv::format(c.center[1]) << ','
       << csv::format(c.center[2]) << ',' << csv::format(c.probability) << '\n';
  }
}

}  // namespace sgda::froc
