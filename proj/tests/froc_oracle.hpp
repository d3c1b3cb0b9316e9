// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force FROC: rematch every candidate against every nodule from scratch
// at each distinct threshold.

#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "sgda/froc.hpp"

namespace sgda::oracle {

struct SweepPoint {
  double threshold, fp_per_scan, sensitivity;
};

inline std::vector<SweepPoint> brute_sweep(const std::vector<froc::Candidate>& cands,
                                           const std::vector<ct::Annotation>& anns, std::size_t scans) {
  std::vector<double> ts;
  for (const auto& c : cands) ts.push_back(c.probability);
  std::sort(ts.rbegin(), ts.rend());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::vector<SweepPoint> out;
  for (double t : ts) {
    std::vector<bool> hit(anns.size(), false);
    std::size_t fp = 0;
    for (const auto& c : cands) {
      if (c.probability < t) continue;
      bool near = false;
      for (std::size_t a = 0; a < anns.size(); ++a) {
        if (anns[a].series_id != c.series_id) continue;
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) d2 += (c.center[k] - anns[a].center[k]) * (c.center[k] - anns[a].center[k]);
        if (d2 <= anns[a].radius() * anns[a].radius()) {
          hit[a] = true;
          near = true;
        }
      }
      if (!near) ++fp;
    }
    std::size_t h = 0;
    for (bool b : hit) h += b;
    out.push_back({t, double(fp) / double(scans), double(h) / double(anns.size())});
  }
  return out;
}

inline std::vector<double> brute_sensitivities(const std::vector<SweepPoint>& sweep) {
  std::vector<double> s;
  for (double budget : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    double best = 0.0;
    for (const auto& p : sweep)
      if (p.fp_per_scan <= budget && p.sensitivity > best) best = p.sensitivity;
    s.push_back(best);
  }
  return s;
}

struct FrocInstance {
  std::vector<froc::Candidate> cands;
  std::vector<ct::Annotation> anns;
  std::size_t scans = 1;
};

/// <= 5 scans, 1..8 nodules, <= 20 candidates on a coarse grid so that ties
/// in probability and exact-radius distances both occur.
inline FrocInstance random_froc_instance(std::mt19937_64& rng) {
  FrocInstance f;
  f.scans = 1 + rng() % 5;
  const std::size_t nodules = 1 + rng() % 8, cands = rng() % 21;
  auto coord = [&] { return static_cast<double>(rng() % 21); };
  for (std::size_t i = 0; i < nodules; ++i) {
    f.anns.push_back({"s" + std::to_string(rng() % f.scans), {coord(), coord(), coord()},
                      2.0 * static_cast<double>(1 + rng() % 6)});
  }
  for (std::size_t i = 0; i < cands; ++i) {
    froc::Candidate c;
    c.series_id = "s" + std::to_string(rng() % f.scans);
    if (rng() % 2 == 0) {
      const auto& a = f.anns[rng() % f.anns.size()];
      c.series_id = a.series_id;
      c.center = a.center;
      c.center[rng() % 3] += static_cast<double>(rng() % 8);
    } else {
      c.center = {coord(), coord(), coord()};
    }
    c.probability = static_cast<double>(rng() % 11) / 10.0;
    f.cands.push_back(c);
  }
  return f;
}

/// The documented two-scan, three-nodule fixture.
inline FrocInstance froc_fixture() {
  FrocInstance f;
  f.scans = 2;
  f.anns = {{"A", {10, 10, 10}, 10}, {"A", {30, 30, 30}, 8}, {"B", {20, 20, 20}, 6}};
  f.cands = {{"A", {11, 10, 10}, 0.9}, {"A", {50, 50, 50}, 0.8}, {"A", {30, 30, 33}, 0.7},
             {"B", {20, 20, 24}, 0.6}, {"B", {5, 5, 5}, 0.5}};
  return f;
}

}  // namespace sgda::oracle
