// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Universal adapter bank with soft domain assignment.
//
// For each directional group the N adapters' excitation vectors form the
// columns of a C x N matrix. A per-direction linear layer over the pooled
// group, followed by a softmax over adapters, yields N mixing weights; the
// mixed response is sigmoid-gated onto the group exactly like a single SGSE
// adapter would do with its own response.

#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgda/sgse.hpp"

namespace sgda {

struct BankConfig {
  std::size_t channels = 0;
  std::size_t groups = 1;
  std::size_t reduction = 16;
  std::size_t adapters = 3;

  SgseConfig sgse() const { return {channels, groups, reduction}; }
  void validate() const;
};

struct BankWeights {
  std::vector<SgseWeights> adapters;
  /// Per direction, [N, C]. Shared by all groups of the direction.
  std::array<ad::Parameter, 3> assign;

  ad::Parameter& assignment(Direction d) { return assign[static_cast<std::size_t>(d)]; }
  std::size_t adapter_count() const { return adapters.size(); }
};

BankWeights make_bank_weights(const BankConfig& cfg,
                              std::span<const Direction> directions = kAllDirections);

struct AssignmentKey {
  std::string dataset;
  std::string module;
  Direction direction = Direction::axial;
  std::size_t group = 0;

  auto operator<=>(const AssignmentKey&) const = default;
};

struct AssignmentStats {
  std::vector<double> sum;
  std::size_t count = 0;

  std::vector<double> mean() const;
};

/// Running per-(dataset, module, direction, group) averages of the soft
/// assignment vectors. Single-threaded accumulation; merge() combines records
/// filled by separate workers.
class AssignmentRecord {
 public:
  void add(const AssignmentKey& key, std::span<const double> weights);
  void merge(const AssignmentRecord& other);

  const std::map<AssignmentKey, AssignmentStats>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

  /// [{module, direction, group, dataset, mean_weights, samples}, ...]
  nlohmann::json to_json() const;

 private:
  std::map<AssignmentKey, AssignmentStats> entries_;
};

/// Where an SGDA instance reports its assignments.
struct Recorder {
  AssignmentRecord* record = nullptr;
  std::string dataset;
  std::string module;
};

namespace domain_attention {

/// [C, N]: column j is adapter j's excitation of the group.
ad::Var bank_project(ad::Tape* tape, const ad::Var& xg, BankWeights& w, Direction d);

/// softmax(W_DA avgpool(xg)) over the N adapters.
ad::Var assign(ad::Tape* tape, const ad::Var& xg, ad::Parameter& w_da);

/// (modulated group, assignment vector).
std::pair<ad::Var, ad::Var> modulate_group(ad::Tape* tape, const ad::Var& xg, BankWeights& w,
                                           Direction d);

ad::Var directional_map(ad::Tape* tape, const ad::Var& x, BankWeights& w, const BankConfig& cfg,
                        Direction d, const Recorder* recorder = nullptr);

struct DirectionalMaps {
  ad::Var axial, coronal, sagittal;
};

DirectionalMaps directional_forward(ad::Tape* tape, const ad::Var& x, BankWeights& w,
                                    const BankConfig& cfg, const Recorder* recorder = nullptr);

}  // namespace domain_attention
}  // namespace sgda
