// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/domain_attention.hpp"

#include <cmath>

#include "sgda/errors.hpp"

namespace sgda {

void BankConfig::validate() const {
  sgse().validate();
  if (adapters == 0) throw ConfigError("adapter bank needs at least one adapter");
}

BankWeights make_bank_weights(const BankConfig& cfg, std::span<const Direction> directions) {
  cfg.validate();
  BankWeights w;
  for (std::size_t j = 0; j < cfg.adapters; ++j) {
    w.adapters.push_back(make_sgse_weights(cfg.channels, cfg.reduction, directions));
  }
  for (Direction d : directions) {
    w.assignment(d) = ad::Parameter(Tensor({cfg.adapters, cfg.channels}, 0.0));
  }
  return w;
}

std::vector<double> AssignmentStats::mean() const {
  std::vector<double> m(sum.size(), 0.0);
  if (count == 0) return m;
  for (std::size_t i = 0; i < sum.size(); ++i) m[i] = sum[i] / static_cast<double>(count);
  return m;
}

void AssignmentRecord::add(const AssignmentKey& key, std::span<const double> weights) {
  AssignmentStats& s = entries_[key];
  if (s.sum.empty()) s.sum.assign(weights.size(), 0.0);
  if (s.sum.size() != weights.size()) {
    throw DimensionError("assignment vector length changed for module " + key.module);
  }
  for (std::size_t i = 0; i < weights.size(); ++i) s.sum[i] += weights[i];
  ++s.count;
}

void AssignmentRecord::merge(const AssignmentRecord& other) {
  for (const auto& [key, stats] : other.entries_) {
    AssignmentStats& s = entries_[key];
    if (s.sum.empty()) s.sum.assign(stats.sum.size(), 0.0);
    if (s.sum.size() != stats.sum.size()) {
      throw DimensionError("cannot merge assignment records with different adapter counts");
    }
    for (std::size_t i = 0; i < s.sum.size(); ++i) s.sum[i] += stats.sum[i];
    s.count += stats.count;
  }
}

nlohmann::json AssignmentRecord::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [key, stats] : entries_) {
    out.push_back({{"module", key.module},
                   {"direction", std::string(direction_name(key.direction))},
                   {"group", key.group},
                   {"dataset", key.dataset},
                   {"mean_weights", stats.mean()},
                   {"samples", stats.count}});
  }
  return out;
}

namespace domain_attention {

ad::Var bank_project(ad::Tape* tape, const ad::Var& xg, BankWeights& w, Direction d) {
  if (w.adapters.empty()) throw ConfigError("adapter bank is empty");
  const std::size_t c = xg.dim(0);
  std::vector<ad::Var> columns;
  columns.reserve(w.adapters.size());
  for (SgseWeights& adapter : w.adapters) {
    columns.push_back(ad::reshape(sgse::excitation(tape, xg, adapter, d), {c, 1}));
  }
  return ad::concat(columns, 1);
}

ad::Var assign(ad::Tape* tape, const ad::Var& xg, ad::Parameter& w_da) {
  const std::size_t c = xg.dim(0);
  if (w_da.value.ndim() != 2 || w_da.value.dim(1) != c) {
    throw DimensionError("assignment matrix " + shape_str(w_da.value.shape()) + " for " +
                         std::to_string(c) + " channels");
  }
  const std::size_t n = w_da.value.dim(0);
  ad::Var pooled = ad::reshape(ad::global_avg_pool3d(xg), {c, 1});
  ad::Var logits = ad::reshape(ad::matmul(ad::bind(tape, w_da), pooled), {n});
  return ad::softmax(logits, 0);
}

std::pair<ad::Var, ad::Var> modulate_group(ad::Tape* tape, const ad::Var& xg, BankWeights& w,
                                           Direction d) {
  ad::Var uni = bank_project(tape, xg, w, d);
  ad::Var weights = assign(tape, xg, w.assignment(d));
  if (weights.dim(0) != uni.dim(1)) {
    throw DimensionError("assignment rows (" + std::to_string(weights.dim(0)) +
                         ") differ from adapter count (" + std::to_string(uni.dim(1)) + ")");
  }
  const std::size_t c = xg.dim(0), n = uni.dim(1);
  ad::Var y = ad::reshape(ad::matmul(uni, ad::reshape(weights, {n, 1})), {c});
  return {sgse::modulate(xg, y), weights};
}

ad::Var directional_map(ad::Tape* tape, const ad::Var& x, BankWeights& w, const BankConfig& cfg,
                        Direction d, const Recorder* recorder) {
  std::vector<ad::Var> groups = sgse::group_split(x, d, cfg.groups);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [modulated, weights] = modulate_group(tape, groups[i], w, d);
    if (recorder && recorder->record) {
      recorder->record->add({recorder->dataset, recorder->module, d, i}, weights.value().data());
    }
    groups[i] = modulated;
  }
  return ad::concat(groups, spatial_axis(d));
}

DirectionalMaps directional_forward(ad::Tape* tape, const ad::Var& x, BankWeights& w,
                                    const BankConfig& cfg, const Recorder* recorder) {
  cfg.validate();
  cfg.sgse().validate_input(x.shape());
  return {directional_map(tape, x, w, cfg, Direction::axial, recorder),
          directional_map(tape, x, w, cfg, Direction::coronal, recorder),
          directional_map(tape, x, w, cfg, Direction::sagittal, recorder)};
}

}  // namespace domain_attention
}  // namespace sgda
