// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full slice grouped domain attention module and the 3D residual block it
// is plugged into.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgda/cross_attention.hpp"
#include "sgda/domain_attention.hpp"

namespace sgda {

enum class Fuse { mean_only, cross_attention };

struct SgdaConfig {
  std::size_t channels = 0;
  std::size_t groups = 4;
  std::size_t adapters = 3;
  std::size_t reduction = 16;
  std::vector<Direction> directions = {kAllDirections.begin(), kAllDirections.end()};
  Fuse fuse = Fuse::cross_attention;
  bool grouped_ca = true;

  /// Cross attention needs all three maps; other direction subsets fall back
  /// to the mean (or the single map).
  bool uses_cross_attention() const {
    return fuse == Fuse::cross_attention && directions.size() == 3;
  }
  std::size_t attention_groups() const { return grouped_ca ? groups : 1; }
  BankConfig bank() const { return {channels, groups, reduction, adapters}; }

  void validate() const;
  void validate_input(const Shape& x) const;
};

void to_json(nlohmann::json& j, const SgdaConfig& c);
void from_json(const nlohmann::json& j, SgdaConfig& c);

using ParamVisitor = std::function<void(const std::string& name, ad::Parameter& p)>;

struct SgdaParams {
  BankWeights bank;
  std::optional<CrossAttnWeights> ca;

  /// Visits every learnable tensor of the enabled directions, names prefixed.
  void visit(const SgdaConfig& cfg, const std::string& prefix, const ParamVisitor& fn);
};

/// dirs*N*2C^2/r + dirs*N*C + [cross attention]*2C^2.
std::size_t parameter_count(const SgdaConfig& cfg);

/// Bottleneck and embedding weights ~ U(-b, b), b = sqrt(1/fan_in);
/// assignment matrices zero so routing starts uniform.
SgdaParams init_params(const SgdaConfig& cfg, std::uint64_t seed);
SgdaParams init_params(const SgdaConfig& cfg, std::mt19937_64& rng);

ad::Var sgda_forward(ad::Tape* tape, const ad::Var& x, SgdaParams& p, const SgdaConfig& cfg,
                     const Recorder* recorder = nullptr);

/// Fills a tensor with U(-b, b), b = sqrt(1/fan_in).
void fill_uniform_fan_in(Tensor& t, std::size_t fan_in, std::mt19937_64& rng);

struct ResidualBlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::optional<SgdaConfig> sgda;  // channels must equal out_channels

  void validate() const;
};

void to_json(nlohmann::json& j, const ResidualBlockConfig& c);
void from_json(const nlohmann::json& j, ResidualBlockConfig& c);

/// relu -> conv3 (stride) -> relu -> conv3 -> [SGDA] -> + shortcut.
/// The shortcut is identity, or a strided 1x1x1 projection when the channel
/// count or resolution changes.
struct ResidualBlock3D {
  ResidualBlockConfig config;
  std::string name;
  ad::Parameter conv1_w, conv1_b, conv2_w, conv2_b;
  std::optional<ad::Parameter> proj_w;
  std::optional<SgdaParams> sgda;

  bool has_projection() const { return proj_w.has_value(); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

ResidualBlock3D make_residual_block(const ResidualBlockConfig& cfg, std::string name,
                                    std::mt19937_64& rng);

/// `recorder->module` is replaced by the block name for its SGDA.
ad::Var residual_forward(ad::Tape* tape, const ad::Var& x, ResidualBlock3D& block,
                         const Recorder* recorder = nullptr);

}  // namespace sgda
