// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Slice grouped squeeze-and-excitation adapter.
//
// The feature map is cut into G slabs along each anatomical direction. Every
// slab is squeezed by global average pooling, excited through a two-layer
// bottleneck (C -> C/r -> C, ReLU between, no biases) and rescaled channel-wise
// by the sigmoid of the excitation. The bottleneck weights are shared by all
// slabs of a direction and distinct across directions. The three directional
// maps are averaged.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sgda/autodiff.hpp"

namespace sgda {

enum class Direction : std::size_t { axial = 0, coronal = 1, sagittal = 2 };

inline constexpr std::array<Direction, 3> kAllDirections = {Direction::axial, Direction::coronal,
                                                            Direction::sagittal};

std::string_view direction_name(Direction d);
std::optional<Direction> parse_direction(std::string_view name);

/// Axis of a (C, D, H, W) map cut by a direction: axial=D, coronal=H, sagittal=W.
constexpr std::size_t spatial_axis(Direction d) { return static_cast<std::size_t>(d) + 1; }

struct SgseConfig {
  std::size_t channels = 0;
  std::size_t groups = 1;
  std::size_t reduction = 16;

  std::size_t hidden() const { return channels / reduction; }
  /// Throws ConfigError unless channels is a positive multiple of reduction.
  void validate() const;
  /// Throws ConfigError naming the axis that G does not divide.
  void validate_input(const Shape& x) const;
};

/// Bottleneck pair of one direction: w1 is [C/r, C], w2 is [C, C/r].
struct ExcitationWeights {
  ad::Parameter w1;
  ad::Parameter w2;
};

struct SgseWeights {
  std::array<ExcitationWeights, 3> dirs;

  ExcitationWeights& operator[](Direction d) { return dirs[static_cast<std::size_t>(d)]; }
  const ExcitationWeights& operator[](Direction d) const { return dirs[static_cast<std::size_t>(d)]; }
};

/// Zero-filled weights for the given directions (others stay empty).
SgseWeights make_sgse_weights(std::size_t channels, std::size_t reduction,
                              std::span<const Direction> directions = kAllDirections);

namespace sgse {

std::vector<ad::Var> group_split(const ad::Var& x, Direction d, std::size_t groups);

/// W2 relu(W1 avgpool(xg)), a length-C pre-sigmoid response.
ad::Var excitation(ad::Tape* tape, const ad::Var& xg, SgseWeights& w, Direction d);

/// xg scaled channel-wise by sigmoid(y).
ad::Var modulate(const ad::Var& xg, const ad::Var& y);

/// Modulated groups of one direction, concatenated back into a full map.
ad::Var directional_map(ad::Tape* tape, const ad::Var& x, SgseWeights& w, const SgseConfig& cfg,
                        Direction d);

ad::Var forward(ad::Tape* tape, const ad::Var& x, SgseWeights& w, const SgseConfig& cfg);

}  // namespace sgse
}  // namespace sgda
