// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/sgse.hpp"

#include <string>

#include "sgda/errors.hpp"

namespace sgda {

std::string_view direction_name(Direction d) {
  switch (d) {
    case Direction::axial: return "axial";
    case Direction::coronal: return "coronal";
    case Direction::sagittal: return "sagittal";
  }
  return "?";
}

std::optional<Direction> parse_direction(std::string_view name) {
  for (Direction d : kAllDirections) {
    if (direction_name(d) == name) return d;
  }
  if (name == "a") return Direction::axial;
  if (name == "c") return Direction::coronal;
  if (name == "s") return Direction::sagittal;
  return std::nullopt;
}

void SgseConfig::validate() const {
  if (channels == 0) throw ConfigError("channels must be positive");
  if (groups == 0) throw ConfigError("groups must be positive");
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("channels " + std::to_string(channels) + " not divisible by reduction " +
                      std::to_string(reduction));
  }
}

void SgseConfig::validate_input(const Shape& x) const {
  if (x.size() != 4) throw DimensionError("expected a (C, D, H, W) map, got " + shape_str(x));
  if (x[0] != channels) {
    throw DimensionError("map has " + std::to_string(x[0]) + " channels, config expects " +
                         std::to_string(channels));
  }
  for (Direction d : kAllDirections) {
    const std::size_t extent = x[spatial_axis(d)];
    if (extent % groups != 0) {
      static constexpr const char* kAxis[] = {"depth", "height", "width"};
      throw ConfigError(std::string(kAxis[spatial_axis(d) - 1]) + " extent " +
                        std::to_string(extent) + " (" + std::string(direction_name(d)) +
                        ") is not divisible by " + std::to_string(groups) + " groups");
    }
  }
}

SgseWeights make_sgse_weights(std::size_t channels, std::size_t reduction,
                              std::span<const Direction> directions) {
  SgseWeights w;
  const std::size_t hidden = channels / reduction;
  for (Direction d : directions) {
    w[d].w1 = ad::Parameter(Tensor({hidden, channels}, 0.0));
    w[d].w2 = ad::Parameter(Tensor({channels, hidden}, 0.0));
  }
  return w;
}

namespace sgse {

std::vector<ad::Var> group_split(const ad::Var& x, Direction d, std::size_t groups) {
  const std::size_t axis = spatial_axis(d);
  if (x.shape().size() != 4) throw DimensionError("group_split expects a (C, D, H, W) map");
  if (groups == 0 || x.dim(axis) % groups != 0) {
    static constexpr const char* kAxis[] = {"depth", "height", "width"};
    throw ConfigError(std::string(kAxis[axis - 1]) + " extent " + std::to_string(x.dim(axis)) +
                      " is not divisible by " + std::to_string(groups) + " groups");
  }
  return ad::split(x, axis, groups);
}

ad::Var excitation(ad::Tape* tape, const ad::Var& xg, SgseWeights& w, Direction d) {
  ExcitationWeights& ew = w[d];
  const std::size_t c = xg.dim(0);
  if (ew.w1.value.ndim() != 2 || ew.w1.value.dim(1) != c || ew.w2.value.dim(0) != c ||
      ew.w2.value.dim(1) != ew.w1.value.dim(0)) {
    throw DimensionError("excitation weights for " + std::string(direction_name(d)) +
                         " do not match " + std::to_string(c) + " channels");
  }
  ad::Var pooled = ad::reshape(ad::global_avg_pool3d(xg), {c, 1});
  ad::Var hidden = ad::relu(ad::matmul(ad::bind(tape, ew.w1), pooled));
  ad::Var y = ad::matmul(ad::bind(tape, ew.w2), hidden);
  return ad::reshape(y, {c});
}

ad::Var modulate(const ad::Var& xg, const ad::Var& y) {
  return ad::channel_scale(xg, ad::sigmoid(y));
}

ad::Var directional_map(ad::Tape* tape, const ad::Var& x, SgseWeights& w, const SgseConfig& cfg,
                        Direction d) {
  std::vector<ad::Var> groups = group_split(x, d, cfg.groups);
  for (ad::Var& g : groups) g = modulate(g, excitation(tape, g, w, d));
  return ad::concat(groups, spatial_axis(d));
}

ad::Var forward(ad::Tape* tape, const ad::Var& x, SgseWeights& w, const SgseConfig& cfg) {
  cfg.validate();
  cfg.validate_input(x.shape());
  ad::Var xa = directional_map(tape, x, w, cfg, Direction::axial);
  ad::Var xc = directional_map(tape, x, w, cfg, Direction::coronal);
  ad::Var xs = directional_map(tape, x, w, cfg, Direction::sagittal);
  return ad::scale(ad::add(ad::add(xa, xc), xs), 1.0 / 3.0);
}

}  // namespace sgse
}  // namespace sgda
