// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/sgda_block.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sgda/errors.hpp"

namespace sgda {

void SgdaConfig::validate() const {
  bank().validate();
  if (directions.empty()) throw ConfigError("SGDA needs at least one direction");
  std::set<Direction> seen(directions.begin(), directions.end());
  if (seen.size() != directions.size()) throw ConfigError("duplicate direction in SGDA config");
  if (uses_cross_attention() && channels % 2 != 0) {
    throw ConfigError("cross attention needs an even channel count, got " +
                      std::to_string(channels));
  }
}

void SgdaConfig::validate_input(const Shape& x) const {
  if (x.size() != 4) throw DimensionError("SGDA expects a (C, D, H, W) map, got " + shape_str(x));
  if (x[0] != channels) {
    throw DimensionError("SGDA configured for " + std::to_string(channels) +
                         " channels, map has " + std::to_string(x[0]));
  }
  for (Direction d : directions) {
    const std::size_t extent = x[spatial_axis(d)];
    if (extent % groups != 0) {
      static constexpr const char* kAxis[] = {"depth", "height", "width"};
      throw ConfigError(std::string(kAxis[spatial_axis(d) - 1]) + " extent " +
                        std::to_string(extent) + " is not divisible by " +
                        std::to_string(groups) + " groups");
    }
  }
  if (uses_cross_attention()) cross_attention::validate(x, attention_groups());
}

void to_json(nlohmann::json& j, const SgdaConfig& c) {
  std::vector<std::string> dirs;
  for (Direction d : c.directions) dirs.emplace_back(direction_name(d));
  j = {{"channels", c.channels},
       {"groups", c.groups},
       {"adapters", c.adapters},
       {"reduction", c.reduction},
       {"directions", dirs},
       {"fuse", c.fuse == Fuse::mean_only ? "mean_only" : "cross_attention"},
       {"grouped_ca", c.grouped_ca}};
}

void from_json(const nlohmann::json& j, SgdaConfig& c) {
  SgdaConfig d;
  c.channels = j.value("channels", d.channels);
  c.groups = j.value("groups", d.groups);
  c.adapters = j.value("adapters", d.adapters);
  c.reduction = j.value("reduction", d.reduction);
  c.grouped_ca = j.value("grouped_ca", d.grouped_ca);
  const std::string fuse = j.value("fuse", std::string("cross_attention"));
  if (fuse == "mean_only") {
    c.fuse = Fuse::mean_only;
  } else if (fuse == "cross_attention") {
    c.fuse = Fuse::cross_attention;
  } else {
    throw ConfigError("unknown fuse mode '" + fuse + "'");
  }
  c.directions = d.directions;
  if (j.contains("directions")) {
    c.directions.clear();
    for (const auto& name : j.at("directions")) {
      auto dir = parse_direction(name.get<std::string>());
      if (!dir) throw ConfigError("unknown direction '" + name.get<std::string>() + "'");
      c.directions.push_back(*dir);
    }
  }
}

void SgdaParams::visit(const SgdaConfig& cfg, const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t j = 0; j < bank.adapters.size(); ++j) {
    for (Direction d : cfg.directions) {
      const std::string base =
          prefix + "bank.adapter" + std::to_string(j) + "." + std::string(direction_name(d));
      fn(base + ".w1", bank.adapters[j][d].w1);
      fn(base + ".w2", bank.adapters[j][d].w2);
    }
  }
  for (Direction d : cfg.directions) {
    fn(prefix + "bank.assign." + std::string(direction_name(d)), bank.assignment(d));
  }
  if (ca) {
    fn(prefix + "ca.theta", ca->theta);
    fn(prefix + "ca.phi", ca->phi);
    fn(prefix + "ca.g", ca->g);
    fn(prefix + "ca.out", ca->ca);
  }
}

std::size_t parameter_count(const SgdaConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  const std::size_t dirs = cfg.directions.size();
  std::size_t n = dirs * cfg.adapters * 2 * c * (c / cfg.reduction);
  n += dirs * cfg.adapters * c;
  if (cfg.uses_cross_attention()) n += 2 * c * c;
  return n;
}

void fill_uniform_fan_in(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

SgdaParams init_params(const SgdaConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  SgdaParams p;
  p.bank = make_bank_weights(cfg.bank(), cfg.directions);
  for (SgseWeights& adapter : p.bank.adapters) {
    for (Direction d : cfg.directions) {
      fill_uniform_fan_in(adapter[d].w1.value, cfg.channels, rng);
      fill_uniform_fan_in(adapter[d].w2.value, cfg.channels / cfg.reduction, rng);
    }
  }
  if (cfg.uses_cross_attention()) {
    p.ca = make_cross_attn_weights(cfg.channels);
    fill_uniform_fan_in(p.ca->theta.value, cfg.channels, rng);
    fill_uniform_fan_in(p.ca->phi.value, cfg.channels, rng);
    fill_uniform_fan_in(p.ca->g.value, cfg.channels, rng);
    fill_uniform_fan_in(p.ca->ca.value, cfg.channels / 2, rng);
  }
  return p;
}

SgdaParams init_params(const SgdaConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return init_params(cfg, rng);
}

ad::Var sgda_forward(ad::Tape* tape, const ad::Var& x, SgdaParams& p, const SgdaConfig& cfg,
                     const Recorder* recorder) {
  cfg.validate();
  cfg.validate_input(x.shape());
  const BankConfig bank = cfg.bank();
  std::vector<ad::Var> maps;
  maps.reserve(cfg.directions.size());
  for (Direction d : cfg.directions) {
    maps.push_back(domain_attention::directional_map(tape, x, p.bank, bank, d, recorder));
  }
  if (maps.size() == 1) return maps[0];
  if (!cfg.uses_cross_attention()) {
    ad::Var total = maps[0];
    for (std::size_t i = 1; i < maps.size(); ++i) total = ad::add(total, maps[i]);
    return ad::scale(total, 1.0 / static_cast<double>(maps.size()));
  }
  if (!p.ca) throw ConfigError("cross attention enabled but its weights are missing");
  // maps follow cfg.directions order; cross attention needs them by role.
  ad::Var by_dir[3];
  for (std::size_t i = 0; i < maps.size(); ++i) {
    by_dir[static_cast<std::size_t>(cfg.directions[i])] = maps[i];
  }
  if (cfg.grouped_ca) {
    return cross_attention::cross_attend_grouped(tape, by_dir[0], by_dir[1], by_dir[2], *p.ca,
                                                 {cfg.attention_groups()});
  }
  return cross_attention::cross_attend(tape, by_dir[0], by_dir[1], by_dir[2], *p.ca);
}

// ---- residual block -------------------------------------------------------

void ResidualBlockConfig::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ConfigError("residual block channels must be positive");
  if (stride != 1 && stride != 2) throw ConfigError("residual block stride must be 1 or 2");
  if (sgda) {
    if (sgda->channels != out_channels) {
      throw ConfigError("SGDA channels (" + std::to_string(sgda->channels) +
                        ") must equal block output channels (" + std::to_string(out_channels) + ")");
    }
    sgda->validate();
  }
}

void to_json(nlohmann::json& j, const ResidualBlockConfig& c) {
  j = {{"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"stride", c.stride}};
  if (c.sgda) {
    j["sgda"] = *c.sgda;
  } else {
    j["sgda"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, ResidualBlockConfig& c) {
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.out_channels = j.at("out_channels").get<std::size_t>();
  c.stride = j.value("stride", std::size_t{1});
  c.sgda.reset();
  if (j.contains("sgda") && !j.at("sgda").is_null()) c.sgda = j.at("sgda").get<SgdaConfig>();
}

void ResidualBlock3D::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "conv1.w", conv1_w);
  fn(prefix + "conv1.b", conv1_b);
  fn(prefix + "conv2.w", conv2_w);
  fn(prefix + "conv2.b", conv2_b);
  if (proj_w) fn(prefix + "proj.w", *proj_w);
  if (sgda) sgda->visit(*config.sgda, prefix + "sgda.", fn);
}

ResidualBlock3D make_residual_block(const ResidualBlockConfig& cfg, std::string name,
                                    std::mt19937_64& rng) {
  cfg.validate();
  ResidualBlock3D b;
  b.config = cfg;
  b.name = std::move(name);
  const std::size_t ci = cfg.in_channels, co = cfg.out_channels;
  b.conv1_w = ad::Parameter(Tensor({co, ci, 3, 3, 3}));
  fill_uniform_fan_in(b.conv1_w.value, ci * 27, rng);
  b.conv1_b = ad::Parameter(Tensor({co}, 0.0));
  b.conv2_w = ad::Parameter(Tensor({co, co, 3, 3, 3}));
  fill_uniform_fan_in(b.conv2_w.value, co * 27, rng);
  b.conv2_b = ad::Parameter(Tensor({co}, 0.0));
  if (ci != co || cfg.stride != 1) {
    b.proj_w = ad::Parameter(Tensor({co, ci, 1, 1, 1}));
    fill_uniform_fan_in(b.proj_w->value, ci, rng);
  }
  if (cfg.sgda) b.sgda = init_params(*cfg.sgda, rng);
  return b;
}

ad::Var residual_forward(ad::Tape* tape, const ad::Var& x, ResidualBlock3D& block,
                         const Recorder* recorder) {
  const ResidualBlockConfig& cfg = block.config;
  if (x.shape().size() != 4 || x.dim(0) != cfg.in_channels) {
    throw DimensionError("block " + block.name + " expects " + std::to_string(cfg.in_channels) +
                         " input channels, got " + shape_str(x.shape()));
  }
  ad::Var r = ad::conv3d(ad::relu(x), ad::bind(tape, block.conv1_w), cfg.stride, 1);
  r = ad::channel_bias(r, ad::bind(tape, block.conv1_b));
  r = ad::conv3d(ad::relu(r), ad::bind(tape, block.conv2_w), 1, 1);
  r = ad::channel_bias(r, ad::bind(tape, block.conv2_b));
  if (block.sgda) {
    if (recorder) {
      Recorder scoped = *recorder;
      scoped.module = block.name;
      r = sgda_forward(tape, r, *block.sgda, *cfg.sgda, &scoped);
    } else {
      r = sgda_forward(tape, r, *block.sgda, *cfg.sgda, nullptr);
    }
  }
  ad::Var shortcut = block.proj_w ? ad::conv3d(x, ad::bind(tape, *block.proj_w), cfg.stride, 0) : x;
  return ad::add(shortcut, r);
}

}  // namespace sgda
