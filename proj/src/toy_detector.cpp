// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/toy_detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "sgda/checkpoint.hpp"
#include "sgda/csv.hpp"
#include "sgda/errors.hpp"
#include "sgda/parallel.hpp"

namespace sgda::toy {

// ---- configuration --------------------------------------------------------

void NetConfig::validate() const {
  if (base_channels < 2) throw ConfigError("base_channels must be at least 2");
  if (datasets.empty()) throw ConfigError("network needs at least one dataset head");
  std::set<std::string> seen;
  for (const auto& d : datasets) {
    if (d.empty()) throw ConfigError("empty dataset id");
    if (!seen.insert(d).second) throw ConfigError("duplicate dataset id '" + d + "'");
  }
  if (any_sgda()) {
    const std::array<std::size_t, 3> widths = {base_channels, 2 * base_channels, 2 * base_channels};
    for (std::size_t b = 0; b < 3; ++b) {
      if (!sgda_blocks[b]) continue;
      SgdaConfig s;
      s.channels = widths[b];
      s.groups = sgda_groups;
      s.adapters = sgda_adapters;
      s.reduction = sgda_reduction;
      s.fuse = sgda_fuse;
      s.validate();
    }
  }
}

std::size_t NetConfig::extent_multiple() const {
  if (!any_sgda()) return 4;
  // The deepest SGDA runs at 1/4 resolution; cross attention pools once more.
  return (sgda_fuse == Fuse::cross_attention ? 8 : 4) * sgda_groups;
}

void to_json(nlohmann::json& j, const NetConfig& c) {
  j = {{"base_channels", c.base_channels},
       {"sgda_blocks", c.sgda_blocks},
       {"sgda_groups", c.sgda_groups},
       {"sgda_adapters", c.sgda_adapters},
       {"sgda_reduction", c.sgda_reduction},
       {"sgda_fuse", c.sgda_fuse == Fuse::mean_only ? "mean_only" : "cross_attention"},
       {"datasets", c.datasets}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
  const NetConfig def;
  c.base_channels = j.value("base_channels", def.base_channels);
  c.sgda_blocks = j.value("sgda_blocks", def.sgda_blocks);
  c.sgda_groups = j.value("sgda_groups", def.sgda_groups);
  c.sgda_adapters = j.value("sgda_adapters", def.sgda_adapters);
  c.sgda_reduction = j.value("sgda_reduction", def.sgda_reduction);
  const std::string fuse = j.value("sgda_fuse", std::string("cross_attention"));
  if (fuse == "mean_only") {
    c.sgda_fuse = Fuse::mean_only;
  } else if (fuse == "cross_attention") {
    c.sgda_fuse = Fuse::cross_attention;
  } else {
    throw ConfigError("unknown fuse mode '" + fuse + "'");
  }
  c.datasets = j.value("datasets", def.datasets);
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patch < 8) throw ConfigError("patch must be at least 8");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("gamma must lie in (0, 1]");
  if (nodule_fraction < 0.0 || nodule_fraction > 1.0) throw ConfigError("nodule_fraction must lie in [0, 1]");
  if (!std::is_sorted(milestones.begin(), milestones.end())) throw ConfigError("milestones must be ascending");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double v = lr;
  for (std::size_t m : milestones)
    if (epoch >= m) v *= gamma;
  return v;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},       {"steps_per_epoch", c.steps_per_epoch},
       {"batch_size", c.batch_size}, {"patch", c.patch},
       {"lr", c.lr},               {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}, {"milestones", c.milestones},
       {"gamma", c.gamma},         {"nodule_fraction", c.nodule_fraction},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig def;
  c.epochs = j.value("epochs", def.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", def.steps_per_epoch);
  c.batch_size = j.value("batch_size", def.batch_size);
  c.patch = j.value("patch", def.patch);
  c.lr = j.value("lr", def.lr);
  c.momentum = j.value("momentum", def.momentum);
  c.weight_decay = j.value("weight_decay", def.weight_decay);
  c.milestones = j.value("milestones", def.milestones);
  c.gamma = j.value("gamma", def.gamma);
  c.nodule_fraction = j.value("nodule_fraction", def.nodule_fraction);
  c.seed = j.value("seed", def.seed);
}

// ---- network --------------------------------------------------------------

void ToyNet::visit(const ParamVisitor& fn) {
  fn("stem.w", stem_w);
  fn("stem.b", stem_b);
  for (auto& b : blocks) b.visit(b.name + ".", fn);
  fn("lateral.w", lateral_w);
  fn("dec.w", dec_w);
  fn("dec.b", dec_b);
  for (const auto& d : config.datasets) {
    Head& h = heads.at(d);
    const std::string p = "head." + d + ".";
    fn(p + "heat.w", h.heat_w);
    fn(p + "heat.b", h.heat_b);
    fn(p + "radius.w", h.radius_w);
    fn(p + "radius.b", h.radius_b);
  }
}

std::vector<ad::NamedParameter> ToyNet::parameters() {
  std::vector<ad::NamedParameter> out;
  visit([&](const std::string& name, ad::Parameter& p) { out.push_back({name, &p}); });
  return out;
}

std::size_t ToyNet::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, ad::Parameter& p) { n += p.size(); });
  return n;
}

ToyNet make_net(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t C = cfg.base_channels;
  ToyNet net;
  net.config = cfg;
  net.stem_w = ad::Parameter(Tensor({C, 1, 3, 3, 3}));
  fill_uniform_fan_in(net.stem_w.value, 27, rng);
  net.stem_b = ad::Parameter(Tensor({C}));

  const std::array<std::size_t, 3> in = {C, C, 2 * C}, out = {C, 2 * C, 2 * C}, stride = {2, 2, 1};
  for (std::size_t b = 0; b < 3; ++b) {
    ResidualBlockConfig rc;
    rc.in_channels = in[b];
    rc.out_channels = out[b];
    rc.stride = stride[b];
    if (cfg.sgda_blocks[b]) {
      SgdaConfig s;
      s.channels = out[b];
      s.groups = cfg.sgda_groups;
      s.adapters = cfg.sgda_adapters;
      s.reduction = cfg.sgda_reduction;
      s.fuse = cfg.sgda_fuse;
      rc.sgda = s;
    }
    net.blocks.push_back(make_residual_block(rc, "block" + std::to_string(b + 1), rng));
  }
  net.lateral_w = ad::Parameter(Tensor({C, 2 * C}));
  fill_uniform_fan_in(net.lateral_w.value, 2 * C, rng);
  net.dec_w = ad::Parameter(Tensor({C, C, 3, 3, 3}));
  fill_uniform_fan_in(net.dec_w.value, 27 * C, rng);
  net.dec_b = ad::Parameter(Tensor({C}));
  for (const auto& d : cfg.datasets) {
    Head h;
    h.heat_w = ad::Parameter(Tensor({1, C}));
    fill_uniform_fan_in(h.heat_w.value, C, rng);
    // Nodule voxels are rare.
    h.heat_b = ad::Parameter(Tensor({1}, -2.0));
    h.radius_w = ad::Parameter(Tensor({1, C}));
    fill_uniform_fan_in(h.radius_w.value, C, rng);
    // Radii are a few voxels; start the relu in its live region.
    h.radius_b = ad::Parameter(Tensor({1}, 1.0));
    net.heads.emplace(d, std::move(h));
  }
  return net;
}

Detection forward_detect(ad::Tape* tape, ToyNet& net, const Tensor& patch, const std::string& dataset,
                         const Recorder* recorder) {
  auto head = net.heads.find(dataset);
  if (head == net.heads.end()) throw UsageError("no detection head for dataset '" + dataset + "'");
  if (patch.ndim() != 4 || patch.dim(0) != 1) {
    throw DimensionError("detector input must be [1, D, H, W], got " + shape_str(patch.shape()));
  }
  const std::size_t m = net.config.extent_multiple();
  for (std::size_t a = 1; a < 4; ++a) {
    if (patch.dim(a) % m != 0) {
      throw DimensionError("detector input extents must be multiples of " + std::to_string(m) + ", got " +
                           shape_str(patch.shape()));
    }
  }
  using namespace ad;
  Recorder rec;
  if (recorder) rec = *recorder;
  const Recorder* rp = recorder ? &rec : nullptr;

  const Var x = constant(patch);
  const Var x0 = channel_bias(conv3d(x, bind(tape, net.stem_w), 1, 1), bind(tape, net.stem_b));
  const Var e1 = residual_forward(tape, x0, net.blocks[0], rp);
  const Var e2 = residual_forward(tape, e1, net.blocks[1], rp);
  const Var e3 = residual_forward(tape, e2, net.blocks[2], rp);
  Var d1 = add(upsample_nearest2x(conv1x1x1(e3, bind(tape, net.lateral_w))), e1);
  d1 = channel_bias(conv3d(relu(d1), bind(tape, net.dec_w), 1, 1), bind(tape, net.dec_b));
  const Var d0 = relu(add(upsample_nearest2x(d1), x0));

  Head& h = head->second;
  Detection det;
  det.heatmap = sigmoid(channel_bias(conv1x1x1(d0, bind(tape, h.heat_w)), bind(tape, h.heat_b)));
  det.radius_map = relu(channel_bias(conv1x1x1(d0, bind(tape, h.radius_w)), bind(tape, h.radius_b)));
  return det;
}

Tensor normalize_patch(const Tensor& u8_patch) {
  Tensor out = u8_patch.ndim() == 3 ? u8_patch.reshaped({1, u8_patch.dim(0), u8_patch.dim(1), u8_patch.dim(2)})
                                    : u8_patch;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - 128.0) / 128.0;
  return out;
}

// ---- loss and decoding ----------------------------------------------------

Targets make_targets(const Shape& shape, const std::vector<ct::Annotation>& nodules) {
  if (shape.size() != 4 || shape[0] != 1) throw DimensionError("targets need a [1, D, H, W] shape");
  Targets t{Tensor(shape), Tensor(shape), Tensor(shape), 0};
  const std::size_t D = shape[1], H = shape[2], W = shape[3];
  for (const auto& a : nodules) {
    const double r = a.radius();
    if (!(r > 0.0)) throw DataError("nodule with non-positive diameter in " + a.series_id);
    const double sigma = r / 2.0;
    const double reach = std::max(r, 3.0 * sigma) + 1.0;
    auto range = [&](double c, std::size_t n) {
      const long lo = std::max(0L, static_cast<long>(std::floor(c - reach)));
      const long hi = std::min(static_cast<long>(n) - 1, static_cast<long>(std::ceil(c + reach)));
      return std::pair<long, long>(lo, hi);
    };
    const auto [z0, z1] = range(a.center[2], D);
    const auto [y0, y1] = range(a.center[1], H);
    const auto [x0, x1] = range(a.center[0], W);
    for (long z = z0; z <= z1; ++z)
      for (long y = y0; y <= y1; ++y)
        for (long x = x0; x <= x1; ++x) {
          const double dx = double(x) - a.center[0], dy = double(y) - a.center[1], dz = double(z) - a.center[2];
          const double d2 = dx * dx + dy * dy + dz * dz;
          const std::size_t i = (std::size_t(z) * H + std::size_t(y)) * W + std::size_t(x);
          t.heat[i] = std::max(t.heat[i], std::exp(-d2 / (2.0 * sigma * sigma)));
          if (d2 <= r * r) {
            t.positive[i] = 1.0;
            t.radius[i] = std::max(t.radius[i], r);
          }
        }
  }
  for (std::size_t i = 0; i < t.positive.size(); ++i) t.positives += t.positive[i] != 0.0;
  return t;
}

ad::Var detection_loss(const Detection& det, const Targets& t) {
  using namespace ad;
  if (det.heatmap.shape() != t.heat.shape() || det.radius_map.shape() != t.heat.shape()) {
    throw DimensionError("loss targets " + shape_str(t.heat.shape()) + " do not match predictions " +
                         shape_str(det.heatmap.value().shape()));
  }
  const Var p = clamp(det.heatmap, kBceEps, 1.0 - kBceEps);
  const Var target = constant(t.heat);
  Tensor one_minus(t.heat.shape());
  for (std::size_t i = 0; i < one_minus.size(); ++i) one_minus[i] = 1.0 - t.heat[i];
  const Var pos = mul(target, log(p));
  const Var neg = mul(constant(std::move(one_minus)), log(add_scalar(scale(p, -1.0), 1.0)));
  Var loss = scale(mean(add(pos, neg)), -1.0);
  if (t.positives > 0) {
    const Var l1 = sum(mul(abs(sub(det.radius_map, constant(t.radius))), constant(t.positive)));
    loss = add(loss, scale(l1, 1.0 / static_cast<double>(t.positives)));
  }
  return loss;
}

std::vector<froc::Candidate> decode_candidates(const Tensor& heatmap, const Tensor& radius_map,
                                               const std::string& series, double prob_floor) {
  if (heatmap.shape() != radius_map.shape()) {
    throw DimensionError("heatmap " + shape_str(heatmap.shape()) + " and radius map " + shape_str(radius_map.shape()) +
                         " differ");
  }
  if (heatmap.ndim() != 4 || heatmap.dim(0) != 1) throw DimensionError("heatmap must be [1, D, H, W]");
  const long D = long(heatmap.dim(1)), H = long(heatmap.dim(2)), W = long(heatmap.dim(3));
  auto at = [&](long z, long y, long x) { return heatmap[(std::size_t(z) * H + y) * W + x]; };
  std::vector<froc::Candidate> out;
  for (long z = 0; z < D; ++z)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        const double v = at(z, y, x);
        if (v < prob_floor) continue;
        bool peak = true;
        for (long dz = -1; dz <= 1 && peak; ++dz)
          for (long dy = -1; dy <= 1 && peak; ++dy)
            for (long dx = -1; dx <= 1 && peak; ++dx) {
              if (dz == 0 && dy == 0 && dx == 0) continue;
              const long zz = z + dz, yy = y + dy, xx = x + dx;
              if (zz < 0 || yy < 0 || xx < 0 || zz >= D || yy >= H || xx >= W) continue;
              peak = at(zz, yy, xx) < v;
            }
        if (peak) out.push_back({series, {double(x), double(y), double(z)}, v});
      }
  return out;
}

// ---- training -------------------------------------------------------------

ct::Index3 sample_corner(const Sample& s, std::size_t patch, double nodule_fraction, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const long P = static_cast<long>(patch);
  ct::Index3 c;
  if (!s.nodules.empty() && u01(rng) < nodule_fraction) {
    const auto& a = s.nodules[rng() % s.nodules.size()];
    const long jitter = std::max(1L, P / 4);
    for (int k = 0; k < 3; ++k) {
      const long shift = static_cast<long>(rng() % static_cast<std::uint64_t>(2 * jitter + 1)) - jitter;
      c[k] = static_cast<long>(std::lround(a.center[k])) - P / 2 + shift;
    }
  } else {
    for (int k = 0; k < 3; ++k) {
      const long lo = -4, hi = std::max(lo, static_cast<long>(s.volume.extent(k)) - P + 4);
      c[k] = lo + static_cast<long>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    }
  }
  return c;
}

std::vector<ct::Annotation> nodules_in_patch(const Sample& s, const ct::Index3& corner, std::size_t patch) {
  std::vector<ct::Annotation> out;
  for (auto a : s.nodules) {
    bool inside = true;
    for (int k = 0; k < 3; ++k) {
      a.center[k] -= static_cast<double>(corner[k]);
      inside = inside && a.center[k] >= 0.0 && a.center[k] <= static_cast<double>(patch) - 1.0;
    }
    if (inside) out.push_back(std::move(a));
  }
  return out;
}

namespace {

std::vector<ad::Parameter*> step_parameters(ToyNet& net, const std::string& dataset) {
  std::vector<ad::Parameter*> out;
  const std::string head = "head.";
  net.visit([&](const std::string& name, ad::Parameter& p) {
    if (name.compare(0, head.size(), head) != 0 || name.compare(head.size(), dataset.size() + 1, dataset + ".") == 0) {
      out.push_back(&p);
    }
  });
  return out;
}

}  // namespace

TrainResult train(ToyNet& net, const std::vector<Dataset>& data, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step) {
  cfg.validate();
  if (data.empty()) throw UsageError("training needs at least one dataset");
  std::size_t volumes = 0;
  for (const auto& d : data) {
    if (d.samples.empty()) throw DataError("dataset " + d.id + " has no training volumes");
    if (!net.heads.count(d.id)) throw UsageError("no detection head for dataset '" + d.id + "'");
    volumes += d.samples.size();
  }
  const std::size_t m = net.config.extent_multiple();
  if (cfg.patch % m != 0) {
    throw ConfigError("patch " + std::to_string(cfg.patch) + " is not a multiple of " + std::to_string(m));
  }
  const std::size_t steps = cfg.steps_per_epoch ? cfg.steps_per_epoch : (volumes + cfg.batch_size - 1) / cfg.batch_size;

  std::mt19937_64 rng(cfg.seed);
  std::map<ad::Parameter*, Tensor> velocity;
  TrainResult result;
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    double epoch_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step, ++global) {
      const Dataset& ds = data[rng() % data.size()];
      const auto params = step_parameters(net, ds.id);
      for (auto* p : params) p->zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = ds.samples[rng() % ds.samples.size()];
        const ct::Index3 corner = sample_corner(s, cfg.patch, cfg.nodule_fraction, rng);
        const Tensor patch = normalize_patch(ct::extract_patch(s.volume, corner, cfg.patch));
        const Targets t = make_targets(patch.shape(), nodules_in_patch(s, corner, cfg.patch));
        ad::Tape tape;
        const ad::Var loss = detection_loss(forward_detect(&tape, net, patch, ds.id), t);
        const double v = loss.value()[0];
        if (!std::isfinite(v)) {
          throw NumericError("non-finite loss at step " + std::to_string(global) + " (epoch " +
                             std::to_string(epoch) + ", dataset " + ds.id + ")");
        }
        batch_loss += v;
        tape.backward(loss);
      }
      batch_loss /= static_cast<double>(cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(cfg.batch_size);
      for (auto* p : params) {
        Tensor& vel = velocity[p];
        if (vel.empty()) vel = Tensor(p->value.shape(), 0.0);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
          const double g = p->grad[i] * inv + cfg.weight_decay * p->value[i];
          vel[i] = cfg.momentum * vel[i] + g;
          p->value[i] -= lr * vel[i];
        }
      }
      epoch_sum += batch_loss;
      LossRecord rec{epoch, global, lr, batch_loss, ds.id};
      result.log.push_back(rec);
      if (on_step) on_step(rec);
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(steps));
  }
  return result;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path);
  if (!os) throw UsageError("cannot write " + path.string());
  os << "epoch,step,lr,loss\n";
  for (const auto& r : log) os << r.epoch << ',' << r.step << ',' << csv::format(r.lr) << ',' << csv::format(r.loss) << '\n';
}

// ---- evaluation -----------------------------------------------------------

namespace {

std::vector<long> window_corners(std::size_t extent, std::size_t window) {
  if (extent <= window) return {0};
  std::vector<long> out;
  const std::size_t stride = std::max<std::size_t>(1, window / 2);
  for (std::size_t c = 0; c + window < extent; c += stride) out.push_back(static_cast<long>(c));
  out.push_back(static_cast<long>(extent - window));
  return out;
}

// Heatmap and radius map over the volume's own extents.
std::pair<Tensor, Tensor> infer_volume(ToyNet& net, const Sample& s, const std::string& dataset, std::size_t window,
                                       const Recorder* rec) {
  const std::size_t D = s.volume.depth(), H = s.volume.height(), W = s.volume.width();
  Tensor heat({1, D, H, W}), radius({1, D, H, W}), hits({1, D, H, W});
  std::size_t size = window;
  if (size == 0) {
    const std::size_t m = net.config.extent_multiple();
    size = (std::max({D, H, W}) + m - 1) / m * m;
  }
  const auto xs = window ? window_corners(W, size) : std::vector<long>{0};
  const auto ys = window ? window_corners(H, size) : std::vector<long>{0};
  const auto zs = window ? window_corners(D, size) : std::vector<long>{0};
  for (long z0 : zs)
    for (long y0 : ys)
      for (long x0 : xs) {
        const Tensor patch = normalize_patch(ct::extract_patch(s.volume, {x0, y0, z0}, size));
        const Detection det = forward_detect(nullptr, net, patch, dataset, rec);
        const Tensor& h = det.heatmap.value();
        const Tensor& r = det.radius_map.value();
        for (std::size_t z = 0; z < size && z0 + long(z) < long(D); ++z)
          for (std::size_t y = 0; y < size && y0 + long(y) < long(H); ++y)
            for (std::size_t x = 0; x < size && x0 + long(x) < long(W); ++x) {
              const std::size_t src = (z * size + y) * size + x;
              const std::size_t dst = ((z0 + z) * H + (y0 + y)) * W + (x0 + x);
              heat[dst] += h[src];
              radius[dst] += r[src];
              hits[dst] += 1.0;
            }
      }
  for (std::size_t i = 0; i < heat.size(); ++i) {
    heat[i] /= hits[i];
    radius[i] /= hits[i];
  }
  return {std::move(heat), std::move(radius)};
}

}  // namespace

EvalOutput evaluate(ToyNet& net, const Dataset& data, AssignmentRecord* record, const EvalOptions& opts) {
  if (data.samples.empty()) throw DataError("dataset " + data.id + " has no volumes to evaluate");
  if (opts.window && opts.window % net.config.extent_multiple() != 0) {
    throw ConfigError("evaluation window " + std::to_string(opts.window) + " is not a multiple of " +
                      std::to_string(net.config.extent_multiple()));
  }
  std::vector<std::vector<froc::Candidate>> per(data.samples.size());
  std::vector<AssignmentRecord> recs(data.samples.size());
  parallel_for(data.samples.size(), opts.jobs, [&](std::size_t i) {
    const Sample& s = data.samples[i];
    Recorder rec{&recs[i], data.id, ""};
    const auto [heat, radius] = infer_volume(net, s, data.id, opts.window, record ? &rec : nullptr);
    auto cands = decode_candidates(heat, radius, s.id, opts.prob_floor);
    if (opts.max_per_scan && cands.size() > opts.max_per_scan) {
      std::stable_sort(cands.begin(), cands.end(),
                       [](const froc::Candidate& a, const froc::Candidate& b) { return a.probability > b.probability; });
      cands.resize(opts.max_per_scan);
    }
    per[i] = std::move(cands);
  });
  EvalOutput out;
  out.scans = data.samples.size();
  for (std::size_t i = 0; i < per.size(); ++i) {
    out.candidates.insert(out.candidates.end(), per[i].begin(), per[i].end());
    if (record) record->merge(recs[i]);
  }
  out.annotations = data.annotations();
  froc::Options fo;
  fo.scans.emplace();
  for (const auto& s : data.samples) fo.scans->insert(s.id);
  out.froc = froc::froc(out.candidates, out.annotations, out.scans, fo);
  return out;
}

Divergence assignment_divergence(const AssignmentRecord& rec) {
  using Site = std::tuple<std::string, Direction, std::size_t>;
  std::map<Site, std::vector<std::pair<std::string, std::vector<double>>>> sites;
  for (const auto& [key, stats] : rec.entries())
    sites[{key.module, key.direction, key.group}].push_back({key.dataset, stats.mean()});
  Divergence best;
  for (const auto& [site, means] : sites)
    for (std::size_t a = 0; a < means.size(); ++a)
      for (std::size_t b = a + 1; b < means.size(); ++b) {
        double l1 = 0.0;
        for (std::size_t j = 0; j < means[a].second.size(); ++j) l1 += std::abs(means[a].second[j] - means[b].second[j]);
        if (l1 > best.max_l1) {
          best.max_l1 = l1;
          best.where = std::get<0>(site) + "/" + std::string(direction_name(std::get<1>(site))) + "/group" +
                       std::to_string(std::get<2>(site)) + " " + means[a].first + " vs " + means[b].first;
        }
      }
  return best;
}

// ---- persistence ----------------------------------------------------------

void save_net(const std::filesystem::path& dir, ToyNet& net) {
  const auto params = net.parameters();
  checkpoint::save(dir, {{"kind", "toynet"}, {"net", net.config}}, params);
}

ToyNet load_net(const std::filesystem::path& dir) {
  const nlohmann::json manifest = checkpoint::read_manifest(dir);
  const nlohmann::json& cfg = manifest.at("config");
  if (cfg.value("kind", std::string()) != "toynet") {
    throw DataError(dir.string() + " does not hold a detector checkpoint");
  }
  ToyNet net = make_net(cfg.at("net").get<NetConfig>(), 0);
  const auto params = net.parameters();
  checkpoint::load(dir, params);
  return net;
}

}  // namespace sgda::toy
