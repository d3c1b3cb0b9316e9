// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale multi-domain nodule detector: a synthetic volume generator, a
// small residual 3D encoder-decoder with optional SGDA in each block and one
// heatmap/radius head per dataset, its loss, candidate decoding, and an SGD
// trainer.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgda/ct.hpp"
#include "sgda/froc.hpp"
#include "sgda/sgda_block.hpp"

namespace sgda::toy {

// ---- synthetic domains ----------------------------------------------------

struct DomainSpec {
  std::string id = "domain";
  std::size_t extent = 48;
  /// Tissue intensities are mapped v -> 128 + gain * (v - 128) + offset.
  double gain = 1.0;
  double offset = 0.0;
  double noise_sigma = 4.0;
  std::size_t vessels = 4;
  double radius_min = 2.5;
  double radius_max = 4.5;
  std::size_t nodules_min = 1;
  std::size_t nodules_max = 3;
  /// Gaussian sigma (voxels) of the blur along z, emulating slice thickness.
  double blur = 0.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DomainSpec& d);
void from_json(const nlohmann::json& j, DomainSpec& d);

/// Three strongly shifted domains.
std::vector<DomainSpec> default_domains();

struct Sample {
  std::string id;
  ct::Volume volume;  // windowed, 1 mm spacing, zero offset, lung mask attached
  std::vector<ct::Annotation> nodules;  // voxel frame == world frame
};

/// Deterministic per (spec, seed). Throws DataError when nodules cannot be
/// placed within the retry budget.
Sample generate_volume(const DomainSpec& spec, std::uint64_t seed);

/// Series id of volume `index` of a domain.
std::string series_id(const DomainSpec& spec, std::size_t index);

struct Dataset {
  std::string id;
  std::vector<Sample> samples;

  /// Annotations of all samples, tagged with their series ids.
  std::vector<ct::Annotation> annotations() const;
};

/// `count` volumes; volume i uses a seed derived from (seed, domain id, i).
Dataset make_dataset(const DomainSpec& spec, std::size_t count, std::uint64_t seed, std::size_t jobs = 1);
/// First `train` samples and the rest.
std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t train);

/// Writes <series>.mhd/.raw, <series>_mask.mhd/.raw, annotations.csv and
/// domain.json into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& d, const DomainSpec& spec);
Dataset load_dataset(const std::filesystem::path& dir);

// ---- network --------------------------------------------------------------

struct NetConfig {
  std::size_t base_channels = 8;
  /// SGDA on encoder blocks 1..3.
  std::array<bool, 3> sgda_blocks = {true, true, true};
  std::size_t sgda_groups = 4;
  std::size_t sgda_adapters = 3;
  std::size_t sgda_reduction = 4;
  Fuse sgda_fuse = Fuse::cross_attention;
  std::vector<std::string> datasets;

  bool any_sgda() const { return sgda_blocks[0] || sgda_blocks[1] || sgda_blocks[2]; }
  void validate() const;
  /// Input extents must be multiples of this.
  std::size_t extent_multiple() const;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

struct Head {
  ad::Parameter heat_w, heat_b, radius_w, radius_b;
};

struct ToyNet {
  NetConfig config;
  ad::Parameter stem_w, stem_b;
  std::vector<ResidualBlock3D> blocks;  // block1 (stride 2), block2 (stride 2), block3
  ad::Parameter lateral_w;              // [C, 2C] 1x1x1
  ad::Parameter dec_w, dec_b;
  std::map<std::string, Head> heads;

  /// Backbone first, then heads in dataset order.
  void visit(const ParamVisitor& fn);
  std::vector<ad::NamedParameter> parameters();
  std::size_t parameter_count();
};

ToyNet make_net(const NetConfig& cfg, std::uint64_t seed);

struct Detection {
  ad::Var heatmap;     // [1, D, H, W], sigmoid
  ad::Var radius_map;  // [1, D, H, W], relu
};

/// Throws UsageError for a dataset without a head.
Detection forward_detect(ad::Tape* tape, ToyNet& net, const Tensor& patch, const std::string& dataset,
                         const Recorder* recorder = nullptr);

/// u8 intensities -> network input, (v - 128) / 128, shaped [1, D, H, W].
Tensor normalize_patch(const Tensor& u8_patch);

// ---- loss and decoding ----------------------------------------------------

inline constexpr double kBceEps = 1e-7;

struct Targets {
  Tensor heat;      // Gaussian splats, sigma = radius / 2, max over nodules
  Tensor radius;    // nodule radius inside the nodule, 0 elsewhere
  Tensor positive;  // 1 inside some nodule
  std::size_t positives = 0;
};

/// Nodule centers are in patch voxel coordinates (x, y, z).
Targets make_targets(const Shape& shape, const std::vector<ct::Annotation>& nodules);

/// mean BCE(heatmap, target) + mean over positive voxels of |radius - target|.
ad::Var detection_loss(const Detection& det, const Targets& t);

/// Strict 3x3x3 local maxima with probability >= floor, in voxel (x, y, z).
std::vector<froc::Candidate> decode_candidates(const Tensor& heatmap, const Tensor& radius_map,
                                               const std::string& series, double prob_floor = 0.05);

// ---- training -------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t steps_per_epoch = 0;  // 0: ceil(training volumes / batch)
  std::size_t batch_size = 2;
  std::size_t patch = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> milestones;  // epochs where lr *= gamma
  double gamma = 0.1;
  double nodule_fraction = 0.7;
  std::uint64_t seed = 1;

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
  std::size_t epoch = 0, step = 0;
  double lr = 0.0, loss = 0.0;
  std::string dataset;
};

struct TrainResult {
  std::vector<LossRecord> log;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// SGD with momentum and L2 weight decay. Each batch draws every patch from a
/// single randomly chosen dataset. Throws NumericError naming the step when
/// the loss stops being finite.
TrainResult train(ToyNet& net, const std::vector<Dataset>& data, const TrainConfig& cfg,
                  const std::function<void(const LossRecord&)>& on_step = {});

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& log);

/// Random patch corner; nodule-centred with probability `nodule_fraction`.
ct::Index3 sample_corner(const Sample& s, std::size_t patch, double nodule_fraction, std::mt19937_64& rng);
/// Nodules whose centre lies inside the patch, shifted into patch coordinates.
std::vector<ct::Annotation> nodules_in_patch(const Sample& s, const ct::Index3& corner, std::size_t patch);

// ---- evaluation -----------------------------------------------------------

struct EvalOutput {
  std::vector<froc::Candidate> candidates;
  std::vector<ct::Annotation> annotations;
  froc::FrocResult froc;
  std::size_t scans = 0;
};

struct EvalOptions {
  std::size_t jobs = 1;
  double prob_floor = 0.01;
  /// Candidates kept per scan, highest probability first; 0 keeps all.
  std::size_t max_per_scan = 64;
  /// 0: one pass over the whole volume padded with 170 up to the extent
  /// multiple. Otherwise cubic windows of this size at half-window stride,
  /// with overlapping predictions averaged.
  std::size_t window = 0;
};

/// Inference, decoding and FROC for one dataset. Assignments are recorded
/// (once per forward pass) when asked.
EvalOutput evaluate(ToyNet& net, const Dataset& data, AssignmentRecord* record = nullptr,
                    const EvalOptions& opts = {});

/// Largest L1 distance between two datasets' mean assignment vectors over all
/// (module, direction, group) keys.
struct Divergence {
  double max_l1 = 0.0;
  std::string where;
};
Divergence assignment_divergence(const AssignmentRecord& rec);

// ---- persistence ----------------------------------------------------------

void save_net(const std::filesystem::path& dir, ToyNet& net);
ToyNet load_net(const std::filesystem::path& dir);

}  // namespace sgda::toy
