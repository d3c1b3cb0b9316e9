// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// sgda: preprocessing, FROC evaluation, the synthetic multi-domain detector
// workflow and the gradient-check suite behind one git-style executable.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sgda/csv.hpp"
#include "sgda/ct.hpp"
#include "sgda/errors.hpp"
#include "sgda/froc.hpp"
#include "sgda/parallel.hpp"
#include "sgda/sgdt.hpp"
#include "sgda/suite.hpp"
#include "sgda/toy_detector.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sgda;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string env_name(const std::string& key) {
  std::string out = "SGDA_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

// Effective options: command-line flag, then SGDA_<KEY> from the environment,
// then the --config JSON document, then the built-in default.
class Resolver {
 public:
  explicit Resolver(const std::optional<std::string>& config_path) {
    if (!config_path) return;
    std::ifstream is(*config_path);
    if (!is) throw UsageError("cannot read config file " + *config_path);
    try {
      config_ = json::parse(is);
    } catch (const json::exception& e) {
      throw UsageError("config file " + *config_path + ": " + e.what());
    }
    if (!config_.is_object()) throw UsageError("config file " + *config_path + " must hold a JSON object");
  }

  template <class T>
  T get(const std::string& key, const std::optional<T>& flag, const std::optional<T>& def = std::nullopt) {
    json v;
    std::string source;
    if (flag) {
      v = *flag;
      source = "--" + dashed(key);
    } else if (const char* env = std::getenv(env_name(key).c_str())) {
      source = env_name(key);
      if constexpr (std::is_same_v<T, std::string>) {
        v = std::string(env);
      } else {
        v = json::parse(env, nullptr, false);
        if (v.is_discarded()) v = std::string(env);
      }
    } else if (config_.contains(key)) {
      v = config_.at(key);
      source = "config key '" + key + "'";
    } else if (def) {
      v = *def;
      source = "default";
    } else {
      throw UsageError("missing required option --" + dashed(key));
    }
    try {
      T out = v.get<T>();
      resolved_[key] = v;
      return out;
    } catch (const json::exception&) {
      throw UsageError("bad value " + v.dump() + " for " + key + " (from " + source + ")");
    }
  }

  void record(const std::string& key, const json& v) { resolved_[key] = v; }
  const json& resolved() const { return resolved_; }

  void write(const fs::path& dir, const std::string& command) const {
    fs::create_directories(dir);
    std::ofstream os(dir / "config.resolved.json");
    if (!os) throw UsageError("cannot write " + (dir / "config.resolved.json").string());
    os << json{{"command", command}, {"options", resolved_}}.dump(2) << '\n';
  }

 private:
  json config_ = json::object();
  json resolved_ = json::object();
};

std::optional<bool> flag_value(const CLI::Option* o, bool when_set) {
  return o->count() ? std::optional<bool>(when_set) : std::nullopt;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& f : csv::split(s))
    if (!f.empty()) out.push_back(f);
  return out;
}

// Domain directories under a synth root, or the named subset.
std::vector<fs::path> domain_dirs(const fs::path& root, const std::vector<std::string>& only) {
  if (!fs::is_directory(root)) throw DataError("data directory " + root.string() + " does not exist");
  std::vector<fs::path> out;
  if (!only.empty()) {
    for (const auto& d : only) out.push_back(root / d);
    return out;
  }
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "domain.json")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no domain directories under " + root.string());
  return out;
}

std::vector<toy::Dataset> load_split(const fs::path& root, const std::vector<std::string>& only, std::size_t train,
                                     bool test_part) {
  std::vector<toy::Dataset> out;
  for (const auto& dir : domain_dirs(root, only)) {
    auto [tr, te] = toy::split(toy::load_dataset(dir), train);
    out.push_back(test_part ? std::move(te) : std::move(tr));
  }
  return out;
}

void print_froc(const froc::FrocResult& r) {
  std::printf("fp_per_scan  sensitivity\n");
  for (std::size_t k = 0; k < froc::kOperatingPoints.size(); ++k)
    std::printf("%-11s  %.5f\n", csv::format(froc::kOperatingPoints[k]).c_str(), r.sensitivities[k]);
  std::printf("average      %.5f\n", r.average);
}

// ---- subcommands ----------------------------------------------------------

struct Common {
  std::optional<std::string> config;
  std::optional<std::size_t> jobs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON file with option defaults (keys use underscores)");
  app->add_option("--jobs", c.jobs, "Worker threads for scan-level parallelism (default 1)");
}

struct PreprocessArgs {
  Common common;
  std::vector<std::string> input, mask;
  std::optional<std::string> out;
  std::optional<double> spacing;
  std::optional<std::size_t> margin;
};

int run_preprocess(const PreprocessArgs& a) {
  Resolver r(a.common.config);
  const auto inputs = r.get<std::vector<std::string>>(
      "input", a.input.empty() ? std::nullopt : std::optional<std::vector<std::string>>(a.input));
  const auto masks = r.get<std::vector<std::string>>(
      "mask", a.mask.empty() ? std::nullopt : std::optional<std::vector<std::string>>(a.mask));
  const fs::path out = r.get<std::string>("out", a.out);
  ct::PreprocessOptions opts;
  opts.target_spacing = r.get<double>("spacing", a.spacing, 1.0);
  opts.crop_margin = r.get<std::size_t>("margin", a.margin, 8);
  const std::size_t jobs = r.get<std::size_t>("jobs", a.common.jobs, 1);
  if (inputs.size() != masks.size()) {
    throw UsageError("--input and --mask must be given the same number of times");
  }
  fs::create_directories(out);
  std::vector<std::string> stems(inputs.size());
  parallel_for(inputs.size(), jobs, [&](std::size_t i) {
    const std::string stem = fs::path(inputs[i]).stem().string();
    const ct::Preprocessed p = ct::preprocess(ct::read_scan(inputs[i], masks[i]), opts);
    sgdt::write_file(out / (stem + ".sgdt"), p.volume.voxels, sgdt::Dtype::u8);
    std::ofstream os(out / (stem + ".json"));
    os << ct::sidecar(p).dump(2) << '\n';
    stems[i] = stem;
  });
  for (const auto& s : stems) std::printf("%s\n", (out / (s + ".sgdt")).string().c_str());
  r.write(out, "preprocess");
  return 0;
}

struct EvalArgs {
  Common common;
  std::optional<std::string> candidates, annotations, annotation_format, out, run_dir;
  std::optional<std::size_t> scans;
  CLI::Option* strict = nullptr;
};

int run_eval(const EvalArgs& a) {
  Resolver r(a.common.config);
  const std::string cand_path = r.get<std::string>("candidates", a.candidates);
  const std::string ann_path = r.get<std::string>("annotations", a.annotations);
  const std::string fmt_name = r.get<std::string>("annotation_format", a.annotation_format, "center_diameter");
  const std::size_t scans = r.get<std::size_t>("scans", a.scans);
  const fs::path out = r.get<std::string>("out", a.out);
  froc::Options opts;
  opts.strict = r.get<bool>("strict", flag_value(a.strict, true), false);
  opts.jobs = r.get<std::size_t>("jobs", a.common.jobs, 1);
  const fs::path run_dir = r.get<std::string>("run_dir", a.run_dir, out.parent_path().empty() ? "." : out.parent_path().string());
  const auto fmt = ct::parse_annotation_format(fmt_name);
  if (!fmt) throw UsageError("unknown annotation format '" + fmt_name + "'");

  const auto cands = froc::parse_candidates(fs::path(cand_path));
  const auto anns = ct::parse_annotations(fs::path(ann_path), *fmt);
  const froc::FrocResult res = froc::froc(cands, anns, scans, opts);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  froc::emit_curve(res, out);
  print_froc(res);
  r.write(run_dir, "eval");
  return 0;
}

struct SynthArgs {
  Common common;
  std::optional<std::string> out, domains_file, domains;
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
};

int run_synth(const SynthArgs& a) {
  Resolver r(a.common.config);
  const fs::path out = r.get<std::string>("out", a.out);
  const std::size_t count = r.get<std::size_t>("count", a.count, 20);
  const std::uint64_t seed = r.get<std::uint64_t>("seed", a.seed, 1);
  const std::size_t jobs = r.get<std::size_t>("jobs", a.common.jobs, 1);
  const std::string file = r.get<std::string>("domains_file", a.domains_file, "");
  const auto only = split_list(r.get<std::string>("domains", a.domains, ""));
  std::vector<toy::DomainSpec> specs = toy::default_domains();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw UsageError("cannot read " + file);
    try {
      specs = json::parse(is).get<std::vector<toy::DomainSpec>>();
    } catch (const json::exception& e) {
      throw UsageError(file + ": " + e.what());
    }
  }
  if (!only.empty()) {
    std::vector<toy::DomainSpec> keep;
    for (const auto& id : only) {
      auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& s) { return s.id == id; });
      if (it == specs.end()) throw UsageError("unknown domain '" + id + "'");
      keep.push_back(*it);
    }
    specs = keep;
  }
  r.record("domain_specs", specs);
  for (const auto& spec : specs) {
    const toy::Dataset d = toy::make_dataset(spec, count, seed, jobs);
    toy::save_dataset(out / spec.id, d, spec);
    std::size_t nodules = 0;
    for (const auto& s : d.samples) nodules += s.nodules.size();
    std::printf("%s: %zu volumes, %zu nodules\n", spec.id.c_str(), d.samples.size(), nodules);
  }
  r.write(out, "synth");
  return 0;
}

struct NetArgs {
  std::optional<std::size_t> channels, groups, adapters, reduction;
  std::optional<std::string> fuse, sgda_blocks;
  CLI::Option* no_sgda = nullptr;
};

void add_net_options(CLI::App* app, NetArgs& n) {
  app->add_option("--channels", n.channels, "Base channel width (default 8)");
  app->add_option("--groups", n.groups, "Slice groups per direction (default 4)");
  app->add_option("--adapters", n.adapters, "Adapters in each attention bank (default 3)");
  app->add_option("--reduction", n.reduction, "Bottleneck reduction ratio (default 4)");
  app->add_option("--fuse", n.fuse, "Fusion of the directional maps: cross_attention or mean_only");
  app->add_option("--sgda-blocks", n.sgda_blocks, "Attention on/off per encoder block, e.g. 1,1,0 (default 1,1,1)");
  n.no_sgda = app->add_flag("--no-sgda", "Disable attention in every block (shared baseline)");
}

toy::NetConfig resolve_net(Resolver& r, const NetArgs& n, std::vector<std::string> datasets) {
  toy::NetConfig c;
  c.base_channels = r.get<std::size_t>("channels", n.channels, 8);
  c.sgda_groups = r.get<std::size_t>("groups", n.groups, 4);
  c.sgda_adapters = r.get<std::size_t>("adapters", n.adapters, 3);
  c.sgda_reduction = r.get<std::size_t>("reduction", n.reduction, 4);
  const std::string fuse = r.get<std::string>("fuse", n.fuse, "cross_attention");
  if (fuse == "cross_attention") {
    c.sgda_fuse = Fuse::cross_attention;
  } else if (fuse == "mean_only") {
    c.sgda_fuse = Fuse::mean_only;
  } else {
    throw UsageError("unknown fuse mode '" + fuse + "'");
  }
  const bool off = r.get<bool>("no_sgda", flag_value(n.no_sgda, true), false);
  const auto blocks = split_list(r.get<std::string>("sgda_blocks", n.sgda_blocks, "1,1,1"));
  if (blocks.size() != 3) throw UsageError("--sgda-blocks needs three entries");
  for (std::size_t b = 0; b < 3; ++b) {
    if (blocks[b] != "0" && blocks[b] != "1") throw UsageError("--sgda-blocks entries must be 0 or 1");
    c.sgda_blocks[b] = !off && blocks[b] == "1";
  }
  c.datasets = std::move(datasets);
  c.validate();
  return c;
}

struct TrainArgs {
  Common common;
  NetArgs net;
  std::optional<std::string> data, out, domains, milestones;
  std::optional<std::size_t> train_count, epochs, steps_per_epoch, batch_size, patch;
  std::optional<double> lr, momentum, weight_decay, gamma, nodule_fraction;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  Resolver r(a.common.config);
  const fs::path data = r.get<std::string>("data", a.data);
  const fs::path out = r.get<std::string>("out", a.out);
  const auto only = split_list(r.get<std::string>("domains", a.domains, ""));
  const std::size_t train_count = r.get<std::size_t>("train_count", a.train_count, 15);
  toy::TrainConfig tc;
  tc.epochs = r.get<std::size_t>("epochs", a.epochs, tc.epochs);
  tc.steps_per_epoch = r.get<std::size_t>("steps_per_epoch", a.steps_per_epoch, tc.steps_per_epoch);
  tc.batch_size = r.get<std::size_t>("batch_size", a.batch_size, tc.batch_size);
  tc.patch = r.get<std::size_t>("patch", a.patch, tc.patch);
  tc.lr = r.get<double>("lr", a.lr, tc.lr);
  tc.momentum = r.get<double>("momentum", a.momentum, tc.momentum);
  tc.weight_decay = r.get<double>("weight_decay", a.weight_decay, tc.weight_decay);
  tc.gamma = r.get<double>("gamma", a.gamma, tc.gamma);
  tc.nodule_fraction = r.get<double>("nodule_fraction", a.nodule_fraction, tc.nodule_fraction);
  tc.seed = r.get<std::uint64_t>("seed", a.seed, tc.seed);
  tc.milestones.clear();
  for (const auto& m : split_list(r.get<std::string>("milestones", a.milestones, ""))) {
    try {
      tc.milestones.push_back(std::stoul(m));
    } catch (const std::exception&) {
      throw UsageError("bad milestone '" + m + "'");
    }
  }
  tc.validate();

  const auto sets = load_split(data, only, train_count, false);
  std::vector<std::string> ids;
  for (const auto& d : sets) ids.push_back(d.id);
  const toy::NetConfig nc = resolve_net(r, a.net, ids);
  r.record("net", nc);
  r.record("train", tc);
  r.write(out, "train");

  toy::ToyNet net = toy::make_net(nc, tc.seed);
  std::size_t last_epoch = SIZE_MAX;
  const auto res = toy::train(net, sets, tc, [&](const toy::LossRecord& rec) {
    if (rec.epoch != last_epoch) {
      last_epoch = rec.epoch;
      std::fprintf(stderr, "epoch %zu lr %g\n", rec.epoch, rec.lr);
    }
  });
  toy::save_net(out / "checkpoint", net);
  toy::write_loss_log(out / "loss.csv", res.log);
  {
    std::ofstream os(out / "summary.json");
    os << json{{"parameters", net.parameter_count()}, {"epoch_loss", res.epoch_loss}}.dump(2) << '\n';
  }
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) std::printf("epoch %zu loss %.6f\n", e, res.epoch_loss[e]);
  std::printf("parameters %zu\n", net.parameter_count());
  return 0;
}

struct DetectArgs {
  Common common;
  std::optional<std::string> checkpoint, data, out, domains;
  std::optional<std::size_t> train_count;
  std::optional<double> floor;
  std::optional<std::size_t> window;
  std::optional<std::size_t> max_candidates;
};

void add_detect_options(CLI::App* app, DetectArgs& a) {
  add_common(app, a.common);
  app->add_option("--checkpoint", a.checkpoint, "Checkpoint directory written by train")->required(false);
  app->add_option("--data", a.data, "Synthetic data root written by synth");
  app->add_option("--out", a.out, "Output directory");
  app->add_option("--domains", a.domains, "Comma-separated subset of domains (default: all)");
  app->add_option("--train-count", a.train_count, "Volumes per domain used for training; the rest are evaluated (default 15)");
  app->add_option("--floor", a.floor, "Smallest heatmap peak kept as a candidate (default 0.01)");
  app->add_option("--max-candidates", a.max_candidates, "Candidates kept per scan, 0 for all (default 64)");
  app->add_option("--window", a.window, "Sliding-window size, 0 for one whole-volume pass (default 32)");
}

int run_detect(const DetectArgs& a, bool assignments_only) {
  Resolver r(a.common.config);
  const fs::path ckpt = r.get<std::string>("checkpoint", a.checkpoint);
  const fs::path data = r.get<std::string>("data", a.data);
  const fs::path out = r.get<std::string>("out", a.out);
  const auto only = split_list(r.get<std::string>("domains", a.domains, ""));
  const std::size_t train_count = r.get<std::size_t>("train_count", a.train_count, 15);
  const std::size_t jobs = r.get<std::size_t>("jobs", a.common.jobs, 1);
  toy::EvalOptions eo;
  eo.jobs = jobs;
  eo.prob_floor = r.get<double>("floor", a.floor, 0.01);
  eo.max_per_scan = r.get<std::size_t>("max_candidates", a.max_candidates, 64);
  eo.window = r.get<std::size_t>("window", a.window, 32);
  toy::ToyNet net = toy::load_net(ckpt);
  const auto sets = load_split(data, only, train_count, true);
  r.write(out, assignments_only ? "assignments" : "detect");

  AssignmentRecord rec;
  json summary = json::object();
  for (const auto& d : sets) {
    const toy::EvalOutput ev = toy::evaluate(net, d, &rec, eo);
    if (!assignments_only) {
      fs::create_directories(out / d.id);
      froc::write_candidates(out / d.id / "candidates.csv", ev.candidates);
      ct::write_annotations(out / d.id / "annotations.csv", ev.annotations);
      summary[d.id] = {{"scans", ev.scans}, {"candidates", ev.candidates.size()}, {"average", ev.froc.average}};
      std::printf("%s: %zu scans, %zu candidates, average sensitivity %.5f\n", d.id.c_str(), ev.scans,
                  ev.candidates.size(), ev.froc.average);
    }
  }
  if (!assignments_only) {
    std::ofstream os(out / "detect.json");
    os << summary.dump(2) << '\n';
    return 0;
  }

  const toy::Divergence div = toy::assignment_divergence(rec);
  {
    std::ofstream os(out / "assignments.json");
    os << json{{"assignments", rec.to_json()}, {"max_l1", div.max_l1}, {"max_l1_at", div.where}}.dump(2) << '\n';
  }
  std::ofstream os(out / "assignments.csv");
  os << "dataset,module,direction,group,adapter,weight,samples\n";
  double worst = 0.0;
  for (const auto& [key, stats] : rec.entries()) {
    const auto mean = stats.mean();
    double s = 0.0;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      s += mean[j];
      os << key.dataset << ',' << key.module << ',' << direction_name(key.direction) << ',' << key.group << ',' << j
         << ',' << csv::format(mean[j]) << ',' << stats.count << '\n';
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  std::printf("assignment vectors %zu, max |sum - 1| %.3g\n", rec.entries().size(), worst);
  std::printf("largest L1 between domain means %.5f at %s\n", div.max_l1, div.where.c_str());
  return 0;
}

struct GradcheckArgs {
  std::optional<std::string> config, run_dir;
  std::optional<double> step, tolerance;
  std::optional<std::uint64_t> seed;
};

int run_gradcheck(const GradcheckArgs& a) {
  Resolver r(a.config);
  SuiteOptions o;
  o.step = r.get<double>("step", a.step, o.step);
  o.tolerance = r.get<double>("tolerance", a.tolerance, o.tolerance);
  o.seed = r.get<std::uint64_t>("seed", a.seed, o.seed);
  const std::string run_dir = r.get<std::string>("run_dir", a.run_dir, "");
  if (!run_dir.empty()) r.write(run_dir, "gradcheck");
  const SuiteReport rep = gradcheck_suite(o);
  std::printf("%-42s %8s %12s %8s\n", "parameter", "checked", "max_rel_err", "reprobed");
  for (const auto& row : rep.rows)
    std::printf("%-42s %8zu %12.3e %8zu\n", row.name.c_str(), row.checked, row.rel_err, row.reprobed);
  std::printf("worst %.3e (tolerance %.1e): %s\n", rep.worst, o.tolerance, rep.passed ? "pass" : "FAIL");
  return rep.passed ? 0 : kExitNumeric;
}

struct ParamsArgs {
  std::optional<std::string> config, directions, fuse, run_dir;
  std::optional<std::size_t> channels, groups, adapters, reduction;
};

int run_params(const ParamsArgs& a) {
  Resolver r(a.config);
  SgdaConfig c;
  c.channels = r.get<std::size_t>("channels", a.channels);
  c.groups = r.get<std::size_t>("groups", a.groups, 4);
  c.adapters = r.get<std::size_t>("adapters", a.adapters, 3);
  c.reduction = r.get<std::size_t>("reduction", a.reduction, 16);
  const std::string fuse = r.get<std::string>("fuse", a.fuse, "cross_attention");
  if (fuse != "cross_attention" && fuse != "mean_only") throw UsageError("unknown fuse mode '" + fuse + "'");
  c.fuse = fuse == "mean_only" ? Fuse::mean_only : Fuse::cross_attention;
  c.directions.clear();
  for (const auto& name : split_list(r.get<std::string>("directions", a.directions, "axial,coronal,sagittal"))) {
    auto d = parse_direction(name);
    if (!d) throw UsageError("unknown direction '" + name + "'");
    c.directions.push_back(*d);
  }
  c.validate();
  const std::string run_dir = r.get<std::string>("run_dir", a.run_dir, "");
  if (!run_dir.empty()) r.write(run_dir, "params");
  std::printf("%zu\n", parameter_count(c));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slice grouped domain attention: preprocessing, evaluation and the synthetic detector workflow"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Window, pad, resample and crop CT scans into SGDT volumes");
  add_common(c_pre, pre.common);
  c_pre->add_option("--input", pre.input, "Scan header (.mhd); repeat for several scans");
  c_pre->add_option("--mask", pre.mask, "Lung mask header (.mhd), one per --input");
  c_pre->add_option("--out", pre.out, "Output directory");
  c_pre->add_option("--spacing", pre.spacing, "Target isotropic spacing in mm (default 1)");
  c_pre->add_option("--margin", pre.margin, "Crop margin around the mask in voxels (default 8)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "FROC evaluation of a candidate list");
  add_common(c_eval, ev.common);
  c_eval->add_option("--candidates", ev.candidates, "Candidates CSV: seriesuid,coordX,coordY,coordZ,probability");
  c_eval->add_option("--annotations", ev.annotations, "Annotations CSV");
  c_eval->add_option("--annotation-format", ev.annotation_format,
                     "center_diameter (id,x,y,z,diameter) or corner_pair (id,x1,y1,z1,x2,y2,z2)");
  c_eval->add_option("--scans", ev.scans, "Number of scans in the evaluation set");
  c_eval->add_option("--out", ev.out, "Curve CSV to write");
  c_eval->add_option("--run-dir", ev.run_dir, "Where config.resolved.json goes (default: directory of --out)");
  ev.strict = c_eval->add_flag("--strict", "Fail on candidates from scans without annotations");

  SynthArgs sy;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic multi-domain volumes with planted nodules");
  add_common(c_synth, sy.common);
  c_synth->add_option("--out", sy.out, "Output root; one directory per domain");
  c_synth->add_option("--count", sy.count, "Volumes per domain (default 20)");
  c_synth->add_option("--seed", sy.seed, "Generator seed (default 1)");
  c_synth->add_option("--domains-file", sy.domains_file, "JSON list of domain specs (default: alpha, beta, gamma)");
  c_synth->add_option("--domains", sy.domains, "Comma-separated subset of domain ids");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the detector on synthetic domains");
  add_common(c_train, tr.common);
  add_net_options(c_train, tr.net);
  c_train->add_option("--data", tr.data, "Synthetic data root written by synth");
  c_train->add_option("--out", tr.out, "Run directory");
  c_train->add_option("--domains", tr.domains, "Comma-separated subset of domains (default: all)");
  c_train->add_option("--train-count", tr.train_count, "Leading volumes per domain used for training (default 15)");
  c_train->add_option("--epochs", tr.epochs, "Epochs (default 30)");
  c_train->add_option("--steps-per-epoch", tr.steps_per_epoch, "Steps per epoch (default: volumes / batch)");
  c_train->add_option("--batch-size", tr.batch_size, "Patches per step, all from one dataset (default 2)");
  c_train->add_option("--patch", tr.patch, "Cubic patch extent (default 32)");
  c_train->add_option("--lr", tr.lr, "Base learning rate (default 0.01)");
  c_train->add_option("--momentum", tr.momentum, "SGD momentum (default 0.9)");
  c_train->add_option("--weight-decay", tr.weight_decay, "L2 weight decay (default 1e-4)");
  c_train->add_option("--milestones", tr.milestones, "Comma-separated epochs where the rate is multiplied by gamma");
  c_train->add_option("--gamma", tr.gamma, "Learning-rate decay factor (default 0.1)");
  c_train->add_option("--nodule-fraction", tr.nodule_fraction, "Share of nodule-centred patches (default 0.7)");
  c_train->add_option("--seed", tr.seed, "Initialisation and sampling seed (default 1)");

  DetectArgs de;
  auto* c_detect = app.add_subcommand("detect", "Run a checkpoint over held-out volumes and write candidate lists");
  add_detect_options(c_detect, de);

  DetectArgs as;
  auto* c_assign = app.add_subcommand("assignments", "Export mean adapter assignments per domain for a checkpoint");
  add_detect_options(c_assign, as);

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every attention and block parameter");
  c_grad->add_option("--config", gc.config, "JSON file with option defaults");
  c_grad->add_option("--step", gc.step, "Central-difference step (default 1e-3)");
  c_grad->add_option("--tolerance", gc.tolerance, "Largest accepted relative error (default 1e-4)");
  c_grad->add_option("--seed", gc.seed, "Seed of the random weights and inputs (default 2026)");
  c_grad->add_option("--run-dir", gc.run_dir, "Write config.resolved.json here");

  ParamsArgs pa;
  auto* c_params = app.add_subcommand("params", "Parameter count of one attention module");
  c_params->add_option("--config", pa.config, "JSON file with option defaults");
  c_params->add_option("--channels", pa.channels, "Channels C");
  c_params->add_option("--groups", pa.groups, "Slice groups G (default 4)");
  c_params->add_option("--adapters", pa.adapters, "Adapters N (default 3)");
  c_params->add_option("--reduction", pa.reduction, "Reduction ratio r (default 16)");
  c_params->add_option("--directions", pa.directions, "Comma-separated directions (default axial,coronal,sagittal)");
  c_params->add_option("--fuse", pa.fuse, "cross_attention or mean_only");
  c_params->add_option("--run-dir", pa.run_dir, "Write config.resolved.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_pre) return run_preprocess(pre);
    if (*c_eval) return run_eval(ev);
    if (*c_synth) return run_synth(sy);
    if (*c_train) return run_train(tr);
    if (*c_detect) return run_detect(de, false);
    if (*c_assign) return run_detect(as, true);
    if (*c_grad) return run_gradcheck(gc);
    if (*c_params) return run_params(pa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kExitUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitUsage;
}
