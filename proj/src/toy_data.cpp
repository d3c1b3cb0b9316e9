// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic chest-like volumes: an ellipsoidal lung on a 170 background,
// tubular vessels, spherical nodules, and a per-domain intensity shift,
// noise level and z blur.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sgda/errors.hpp"
#include "sgda/parallel.hpp"
#include "sgda/toy_detector.hpp"

namespace sgda::toy {

namespace {

constexpr double kParenchyma = 50.0;
constexpr double kVessel = 165.0;
constexpr double kNodule = 185.0;

using ct::Vec3;

double dist_to_segment(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  Vec3 ap{p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  double t = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double q = ap[k] - t * ab[k];
    d2 += q * q;
  }
  return std::sqrt(d2);
}

// Anti-aliased fill of everything within `radius` of a shape, via its distance function.
template <class Dist>
void paint(Tensor& img, std::size_t n, const Vec3& lo, const Vec3& hi, double radius, double value, Dist dist) {
  const auto clampi = [&](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, double(n - 1))); };
  for (std::size_t z = clampi(lo[2] - radius - 1); z <= clampi(hi[2] + radius + 1); ++z)
    for (std::size_t y = clampi(lo[1] - radius - 1); y <= clampi(hi[1] + radius + 1); ++y)
      for (std::size_t x = clampi(lo[0] - radius - 1); x <= clampi(hi[0] + radius + 1); ++x) {
        const double w = std::clamp(radius + 0.5 - dist(Vec3{double(x), double(y), double(z)}), 0.0, 1.0);
        if (w <= 0.0) continue;
        double& v = img[(z * n + y) * n + x];
        v = std::max(v, kParenchyma + w * (value - kParenchyma));
      }
}

void blur_z(Tensor& img, std::size_t n, double sigma) {
  if (sigma <= 0.0) return;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= s;
  Tensor out(img.shape(), 0.0);
  const long N = static_cast<long>(n);
  for (long z = 0; z < N; ++z)
    for (int i = -r; i <= r; ++i) {
      const long src = std::clamp(z + i, 0L, N - 1);
      const double w = k[i + r];
      for (std::size_t p = 0; p < n * n; ++p) out[z * n * n + p] += w * img[src * n * n + p];
    }
  img = std::move(out);
}

}  // namespace

void DomainSpec::validate() const {
  if (extent < 16) throw ConfigError("domain " + id + ": extent must be at least 16");
  if (!(radius_min > 0.0) || radius_max < radius_min) throw ConfigError("domain " + id + ": bad radius range");
  if (radius_max * 2 + 4 > 0.8 * static_cast<double>(extent)) {
    throw ConfigError("domain " + id + ": radius range does not fit the volume");
  }
  if (nodules_max < nodules_min) throw ConfigError("domain " + id + ": bad nodule count range");
  if (!(gain > 0.0) || noise_sigma < 0.0 || blur < 0.0) throw ConfigError("domain " + id + ": bad intensity model");
}

void to_json(nlohmann::json& j, const DomainSpec& d) {
  j = {{"id", d.id},
       {"extent", d.extent},
       {"gain", d.gain},
       {"offset", d.offset},
       {"noise_sigma", d.noise_sigma},
       {"vessels", d.vessels},
       {"radius_min", d.radius_min},
       {"radius_max", d.radius_max},
       {"nodules_min", d.nodules_min},
       {"nodules_max", d.nodules_max},
       {"blur", d.blur}};
}

void from_json(const nlohmann::json& j, DomainSpec& d) {
  const DomainSpec def;
  d.id = j.value("id", def.id);
  d.extent = j.value("extent", def.extent);
  d.gain = j.value("gain", def.gain);
  d.offset = j.value("offset", def.offset);
  d.noise_sigma = j.value("noise_sigma", def.noise_sigma);
  d.vessels = j.value("vessels", def.vessels);
  d.radius_min = j.value("radius_min", def.radius_min);
  d.radius_max = j.value("radius_max", def.radius_max);
  d.nodules_min = j.value("nodules_min", def.nodules_min);
  d.nodules_max = j.value("nodules_max", def.nodules_max);
  d.blur = j.value("blur", def.blur);
}

std::vector<DomainSpec> default_domains() {
  DomainSpec a;
  a.id = "alpha";
  DomainSpec b;
  b.id = "beta";
  b.gain = 0.6;
  b.offset = 25.0;
  b.noise_sigma = 9.0;
  b.vessels = 7;
  b.radius_min = 2.0;
  b.radius_max = 3.5;
  b.blur = 1.2;
  DomainSpec c;
  c.id = "gamma";
  c.gain = 1.3;
  c.offset = -20.0;
  c.noise_sigma = 2.0;
  c.vessels = 2;
  c.radius_min = 3.5;
  c.radius_max = 5.0;
  c.nodules_min = 1;
  c.nodules_max = 2;
  return {a, b, c};
}

std::string series_id(const DomainSpec& spec, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return spec.id + "_" + buf;
}

Sample generate_volume(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t n = spec.extent;
  const double nd = static_cast<double>(n);
  const Vec3 mid{(nd - 1) / 2, (nd - 1) / 2, (nd - 1) / 2};
  const Vec3 axes{nd * (0.40 + 0.04 * u01(rng)), nd * (0.38 + 0.04 * u01(rng)), nd * (0.42 + 0.04 * u01(rng))};
  auto lung_level = [&](const Vec3& p, double shrink) {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double a = axes[k] - shrink;
      if (a <= 0) return 2.0;
      s += (p[k] - mid[k]) * (p[k] - mid[k]) / (a * a);
    }
    return s;
  };
  auto point_in_lung = [&](double shrink) {
    for (int tries = 0; tries < 1000; ++tries) {
      Vec3 p;
      for (int k = 0; k < 3; ++k) p[k] = mid[k] + (2 * u01(rng) - 1) * axes[k];
      if (lung_level(p, shrink) <= 1.0) return std::optional<Vec3>(p);
    }
    return std::optional<Vec3>();
  };

  Tensor img({n, n, n}, kParenchyma);

  for (std::size_t v = 0; v < spec.vessels; ++v) {
    auto a = point_in_lung(2.0), b = point_in_lung(2.0), c = point_in_lung(4.0);
    if (!a || !b || !c) throw DataError("domain " + spec.id + ": cannot place vessel");
    const double r = 0.8 + 0.6 * u01(rng);
    // Quadratic Bezier through a bent control point, drawn as short segments.
    Vec3 prev = *a;
    for (int s = 1; s <= 8; ++s) {
      const double t = s / 8.0;
      Vec3 cur;
      for (int k = 0; k < 3; ++k)
        cur[k] = (1 - t) * (1 - t) * (*a)[k] + 2 * (1 - t) * t * (*c)[k] + t * t * (*b)[k];
      Vec3 lo, hi;
      for (int k = 0; k < 3; ++k) {
        lo[k] = std::min(prev[k], cur[k]);
        hi[k] = std::max(prev[k], cur[k]);
      }
      paint(img, n, lo, hi, r, kVessel, [&](const Vec3& p) { return dist_to_segment(p, prev, cur); });
      prev = cur;
    }
  }

  Sample out;
  const std::size_t count =
      spec.nodules_min + (spec.nodules_max > spec.nodules_min ? rng() % (spec.nodules_max - spec.nodules_min + 1) : 0);
  for (std::size_t i = 0; i < count; ++i) {
    const double r = spec.radius_min + (spec.radius_max - spec.radius_min) * u01(rng);
    std::optional<Vec3> center;
    for (int tries = 0; tries < 200 && !center; ++tries) {
      auto p = point_in_lung(r + 2.0);
      if (!p) break;
      bool clear = true;
      for (const auto& a : out.nodules) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) d2 += ((*p)[k] - a.center[k]) * ((*p)[k] - a.center[k]);
        clear = clear && std::sqrt(d2) >= r + a.radius() + 3.0;
      }
      if (clear) center = p;
    }
    if (!center) {
      throw DataError("domain " + spec.id + ": cannot place nodule " + std::to_string(i + 1) + " of " +
                      std::to_string(count) + " after 200 attempts");
    }
    const Vec3 c = *center;
    paint(img, n, c, c, r, kNodule, [&](const Vec3& p) {
      return std::sqrt((p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]) + (p[2] - c[2]) * (p[2] - c[2]));
    });
    out.nodules.push_back({"", c, 2.0 * r});
  }

  blur_z(img, n, spec.blur);

  Tensor mask({n, n, n}, 0.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const std::size_t i = (z * n + y) * n + x;
        const double eps = spec.noise_sigma * noise(rng);  // drawn for every voxel to keep streams aligned
        if (lung_level({double(x), double(y), double(z)}, 0.0) > 1.0) {
          img[i] = ct::kPadValue;
          continue;
        }
        mask[i] = 1.0;
        const double v = 128.0 + spec.gain * (img[i] - 128.0) + spec.offset + eps;
        img[i] = std::round(std::clamp(v, 0.0, 255.0));
      }

  out.volume.voxels = std::move(img);
  out.volume.kind = ct::VoxelKind::windowed;
  out.volume.mask = std::move(mask);
  return out;
}

std::vector<ct::Annotation> Dataset::annotations() const {
  std::vector<ct::Annotation> out;
  for (const auto& s : samples)
    for (auto a : s.nodules) {
      a.series_id = s.id;
      out.push_back(std::move(a));
    }
  return out;
}

Dataset make_dataset(const DomainSpec& spec, std::size_t count, std::uint64_t seed, std::size_t jobs) {
  spec.validate();
  std::uint32_t name_hash = 2166136261u;
  for (unsigned char ch : spec.id) name_hash = (name_hash ^ ch) * 16777619u;
  Dataset d;
  d.id = spec.id;
  d.samples.resize(count);
  parallel_for(count, jobs, [&](std::size_t i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), name_hash,
                      static_cast<std::uint32_t>(i)};
    std::array<std::uint32_t, 2> words;
    seq.generate(words.begin(), words.end());
    Sample s = generate_volume(spec, (std::uint64_t(words[0]) << 32) | words[1]);
    s.id = series_id(spec, i);
    for (auto& a : s.nodules) a.series_id = s.id;
    d.samples[i] = std::move(s);
  });
  return d;
}

std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t train) {
  if (train > d.samples.size()) {
    throw ConfigError("dataset " + d.id + " has " + std::to_string(d.samples.size()) + " volumes, cannot hold out " +
                      std::to_string(train) + " for training");
  }
  Dataset a{d.id, {d.samples.begin(), d.samples.begin() + static_cast<long>(train)}};
  Dataset b{d.id, {d.samples.begin() + static_cast<long>(train), d.samples.end()}};
  return {std::move(a), std::move(b)};
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d, const DomainSpec& spec) {
  std::filesystem::create_directories(dir);
  nlohmann::json series = nlohmann::json::array();
  for (const auto& s : d.samples) {
    const auto& v = s.volume;
    ct::write_mhd(dir / (s.id + ".mhd"), v.voxels, ct::VoxelKind::windowed, v.spacing, v.offset);
    if (v.mask) ct::write_mhd(dir / (s.id + "_mask.mhd"), *v.mask, ct::VoxelKind::windowed, v.spacing, v.offset);
    series.push_back(s.id);
  }
  ct::write_annotations(dir / "annotations.csv", d.annotations());
  std::ofstream os(dir / "domain.json");
  if (!os) throw UsageError("cannot write " + (dir / "domain.json").string());
  os << nlohmann::json{{"id", d.id}, {"spec", spec}, {"series", series}}.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "domain.json");
  if (!is) throw DataError("missing " + (dir / "domain.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "domain.json").string() + ": " + e.what());
  }
  Dataset d;
  d.id = meta.value("id", std::string());
  if (d.id.empty()) throw DataError((dir / "domain.json").string() + ": missing dataset id");
  std::map<std::string, std::size_t> index;
  for (const auto& id : meta.at("series")) {
    const std::string sid = id.get<std::string>();
    Sample s;
    s.id = sid;
    s.volume = ct::read_scan(dir / (sid + ".mhd"), dir / (sid + "_mask.mhd"));
    if (s.volume.kind != ct::VoxelKind::windowed) throw DataError(sid + ": expected an 8-bit windowed volume");
    index[sid] = d.samples.size();
    d.samples.push_back(std::move(s));
  }
  for (auto& a : ct::parse_annotations(dir / "annotations.csv", ct::AnnotationFormat::center_diameter)) {
    auto it = index.find(a.series_id);
    if (it == index.end()) throw DataError("annotation for unknown series '" + a.series_id + "' in " + dir.string());
    d.samples[it->second].nodules.push_back(std::move(a));
  }
  return d;
}

}  // namespace sgda::toy
