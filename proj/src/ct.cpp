// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/ct.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sgda/csv.hpp"
#include "sgda/errors.hpp"

namespace sgda::ct {

namespace fs = std::filesystem;

namespace {

double round_half_away(double v) { return std::round(v); }

std::string trimmed(std::string_view s) { return std::string(csv::trim(s)); }

std::vector<double> numbers(const std::map<std::string, std::string>& kv, const std::string& key,
                            std::size_t count, const std::string& source) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(source + ": missing key " + key);
  std::istringstream ss(it->second);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) out.push_back(csv::to_double(tok, source + ": " + key));
  if (out.size() != count) {
    throw ParseError(source + ": " + key + " needs " + std::to_string(count) + " values, got " +
                     std::to_string(out.size()));
  }
  return out;
}

}  // namespace

void Volume::validate() const {
  if (voxels.ndim() != 3) throw DimensionError("volume must be [D, H, W], got " + shape_str(voxels.shape()));
  for (double s : spacing)
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError("volume spacing must be positive");
  if (mask && mask->shape() != voxels.shape()) {
    throw DimensionError("mask shape " + shape_str(mask->shape()) + " differs from volume " +
                         shape_str(voxels.shape()));
  }
}

// ---- MetaImage ------------------------------------------------------------

Volume read_mhd(const fs::path& header) {
  const std::string source = header.string();
  std::ifstream is(header);
  if (!is) throw ParseError("cannot open " + source);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (csv::trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source + ": line " + std::to_string(n) + " has no '='");
    kv[trimmed(std::string_view(line).substr(0, eq))] = trimmed(std::string_view(line).substr(eq + 1));
  }
  if (auto it = kv.find("NDims"); it != kv.end() && it->second != "3") {
    throw ParseError(source + ": NDims must be 3, got " + it->second);
  }
  if (auto it = kv.find("BinaryDataByteOrderMSB"); it != kv.end() && it->second != "False") {
    throw ParseError(source + ": BinaryDataByteOrderMSB must be False");
  }
  if (auto it = kv.find("CompressedData"); it != kv.end() && it->second != "False") {
    throw ParseError(source + ": CompressedData is not supported");
  }

  const auto dims = numbers(kv, "DimSize", 3, source);
  const auto spacing = numbers(kv, "ElementSpacing", 3, source);
  const auto offset = numbers(kv, "Offset", 3, source);
  auto type_it = kv.find("ElementType");
  if (type_it == kv.end()) throw ParseError(source + ": missing key ElementType");
  std::size_t elem = 0;
  VoxelKind kind = VoxelKind::hu;
  if (type_it->second == "MET_SHORT") {
    elem = 2;
  } else if (type_it->second == "MET_UCHAR") {
    elem = 1;
    kind = VoxelKind::windowed;
  } else {
    throw ParseError(source + ": ElementType " + type_it->second + " is not supported");
  }
  auto file_it = kv.find("ElementDataFile");
  if (file_it == kv.end()) throw ParseError(source + ": missing key ElementDataFile");
  if (file_it->second == "LOCAL") throw ParseError(source + ": ElementDataFile LOCAL is not supported");

  Shape shape;
  for (int a = 2; a >= 0; --a) {
    if (dims[a] < 1 || dims[a] != std::floor(dims[a])) throw ParseError(source + ": DimSize must be positive integers");
    shape.push_back(static_cast<std::size_t>(dims[a]));
  }
  const fs::path payload = header.parent_path() / file_it->second;
  std::ifstream raw(payload, std::ios::binary);
  if (!raw) throw ParseError(source + ": cannot open ElementDataFile " + payload.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  const std::size_t count = shape_numel(shape);
  if (bytes.size() != count * elem) {
    throw ParseError(source + ": ElementDataFile holds " + std::to_string(bytes.size()) + " bytes, DimSize needs " +
                     std::to_string(count * elem));
  }

  Volume v;
  v.voxels = Tensor(shape);
  v.kind = kind;
  auto data = v.voxels.data();
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < count; ++i) {
    if (elem == 1) {
      data[i] = b[i];
    } else {
      const auto u = static_cast<std::uint16_t>(b[2 * i] | (b[2 * i + 1] << 8));
      data[i] = static_cast<std::int16_t>(u);
    }
  }
  for (int a = 0; a < 3; ++a) {
    v.spacing[a] = spacing[a];
    v.offset[a] = offset[a];
  }
  v.validate();
  return v;
}

void write_mhd(const fs::path& header, const Tensor& voxels, VoxelKind kind, const Vec3& spacing,
               const Vec3& offset) {
  if (voxels.ndim() != 3) throw DimensionError("write_mhd expects [D, H, W]");
  fs::path raw = header;
  raw.replace_extension(".raw");
  std::ofstream os(raw, std::ios::binary);
  if (!os) throw Error("cannot write " + raw.string());
  for (double v : voxels.data()) {
    const double r = round_half_away(v);
    if (kind == VoxelKind::windowed) {
      os.put(static_cast<char>(static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0))));
    } else {
      const auto s = static_cast<std::int16_t>(std::clamp(r, -32768.0, 32767.0));
      const auto u = static_cast<std::uint16_t>(s);
      os.put(static_cast<char>(u & 0xff));
      os.put(static_cast<char>(u >> 8));
    }
  }
  std::ofstream hs(header);
  if (!hs) throw Error("cannot write " + header.string());
  hs.precision(17);
  hs << "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n"
     << "Offset = " << offset[0] << ' ' << offset[1] << ' ' << offset[2] << '\n'
     << "ElementSpacing = " << spacing[0] << ' ' << spacing[1] << ' ' << spacing[2] << '\n'
     << "DimSize = " << voxels.dim(2) << ' ' << voxels.dim(1) << ' ' << voxels.dim(0) << '\n'
     << "ElementType = " << (kind == VoxelKind::windowed ? "MET_UCHAR" : "MET_SHORT") << '\n'
     << "ElementDataFile = " << raw.filename().string() << '\n';
}

Volume read_scan(const fs::path& scan, const fs::path& mask) {
  Volume v = read_mhd(scan);
  Volume m = read_mhd(mask);
  if (m.voxels.shape() != v.voxels.shape()) {
    throw DimensionError("mask " + mask.string() + " has shape " + shape_str(m.voxels.shape()) + ", scan has " +
                         shape_str(v.voxels.shape()));
  }
  for (double& x : m.voxels.data()) x = x != 0.0 ? 1.0 : 0.0;
  v.mask = std::move(m.voxels);
  return v;
}

// ---- intensity ------------------------------------------------------------

double window_value(double hu) {
  return round_half_away((std::clamp(hu, kHuLow, kHuHigh) - kHuLow) * 255.0 / (kHuHigh - kHuLow));
}

Volume hu_window(const Volume& v) {
  Volume out = v;
  for (double& x : out.voxels.data()) x = window_value(x);
  out.kind = VoxelKind::windowed;
  return out;
}

Volume apply_mask_padding(const Volume& v) {
  if (!v.mask) throw UsageError("mask padding needs a lung mask");
  v.validate();
  Volume out = v;
  auto data = out.voxels.data();
  const auto m = v.mask->data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (m[i] == 0.0) data[i] = kPadValue;
  return out;
}

// ---- geometry -------------------------------------------------------------

namespace {

struct Tap {
  std::size_t lo, hi;
  double frac;
};

std::vector<Tap> taps(std::size_t in, std::size_t out, double step) {
  std::vector<Tap> t(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double p = std::min(static_cast<double>(i) * step, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(p));
    t[i] = {lo, std::min(lo + 1, in - 1), p - static_cast<double>(lo)};
  }
  return t;
}

Tensor trilinear(const Tensor& src, const Shape& out_shape, const std::array<std::vector<Tap>, 3>& t) {
  // t indexed by voxel axis x, y, z
  const std::size_t H = src.dim(1), W = src.dim(2);
  Tensor out(out_shape);
  std::size_t idx = 0;
  for (const Tap& tz : t[2])
    for (const Tap& ty : t[1])
      for (const Tap& tx : t[0]) {
        auto v = [&](std::size_t z, std::size_t y, std::size_t x) { return src[(z * H + y) * W + x]; };
        const double c00 = v(tz.lo, ty.lo, tx.lo) * (1 - tx.frac) + v(tz.lo, ty.lo, tx.hi) * tx.frac;
        const double c01 = v(tz.lo, ty.hi, tx.lo) * (1 - tx.frac) + v(tz.lo, ty.hi, tx.hi) * tx.frac;
        const double c10 = v(tz.hi, ty.lo, tx.lo) * (1 - tx.frac) + v(tz.hi, ty.lo, tx.hi) * tx.frac;
        const double c11 = v(tz.hi, ty.hi, tx.lo) * (1 - tx.frac) + v(tz.hi, ty.hi, tx.hi) * tx.frac;
        const double c0 = c00 * (1 - ty.frac) + c01 * ty.frac;
        const double c1 = c10 * (1 - ty.frac) + c11 * ty.frac;
        out[idx++] = c0 * (1 - tz.frac) + c1 * tz.frac;
      }
  return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target) {
  v.validate();
  if (!(target > 0.0)) throw ConfigError("resampling target spacing must be positive");
  std::array<std::vector<Tap>, 3> t;
  std::array<std::size_t, 3> ext{};
  for (std::size_t a = 0; a < 3; ++a) {
    const double len = static_cast<double>(v.extent(a)) * v.spacing[a] / target;
    ext[a] = static_cast<std::size_t>(round_half_away(len));
    if (ext[a] == 0) {
      static constexpr const char* kAxis[] = {"x", "y", "z"};
      throw DataError(std::string("resampled ") + kAxis[a] + " extent is 0");
    }
    t[a] = taps(v.extent(a), ext[a], target / v.spacing[a]);
  }
  const Shape shape{ext[2], ext[1], ext[0]};
  Volume out;
  out.kind = v.kind;
  out.offset = v.offset;
  out.spacing = {target, target, target};
  out.voxels = trilinear(v.voxels, shape, t);
  if (v.mask) {
    Tensor m = trilinear(*v.mask, shape, t);
    for (double& x : m.data()) x = x >= 0.5 ? 1.0 : 0.0;
    out.mask = std::move(m);
  }
  return out;
}

Vec3 world_to_voxel(const Vec3& world, const Volume& v) {
  return {(world[0] - v.offset[0]) / v.spacing[0], (world[1] - v.offset[1]) / v.spacing[1],
          (world[2] - v.offset[2]) / v.spacing[2]};
}

Vec3 voxel_to_world(const Vec3& voxel, const Volume& v) {
  return {v.offset[0] + voxel[0] * v.spacing[0], v.offset[1] + voxel[1] * v.spacing[1],
          v.offset[2] + voxel[2] * v.spacing[2]};
}

Cropped crop_to_mask(const Volume& v, std::size_t margin) {
  if (!v.mask) throw UsageError("cropping needs a lung mask");
  v.validate();
  std::array<std::size_t, 3> lo{v.extent(0), v.extent(1), v.extent(2)}, hi{0, 0, 0};
  bool any = false;
  const auto m = v.mask->data();
  for (std::size_t z = 0; z < v.depth(); ++z)
    for (std::size_t y = 0; y < v.height(); ++y)
      for (std::size_t x = 0; x < v.width(); ++x) {
        if (m[(z * v.height() + y) * v.width() + x] == 0.0) continue;
        any = true;
        const std::size_t p[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a] + 1);
        }
      }
  if (!any) throw DataError("lung mask is empty");
  for (int a = 0; a < 3; ++a) {
    lo[a] = lo[a] > margin ? lo[a] - margin : 0;
    hi[a] = std::min(hi[a] + margin, v.extent(a));
  }
  const Shape shape{hi[2] - lo[2], hi[1] - lo[1], hi[0] - lo[0]};
  Cropped c;
  c.corner = {static_cast<long>(lo[0]), static_cast<long>(lo[1]), static_cast<long>(lo[2])};
  c.volume.kind = v.kind;
  c.volume.spacing = v.spacing;
  c.volume.offset = voxel_to_world({double(lo[0]), double(lo[1]), double(lo[2])}, v);
  c.volume.voxels = Tensor(shape);
  Tensor mask(shape);
  std::size_t i = 0;
  for (std::size_t z = lo[2]; z < hi[2]; ++z)
    for (std::size_t y = lo[1]; y < hi[1]; ++y)
      for (std::size_t x = lo[0]; x < hi[0]; ++x, ++i) {
        const std::size_t src = (z * v.height() + y) * v.width() + x;
        c.volume.voxels[i] = v.voxels[src];
        mask[i] = m[src];
      }
  c.volume.mask = std::move(mask);
  return c;
}

Tensor extract_patch(const Volume& v, const Index3& corner, std::size_t extent) {
  Tensor out({1, extent, extent, extent}, kPadValue);
  const long W = static_cast<long>(v.width()), H = static_cast<long>(v.height()), D = static_cast<long>(v.depth());
  const long e = static_cast<long>(extent);
  // Clip the patch box against the volume once, then copy rows.
  const long x0 = std::max(0L, corner[0]), x1 = std::min(W, corner[0] + e);
  if (x0 >= x1) return out;
  auto data = out.data();
  const auto src = v.voxels.data();
  for (long pz = 0; pz < e; ++pz) {
    const long z = corner[2] + pz;
    if (z < 0 || z >= D) continue;
    for (long py = 0; py < e; ++py) {
      const long y = corner[1] + py;
      if (y < 0 || y >= H) continue;
      const double* row = src.data() + (z * H + y) * W;
      double* dst = data.data() + (pz * e + py) * e;
      for (long x = x0; x < x1; ++x) dst[x - corner[0]] = row[x];
    }
  }
  return out;
}

// ---- annotations ----------------------------------------------------------

std::optional<AnnotationFormat> parse_annotation_format(std::string_view name) {
  if (name == "center_diameter") return AnnotationFormat::center_diameter;
  if (name == "corner_pair") return AnnotationFormat::corner_pair;
  return std::nullopt;
}

std::vector<Annotation> parse_annotations(std::istream& is, AnnotationFormat format, const std::string& source) {
  const std::size_t want = format == AnnotationFormat::center_diameter ? 5 : 7;
  std::vector<Annotation> out;
  for (const auto& row : csv::read_rows(is, source)) {
    const std::string where = source + ": line " + std::to_string(row.line);
    if (row.fields.size() != want) {
      throw ParseError(where + ": expected " + std::to_string(want) + " fields, got " +
                       std::to_string(row.fields.size()));
    }
    if (row.fields[0].empty()) throw ParseError(where + ": empty series id");
    Annotation a;
    a.series_id = row.fields[0];
    std::vector<double> v;
    for (std::size_t i = 1; i < want; ++i) v.push_back(csv::to_double(row.fields[i], where));
    if (format == AnnotationFormat::center_diameter) {
      a.center = {v[0], v[1], v[2]};
      a.diameter = v[3];
    } else {
      for (int k = 0; k < 3; ++k) {
        a.center[k] = 0.5 * (v[k] + v[k + 3]);
        a.diameter = std::max(a.diameter, std::abs(v[k + 3] - v[k]));
      }
    }
    if (!(a.diameter > 0.0)) throw ParseError(where + ": diameter must be positive");
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Annotation> parse_annotations(const fs::path& path, AnnotationFormat format) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open " + path.string());
  return parse_annotations(is, format, path.string());
}

void write_annotations(const fs::path& path, const std::vector<Annotation>& anns) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "seriesuid,coordX,coordY,coordZ,diameter_mm\n";
  for (const auto& a : anns) {
    os << a.series_id << ',' << csv::format(a.center[0]) << ',' << csv::format(a.center[1]) << ','
       << csv::format(a.center[2]) << ',' << csv::format(a.diameter) << '\n';
  }
}

// ---- full pipeline --------------------------------------------------------

namespace {

template <class F>
auto stage(const char* name, F&& f) {
  const std::string prefix = std::string(name) + ": ";
  try {
    return f();
  } catch (const UsageError& e) {
    throw UsageError(prefix + e.what());
  } catch (const ParseError& e) {
    throw ParseError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  }
}

}  // namespace

Preprocessed preprocess(const Volume& scan, const PreprocessOptions& opts) {
  if (!scan.mask) throw UsageError("preprocessing needs a lung mask");
  Volume v = stage("hu_window", [&] { return hu_window(scan); });
  v = stage("mask_padding", [&] { return apply_mask_padding(v); });
  v = stage("resample", [&] { return resample_isotropic(v, opts.target_spacing); });
  Cropped c = stage("crop", [&] { return crop_to_mask(v, opts.crop_margin); });
  return {std::move(c.volume), v.offset, c.corner};
}

nlohmann::json sidecar(const Preprocessed& p) {
  const Volume& v = p.volume;
  return {{"spacing", v.spacing},
          {"offset", p.source_offset},
          {"crop_corner", p.crop_corner},
          {"shape", v.voxels.shape()}};
}

}  // namespace sgda::ct
