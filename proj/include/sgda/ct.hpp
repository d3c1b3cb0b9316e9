// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// CT volume ingestion and preprocessing: MetaImage reading, HU windowing,
// lung-mask padding, isotropic resampling, cropping, patch extraction and
// annotation parsing.
//
// Voxel coordinates are (x, y, z) and index a [D, H, W] tensor as [z][y][x].

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgda/tensor.hpp"

namespace sgda::ct {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<long, 3>;

inline constexpr double kPadValue = 170.0;
inline constexpr std::size_t kPatchExtent = 128;
inline constexpr double kHuLow = -1200.0;
inline constexpr double kHuHigh = 600.0;

enum class VoxelKind { hu, windowed };

struct Volume {
  /// [D, H, W]; integral values in the range of the kind, except after
  /// resampling, which keeps the interpolated reals.
  Tensor voxels;
  VoxelKind kind = VoxelKind::hu;
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 offset{0.0, 0.0, 0.0};
  std::optional<Tensor> mask;

  std::size_t depth() const { return voxels.dim(0); }
  std::size_t height() const { return voxels.dim(1); }
  std::size_t width() const { return voxels.dim(2); }
  /// Extent along voxel axis 0=x, 1=y, 2=z.
  std::size_t extent(std::size_t axis) const { return voxels.dim(2 - axis); }

  double& at(std::size_t x, std::size_t y, std::size_t z) {
    return voxels[(z * height() + y) * width() + x];
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return voxels[(z * height() + y) * width() + x];
  }

  void validate() const;
};

// ---- MetaImage ------------------------------------------------------------

Volume read_mhd(const std::filesystem::path& header);
/// Writes `<stem>.mhd` + `<stem>.raw`; hu volumes as MET_SHORT, windowed as
/// MET_UCHAR (values rounded half away from zero and saturated).
void write_mhd(const std::filesystem::path& header, const Tensor& voxels, VoxelKind kind,
               const Vec3& spacing, const Vec3& offset);
/// Reads a scan and attaches a binary mask (nonzero = lung) from a second file.
Volume read_scan(const std::filesystem::path& scan, const std::filesystem::path& mask);

// ---- intensity ------------------------------------------------------------

/// round((clip(hu, -1200, 600) + 1200) * 255 / 1800), halves away from zero.
double window_value(double hu);
Volume hu_window(const Volume& v);
/// Voxels outside the mask become 170. Throws UsageError without a mask.
Volume apply_mask_padding(const Volume& v);

// ---- geometry -------------------------------------------------------------

/// Trilinear resampling to `target` mm isotropic spacing with edge clamping.
/// Output voxel i sits at input coordinate i * target / spacing. A mask is
/// resampled the same way and thresholded at 0.5.
Volume resample_isotropic(const Volume& v, double target = 1.0);

Vec3 world_to_voxel(const Vec3& world, const Volume& v);
Vec3 voxel_to_world(const Vec3& voxel, const Volume& v);

struct Cropped {
  Volume volume;        // offset moved to the crop corner
  Index3 corner{0, 0, 0};  // (x, y, z) in the input grid
};
/// Bounding box of the mask grown by `margin` voxels per side, clamped.
Cropped crop_to_mask(const Volume& v, std::size_t margin = 8);

/// [1, e, e, e] patch whose (x, y, z) origin is `corner`; voxels outside the
/// volume are 170.
Tensor extract_patch(const Volume& v, const Index3& corner, std::size_t extent = kPatchExtent);

// ---- annotations ----------------------------------------------------------

struct Annotation {
  std::string series_id;
  Vec3 center{0.0, 0.0, 0.0};
  double diameter = 0.0;

  double radius() const { return diameter / 2.0; }
};

/// center_diameter rows: id,x,y,z,diameter. corner_pair rows:
/// id,x1,y1,z1,x2,y2,z2, converted to the midpoint and the longest edge.
enum class AnnotationFormat { center_diameter, corner_pair };

std::optional<AnnotationFormat> parse_annotation_format(std::string_view name);
std::vector<Annotation> parse_annotations(std::istream& is, AnnotationFormat format,
                                          const std::string& source = "annotations");
std::vector<Annotation> parse_annotations(const std::filesystem::path& path, AnnotationFormat format);
void write_annotations(const std::filesystem::path& path, const std::vector<Annotation>& anns);

// ---- full pipeline --------------------------------------------------------

struct Preprocessed {
  Volume volume;  // windowed, padded, 1 mm isotropic, cropped
  Vec3 source_offset{0.0, 0.0, 0.0};
  Index3 crop_corner{0, 0, 0};
};

struct PreprocessOptions {
  double target_spacing = 1.0;
  std::size_t crop_margin = 8;
};

/// window -> pad -> resample -> crop. Errors carry the failing stage name.
Preprocessed preprocess(const Volume& scan, const PreprocessOptions& opts = {});

/// {spacing, offset, crop_corner, shape}; world = offset + (voxel + crop_corner) * spacing.
nlohmann::json sidecar(const Preprocessed& p);

}  // namespace sgda::ct
