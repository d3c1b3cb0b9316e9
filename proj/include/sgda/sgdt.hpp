// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// "SGDT" binary tensor container:
//   magic "SGDT0001" | u8 dtype | u32 ndim | ndim x u32 extents | payload
// All integers and the payload are little-endian, payload row-major.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "sgda/tensor.hpp"

namespace sgda::sgdt {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, u8 = 2, i16 = 3 };

std::string dtype_name(Dtype d);

struct Stored {
  Dtype dtype = Dtype::f64;
  Tensor tensor;
};

/// Integer dtypes round half away from zero and saturate to the type range.
void write(std::ostream& os, const Tensor& t, Dtype dtype);
void write_file(const std::filesystem::path& path, const Tensor& t, Dtype dtype);

Stored read(std::istream& is);
Stored read_file(const std::filesystem::path& path);

}  // namespace sgda::sgdt
