// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "sgda/sgdt.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

#include "sgda/errors.hpp"

namespace sgda::sgdt {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'G', 'D', 'T', '0', '0', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "SGDT I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError(std::string("SGDT: truncated while reading ") + what);
  }
  return v;
}

template <class T>
T round_saturate(double v) {
  const double r = std::round(v);  // half away from zero
  const double lo = static_cast<double>(std::numeric_limits<T>::min());
  const double hi = static_cast<double>(std::numeric_limits<T>::max());
  return static_cast<T>(std::clamp(r, lo, hi));
}

template <class T>
void read_payload(std::istream& is, std::vector<double>& out) {
  std::vector<T> raw(out.size());
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size() * sizeof(T)))) {
    throw ParseError("SGDT: payload shorter than declared extents");
  }
  std::transform(raw.begin(), raw.end(), out.begin(), [](T v) { return static_cast<double>(v); });
}

}  // namespace

std::string dtype_name(Dtype d) {
  switch (d) {
    case Dtype::f32: return "f32";
    case Dtype::f64: return "f64";
    case Dtype::u8: return "u8";
    case Dtype::i16: return "i16";
  }
  return "?";
}

void write(std::ostream& os, const Tensor& t, Dtype dtype) {
  os.write(kMagic.data(), kMagic.size());
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto e : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  switch (dtype) {
    case Dtype::f64:
      os.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
      break;
    case Dtype::f32:
      for (double v : t.data()) put<float>(os, static_cast<float>(v));
      break;
    case Dtype::u8:
      for (double v : t.data()) put<std::uint8_t>(os, round_saturate<std::uint8_t>(v));
      break;
    case Dtype::i16:
      for (double v : t.data()) put<std::int16_t>(os, round_saturate<std::int16_t>(v));
      break;
  }
  if (!os) throw Error("SGDT: write failed");
}

void write_file(const std::filesystem::path& path, const Tensor& t, Dtype dtype) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write(os, t, dtype);
}

Stored read(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ParseError("SGDT: bad magic");
  }
  const auto code = get<std::uint8_t>(is, "dtype");
  if (code > 3) throw ParseError("SGDT: unknown dtype code " + std::to_string(code));
  const auto ndim = get<std::uint32_t>(is, "ndim");
  if (ndim == 0 || ndim > 16) throw ParseError("SGDT: implausible ndim " + std::to_string(ndim));
  Shape shape(ndim);
  for (auto& e : shape) {
    e = get<std::uint32_t>(is, "extent");
    if (e == 0) throw ParseError("SGDT: zero extent");
  }
  Stored s;
  s.dtype = static_cast<Dtype>(code);
  std::vector<double> data(shape_numel(shape));
  switch (s.dtype) {
    case Dtype::f32: read_payload<float>(is, data); break;
    case Dtype::f64: read_payload<double>(is, data); break;
    case Dtype::u8: read_payload<std::uint8_t>(is, data); break;
    case Dtype::i16: read_payload<std::int16_t>(is, data); break;
  }
  s.tensor = Tensor(std::move(shape), std::move(data));
  return s;
}

Stored read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string());
  return read(is);
}

}  // namespace sgda::sgdt
