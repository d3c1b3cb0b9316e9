// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory layout:
//   manifest.json   {"format", "config", "parameters": [{name, file, shape, dtype}]}
//   <name>.sgdt     one SGDT file (f64) per parameter tensor

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>

#include <nlohmann/json.hpp>

#include "sgda/autodiff.hpp"

namespace sgda::checkpoint {

inline constexpr const char* kFormat = "sgda-checkpoint/1";

void save(const std::filesystem::path& dir, const nlohmann::json& config,
          std::span<const ad::NamedParameter> params);

nlohmann::json read_manifest(const std::filesystem::path& dir);

/// Loads every named parameter; missing names and shape mismatches throw.
void load(const std::filesystem::path& dir, std::span<const ad::NamedParameter> params);

/// Total scalars over all tensor files the manifest lists (read from the files).
std::size_t scalar_count(const std::filesystem::path& dir);

}  // namespace sgda::checkpoint
