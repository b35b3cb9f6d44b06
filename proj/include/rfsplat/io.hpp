// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace rfsplat::io {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view contents);
std::uint64_t hash_file(const std::filesystem::path& path);

/// Binary container: header `VIEWTENSOR v h w c` then raw doubles.
void save_tensor(const std::filesystem::path& path, const ViewTensor& tensor);
ViewTensor load_tensor(const std::filesystem::path& path);

/// Shortest round-trip decimal text for a double.
std::string format_double(double value);

}  // namespace rfsplat::io
