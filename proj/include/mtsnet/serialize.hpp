#pragma once

#include <filesystem>
#include <iosfwd>

#include "mtsnet/tensor.hpp"

namespace mtsnet {

/// MTSV1 tensor file: "MTSV", u32 rank, rank x u32 extents, then float32
/// values in row-major order; every integer and float little-endian.
void write_mtsv(std::ostream& os, const Tensor& t);
Tensor read_mtsv(std::istream& is);

void save_mtsv(const std::filesystem::path& path, const Tensor& t);
/// Throws DataError when the file is missing, truncated or malformed.
Tensor load_mtsv(const std::filesystem::path& path);

}  // namespace mtsnet
