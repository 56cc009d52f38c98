#pragma once

#include <filesystem>

#include "clickseg/grid.hpp"

namespace clickseg {

/// Single-channel float32 maps in NumPy's .npy v1.0 format (little endian,
/// C order, shape (H, W)).
void save_npy(const FloatGrid& grid, const std::filesystem::path& path);
FloatGrid load_npy(const std::filesystem::path& path);

}  // namespace clickseg
