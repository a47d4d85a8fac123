#pragma once

#include <filesystem>

#include "deforest/grid.hpp"

namespace deforest {

// Band tiles, label masks and output masks are stored as NumPy .npy
// files (format version 1.0), one 2-D array per file. Accepted dtypes on
// read: u1, i1, i2, u2, i4, u4, f4, f8, little endian, C order. All of
// them widen to double without loss. Non-finite values are a load error.
Grid npy_read_grid(const std::filesystem::path& path);

// float32 output; values must fit a float exactly only if bit-exact
// round-trips are required by the caller.
void npy_write_f4(const std::filesystem::path& path, const Grid& g);

// float64 output, bit-exact round trip.
void npy_write_f8(const std::filesystem::path& path, const Grid& g);

// uint8 output; every value must be an integer in [0, 255].
void npy_write_u1(const std::filesystem::path& path, const Grid& g);

} // namespace deforest
