#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deforest/grid.hpp"
#include "deforest/losses.hpp"

namespace deforest {

// Binary PGM (P5), 8-bit. Values are scaled from [lo, hi] to [0, 255];
// for binary masks this renders 0 as black and 1 as white.
void write_pgm(const std::filesystem::path& path, const Grid& g, double lo = 0.0, double hi = 1.0);

// Fixed-width text table of named metric reports, 4 fractional digits.
std::string render_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

} // namespace deforest
