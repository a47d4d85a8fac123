#pragma once

#include <cstdint>
#include <vector>

namespace deforest {

// Dense 2-D grid of doubles, row major. Used for raster tiles, label
// masks and probability masks alike.
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h_, int w_, double fill = 0.0);

    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

    std::int64_t numel() const { return static_cast<std::int64_t>(h) * w; }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

    double min_value() const;
    double max_value() const;
};

// True iff every element is exactly 0.0 or 1.0. On failure reports the
// first offending value and its position through the out-params.
bool is_binary(const Grid& g, double* bad_value = nullptr, int* bad_y = nullptr, int* bad_x = nullptr);

bool all_finite(const Grid& g, int* bad_y = nullptr, int* bad_x = nullptr);

} // namespace deforest
