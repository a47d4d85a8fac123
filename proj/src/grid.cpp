#include "deforest/grid.hpp"

#include <cmath>
#include <limits>

#include "deforest/common.hpp"

namespace deforest {

Grid::Grid(int h_, int w_, double fill) : h(h_), w(w_) {
    if (h_ < 0 || w_ < 0) fail("Grid: negative shape ", h_, "x", w_);
    v.assign(static_cast<size_t>(h_) * static_cast<size_t>(w_), fill);
}

double Grid::min_value() const {
    double m = std::numeric_limits<double>::infinity();
    for (double x : v) m = std::min(m, x);
    return m;
}

double Grid::max_value() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    return m;
}

bool is_binary(const Grid& g, double* bad_value, int* bad_y, int* bad_x) {
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            const double val = g.at(y, x);
            if (val != 0.0 && val != 1.0) {
                if (bad_value) *bad_value = val;
                if (bad_y) *bad_y = y;
                if (bad_x) *bad_x = x;
                return false;
            }
        }
    }
    return true;
}

bool all_finite(const Grid& g, int* bad_y, int* bad_x) {
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            if (!std::isfinite(g.at(y, x))) {
                if (bad_y) *bad_y = y;
                if (bad_x) *bad_x = x;
                return false;
            }
        }
    }
    return true;
}

} // namespace deforest
