#pragma once

#include <cstdint>
#include <vector>

#include "deforest/grid.hpp"

namespace deforest {

// Dense N-d double tensor, row major. Images are (C, H, W); conv weights
// are (Cout, Cin, kh, kw); 1x1 projection weights are (Cout, Cin).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    // (C, H, W) accessors.
    double& at3(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }
    double at3(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
    }

    // (Cout, Cin, kh, kw) accessors.
    double& at4(int o, int i, int y, int x) {
        return data[((static_cast<size_t>(o) * dim(1) + i) * dim(2) + y) * dim(3) + x];
    }
    double at4(int o, int i, int y, int x) const {
        return data[((static_cast<size_t>(o) * dim(1) + i) * dim(2) + y) * dim(3) + x];
    }

    // (Cout, Cin) accessors.
    double& at2(int o, int i) { return data[static_cast<size_t>(o) * dim(1) + i]; }
    double at2(int o, int i) const { return data[static_cast<size_t>(o) * dim(1) + i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// Single-channel (1, H, W) tensor from a grid and back.
Tensor tensor_from_grid(const Grid& g);
Grid grid_from_plane(const Tensor& t, int channel = 0);

} // namespace deforest
