#include "deforest/tensor.hpp"

#include "deforest/common.hpp"

namespace deforest {

Tensor Tensor::zeros(std::vector<int> shape) {
    Tensor t;
    t.shape = std::move(shape);
    std::int64_t n = 1;
    for (int d : t.shape) {
        if (d <= 0) fail("Tensor: non-positive dimension ", d);
        n *= d;
    }
    t.data.assign(static_cast<size_t>(t.shape.empty() ? 0 : n), 0.0);
    return t;
}

Tensor tensor_from_grid(const Grid& g) {
    Tensor t = Tensor::zeros({1, g.h, g.w});
    t.data = g.v;
    return t;
}

Grid grid_from_plane(const Tensor& t, int channel) {
    if (t.rank() != 3) fail("grid_from_plane: expected rank-3 tensor, got rank ", t.rank());
    Grid g(t.dim(1), t.dim(2));
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) g.at(y, x) = t.at3(channel, y, x);
    return g;
}

} // namespace deforest
