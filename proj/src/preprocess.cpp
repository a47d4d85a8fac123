#include "deforest/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "deforest/common.hpp"

namespace deforest {

namespace {

Grid affine_to_unit(const Grid& band, double lo, double hi, bool clip) {
    Grid out(band.h, band.w);
    if (hi <= lo) return out; // degenerate window -> all zeros
    const double scale = 1.0 / (hi - lo);
    for (size_t i = 0; i < band.v.size(); ++i) {
        double value = band.v[i];
        if (clip) value = std::clamp(value, lo, hi);
        out.v[i] = (value - lo) * scale;
    }
    return out;
}

// Linear interpolation between order statistics, matching the common
// "linear" quantile definition: index = p/100 * (n-1).
double percentile_sorted(const std::vector<double>& sorted, double p) {
    const double idx = p / 100.0 * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(idx));
    const size_t hi = static_cast<size_t>(std::ceil(idx));
    const double frac = idx - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

} // namespace

Grid minmax_normalize(const Grid& band) {
    if (band.numel() == 0) fail("minmax_normalize: empty band");
    return affine_to_unit(band, band.min_value(), band.max_value(), false);
}

Grid percentile_stretch(const Grid& band, double p) {
    if (band.numel() == 0) fail("percentile_stretch: empty band");
    if (p < 0.0 || p >= 50.0) fail("percentile_stretch: p = ", p, " outside [0, 50)");
    std::vector<double> sorted(band.v);
    std::sort(sorted.begin(), sorted.end());
    const double lo = percentile_sorted(sorted, p);
    const double hi = percentile_sorted(sorted, 100.0 - p);
    return affine_to_unit(band, lo, hi, true);
}

Grid ratio_band(const Grid& vv, const Grid& vh, double epsilon) {
    if (!vv.same_shape(vh))
        fail("ratio_band: shape mismatch ", vv.h, "x", vv.w, " vs ", vh.h, "x", vh.w);
    if (epsilon <= 0.0) fail("ratio_band: epsilon must be positive, got ", epsilon);
    Grid out(vv.h, vv.w);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = vv.v[i] / std::max(vh.v[i], epsilon);
    return out;
}

Grid resample_bilinear(const Grid& band, int out_h, int out_w) {
    if (band.numel() == 0) fail("resample_bilinear: empty band");
    if (out_h < 1 || out_w < 1)
        fail("resample_bilinear: target size ", out_h, "x", out_w, " invalid");

    const double lo = band.min_value();
    const double hi = band.max_value();
    Grid out(out_h, out_w);

    // Corner-aligned source coordinate; a single output row/column samples
    // the input midpoint.
    const auto src_coord = [](int out_i, int out_n, int in_n) {
        if (out_n == 1) return (in_n - 1) / 2.0;
        return static_cast<double>(out_i) * (in_n - 1) / (out_n - 1.0);
    };

    for (int y = 0; y < out_h; ++y) {
        const double sy = src_coord(y, out_h, band.h);
        const int y0 = std::min(static_cast<int>(sy), band.h - 1);
        const int y1 = std::min(y0 + 1, band.h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = src_coord(x, out_w, band.w);
            const int x0 = std::min(static_cast<int>(sx), band.w - 1);
            const int x1 = std::min(x0 + 1, band.w - 1);
            const double fx = sx - x0;
            const double top = band.at(y0, x0) * (1.0 - fx) + band.at(y0, x1) * fx;
            const double bot = band.at(y1, x0) * (1.0 - fx) + band.at(y1, x1) * fx;
            out.at(y, x) = std::clamp(top * (1.0 - fy) + bot * fy, lo, hi);
        }
    }
    return out;
}

namespace {

std::vector<Grid> preprocess_bands(const std::map<std::string, Grid>& bands, Sensor sensor,
                                   const PreprocessConfig& config, int target_h, int target_w) {
    const auto get = [&](const std::string& name) -> const Grid& {
        const auto it = bands.find(name);
        if (it == bands.end()) fail("assemble_sample: missing band ", name);
        return it->second;
    };

    std::vector<Grid> planes;
    if (sensor == Sensor::Landsat8) {
        for (const auto& name : sensor_bands(Sensor::Landsat8))
            planes.push_back(resample_bilinear(minmax_normalize(get(name)), target_h, target_w));
    } else {
        const Grid& vv = get("VV");
        const Grid& vh = get("VH");
        const Grid ratio = ratio_band(vv, vh, config.epsilon_ratio);
        for (const Grid* g : {&vv, &vh, &ratio})
            planes.push_back(
                resample_bilinear(percentile_stretch(*g, config.stretch_percent), target_h, target_w));
    }
    return planes;
}

Tensor stack_planes(const std::vector<Grid>& planes) {
    const int c = static_cast<int>(planes.size());
    const int h = planes[0].h;
    const int w = planes[0].w;
    Tensor image = Tensor::zeros({c, h, w});
    for (int i = 0; i < c; ++i)
        std::copy(planes[i].v.begin(), planes[i].v.end(),
                  image.data.begin() + static_cast<std::ptrdiff_t>(i) * h * w);
    return image;
}

} // namespace

Sample assemble_sample(const RawSample& raw, Sensor sensor, const PreprocessConfig& config,
                       const SampleKey& key) {
    double bad = 0.0;
    if (!is_binary(raw.label, &bad))
        fail("assemble_sample: label is not binary (value ", bad, ")");
    Sample sample;
    sample.image = stack_planes(preprocess_bands(raw.bands, sensor, config, raw.label.h, raw.label.w));
    sample.label = raw.label;
    sample.key = key;
    return sample;
}

Tensor assemble_image(const std::map<std::string, Grid>& bands, Sensor sensor,
                      const PreprocessConfig& config, int target_h, int target_w) {
    return stack_planes(preprocess_bands(bands, sensor, config, target_h, target_w));
}

namespace {

Grid transform_grid(const Grid& g, AugmentOp op) {
    if (op == AugmentOp::Identity) return g;
    if ((op == AugmentOp::Rot90 || op == AugmentOp::Rot270) && g.h != g.w)
        fail("apply_augment: quarter rotations need square tiles, got ", g.h, "x", g.w);
    Grid out(g.h, g.w);
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            double value = 0.0;
            switch (op) {
                case AugmentOp::Identity: value = g.at(y, x); break;
                case AugmentOp::Rot90: value = g.at(g.w - 1 - x, y); break; // clockwise
                case AugmentOp::Rot180: value = g.at(g.h - 1 - y, g.w - 1 - x); break;
                case AugmentOp::Rot270: value = g.at(x, g.h - 1 - y); break;
                case AugmentOp::HFlip: value = g.at(y, g.w - 1 - x); break;
                case AugmentOp::VFlip: value = g.at(g.h - 1 - y, x); break;
            }
            out.at(y, x) = value;
        }
    }
    return out;
}

} // namespace

Sample apply_augment(const Sample& sample, AugmentOp op) {
    Sample out;
    out.key = sample.key;
    out.label = transform_grid(sample.label, op);
    const int c = sample.image.dim(0);
    out.image = Tensor::zeros(sample.image.shape);
    for (int i = 0; i < c; ++i) {
        Grid plane(sample.image.dim(1), sample.image.dim(2));
        for (int y = 0; y < plane.h; ++y)
            for (int x = 0; x < plane.w; ++x) plane.at(y, x) = sample.image.at3(i, y, x);
        const Grid t = transform_grid(plane, op);
        for (int y = 0; y < plane.h; ++y)
            for (int x = 0; x < plane.w; ++x) out.image.at3(i, y, x) = t.at(y, x);
    }
    return out;
}

Sample augment(const Sample& sample, RngStream& rng) {
    static const AugmentOp ops[6] = {AugmentOp::Identity, AugmentOp::Rot90, AugmentOp::Rot180,
                                     AugmentOp::Rot270, AugmentOp::HFlip, AugmentOp::VFlip};
    return apply_augment(sample, ops[rng.next_index(6)]);
}

} // namespace deforest
