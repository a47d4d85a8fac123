#pragma once

#include "deforest/dataset.hpp"
#include "deforest/grid.hpp"
#include "deforest/rng.hpp"

namespace deforest {

struct PreprocessConfig {
    double stretch_percent = 1.0; // percentile clipped off each tail, in [0, 50)
    double epsilon_ratio = 1e-6;  // VH denominator clamp
    int resample_h = 256;         // target grid when no label fixes it
    int resample_w = 256;
};

// (v - min) / (max - min); a constant band maps to all zeros.
Grid minmax_normalize(const Grid& band);

// Clip to [P_p, P_{100-p}] (linear-interpolation percentiles over all
// pixels), then map the clip window to [0, 1]. A degenerate window maps
// to all zeros. percentile_stretch(band, 0) == minmax_normalize(band).
Grid percentile_stretch(const Grid& band, double p);

// Per-pixel vv / max(vh, epsilon), on raw values.
Grid ratio_band(const Grid& vv, const Grid& vh, double epsilon);

// Bilinear, corner-aligned. Output values are clamped to the input's
// [min, max] so interpolation can never escape the input range.
Grid resample_bilinear(const Grid& band, int out_h, int out_w);

// Landsat-8: each band min-max normalized then resampled to the label
// grid, stacked SR_B1..SR_B7, ST_B10. Sentinel-1: VV, VH and the raw
// VV/VH ratio, each percentile-stretched, stacked in that order.
Sample assemble_sample(const RawSample& raw, Sensor sensor, const PreprocessConfig& config,
                       const SampleKey& key);

// Same band pipeline without a label, for prediction-time inputs; the
// target grid comes from the config.
Tensor assemble_image(const std::map<std::string, Grid>& bands, Sensor sensor,
                      const PreprocessConfig& config, int target_h, int target_w);

enum class AugmentOp { Identity, Rot90, Rot180, Rot270, HFlip, VFlip };

// Applies one transform to image and label together. Square tiles only.
Sample apply_augment(const Sample& sample, AugmentOp op);

// Draws one of the six transforms uniformly from the stream.
Sample augment(const Sample& sample, RngStream& rng);

} // namespace deforest
