#pragma once

#include <cstdint>
#include <string>

#include "deforest/grid.hpp"

namespace deforest {

struct LossConfig {
    double bce_weight = 0.5;
    double dice_weight = 0.5;
    double dice_smooth = 1.0;
    double prob_clip_epsilon = 1e-7;
};

// Mean over pixels of -[t ln p + (1-t) ln(1-p)], with p clipped to
// [eps, 1-eps] before the logs.
double bce_loss(const Grid& pred, const Grid& target, double clip_epsilon = 1e-7);

// Soft Dice: 1 - (2 sum(p t) + s) / (sum p + sum t + s). No thresholding.
double dice_loss(const Grid& pred, const Grid& target, double smooth = 1.0);

double combined_loss(const Grid& pred, const Grid& target, const LossConfig& config);

struct Confusion {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    Confusion& operator+=(const Confusion& o) {
        tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
        return *this;
    }
};

struct MetricsReport {
    double pixel_accuracy = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
    Confusion confusion;

    // Flat key-value lines, 4 fractional digits, matching the reporting
    // precision used throughout.
    std::string to_kv_text() const;
};

Confusion count_confusion(const Grid& pred_binary, const Grid& target);

// Builds the report from pooled counts. Convention: when tp+fp+fn = 0
// (no positives anywhere), f1 = iou = 1.
MetricsReport metrics_from_confusion(const Confusion& c);

// Both inputs must be strictly binary.
MetricsReport evaluate(const Grid& pred_binary, const Grid& target);

} // namespace deforest
