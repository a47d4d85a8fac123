#include "deforest/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "deforest/common.hpp"

namespace deforest {

namespace {

void require_same_shape(const Grid& a, const Grid& b, const char* who) {
    if (!a.same_shape(b))
        fail(who, ": shape mismatch ", a.h, "x", a.w, " vs ", b.h, "x", b.w);
    if (a.numel() == 0) fail(who, ": empty grids");
}

} // namespace

double bce_loss(const Grid& pred, const Grid& target, double clip_epsilon) {
    require_same_shape(pred, target, "bce_loss");
    double sum = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double p = std::clamp(pred.v[i], clip_epsilon, 1.0 - clip_epsilon);
        const double t = target.v[i];
        sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return sum / static_cast<double>(pred.v.size());
}

double dice_loss(const Grid& pred, const Grid& target, double smooth) {
    require_same_shape(pred, target, "dice_loss");
    if (smooth <= 0.0) fail("dice_loss: smooth must be positive, got ", smooth);
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        inter += pred.v[i] * target.v[i];
        psum += pred.v[i];
        tsum += target.v[i];
    }
    return 1.0 - (2.0 * inter + smooth) / (psum + tsum + smooth);
}

double combined_loss(const Grid& pred, const Grid& target, const LossConfig& config) {
    if (config.bce_weight < 0.0 || config.dice_weight < 0.0 ||
        config.bce_weight + config.dice_weight <= 0.0)
        fail("combined_loss: weights must be non-negative with a positive sum");
    return config.bce_weight * bce_loss(pred, target, config.prob_clip_epsilon) +
           config.dice_weight * dice_loss(pred, target, config.dice_smooth);
}

Confusion count_confusion(const Grid& pred_binary, const Grid& target) {
    require_same_shape(pred_binary, target, "evaluate");
    Confusion c;
    for (size_t i = 0; i < pred_binary.v.size(); ++i) {
        const bool p = pred_binary.v[i] != 0.0;
        const bool t = target.v[i] != 0.0;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

MetricsReport metrics_from_confusion(const Confusion& c) {
    MetricsReport r;
    r.confusion = c;
    const double n = static_cast<double>(c.total());
    r.pixel_accuracy = n > 0 ? static_cast<double>(c.tp + c.tn) / n : 1.0;
    const std::int64_t denom_f1 = 2 * c.tp + c.fp + c.fn;
    const std::int64_t denom_iou = c.tp + c.fp + c.fn;
    if (denom_iou == 0) {
        // No positives predicted or present: perfect agreement by convention.
        r.f1 = 1.0;
        r.iou = 1.0;
    } else {
        r.f1 = 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom_f1);
        r.iou = static_cast<double>(c.tp) / static_cast<double>(denom_iou);
    }
    return r;
}

MetricsReport evaluate(const Grid& pred_binary, const Grid& target) {
    double bad = 0.0;
    int by = 0, bx = 0;
    if (!is_binary(pred_binary, &bad, &by, &bx))
        fail("evaluate: prediction is not binary: value ", bad, " at (", by, ", ", bx, ")");
    if (!is_binary(target, &bad, &by, &bx))
        fail("evaluate: target is not binary: value ", bad, " at (", by, ", ", bx, ")");
    return metrics_from_confusion(count_confusion(pred_binary, target));
}

std::string MetricsReport::to_kv_text() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "pixel_accuracy=%.4f\nf1=%.4f\niou=%.4f\ntp=%lld\nfp=%lld\nfn=%lld\ntn=%lld\n",
                  pixel_accuracy, f1, iou, static_cast<long long>(confusion.tp),
                  static_cast<long long>(confusion.fp), static_cast<long long>(confusion.fn),
                  static_cast<long long>(confusion.tn));
    return buf;
}

} // namespace deforest
