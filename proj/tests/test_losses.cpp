#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deforest/common.hpp"
#include "deforest/losses.hpp"
#include "deforest/rng.hpp"
#include "fixtures.hpp"

using namespace deforest;
using testutil::make_grid;

namespace {

// Independent confusion counter used as the metrics oracle.
Confusion brute_confusion(const Grid& pred, const Grid& target) {
    Confusion c;
    for (int y = 0; y < pred.h; ++y)
        for (int x = 0; x < pred.w; ++x) {
            const int p = pred.at(y, x) != 0.0 ? 1 : 0;
            const int t = target.at(y, x) != 0.0 ? 1 : 0;
            c.tp += p & t;
            c.fp += p & ~t & 1;
            c.fn += ~p & 1 & t;
            c.tn += ~p & 1 & ~t & 1;
        }
    return c;
}

} // namespace

TEST_CASE("bce: uniform 0.5 prediction gives ln 2 for any binary target") {
    const Grid pred(3, 3, 0.5);
    Grid target(3, 3, 0.0);
    target.at(1, 1) = 1.0;
    target.at(2, 0) = 1.0;
    CHECK(bce_loss(pred, target) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce: perfect prediction is bounded by the clip epsilon") {
    Grid target(2, 2, 0.0);
    target.at(0, 0) = 1.0;
    const double loss = bce_loss(target, target);
    CHECK(loss >= 0.0);
    CHECK(loss <= -std::log(1.0 - 1e-7) + 1e-12);
}

TEST_CASE("bce: hand-evaluated two-pixel case") {
    const Grid pred = make_grid(1, 2, {0.9, 0.2});
    const Grid target = make_grid(1, 2, {1.0, 0.0});
    const double expected = 0.5 * (-std::log(0.9) - std::log(0.8));
    CHECK(bce_loss(pred, target) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bce: shape mismatch rejected") {
    CHECK_THROWS_AS(bce_loss(Grid(2, 2, 0.5), Grid(2, 3, 1.0)), Error);
}

TEST_CASE("dice: perfect overlap on all ones") {
    const Grid ones(2, 2, 1.0);
    CHECK(dice_loss(ones, ones, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("dice: all-zero prediction vs all-one target, smoothed") {
    const Grid pred(2, 2, 0.0);
    const Grid target(2, 2, 1.0);
    // 1 - (0 + 1) / (0 + 4 + 1)
    CHECK(dice_loss(pred, target, 1.0) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("dice: empty prediction and target agree under smoothing") {
    const Grid zeros(2, 2, 0.0);
    CHECK(dice_loss(zeros, zeros, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("combined: closed forms for uniform half prediction") {
    const Grid pred(2, 2, 0.5);
    const Grid target(2, 2, 1.0);
    LossConfig config;
    const double expected = 0.5 * std::log(2.0) + 0.5 * (1.0 - 5.0 / 7.0);
    CHECK(combined_loss(pred, target, config) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("combined: zero dice weight reduces to weighted bce") {
    RngStream rng(11);
    const Grid pred = testutil::random_grid(4, 4, rng, 0.01, 0.99);
    const Grid target = testutil::random_binary_grid(4, 4, rng);
    LossConfig config;
    config.dice_weight = 0.0;
    CHECK(combined_loss(pred, target, config) ==
          doctest::Approx(0.5 * bce_loss(pred, target)).epsilon(1e-12));
}

TEST_CASE("combined: vanishes on a perfect binary prediction") {
    RngStream rng(12);
    const Grid target = testutil::random_binary_grid(8, 8, rng);
    CHECK(combined_loss(target, target, LossConfig{}) <= 1e-6);
}

TEST_CASE("combined: invalid weights rejected") {
    LossConfig config;
    config.bce_weight = 0.0;
    config.dice_weight = 0.0;
    CHECK_THROWS_AS(combined_loss(Grid(2, 2, 0.5), Grid(2, 2, 1.0), config), Error);
}

TEST_CASE("evaluate: identity prediction scores 1 everywhere") {
    RngStream rng(13);
    Grid target = testutil::random_binary_grid(6, 6, rng);
    target.at(0, 0) = 1.0; // at least one positive
    const MetricsReport r = evaluate(target, target);
    CHECK(r.pixel_accuracy == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.iou == 1.0);
}

TEST_CASE("evaluate: hand confusion on an 8-pixel grid") {
    // tp=2, fp=1, fn=1, tn=4
    const Grid pred = make_grid(2, 4, {1, 1, 1, 0, 0, 0, 0, 0});
    const Grid target = make_grid(2, 4, {1, 1, 0, 1, 0, 0, 0, 0});
    const MetricsReport r = evaluate(pred, target);
    CHECK(r.confusion.tp == 2);
    CHECK(r.confusion.fp == 1);
    CHECK(r.confusion.fn == 1);
    CHECK(r.confusion.tn == 4);
    CHECK(r.pixel_accuracy == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.iou == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("evaluate: all-negative agreement uses the empty-set convention") {
    const Grid zeros(3, 3, 0.0);
    const MetricsReport r = evaluate(zeros, zeros);
    CHECK(r.pixel_accuracy == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.iou == 1.0);
}

TEST_CASE("evaluate: non-binary input rejected") {
    Grid pred(2, 2, 0.0);
    pred.at(0, 1) = 0.5;
    CHECK_THROWS_WITH_AS(evaluate(pred, Grid(2, 2, 0.0)),
                         doctest::Contains("not binary"), Error);
}

TEST_CASE("property: evaluate matches the brute-force counter and the f1/iou identity") {
    RngStream rng(99);
    for (int trial = 0; trial < 2000; ++trial) {
        const Grid pred = testutil::random_binary_grid(16, 16, rng, rng.next_double());
        const Grid target = testutil::random_binary_grid(16, 16, rng, rng.next_double());
        const MetricsReport r = evaluate(pred, target);
        const Confusion b = brute_confusion(pred, target);
        CHECK(r.confusion.tp == b.tp);
        CHECK(r.confusion.fp == b.fp);
        CHECK(r.confusion.fn == b.fn);
        CHECK(r.confusion.tn == b.tn);
        CHECK(r.confusion.total() == 256);
        CHECK(std::abs(r.f1 - 2.0 * r.iou / (1.0 + r.iou)) <= 1e-12);
        CHECK(r.iou <= r.f1 + 1e-15);
    }
}

TEST_CASE("property: combined loss is non-negative, dice stays in [0,1)") {
    RngStream rng(100);
    for (int trial = 0; trial < 500; ++trial) {
        const Grid pred = testutil::random_grid(8, 8, rng);
        const Grid target = testutil::random_binary_grid(8, 8, rng);
        const double d = dice_loss(pred, target);
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        CHECK(combined_loss(pred, target, LossConfig{}) >= 0.0);
    }
}

TEST_CASE("property: bce is symmetric under simultaneous relabeling") {
    RngStream rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const Grid pred = testutil::random_grid(8, 8, rng, 0.001, 0.999);
        const Grid target = testutil::random_binary_grid(8, 8, rng);
        Grid pred_flip(8, 8), target_flip(8, 8);
        for (size_t i = 0; i < pred.v.size(); ++i) {
            pred_flip.v[i] = 1.0 - pred.v[i];
            target_flip.v[i] = 1.0 - target.v[i];
        }
        CHECK(bce_loss(pred, target) ==
              doctest::Approx(bce_loss(pred_flip, target_flip)).epsilon(1e-9));
    }
}

TEST_CASE("metrics report text uses 4 fractional digits") {
    const Grid pred = make_grid(2, 4, {1, 1, 1, 0, 0, 0, 0, 0});
    const Grid target = make_grid(2, 4, {1, 1, 0, 1, 0, 0, 0, 0});
    const std::string text = evaluate(pred, target).to_kv_text();
    CHECK(text.find("pixel_accuracy=0.7500") != std::string::npos);
    CHECK(text.find("f1=0.6667") != std::string::npos);
    CHECK(text.find("iou=0.5000") != std::string::npos);
    CHECK(text.find("tp=2") != std::string::npos);
}
