#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "deforest/common.hpp"
#include "deforest/refine.hpp"
#include "fixtures.hpp"

using namespace deforest;
using testutil::make_grid;

namespace {

// Sliding-window min/max filter oracles with the same boundary rule:
// out-of-bounds pixels count as 0.
Grid erode_oracle(const Grid& m, int k) {
    const int r = k / 2;
    Grid out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double mn = 1.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    const double v = (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w)
                                         ? 0.0
                                         : m.at(yy, xx);
                    mn = std::min(mn, v);
                }
            out.at(y, x) = mn;
        }
    return out;
}

Grid dilate_oracle(const Grid& m, int k) {
    const int r = k / 2;
    Grid out(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            double mx = 0.0;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w)
                        mx = std::max(mx, m.at(yy, xx));
                }
            out.at(y, x) = mx;
        }
    return out;
}

PredictionRecord sar_record(Grid mask, const char* date) {
    PredictionRecord rec;
    rec.key = {-4.0, -54.9, parse_date(date), Sensor::Sentinel1};
    rec.prob_mask = std::move(mask);
    return rec;
}

PredictionRecord optical_record(Grid mask, const char* date, double ndvi_lo_fraction) {
    PredictionRecord rec;
    rec.key = {-4.0, -54.9, parse_date(date), Sensor::Landsat8};
    rec.prob_mask = std::move(mask);
    // 10x10 raw tiles; a chosen fraction of pixels gets NDVI 0 (cloud),
    // the rest NDVI 0.6.
    Grid red(10, 10, 0.2), nir(10, 10, 0.8);
    const int cloudy = static_cast<int>(ndvi_lo_fraction * 100.0 + 0.5);
    for (int i = 0; i < cloudy; ++i) {
        red.v[static_cast<size_t>(i)] = 0.5;
        nir.v[static_cast<size_t>(i)] = 0.5;
    }
    rec.red = red;
    rec.nir = nir;
    return rec;
}

} // namespace

TEST_CASE("ndvi: symmetry, closed form, degenerate denominator") {
    const Grid same(2, 2, 0.7);
    for (double v : ndvi(same, same).v) CHECK(v == 0.0);

    const Grid red(1, 1, 0.2), nir(1, 1, 0.8);
    CHECK(ndvi(red, nir).at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));

    const Grid zero(2, 2, 0.0);
    for (double v : ndvi(zero, zero).v) CHECK(v == 0.0);

    CHECK_THROWS_AS(ndvi(Grid(2, 2, 0.1), Grid(2, 3, 0.1)), Error);
    CHECK_THROWS_WITH_AS(ndvi(Grid(1, 1, -0.1), Grid(1, 1, 0.5)),
                         doctest::Contains("negative"), Error);
}

TEST_CASE("cloud_fraction: counting and the strict-below boundary") {
    Grid g(10, 10, 0.5);
    CHECK(cloud_fraction(g, 0.1) == 0.0);

    g.v[0] = 0.05;
    g.v[1] = -0.2;
    g.v[2] = 0.09;
    CHECK(cloud_fraction(g, 0.1) == doctest::Approx(0.03).epsilon(1e-15));

    Grid boundary(1, 1, 0.1);
    CHECK(cloud_fraction(boundary, 0.1) == 0.0); // exactly at threshold: not cloud
}

TEST_CASE("filter_cloudy: strict-above discard rule") {
    std::vector<PredictionRecord> records;
    records.push_back(optical_record(Grid(4, 4, 1.0), "2020-01-01", 0.02)); // 2% cloudy
    records.push_back(optical_record(Grid(4, 4, 1.0), "2020-01-02", 0.0));
    records.push_back(optical_record(Grid(4, 4, 1.0), "2020-01-03", 0.01)); // boundary: kept
    const auto decisions = filter_cloudy(records, RefineConfig{});
    REQUIRE(decisions.size() == 3);
    CHECK_FALSE(decisions[0].kept);
    CHECK(decisions[0].fraction == doctest::Approx(0.02));
    CHECK(decisions[1].kept);
    CHECK(decisions[2].kept);
}

TEST_CASE("filter_cloudy: optical record without bands is an error") {
    std::vector<PredictionRecord> records;
    PredictionRecord rec;
    rec.key = {-4.0, -54.9, parse_date("2020-01-01"), Sensor::Landsat8};
    rec.prob_mask = Grid(4, 4, 1.0);
    records.push_back(std::move(rec));
    CHECK_THROWS_WITH_AS(filter_cloudy(records, RefineConfig{}),
                         doctest::Contains("missing red/nir"), Error);
}

TEST_CASE("aggregate: mean of one, two-mask average, >= boundary") {
    const Grid a = make_grid(1, 2, {0.45, 0.35});
    const Grid single = aggregate_masks({&a}, 0.4);
    CHECK(single.at(0, 0) == 1.0);
    CHECK(single.at(0, 1) == 0.0);

    const Grid one = make_grid(1, 1, {1.0});
    const Grid zero = make_grid(1, 1, {0.0});
    CHECK(aggregate_masks({&one, &zero}, 0.4).at(0, 0) == 1.0); // mean 0.5

    const Grid exact = make_grid(1, 1, {0.4});
    CHECK(aggregate_masks({&exact}, 0.4).at(0, 0) == 1.0); // mean exactly 0.4 -> 1

    CHECK_THROWS_AS(aggregate_masks({}, 0.4), Error);
}

TEST_CASE("aggregate: permutation invariance") {
    RngStream rng(61);
    std::vector<Grid> masks;
    for (int i = 0; i < 5; ++i) masks.push_back(testutil::random_grid(8, 8, rng));
    std::vector<const Grid*> fwd, rev;
    for (const auto& m : masks) fwd.push_back(&m);
    rev.assign(fwd.rbegin(), fwd.rend());
    CHECK(aggregate_masks(fwd, 0.4).v == aggregate_masks(rev, 0.4).v);
}

TEST_CASE("morphology: hand cases") {
    const Grid zero(5, 5, 0.0);
    CHECK(erode(zero, 3).v == zero.v);
    CHECK(dilate(zero, 3).v == zero.v);

    Grid center(5, 5, 0.0);
    center.at(2, 2) = 1.0;
    CHECK(erode(center, 3).v == Grid(5, 5, 0.0).v);
    const Grid d = dilate(center, 3);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x)
            CHECK(d.at(y, x) == ((std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1) ? 1.0 : 0.0));

    const Grid ones(5, 5, 1.0);
    const Grid e = erode(ones, 3);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            const bool border = y == 0 || y == 4 || x == 0 || x == 4;
            CHECK(e.at(y, x) == (border ? 0.0 : 1.0)); // out-of-bounds counts as 0
        }
    CHECK(dilate(ones, 3).v == ones.v);
}

TEST_CASE("morphology: non-binary input and bad kernels rejected") {
    Grid g(3, 3, 0.0);
    g.at(1, 1) = 0.5;
    CHECK_THROWS_AS(erode(g, 3), Error);
    CHECK_THROWS_AS(dilate(g, 3), Error);
    CHECK_THROWS_AS(erode(Grid(3, 3, 0.0), 2), Error);
    CHECK_THROWS_AS(erode(Grid(3, 3, 0.0), -1), Error);
}

TEST_CASE("property: morphology matches the sliding min/max oracle exactly") {
    RngStream rng(62);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = trial % 2 == 0 ? 3 : 5;
        const Grid m = testutil::random_binary_grid(32, 32, rng, rng.next_double());
        CHECK(erode(m, k).v == erode_oracle(m, k).v);
        CHECK(dilate(m, k).v == dilate_oracle(m, k).v);
    }
}

TEST_CASE("property: ordering, anti-extensive opening, interior duality") {
    RngStream rng(63);
    for (int trial = 0; trial < 100; ++trial) {
        const Grid m = testutil::random_binary_grid(16, 16, rng, 0.6);
        const Grid e = erode(m, 3);
        const Grid d = dilate(m, 3);
        const Grid opened = dilate(e, 3);
        for (size_t i = 0; i < m.v.size(); ++i) {
            CHECK(e.v[i] <= m.v[i]);      // erode(m) subset of m
            CHECK(m.v[i] <= d.v[i]);      // m subset of dilate(m)
            CHECK(opened.v[i] <= m.v[i]); // opening is anti-extensive
        }
        // duality holds away from the border
        Grid complement(16, 16);
        for (size_t i = 0; i < m.v.size(); ++i) complement.v[i] = 1.0 - m.v[i];
        const Grid dual = dilate(complement, 3);
        for (int y = 1; y < 15; ++y)
            for (int x = 1; x < 15; ++x) CHECK(e.at(y, x) == 1.0 - dual.at(y, x));
    }
}

TEST_CASE("refine_query: single SAR record in both variants") {
    Grid mask(8, 8, 0.0);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) mask.at(y, x) = 0.8;
    mask.at(0, 0) = 0.45; // below 0.5, above 0.4

    Query q{-4.0, -54.9, parse_date("2020-06-01"), "-4.0", "-54.9"};
    std::vector<PredictionRecord> records;
    records.push_back(sar_record(mask, "2020-01-01"));

    const RefineResult raw = refine_query(q, records, RefineConfig{}, Variant::RawAverage);
    CHECK(raw.mask.at(0, 0) == 0.0);  // 0.45 < 0.5
    CHECK(raw.mask.at(3, 3) == 1.0);
    CHECK(raw.provenance.size() == 1);
    CHECK(raw.provenance[0].used);

    const RefineResult refined = refine_query(q, records, RefineConfig{}, Variant::Refined);
    // thresholded at 0.4 then opened: the isolated corner pixel survives the
    // threshold but erosion removes it; the 4x4 block opens back to itself
    CHECK(refined.mask.at(0, 0) == 0.0);
    CHECK(refined.mask.at(3, 3) == 1.0);
    double bad;
    CHECK(is_binary(refined.mask, &bad));
}

TEST_CASE("refine_query: cloudy optical discarded, clean one drives the mask") {
    Grid clean_mask(8, 8, 0.0);
    for (int y = 1; y < 7; ++y)
        for (int x = 1; x < 7; ++x) clean_mask.at(y, x) = 1.0;
    Grid cloudy_mask(8, 8, 1.0); // garbage that would flood the result

    Query q{-4.0, -54.9, parse_date("2020-06-01"), "-4.0", "-54.9"};
    std::vector<PredictionRecord> records;
    records.push_back(optical_record(cloudy_mask, "2020-01-01", 0.02));
    records.push_back(optical_record(clean_mask, "2020-01-02", 0.0));

    const RefineResult r = refine_query(q, records, RefineConfig{}, Variant::Refined);
    REQUIRE(r.provenance.size() == 2);
    CHECK_FALSE(r.provenance[0].used);
    CHECK(r.provenance[0].reason.find("cloud_fraction") != std::string::npos);
    CHECK(r.provenance[1].used);
    // only the clean record is averaged: 6x6 block erodes to 4x4, dilates back
    CHECK(r.mask.at(3, 3) == 1.0);
    CHECK(r.mask.at(0, 0) == 0.0);
    CHECK(r.mask.at(1, 1) == 1.0);
}

TEST_CASE("refine_query: all optical cloudy falls back to SAR alone") {
    Grid sar_mask(8, 8, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) sar_mask.at(y, x) = 1.0;

    Query q{-4.0, -54.9, parse_date("2020-06-01"), "-4.0", "-54.9"};
    std::vector<PredictionRecord> records;
    records.push_back(optical_record(Grid(8, 8, 1.0), "2020-01-01", 0.05));
    records.push_back(sar_record(sar_mask, "2020-01-02"));

    const RefineResult r = refine_query(q, records, RefineConfig{}, Variant::Refined);
    CHECK_FALSE(r.provenance[0].used);
    CHECK(r.provenance[1].used);
    CHECK(r.mask.at(4, 4) == 1.0);
}

TEST_CASE("refine_query: no records and all-cloudy-no-SAR raise NoDataError") {
    Query q{-4.0, -54.9, parse_date("2020-06-01"), "-4.0", "-54.9"};
    CHECK_THROWS_AS(refine_query(q, {}, RefineConfig{}, Variant::Refined), NoDataError);

    std::vector<PredictionRecord> records;
    records.push_back(optical_record(Grid(8, 8, 1.0), "2020-01-01", 0.05));
    CHECK_THROWS_AS(refine_query(q, records, RefineConfig{}, Variant::Refined), NoDataError);
}

TEST_CASE("refine_query: record location must match the query") {
    std::vector<PredictionRecord> records;
    records.push_back(sar_record(Grid(4, 4, 1.0), "2020-01-01"));
    Query q{-3.9, -54.9, parse_date("2020-06-01"), "-3.9", "-54.9"};
    CHECK_THROWS_WITH_AS(refine_query(q, records, RefineConfig{}, Variant::RawAverage),
                         doctest::Contains("does not match"), Error);
}

TEST_CASE("refine_query: per-sensor averaging merges by union when pooling is off") {
    // Two all-zero optical masks outvote the single all-one SAR mask when
    // pooled (mean 1/3); per-sensor averaging keeps the SAR vote via union.
    Query q{-4.0, -54.9, parse_date("2020-06-01"), "-4.0", "-54.9"};
    std::vector<PredictionRecord> records;
    records.push_back(optical_record(Grid(4, 4, 0.0), "2020-01-01", 0.0));
    records.push_back(optical_record(Grid(4, 4, 0.0), "2020-01-02", 0.0));
    records.push_back(sar_record(Grid(4, 4, 1.0), "2020-01-03"));

    RefineConfig pooled;
    const RefineResult a = refine_query(q, records, pooled, Variant::RawAverage);
    CHECK(a.mask.v == Grid(4, 4, 0.0).v);

    RefineConfig split = pooled;
    split.pool_sensors = false;
    const RefineResult b = refine_query(q, records, split, Variant::RawAverage);
    CHECK(b.mask.v == Grid(4, 4, 1.0).v);
}

TEST_CASE("queries: parsing, stems, and malformed lines") {
    const auto dir = testutil::scratch_dir("queries");
    {
        std::ofstream out(dir / "queries.txt");
        out << "# test queries\n";
        out << "-4.39 -54.80 2021-08-01\n";
        out << "-3.87 -54.88 2016-08-31\n";
    }
    const auto queries = load_queries(dir / "queries.txt");
    REQUIRE(queries.size() == 2);
    CHECK(queries[0].lat == -4.39);
    CHECK(query_stem(queries[0]) == "-4.39_-54.80_2021-08-01");
    CHECK(query_stem(queries[1]) == "-3.87_-54.88_2016-08-31");

    {
        std::ofstream out(dir / "bad.txt");
        out << "-4.39 -54.80\n";
    }
    CHECK_THROWS_WITH_AS(load_queries(dir / "bad.txt"), doctest::Contains("line 1"), Error);
}

TEST_CASE("records: save and load round-trips masks and bands bit-exactly") {
    const auto dir = testutil::scratch_dir("records_io");
    RngStream rng(64);
    std::vector<PredictionRecord> records;
    records.push_back(optical_record(testutil::random_grid(8, 8, rng), "2020-01-01", 0.0));
    records.push_back(sar_record(testutil::random_grid(8, 8, rng), "2020-01-02"));

    save_records(records, dir / "records.jsonl");
    const auto back = load_records(dir / "records.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[0].key.sensor == Sensor::Landsat8);
    CHECK(back[0].prob_mask.v == records[0].prob_mask.v);
    CHECK(back[0].red->v == records[0].red->v);
    CHECK(back[0].nir->v == records[0].nir->v);
    CHECK(back[1].key.sensor == Sensor::Sentinel1);
    CHECK(back[1].prob_mask.v == records[1].prob_mask.v);
    CHECK_FALSE(back[1].red.has_value());
    CHECK(back[1].key.date == parse_date("2020-01-02"));
}
