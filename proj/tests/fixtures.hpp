#pragma once

// Shared helpers for the test suites: scratch directories, synthetic
// grids and samples, and manifest fixtures on disk.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deforest/dataset.hpp"
#include "deforest/grid.hpp"
#include "deforest/npy.hpp"
#include "deforest/rng.hpp"
#include "deforest/tensor.hpp"

namespace testutil {

namespace fs = std::filesystem;
using deforest::Grid;
using deforest::RngStream;
using deforest::Sample;
using deforest::Tensor;

inline fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "deforest_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

inline Grid make_grid(int h, int w, std::initializer_list<double> values) {
    Grid g(h, w);
    size_t i = 0;
    for (double v : values) g.v[i++] = v;
    return g;
}

inline Grid random_grid(int h, int w, RngStream& rng, double lo = 0.0, double hi = 1.0) {
    Grid g(h, w);
    for (double& v : g.v) v = rng.uniform(lo, hi);
    return g;
}

inline Grid random_binary_grid(int h, int w, RngStream& rng, double p_one = 0.5) {
    Grid g(h, w);
    for (double& v : g.v) v = rng.next_double() < p_one ? 1.0 : 0.0;
    return g;
}

// Axis-aligned rectangles of high-contrast foreground on a dark
// background; every channel carries the same pattern plus mild noise.
inline Sample blob_sample(int hw, int channels, RngStream& rng, deforest::Sensor sensor,
                          int sample_index) {
    Grid label(hw, hw, 0.0);
    const int nrects = 1 + static_cast<int>(rng.next_index(2));
    for (int r = 0; r < nrects; ++r) {
        const int rh = hw / 4 + static_cast<int>(rng.next_index(hw / 4));
        const int rw = hw / 4 + static_cast<int>(rng.next_index(hw / 4));
        const int y0 = static_cast<int>(rng.next_index(hw - rh));
        const int x0 = static_cast<int>(rng.next_index(hw - rw));
        for (int y = y0; y < y0 + rh; ++y)
            for (int x = x0; x < x0 + rw; ++x) label.at(y, x) = 1.0;
    }
    Sample s;
    s.label = label;
    s.image = Tensor::zeros({channels, hw, hw});
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                const double base = label.at(y, x) == 1.0 ? 0.9 : 0.1;
                s.image.at3(c, y, x) = base + rng.uniform(-0.05, 0.05);
            }
    s.key.lat = -4.0;
    s.key.lon = -54.9;
    s.key.date = deforest::parse_date("2020-01-01");
    s.key.date.day = 1 + sample_index % 28;
    s.key.sensor = sensor;
    return s;
}

inline std::vector<Sample> blob_samples(int count, int hw, int channels, std::uint64_t seed,
                                        deforest::Sensor sensor = deforest::Sensor::Sentinel1) {
    RngStream rng(seed);
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(blob_sample(hw, channels, rng, sensor, i));
    return out;
}

// Writes a complete on-disk dataset (bands + labels + manifest) and
// returns the manifest path. Sentinel-1 bands match the label size;
// Landsat-8 bands are smaller to exercise resampling.
inline fs::path write_fixture_dataset(const fs::path& dir, deforest::Sensor sensor, int entries,
                                      int label_hw, std::uint64_t seed) {
    fs::create_directories(dir);
    RngStream rng(seed);
    std::ofstream manifest(dir / "manifest.txt");
    const int band_hw = sensor == deforest::Sensor::Landsat8 ? (label_hw / 2) : label_hw;
    // One location, distinct dates: refine queries can then aggregate
    // every entry of the fixture.
    for (int i = 0; i < entries && i < 28; ++i) {
        const std::string stem = "e" + std::to_string(i);
        Grid label = random_binary_grid(label_hw, label_hw, rng, 0.3);
        deforest::npy_write_u1(dir / (stem + "_label.npy"), label);
        const int day = i + 1;
        manifest << deforest::sensor_name(sensor) << " -4.0 -54.9 2020-01-"
                 << (day < 10 ? "0" : "") << day << " " << stem << "_label.npy";
        for (const auto& band : deforest::sensor_bands(sensor)) {
            Grid tile = random_grid(band_hw, band_hw, rng, 0.0, 1000.0);
            const std::string name = stem + "_" + band + ".npy";
            deforest::npy_write_f4(dir / name, tile);
            manifest << " " << band << "=" << name;
        }
        manifest << "\n";
    }
    return dir / "manifest.txt";
}

} // namespace testutil
