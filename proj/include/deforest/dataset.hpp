#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deforest/grid.hpp"
#include "deforest/tensor.hpp"

namespace deforest {

enum class Sensor { Landsat8, Sentinel1 };

std::string sensor_name(Sensor s);
Sensor sensor_from_name(const std::string& name);

// Band order is fixed; it is also the channel stacking order of samples.
const std::vector<std::string>& sensor_bands(Sensor s);

struct Date {
    int year = 0;
    int month = 0;
    int day = 0;

    auto operator<=>(const Date&) const = default;
    std::string to_string() const;
};

// Strict ISO-8601 calendar date (YYYY-MM-DD), validated including leap years.
Date parse_date(const std::string& text);

struct SampleKey {
    double lat = 0.0;
    double lon = 0.0;
    Date date;
    Sensor sensor = Sensor::Landsat8;

    auto operator<=>(const SampleKey&) const = default;
    std::string to_string() const;
};

struct ManifestEntry {
    double lat = 0.0;
    double lon = 0.0;
    Date date;
    std::map<std::string, std::string> band_paths; // band name -> path (relative to manifest dir or absolute)
    std::string label_path;

    SampleKey key(Sensor s) const { return {lat, lon, date, s}; }
};

struct Manifest {
    Sensor sensor = Sensor::Landsat8;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir; // manifest location; relative paths resolve against it
};

// Manifest file: one line per entry, whitespace-separated fields
//   sensor lat lon date label_path BAND=path [BAND=path ...]
// '#' starts a comment line; blank lines are skipped. Every entry must
// declare exactly the sensor's bands, all referenced files must exist,
// and (lat, lon, date, sensor) must be unique.
Manifest load_manifest(const std::filesystem::path& path);

struct RawSample {
    std::map<std::string, Grid> bands;
    Grid label;
};

// Loads the raw band tiles and the label for one entry. No resampling or
// scaling happens here; values come back bit-exact. The label must be
// strictly binary.
RawSample load_sample(const ManifestEntry& entry, Sensor sensor,
                      const std::filesystem::path& base_dir);

struct Sample {
    Tensor image; // (C, H, W), C = 8 for Landsat-8, 3 for Sentinel-1
    Grid label;   // (H, W), values in {0, 1}
    SampleKey key;
};

// Deterministic entry-level split. Same (manifest, val_fraction, seed)
// always produces the same partition; both halves preserve manifest order.
std::pair<Manifest, Manifest> split_dataset(const Manifest& manifest, double val_fraction,
                                            std::uint64_t seed);

} // namespace deforest
