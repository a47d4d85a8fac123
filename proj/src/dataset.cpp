#include "deforest/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "deforest/common.hpp"
#include "deforest/npy.hpp"
#include "deforest/rng.hpp"

namespace deforest {

namespace fs = std::filesystem;

std::string sensor_name(Sensor s) {
    return s == Sensor::Landsat8 ? "landsat8" : "sentinel1";
}

Sensor sensor_from_name(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "landsat8") return Sensor::Landsat8;
    if (lower == "sentinel1") return Sensor::Sentinel1;
    fail("unknown sensor '", name, "' (expected landsat8 or sentinel1)");
}

const std::vector<std::string>& sensor_bands(Sensor s) {
    static const std::vector<std::string> landsat8 = {
        "SR_B1", "SR_B2", "SR_B3", "SR_B4", "SR_B5", "SR_B6", "SR_B7", "ST_B10"};
    static const std::vector<std::string> sentinel1 = {"VV", "VH"};
    return s == Sensor::Landsat8 ? landsat8 : sentinel1;
}

std::string Date::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

Date parse_date(const std::string& text) {
    if (text.size() != 10 || text[4] != '-' || text[7] != '-')
        fail("bad date '", text, "' (expected YYYY-MM-DD)");
    for (size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
        if (!std::isdigit(static_cast<unsigned char>(text[i])))
            fail("bad date '", text, "' (expected YYYY-MM-DD)");
    Date d;
    d.year = std::stoi(text.substr(0, 4));
    d.month = std::stoi(text.substr(5, 2));
    d.day = std::stoi(text.substr(8, 2));
    if (d.month < 1 || d.month > 12) fail("bad date '", text, "': month out of range");
    static const int days_in[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int dmax = days_in[d.month - 1];
    const bool leap = (d.year % 4 == 0 && d.year % 100 != 0) || d.year % 400 == 0;
    if (d.month == 2 && leap) dmax = 29;
    if (d.day < 1 || d.day > dmax) fail("bad date '", text, "': day out of range");
    return d;
}

std::string SampleKey::to_string() const {
    std::ostringstream os;
    os << "(" << lat << ", " << lon << ", " << date.to_string() << ", " << sensor_name(sensor)
       << ")";
    return os.str();
}

namespace {

double parse_double_field(const std::string& token, const char* what, int line_no) {
    size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(token, &used);
    } catch (const std::exception&) {
        fail("manifest line ", line_no, ": bad ", what, " '", token, "'");
    }
    if (used != token.size()) fail("manifest line ", line_no, ": bad ", what, " '", token, "'");
    return value;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

} // namespace

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail("manifest: cannot open ", path.string());

    Manifest manifest;
    manifest.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    bool sensor_set = false;
    std::set<SampleKey> seen;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        if (tokens.empty() || tokens[0][0] == '#') continue;

        if (tokens.size() < 6)
            fail("manifest line ", line_no,
                 ": expected 'sensor lat lon date label_path BAND=path ...'");

        const Sensor sensor = [&] {
            try {
                return sensor_from_name(tokens[0]);
            } catch (const Error& e) {
                fail("manifest line ", line_no, ": ", e.what());
            }
        }();
        if (!sensor_set) {
            manifest.sensor = sensor;
            sensor_set = true;
        } else if (sensor != manifest.sensor) {
            fail("manifest line ", line_no, ": mixed sensors in one manifest (",
                 sensor_name(manifest.sensor), " vs ", sensor_name(sensor), ")");
        }

        ManifestEntry entry;
        entry.lat = parse_double_field(tokens[1], "latitude", line_no);
        entry.lon = parse_double_field(tokens[2], "longitude", line_no);
        if (entry.lat < -90.0 || entry.lat > 90.0)
            fail("manifest line ", line_no, ": latitude ", entry.lat, " outside [-90, 90]");
        if (entry.lon < -180.0 || entry.lon > 180.0)
            fail("manifest line ", line_no, ": longitude ", entry.lon, " outside [-180, 180]");
        try {
            entry.date = parse_date(tokens[3]);
        } catch (const Error& e) {
            fail("manifest line ", line_no, ": ", e.what());
        }
        entry.label_path = tokens[4];

        for (size_t i = 5; i < tokens.size(); ++i) {
            const auto eq = tokens[i].find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == tokens[i].size())
                fail("manifest line ", line_no, ": bad band field '", tokens[i],
                     "' (expected BAND=path)");
            const std::string band = tokens[i].substr(0, eq);
            const std::string bpath = tokens[i].substr(eq + 1);
            if (entry.band_paths.count(band))
                fail("manifest line ", line_no, ": band ", band, " declared twice");
            entry.band_paths[band] = bpath;
        }

        const auto& bands = sensor_bands(manifest.sensor);
        for (const auto& band : bands)
            if (!entry.band_paths.count(band))
                fail("manifest line ", line_no, ": entry ", entry.key(manifest.sensor).to_string(),
                     " missing band ", band);
        if (entry.band_paths.size() != bands.size())
            for (const auto& [band, _] : entry.band_paths)
                if (std::find(bands.begin(), bands.end(), band) == bands.end())
                    fail("manifest line ", line_no, ": band ", band, " not valid for ",
                         sensor_name(manifest.sensor));

        for (const auto& [band, bpath] : entry.band_paths)
            if (!fs::exists(resolve(manifest.base_dir, bpath)))
                fail("manifest line ", line_no, ": band ", band, " file not found: ", bpath);
        if (!fs::exists(resolve(manifest.base_dir, entry.label_path)))
            fail("manifest line ", line_no, ": label file not found: ", entry.label_path);

        const SampleKey key = entry.key(manifest.sensor);
        if (!seen.insert(key).second)
            fail("manifest line ", line_no, ": duplicate key ", key.to_string());
        manifest.entries.push_back(std::move(entry));
    }
    if (!sensor_set) fail("manifest: no entries in ", path.string());
    return manifest;
}

RawSample load_sample(const ManifestEntry& entry, Sensor sensor, const fs::path& base_dir) {
    RawSample raw;
    for (const auto& band : sensor_bands(sensor)) {
        const auto it = entry.band_paths.find(band);
        if (it == entry.band_paths.end())
            fail("load_sample: entry ", entry.key(sensor).to_string(), " missing band ", band);
        raw.bands[band] = npy_read_grid(resolve(base_dir, it->second));
    }
    raw.label = npy_read_grid(resolve(base_dir, entry.label_path));
    double bad = 0.0;
    int by = 0, bx = 0;
    if (!is_binary(raw.label, &bad, &by, &bx))
        fail("load_sample: label ", entry.label_path, " is not binary: value ", bad, " at (", by,
             ", ", bx, ")");
    return raw;
}

std::pair<Manifest, Manifest> split_dataset(const Manifest& manifest, double val_fraction,
                                            std::uint64_t seed) {
    if (manifest.entries.empty()) fail("split_dataset: empty manifest");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        fail("split_dataset: val_fraction ", val_fraction, " outside (0, 1)");

    const size_t n = manifest.entries.size();
    size_t val_count = static_cast<size_t>(std::llround(static_cast<double>(n) * val_fraction));
    if (n > 1) val_count = std::min(std::max<size_t>(val_count, 1), n - 1);
    else val_count = 0; // a single entry always trains

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    RngStream rng(seed);
    rng.shuffle(order);

    std::vector<bool> in_val(n, false);
    for (size_t i = 0; i < val_count; ++i) in_val[order[i]] = true;

    Manifest train{manifest.sensor, {}, manifest.base_dir};
    Manifest val{manifest.sensor, {}, manifest.base_dir};
    for (size_t i = 0; i < n; ++i)
        (in_val[i] ? val : train).entries.push_back(manifest.entries[i]);
    return {std::move(train), std::move(val)};
}

} // namespace deforest
