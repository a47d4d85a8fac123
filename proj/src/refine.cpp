#include "deforest/refine.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deforest/common.hpp"
#include "deforest/npy.hpp"

namespace deforest {

namespace fs = std::filesystem;

Grid ndvi(const Grid& red, const Grid& nir) {
    if (!red.same_shape(nir))
        fail("ndvi: shape mismatch ", red.h, "x", red.w, " vs ", nir.h, "x", nir.w);
    Grid out(red.h, red.w);
    for (size_t i = 0; i < out.v.size(); ++i) {
        const double r = red.v[i], n = nir.v[i];
        if (r < 0.0 || n < 0.0)
            fail("ndvi: negative reflectance (red=", r, ", nir=", n, ") at flat index ", i);
        const double denom = n + r;
        out.v[i] = denom == 0.0 ? 0.0 : (n - r) / denom;
    }
    return out;
}

double cloud_fraction(const Grid& ndvi_grid, double ndvi_threshold) {
    if (ndvi_grid.numel() == 0) fail("cloud_fraction: empty grid");
    std::int64_t below = 0;
    for (double v : ndvi_grid.v)
        if (v < ndvi_threshold) ++below;
    return static_cast<double>(below) / static_cast<double>(ndvi_grid.numel());
}

namespace {

void check_refine_config(const RefineConfig& config) {
    for (const auto& [name, value] :
         {std::pair<const char*, double>{"ndvi_threshold", config.ndvi_threshold},
          {"cloud_fraction_limit", config.cloud_fraction_limit},
          {"aggregate_threshold", config.aggregate_threshold}})
        if (value < 0.0 || value > 1.0)
            fail("refine: ", name, " = ", value, " outside [0, 1]");
    if (config.kernel < 1 || config.kernel % 2 == 0)
        fail("refine: kernel must be odd and >= 1, got ", config.kernel);
}

} // namespace

std::vector<CloudDecision> filter_cloudy(const std::vector<PredictionRecord>& records,
                                         const RefineConfig& config) {
    check_refine_config(config);
    std::vector<CloudDecision> decisions;
    decisions.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (!rec.red || !rec.nir)
            fail("filter_cloudy: optical record ", rec.key.to_string(),
                 " is missing red/nir bands");
        const double fraction = cloud_fraction(ndvi(*rec.red, *rec.nir), config.ndvi_threshold);
        decisions.push_back({i, fraction <= config.cloud_fraction_limit, fraction});
    }
    return decisions;
}

Grid aggregate_masks(const std::vector<const Grid*>& masks, double threshold) {
    if (masks.empty()) fail("aggregate_masks: no masks to aggregate");
    const Grid& first = *masks.front();
    for (const Grid* m : masks)
        if (!m->same_shape(first))
            fail("aggregate_masks: shape mismatch ", m->h, "x", m->w, " vs ", first.h, "x",
                 first.w);
    Grid out(first.h, first.w);
    const double inv = 1.0 / static_cast<double>(masks.size());
    for (size_t i = 0; i < out.v.size(); ++i) {
        double sum = 0.0;
        for (const Grid* m : masks) sum += m->v[i];
        out.v[i] = sum * inv >= threshold ? 1.0 : 0.0;
    }
    return out;
}

namespace {

void check_kernel(int kernel) {
    if (kernel < 1 || kernel % 2 == 0) fail("morphology: kernel must be odd and >= 1, got ", kernel);
}

void check_binary(const Grid& mask, const char* who) {
    double bad = 0.0;
    int by = 0, bx = 0;
    if (!is_binary(mask, &bad, &by, &bx))
        fail(who, ": mask is not binary: value ", bad, " at (", by, ", ", bx, ")");
}

} // namespace

Grid erode(const Grid& mask, int kernel) {
    check_kernel(kernel);
    check_binary(mask, "erode");
    const int r = kernel / 2;
    Grid out(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            bool all_one = true;
            for (int dy = -r; dy <= r && all_one; ++dy)
                for (int dx = -r; dx <= r && all_one; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    // out-of-bounds counts as 0, so border windows fail
                    if (yy < 0 || yy >= mask.h || xx < 0 || xx >= mask.w ||
                        mask.at(yy, xx) == 0.0)
                        all_one = false;
                }
            out.at(y, x) = all_one ? 1.0 : 0.0;
        }
    return out;
}

Grid dilate(const Grid& mask, int kernel) {
    check_kernel(kernel);
    check_binary(mask, "dilate");
    const int r = kernel / 2;
    Grid out(mask.h, mask.w);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x) {
            bool any_one = false;
            for (int dy = -r; dy <= r && !any_one; ++dy)
                for (int dx = -r; dx <= r && !any_one; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < mask.h && xx >= 0 && xx < mask.w &&
                        mask.at(yy, xx) == 1.0)
                        any_one = true;
                }
            out.at(y, x) = any_one ? 1.0 : 0.0;
        }
    return out;
}

namespace {

std::string fraction_reason(double fraction, double limit) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "cloud_fraction %.6f > limit %.6f", fraction, limit);
    return buf;
}

Grid merge_union(const Grid& a, const Grid& b) {
    Grid out(a.h, a.w);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = (a.v[i] != 0.0 || b.v[i] != 0.0) ? 1.0 : 0.0;
    return out;
}

Grid average_groups(const std::vector<const Grid*>& optical, const std::vector<const Grid*>& sar,
                    double threshold, bool pool_sensors) {
    if (pool_sensors) {
        std::vector<const Grid*> all(optical);
        all.insert(all.end(), sar.begin(), sar.end());
        return aggregate_masks(all, threshold);
    }
    // Per-sensor averaging, merged by union.
    std::optional<Grid> merged;
    for (const auto* group : {&optical, &sar}) {
        if (group->empty()) continue;
        Grid g = aggregate_masks(*group, threshold);
        merged = merged ? merge_union(*merged, g) : std::move(g);
    }
    if (!merged) fail("aggregate_masks: no masks to aggregate");
    return *merged;
}

} // namespace

RefineResult refine_query(const Query& query, const std::vector<PredictionRecord>& records,
                          const RefineConfig& config, Variant variant) {
    check_refine_config(config);
    if (records.empty())
        throw NoDataError(cat("refine: no records for query ", query_stem(query)));
    for (const auto& rec : records)
        if (rec.key.lat != query.lat || rec.key.lon != query.lon)
            fail("refine: record ", rec.key.to_string(), " does not match query location (",
                 query.lat, ", ", query.lon, ")");

    RefineResult result;
    result.provenance.reserve(records.size());

    if (variant == Variant::RawAverage) {
        std::vector<const Grid*> optical, sar;
        for (const auto& rec : records) {
            (rec.key.sensor == Sensor::Landsat8 ? optical : sar).push_back(&rec.prob_mask);
            result.provenance.push_back({rec.key, true, ""});
        }
        result.mask = average_groups(optical, sar, 0.5, config.pool_sensors);
        return result;
    }

    // Refined: cloud-screen optical records first.
    std::vector<PredictionRecord const*> optical_recs;
    std::vector<const Grid*> sar;
    std::vector<size_t> optical_indices;
    for (size_t i = 0; i < records.size(); ++i) {
        if (records[i].key.sensor == Sensor::Landsat8) {
            optical_indices.push_back(i);
            optical_recs.push_back(&records[i]);
        } else {
            sar.push_back(&records[i].prob_mask);
        }
    }

    std::vector<PredictionRecord> optical_copy;
    optical_copy.reserve(optical_recs.size());
    for (const auto* r : optical_recs) optical_copy.push_back(*r);
    const auto decisions = filter_cloudy(optical_copy, config);

    std::vector<const Grid*> optical_kept;
    std::vector<bool> used(records.size(), false);
    std::vector<std::string> reasons(records.size());
    for (const auto& d : decisions) {
        const size_t ri = optical_indices[d.index];
        if (d.kept) {
            optical_kept.push_back(&records[ri].prob_mask);
            used[ri] = true;
        } else {
            reasons[ri] = fraction_reason(d.fraction, config.cloud_fraction_limit);
        }
    }
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].key.sensor == Sensor::Sentinel1) used[i] = true;

    if (optical_kept.empty() && sar.empty())
        throw NoDataError(cat("refine: all records for query ", query_stem(query),
                              " were discarded as cloudy"));

    const Grid binary = average_groups(optical_kept, sar, config.aggregate_threshold,
                                       config.pool_sensors);
    result.mask = dilate(erode(binary, config.kernel), config.kernel);
    for (size_t i = 0; i < records.size(); ++i)
        result.provenance.push_back({records[i].key, used[i], reasons[i]});
    return result;
}

std::vector<Query> load_queries(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail("queries: cannot open ", path.string());
    std::vector<Query> queries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string lat_tok, lon_tok, date_tok;
        if (!(ls >> lat_tok)) continue;
        if (lat_tok[0] == '#') continue;
        if (!(ls >> lon_tok >> date_tok))
            fail("queries line ", line_no, ": expected 'lat lon date'");
        std::string extra;
        if (ls >> extra) fail("queries line ", line_no, ": trailing token '", extra, "'");
        Query q;
        try {
            q.lat = std::stod(lat_tok);
            q.lon = std::stod(lon_tok);
        } catch (const std::exception&) {
            fail("queries line ", line_no, ": bad coordinates");
        }
        q.date = parse_date(date_tok);
        q.lat_text = lat_tok;
        q.lon_text = lon_tok;
        queries.push_back(std::move(q));
    }
    if (queries.empty()) fail("queries: no queries in ", path.string());
    return queries;
}

std::string query_stem(const Query& query) {
    const auto coord = [](double v, const std::string& text) {
        if (!text.empty()) return text;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    return coord(query.lat, query.lat_text) + "_" + coord(query.lon, query.lon_text) + "_" +
           query.date.to_string();
}

void save_records(const std::vector<PredictionRecord>& records, const fs::path& index_path) {
    const fs::path dir = index_path.has_parent_path() ? index_path.parent_path() : fs::path(".");
    fs::create_directories(dir);
    std::ofstream out(index_path);
    if (!out) fail("records: cannot open for writing: ", index_path.string());

    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records.at(i);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "rec_%05zu", i);
        nlohmann::json j;
        j["lat"] = rec.key.lat;
        j["lon"] = rec.key.lon;
        j["date"] = rec.key.date.to_string();
        j["sensor"] = sensor_name(rec.key.sensor);
        const std::string mask_name = cat(stem, "_mask.npy");
        npy_write_f8(dir / mask_name, rec.prob_mask);
        j["mask"] = mask_name;
        if (rec.key.sensor == Sensor::Landsat8) {
            if (!rec.red || !rec.nir)
                fail("records: optical record ", rec.key.to_string(), " missing red/nir");
            const std::string red_name = cat(stem, "_red.npy");
            const std::string nir_name = cat(stem, "_nir.npy");
            npy_write_f8(dir / red_name, *rec.red);
            npy_write_f8(dir / nir_name, *rec.nir);
            j["red"] = red_name;
            j["nir"] = nir_name;
        }
        out << j.dump() << "\n";
    }
    if (!out) fail("records: write failed: ", index_path.string());
}

std::vector<PredictionRecord> load_records(const fs::path& index_path) {
    std::ifstream in(index_path);
    if (!in) fail("records: cannot open ", index_path.string());
    const fs::path dir = index_path.has_parent_path() ? index_path.parent_path() : fs::path(".");

    std::vector<PredictionRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail("records line ", line_no, ": ", e.what());
        }
        PredictionRecord rec;
        try {
            rec.key.lat = j.at("lat").get<double>();
            rec.key.lon = j.at("lon").get<double>();
            rec.key.date = parse_date(j.at("date").get<std::string>());
            rec.key.sensor = sensor_from_name(j.at("sensor").get<std::string>());
            rec.prob_mask = npy_read_grid(dir / j.at("mask").get<std::string>());
            if (j.contains("red")) rec.red = npy_read_grid(dir / j.at("red").get<std::string>());
            if (j.contains("nir")) rec.nir = npy_read_grid(dir / j.at("nir").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            fail("records line ", line_no, ": ", e.what());
        }
        for (double v : rec.prob_mask.v)
            if (v < 0.0 || v > 1.0)
                fail("records line ", line_no, ": probability ", v, " outside [0,1]");
        if (rec.key.sensor == Sensor::Landsat8 && (!rec.red || !rec.nir))
            fail("records line ", line_no, ": optical record missing red/nir bands");
        if (rec.key.sensor == Sensor::Sentinel1 && (rec.red || rec.nir))
            fail("records line ", line_no, ": SAR record must not carry red/nir bands");
        records.push_back(std::move(rec));
    }
    return records;
}

} // namespace deforest
