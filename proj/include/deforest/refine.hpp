#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deforest/common.hpp"
#include "deforest/dataset.hpp"
#include "deforest/grid.hpp"

namespace deforest {

struct RefineConfig {
    double ndvi_threshold = 0.1;       // pixels with NDVI below this count as cloud
    double cloud_fraction_limit = 0.01; // records with fraction strictly above are discarded
    double aggregate_threshold = 0.4;   // mean >= threshold -> deforested
    int kernel = 3;                     // odd square structuring element
    bool pool_sensors = true;           // pool both sensors before averaging
};

struct Query {
    double lat = 0.0;
    double lon = 0.0;
    Date date;
    // Original file tokens, kept so output names reproduce the query text.
    std::string lat_text;
    std::string lon_text;
};

struct PredictionRecord {
    SampleKey key;
    Grid prob_mask;          // values in [0,1]
    std::optional<Grid> red; // raw tiles, optical records only
    std::optional<Grid> nir;
};

// Per-pixel (nir - red) / (nir + red); 0 where the denominator is 0.
// Inputs must be non-negative.
Grid ndvi(const Grid& red, const Grid& nir);

// Fraction of pixels with NDVI strictly below the threshold.
double cloud_fraction(const Grid& ndvi_grid, double ndvi_threshold);

struct CloudDecision {
    size_t index = 0;    // position in the input list
    bool kept = false;
    double fraction = 0.0;
};

// Cloud screening for optical records; a record is discarded when its
// cloud fraction exceeds the limit strictly.
std::vector<CloudDecision> filter_cloudy(const std::vector<PredictionRecord>& records,
                                         const RefineConfig& config);

// Pixelwise mean then >= threshold. Empty input is an error.
Grid aggregate_masks(const std::vector<const Grid*>& masks, double threshold);

Grid erode(const Grid& mask, int kernel);
Grid dilate(const Grid& mask, int kernel);

enum class Variant { RawAverage, Refined };

struct ProvenanceItem {
    SampleKey key;
    bool used = false;
    std::string reason; // empty when used
};

struct RefineResult {
    Grid mask;
    std::vector<ProvenanceItem> provenance;
};

// RawAverage: pool every record, average, threshold at 0.5.
// Refined: cloud-screen the optical records, average survivors (plus SAR
// when pooled) at the aggregate threshold, then open (erode then dilate).
// When every optical record is cloudy, SAR records alone are used.
// Zero usable records raise NoDataError.
RefineResult refine_query(const Query& query, const std::vector<PredictionRecord>& records,
                          const RefineConfig& config, Variant variant);

class NoDataError : public Error {
public:
    explicit NoDataError(const std::string& what) : Error(what) {}
};

// Query file: one "lat lon date" line per query, '#' comments allowed.
std::vector<Query> load_queries(const std::filesystem::path& path);

// Output mask name for a query: "<lat>_<lon>_<date>".
std::string query_stem(const Query& query);

// Record store: a JSONL index next to the mask/band tiles it references.
void save_records(const std::vector<PredictionRecord>& records,
                  const std::filesystem::path& index_path);
std::vector<PredictionRecord> load_records(const std::filesystem::path& index_path);

} // namespace deforest
