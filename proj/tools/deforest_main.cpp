// deforest: end-to-end deforestation segmentation pipeline.
// Subcommands: prepare, train, predict, refine, evaluate, report.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deforest/common.hpp"
#include "deforest/dataset.hpp"
#include "deforest/losses.hpp"
#include "deforest/model.hpp"
#include "deforest/npy.hpp"
#include "deforest/preprocess.hpp"
#include "deforest/refine.hpp"
#include "deforest/report.hpp"
#include "deforest/trainer.hpp"

namespace fs = std::filesystem;
using namespace deforest;

namespace {

// Single source of truth for defaults: the exact strings printed by
// --print-config are the strings the configuration is parsed from.
const std::vector<std::pair<std::string, std::string>>& default_table() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"batch_size", "16"},
        {"learning_rate", "0.0001"},
        {"epochs", "50"},
        {"adam_beta1", "0.9"},
        {"adam_beta2", "0.999"},
        {"adam_epsilon", "1e-08"},
        {"bce_weight", "0.5"},
        {"dice_weight", "0.5"},
        {"dice_smooth", "1"},
        {"prob_clip_epsilon", "1e-07"},
        {"val_fraction", "0.1"},
        {"depth", "4"},
        {"base_filters", "64"},
        {"ndvi_threshold", "0.1"},
        {"cloud_fraction_limit", "0.01"},
        {"aggregate_threshold", "0.4"},
        {"kernel", "3"},
        {"pool_sensors", "true"},
        {"stretch_percent", "1"},
        {"epsilon_ratio", "1e-06"},
    };
    return table;
}

double default_num(const std::string& key) {
    for (const auto& [k, v] : default_table())
        if (k == key) return std::stod(v);
    fail("internal: unknown default '", key, "'");
}

void print_config() {
    for (const auto& [k, v] : default_table()) std::cout << k << "=" << v << "\n";
}

fs::path run_directory(const std::string& out_flag, const std::string& subcommand) {
    fs::path dir;
    if (!out_flag.empty()) {
        dir = out_flag;
    } else {
        const char* root = std::getenv("DEFOREST_OUT_ROOT");
        char stamp[32];
        const std::time_t now = std::time(nullptr);
        std::tm tm_utc{};
        gmtime_r(&now, &tm_utc);
        std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
        dir = fs::path(root ? root : "runs") / (subcommand + "-" + stamp);
    }
    fs::create_directories(dir);
    return dir;
}

std::vector<Sample> assemble_all(const Manifest& manifest, const PreprocessConfig& pp,
                                 bool verbose) {
    std::vector<Sample> samples;
    samples.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        const RawSample raw = load_sample(entry, manifest.sensor, manifest.base_dir);
        samples.push_back(assemble_sample(raw, manifest.sensor, pp, entry.key(manifest.sensor)));
        if (verbose)
            std::cout << "loaded " << entry.key(manifest.sensor).to_string() << " ("
                      << samples.back().image.dim(1) << "x" << samples.back().image.dim(2)
                      << ")\n";
    }
    return samples;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
    std::string manifest;
    std::string out;
    bool verbose = false;
};

int cmd_prepare(const PrepareArgs& args) {
    const Manifest manifest = load_manifest(args.manifest);
    std::ostringstream stats;
    stats << "sensor=" << sensor_name(manifest.sensor) << "\n";
    stats << "entries=" << manifest.entries.size() << "\n";

    Date dmin = manifest.entries.front().date, dmax = dmin;
    for (const auto& e : manifest.entries) {
        dmin = std::min(dmin, e.date);
        dmax = std::max(dmax, e.date);
    }
    stats << "date_min=" << dmin.to_string() << "\n";
    stats << "date_max=" << dmax.to_string() << "\n";

    std::map<std::string, std::array<double, 3>> band_stats; // min, max, sum
    std::int64_t band_pixels = 0;
    double label_positive = 0.0;
    std::int64_t label_pixels = 0;
    for (const auto& e : manifest.entries) {
        const RawSample raw = load_sample(e, manifest.sensor, manifest.base_dir);
        for (const auto& [band, tile] : raw.bands) {
            auto it = band_stats.find(band);
            if (it == band_stats.end())
                it = band_stats.emplace(band, std::array<double, 3>{tile.min_value(),
                                                                    tile.max_value(), 0.0}).first;
            it->second[0] = std::min(it->second[0], tile.min_value());
            it->second[1] = std::max(it->second[1], tile.max_value());
            for (double v : tile.v) it->second[2] += v;
        }
        band_pixels += raw.bands.begin()->second.numel();
        for (double v : raw.label.v) label_positive += v;
        label_pixels += raw.label.numel();
    }
    for (const auto& band : sensor_bands(manifest.sensor)) {
        const auto& s = band_stats.at(band);
        char line[160];
        std::snprintf(line, sizeof(line), "band.%s.min=%.6g\nband.%s.max=%.6g\nband.%s.mean=%.6g\n",
                      band.c_str(), s[0], band.c_str(), s[1], band.c_str(),
                      s[2] / static_cast<double>(band_pixels));
        stats << line;
    }
    char frac[64];
    std::snprintf(frac, sizeof(frac), "label.positive_fraction=%.6f\n",
                  label_positive / static_cast<double>(label_pixels));
    stats << frac;

    std::cout << stats.str();
    if (!args.out.empty()) {
        const fs::path dir = run_directory(args.out, "prepare");
        std::ofstream out(dir / "stats.txt");
        out << stats.str();
    }
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string manifest;
    std::string sensor;
    std::string out;
    int epochs = static_cast<int>(default_num("epochs"));
    int batch_size = static_cast<int>(default_num("batch_size"));
    double lr = default_num("learning_rate");
    double val_fraction = default_num("val_fraction");
    int depth = static_cast<int>(default_num("depth"));
    int base_filters = static_cast<int>(default_num("base_filters"));
    std::uint64_t seed = 0;
    bool no_augment = false;
    bool verbose = false;
};

int cmd_train(const TrainArgs& args) {
    const Sensor sensor = sensor_from_name(args.sensor);
    const Manifest manifest = load_manifest(args.manifest);
    if (manifest.sensor != sensor)
        fail("train: manifest holds ", sensor_name(manifest.sensor), " entries, --sensor says ",
             sensor_name(sensor));

    const fs::path dir = run_directory(args.out, "train");
    const auto [train_manifest, val_manifest] = split_dataset(manifest, args.val_fraction,
                                                              args.seed);
    if (train_manifest.entries.empty() || val_manifest.entries.empty())
        fail("train: split produced an empty side (", train_manifest.entries.size(), " train, ",
             val_manifest.entries.size(), " val)");

    const PreprocessConfig pp;
    const auto train_samples = assemble_all(train_manifest, pp, args.verbose);
    const auto val_samples = assemble_all(val_manifest, pp, args.verbose);

    ModelConfig mc;
    mc.in_channels = sensor == Sensor::Landsat8 ? 8 : 3;
    mc.depth = args.depth;
    mc.base_filters = args.base_filters;
    mc.sensor = sensor;

    TrainConfig tc;
    tc.batch_size = args.batch_size;
    tc.learning_rate = args.lr;
    tc.epochs = args.epochs;
    tc.adam_beta1 = default_num("adam_beta1");
    tc.adam_beta2 = default_num("adam_beta2");
    tc.adam_epsilon = default_num("adam_epsilon");
    tc.seed = args.seed;
    tc.augment = sensor == Sensor::Landsat8 && !args.no_augment;

    std::cout << "training " << sensor_name(sensor) << ": " << train_samples.size()
              << " train / " << val_samples.size() << " val samples, depth " << mc.depth
              << ", base " << mc.base_filters << ", augment " << (tc.augment ? "on" : "off")
              << "\n";

    const ModelParams init = build_attention_unet(mc, args.seed);
    const TrainResult result =
        train(init, train_samples, val_samples, tc, [](const EpochRecord& r) {
            std::cout << "epoch " << r.epoch << ": loss " << r.train_loss << ", train acc "
                      << r.train_accuracy << ", val acc " << r.val_accuracy << "\n";
        });

    save_checkpoint(result.params, dir / "checkpoint.ckpt");
    result.history.write(dir / "history.txt");
    std::cout << "wrote " << (dir / "checkpoint.ckpt").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string manifest;
    std::string checkpoint;
    std::string sensor; // optional cross-check
    std::string out;
    bool verbose = false;
};

int cmd_predict(const PredictArgs& args) {
    const ModelParams params = load_checkpoint(args.checkpoint);
    if (!args.sensor.empty() && sensor_from_name(args.sensor) != params.config.sensor)
        fail("predict: sensor mismatch: checkpoint is ", sensor_name(params.config.sensor),
             ", --sensor says ", args.sensor);
    const Manifest manifest = load_manifest(args.manifest);
    if (manifest.sensor != params.config.sensor)
        fail("predict: sensor mismatch: checkpoint is ", sensor_name(params.config.sensor),
             ", manifest holds ", sensor_name(manifest.sensor), " entries");

    const fs::path dir = run_directory(args.out, "predict");
    const PreprocessConfig pp;

    std::vector<PredictionRecord> records;
    records.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        const RawSample raw = load_sample(entry, manifest.sensor, manifest.base_dir);
        const Sample sample = assemble_sample(raw, manifest.sensor, pp,
                                              entry.key(manifest.sensor));
        PredictionRecord rec;
        rec.key = sample.key;
        rec.prob_mask = forward(params, sample.image);
        if (manifest.sensor == Sensor::Landsat8) {
            rec.red = raw.bands.at("SR_B4"); // raw tiles, NDVI runs on native values
            rec.nir = raw.bands.at("SR_B5");
        }
        if (args.verbose)
            std::cout << "predicted " << rec.key.to_string() << "\n";
        records.push_back(std::move(rec));
    }
    save_records(records, dir / "records.jsonl");
    std::cout << "wrote " << records.size() << " records to "
              << (dir / "records.jsonl").string() << "\n";
    return 0;
}

// ----------------------------------------------------------------- refine

struct RefineArgs {
    std::vector<std::string> records;
    std::string queries;
    std::string out;
    std::string variant = "v2";
    double ndvi_threshold = default_num("ndvi_threshold");
    double cloud_limit = default_num("cloud_fraction_limit");
    double agg_threshold = default_num("aggregate_threshold");
    int kernel = static_cast<int>(default_num("kernel"));
    bool no_pool_sensors = false;
    bool verbose = false;
};

nlohmann::json provenance_json(const ProvenanceItem& item) {
    nlohmann::json j;
    j["lat"] = item.key.lat;
    j["lon"] = item.key.lon;
    j["date"] = item.key.date.to_string();
    j["sensor"] = sensor_name(item.key.sensor);
    j["used"] = item.used;
    if (!item.reason.empty()) j["reason"] = item.reason;
    return j;
}

int cmd_refine(const RefineArgs& args) {
    RefineConfig config;
    config.ndvi_threshold = args.ndvi_threshold;
    config.cloud_fraction_limit = args.cloud_limit;
    config.aggregate_threshold = args.agg_threshold;
    config.kernel = args.kernel;
    config.pool_sensors = !args.no_pool_sensors;
    const Variant variant = args.variant == "raw" ? Variant::RawAverage : Variant::Refined;

    std::vector<PredictionRecord> all_records;
    for (const auto& path : args.records) {
        auto part = load_records(path);
        std::move(part.begin(), part.end(), std::back_inserter(all_records));
    }
    const auto queries = load_queries(args.queries);
    const fs::path dir = run_directory(args.out, "refine");
    fs::create_directories(dir / "masks");

    std::ofstream provenance(dir / "provenance.jsonl");
    int written = 0, no_data = 0;
    for (const auto& query : queries) {
        // records at the query location with a source date not after the query
        std::vector<PredictionRecord> candidates;
        std::vector<ProvenanceItem> excluded;
        for (const auto& rec : all_records) {
            if (rec.key.lat != query.lat || rec.key.lon != query.lon) continue;
            if (rec.key.date > query.date)
                excluded.push_back({rec.key, false, "source date after query"});
            else
                candidates.push_back(rec);
        }

        nlohmann::json j;
        j["query"] = {{"lat", query.lat}, {"lon", query.lon}, {"date", query.date.to_string()}};
        nlohmann::json recs = nlohmann::json::array();
        for (const auto& item : excluded) recs.push_back(provenance_json(item));
        try {
            const RefineResult result = refine_query(query, candidates, config, variant);
            const std::string mask_name = query_stem(query) + ".npy";
            npy_write_u1(dir / "masks" / mask_name, result.mask);
            for (const auto& item : result.provenance) recs.push_back(provenance_json(item));
            j["status"] = "ok";
            j["mask"] = "masks/" + mask_name;
            ++written;
            if (args.verbose) std::cout << "refined " << query_stem(query) << "\n";
        } catch (const NoDataError& e) {
            j["status"] = "no_data";
            j["error"] = e.what();
            ++no_data;
            std::cout << "no data for query " << query_stem(query) << ": " << e.what() << "\n";
        }
        j["records"] = recs;
        provenance << j.dump() << "\n";
    }
    std::cout << "wrote " << written << " masks (" << no_data << " no-data queries) to "
              << (dir / "masks").string() << "\n";
    return 0;
}

// --------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string pred;
    std::string truth;
    std::string out;
    bool macro_average = false;
};

std::vector<fs::path> list_npy_sorted(const fs::path& dir) {
    if (!fs::is_directory(dir)) fail("evaluate: not a directory: ", dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".npy") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_evaluate(const EvaluateArgs& args) {
    const auto preds = list_npy_sorted(args.pred);
    if (preds.empty()) fail("evaluate: no .npy masks in ", args.pred);

    Confusion pooled;
    double acc_sum = 0.0, f1_sum = 0.0, iou_sum = 0.0;
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& pred_path : preds) {
        const fs::path truth_path = fs::path(args.truth) / pred_path.filename();
        if (!fs::exists(truth_path))
            fail("evaluate: no ground truth for ", pred_path.filename().string(), " in ",
                 args.truth);
        const Grid pred = npy_read_grid(pred_path);
        const Grid truth = npy_read_grid(truth_path);
        const MetricsReport r = evaluate(pred, truth);
        pooled += r.confusion;
        acc_sum += r.pixel_accuracy;
        f1_sum += r.f1;
        iou_sum += r.iou;
        rows.emplace_back(pred_path.stem().string(), r);
    }

    std::string text;
    if (args.macro_average) {
        const double n = static_cast<double>(preds.size());
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "averaging=macro\nqueries=%zu\npixel_accuracy=%.4f\nf1=%.4f\niou=%.4f\n",
                      preds.size(), acc_sum / n, f1_sum / n, iou_sum / n);
        text = buf;
    } else {
        text = metrics_from_confusion(pooled).to_kv_text();
    }
    std::cout << text;
    if (!args.out.empty()) {
        const fs::path dir = run_directory(args.out, "evaluate");
        std::ofstream out(dir / "metrics.txt");
        out << text;
    }
    return 0;
}

// ----------------------------------------------------------------- report

struct ReportArgs {
    std::string pred;
    std::string truth;
    std::string out;
};

int cmd_report(const ReportArgs& args) {
    const auto preds = list_npy_sorted(args.pred);
    if (preds.empty()) fail("report: no .npy masks in ", args.pred);
    const fs::path dir = run_directory(args.out, "report");
    fs::create_directories(dir / "thumbnails");

    std::vector<std::pair<std::string, MetricsReport>> rows;
    Confusion pooled;
    for (const auto& pred_path : preds) {
        const Grid pred = npy_read_grid(pred_path);
        write_pgm(dir / "thumbnails" / (pred_path.stem().string() + ".pgm"), pred);
        if (!args.truth.empty()) {
            const fs::path truth_path = fs::path(args.truth) / pred_path.filename();
            if (!fs::exists(truth_path))
                fail("report: no ground truth for ", pred_path.filename().string());
            const MetricsReport r = evaluate(pred, npy_read_grid(truth_path));
            pooled += r.confusion;
            rows.emplace_back(pred_path.stem().string(), r);
        }
    }
    if (!rows.empty()) {
        rows.emplace_back("(pooled)", metrics_from_confusion(pooled));
        std::ofstream table(dir / "metrics_table.txt");
        table << render_metrics_table(rows);
    }
    std::cout << "wrote " << preds.size() << " thumbnails to " << (dir / "thumbnails").string()
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-UNet deforestation mapping pipeline"};
    app.require_subcommand(0, 1);
    bool want_config = false;
    app.add_flag("--print-config", want_config, "print default configuration and exit");

    PrepareArgs prepare_args;
    auto* prepare = app.add_subcommand("prepare", "validate a manifest, print dataset statistics");
    prepare->add_option("--manifest", prepare_args.manifest, "manifest file")->required();
    prepare->add_option("--out", prepare_args.out, "output directory");
    prepare->add_flag("-v,--verbose", prepare_args.verbose, "chatty output");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a per-sensor model");
    train_cmd->add_option("--manifest", train_args.manifest, "manifest file")->required();
    train_cmd->add_option("--sensor", train_args.sensor, "landsat8 or sentinel1")->required();
    train_cmd->add_option("--out", train_args.out, "output directory");
    train_cmd->add_option("--epochs", train_args.epochs, "training epochs");
    train_cmd->add_option("--batch-size", train_args.batch_size, "mini-batch size");
    train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
    train_cmd->add_option("--val-fraction", train_args.val_fraction, "validation split fraction");
    train_cmd->add_option("--depth", train_args.depth, "encoder pooling levels");
    train_cmd->add_option("--base-filters", train_args.base_filters, "first-level channel count");
    train_cmd->add_option("--seed", train_args.seed, "rng seed");
    train_cmd->add_flag("--no-augment", train_args.no_augment, "disable augmentation");
    train_cmd->add_flag("-v,--verbose", train_args.verbose, "chatty output");

    PredictArgs predict_args;
    auto* predict = app.add_subcommand("predict", "run a checkpoint over a manifest");
    predict->add_option("--manifest", predict_args.manifest, "manifest file")->required();
    predict->add_option("--checkpoint", predict_args.checkpoint, "model checkpoint")->required();
    predict->add_option("--sensor", predict_args.sensor, "expected sensor (cross-check)");
    predict->add_option("--out", predict_args.out, "output directory");
    predict->add_flag("-v,--verbose", predict_args.verbose, "chatty output");

    RefineArgs refine_args;
    auto* refine = app.add_subcommand("refine", "turn prediction records into final masks");
    refine->add_option("--records", refine_args.records, "records.jsonl files")->required();
    refine->add_option("--queries", refine_args.queries, "query file (lat lon date)")->required();
    refine->add_option("--out", refine_args.out, "output directory");
    refine->add_option("--variant", refine_args.variant, "raw or v2")
        ->check(CLI::IsMember({"raw", "v2"}));
    refine->add_option("--ndvi-threshold", refine_args.ndvi_threshold, "NDVI cloud threshold");
    refine->add_option("--cloud-limit", refine_args.cloud_limit, "cloud fraction discard limit");
    refine->add_option("--agg-threshold", refine_args.agg_threshold, "mask averaging threshold");
    refine->add_option("--kernel", refine_args.kernel, "morphology kernel size (odd)");
    refine->add_flag("--no-pool-sensors", refine_args.no_pool_sensors,
                     "average per sensor, then merge by union");
    refine->add_flag("-v,--verbose", refine_args.verbose, "chatty output");

    EvaluateArgs evaluate_args;
    auto* eval = app.add_subcommand("evaluate", "compare predicted masks with ground truth");
    eval->add_option("--pred", evaluate_args.pred, "directory of predicted masks")->required();
    eval->add_option("--truth", evaluate_args.truth, "directory of truth masks")->required();
    eval->add_option("--out", evaluate_args.out, "output directory");
    eval->add_flag("--macro", evaluate_args.macro_average, "macro-average over queries");

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "render metric tables and mask thumbnails");
    report->add_option("--pred", report_args.pred, "directory of predicted masks")->required();
    report->add_option("--truth", report_args.truth, "directory of truth masks");
    report->add_option("--out", report_args.out, "output directory");

    CLI11_PARSE(app, argc, argv);

    if (want_config) {
        print_config();
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return 1;
    }

    try {
        if (prepare->parsed()) return cmd_prepare(prepare_args);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (predict->parsed()) return cmd_predict(predict_args);
        if (refine->parsed()) return cmd_refine(refine_args);
        if (eval->parsed()) return cmd_evaluate(evaluate_args);
        if (report->parsed()) return cmd_report(report_args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
