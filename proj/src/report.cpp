#include "deforest/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "deforest/common.hpp"

namespace deforest {

void write_pgm(const std::filesystem::path& path, const Grid& g, double lo, double hi) {
    if (hi <= lo) fail("write_pgm: bad value range [", lo, ", ", hi, "]");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("write_pgm: cannot open for writing: ", path.string());
    out << "P5\n" << g.w << " " << g.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(g.w));
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            const double t = std::clamp((g.at(y, x) - lo) / (hi - lo), 0.0, 1.0);
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(t * 255.0 + 0.5);
        }
        out.write(reinterpret_cast<const char*>(row.data()), g.w);
    }
    if (!out) fail("write_pgm: write failed: ", path.string());
}

std::string render_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    size_t width = 5;
    for (const auto& [name, r] : rows) width = std::max(width, name.size());

    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %14s  %8s  %8s\n", static_cast<int>(width), "query",
                  "pixel_accuracy", "f1", "iou");
    out += buf;
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s  %14.4f  %8.4f  %8.4f\n", static_cast<int>(width),
                      name.c_str(), r.pixel_accuracy, r.f1, r.iou);
        out += buf;
    }
    return out;
}

} // namespace deforest
