#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace pasture {

// M x N grid of heights in millimeters, row-major. The shared currency
// between synthesis, prediction, planning and perception.
struct HeightMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;

    HeightMap() = default;
    HeightMap(int r, int c, double fill = 0.0)
        : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    std::size_t size() const { return values.size(); }

    // Neumaier-compensated mean; the history adjustment relies on it being
    // accurate to the last bit for typical magnitudes.
    double mean() const;
    double min_value() const;
    double max_value() const;
};

// Text format shared by all modules:
//   HMAP <rows> <cols>
//   <cols space-separated decimals> x rows
HeightMap read_hmap(const std::string& path);
void write_hmap(const std::string& path, const HeightMap& m);

// key=value manifests, one pair per line, '#' comments allowed.
using Manifest = std::vector<std::pair<std::string, std::string>>;
void write_manifest(const std::string& path, const Manifest& kv);
Manifest read_manifest(const std::string& path);

// Shortest decimal form that round-trips through strtod.
std::string format_double(double v);

}  // namespace pasture
