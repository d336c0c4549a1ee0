#include "pasture/heightmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pasture {

double HeightMap::mean() const {
    if (values.empty()) {
        throw std::runtime_error("HeightMap::mean: empty map");
    }
    double sum = 0.0;
    double comp = 0.0;
    for (double v : values) {
        double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    // (sum, comp) carries the sum exactly; one fma-corrected division step
    // keeps the mean correctly rounded, which the history adjustment relies on.
    const double n = static_cast<double>(values.size());
    const double m0 = (sum + comp) / n;
    const double residual = std::fma(-m0, n, sum) + comp;
    return m0 + residual / n;
}

double HeightMap::min_value() const {
    return *std::min_element(values.begin(), values.end());
}

double HeightMap::max_value() const {
    return *std::max_element(values.begin(), values.end());
}

std::string format_double(double v) {
    char buf[40];
    // %.17g round-trips any double; try shorter forms first to keep files readable.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) {
            return buf;
        }
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

HeightMap read_hmap(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open heightmap file: " + path);
    }
    std::string magic;
    int rows = 0;
    int cols = 0;
    if (!(in >> magic >> rows >> cols) || magic != "HMAP") {
        throw std::runtime_error("bad heightmap header in " + path);
    }
    if (rows < 1 || cols < 1) {
        throw std::runtime_error("bad heightmap dims in " + path);
    }
    HeightMap m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!(in >> m.values[i])) {
            throw std::runtime_error("truncated heightmap data in " + path);
        }
        if (!std::isfinite(m.values[i])) {
            throw std::runtime_error("non-finite value in " + path);
        }
    }
    return m;
}

void write_hmap(const std::string& path, const HeightMap& m) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write heightmap file: " + path);
    }
    out << "HMAP " << m.rows << " " << m.cols << "\n";
    for (int r = 0; r < m.rows; ++r) {
        for (int c = 0; c < m.cols; ++c) {
            if (c) out << ' ';
            out << format_double(m.at(r, c));
        }
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

void write_manifest(const std::string& path, const Manifest& kv) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write manifest: " + path);
    }
    for (const auto& [k, v] : kv) {
        out << k << "=" << v << "\n";
    }
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open manifest: " + path);
    }
    Manifest kv;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
        };
        trim(key);
        trim(val);
        if (!key.empty()) kv.emplace_back(key, val);
    }
    return kv;
}

}  // namespace pasture
