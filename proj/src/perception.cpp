#include "pasture/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pasture::percept {

void CropBox::validate() const {
    if (!(plot_min_x < plot_max_x && plot_min_y < plot_max_y)) {
        throw std::runtime_error("crop box: plot rectangle is empty");
    }
    if (!(outer_min_x < plot_min_x && outer_min_y < plot_min_y && outer_max_x > plot_max_x &&
          outer_max_y > plot_max_y)) {
        throw std::runtime_error("crop box: plot must sit strictly inside the perimeter band");
    }
}

RasterStatistic RasterStatistic::parse(const std::string& name) {
    RasterStatistic s;
    if (name == "mean") {
        s.kind = Kind::mean;
    } else if (name == "max") {
        s.kind = Kind::max;
    } else if (name == "median") {
        s.kind = Kind::median;
    } else if (name.size() > 1 && name[0] == 'p') {
        s.kind = Kind::percentile;
        try {
            s.q = std::stod(name.substr(1));
        } catch (const std::exception&) {
            throw std::runtime_error("unknown raster statistic: " + name);
        }
        if (s.q < 0.0 || s.q > 100.0) {
            throw std::runtime_error("raster percentile out of [0,100]: " + name);
        }
    } else {
        throw std::runtime_error("unknown raster statistic: " + name);
    }
    return s;
}

std::string RasterStatistic::name() const {
    switch (kind) {
        case Kind::mean: return "mean";
        case Kind::max: return "max";
        case Kind::median: return "median";
        case Kind::percentile: break;
    }
    return "p" + format_double(q);
}

namespace {

// Bilinear interpolation between cell centers, clamped at map edges.
double bilinear_height(const HeightMap& truth, const CropBox& box, double x, double y) {
    const double cw = (box.plot_max_x - box.plot_min_x) / truth.cols;
    const double ch = (box.plot_max_y - box.plot_min_y) / truth.rows;
    const double gx = (x - box.plot_min_x) / cw - 0.5;
    const double gy = (y - box.plot_min_y) / ch - 0.5;
    int c0 = static_cast<int>(std::floor(gx));
    int r0 = static_cast<int>(std::floor(gy));
    const double fx = gx - c0;
    const double fy = gy - r0;
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    const int c1 = clamp(c0 + 1, truth.cols - 1);
    const int r1 = clamp(r0 + 1, truth.rows - 1);
    c0 = clamp(c0, truth.cols - 1);
    r0 = clamp(r0, truth.rows - 1);
    const double top = truth.at(r0, c0) * (1.0 - fx) + truth.at(r0, c1) * fx;
    const double bot = truth.at(r1, c0) * (1.0 - fx) + truth.at(r1, c1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

}  // namespace

PointCloud sample_point_cloud(const HeightMap& truth, const CropBox& box,
                              const SampleParams& params, Rng& rng) {
    if (!(params.density > 0.0)) {
        throw std::runtime_error("point density must be positive");
    }
    box.validate();
    const double area =
        (box.outer_max_x - box.outer_min_x) * (box.outer_max_y - box.outer_min_y);
    const long long n = std::llround(params.density * area);
    PointCloud cloud;
    cloud.points.reserve(static_cast<std::size_t>(n));
    const double sigma_m = params.lidar_std_mm / 1000.0;
    for (long long i = 0; i < n; ++i) {
        Point p;
        p.x = rng.uniform(box.outer_min_x, box.outer_max_x);
        p.y = rng.uniform(box.outer_min_y, box.outer_max_y);
        if (box.in_plot(p.x, p.y)) {
            p.z = bilinear_height(truth, box, p.x, p.y) / 1000.0;
            p.perimeter = false;
        } else {
            p.z = 0.0;
            p.perimeter = true;
        }
        if (sigma_m > 0.0) p.z += rng.gaussian(0.0, sigma_m);
        const bool drop = params.dropout_frac > 0.0 && rng.uniform01() < params.dropout_frac;
        if (!drop) cloud.points.push_back(p);
    }
    return cloud;
}

std::pair<PointCloud, PointCloud> crop_box_filter(const PointCloud& cloud, const CropBox& box) {
    box.validate();
    PointCloud plot;
    PointCloud perimeter;
    for (const Point& p : cloud.points) {
        if (box.in_plot(p.x, p.y)) {
            plot.points.push_back(p);
        } else if (box.in_outer(p.x, p.y)) {
            perimeter.points.push_back(p);
        }
    }
    return {plot, perimeter};
}

Plane fit_ground_plane(const PointCloud& perimeter) {
    const std::size_t n = perimeter.points.size();
    if (n < 3) {
        throw std::runtime_error("plane fit needs at least 3 perimeter points");
    }
    double ox = 0.0, oy = 0.0, oz = 0.0;
    for (const Point& p : perimeter.points) {
        ox += p.x;
        oy += p.y;
        oz += p.z;
    }
    ox /= static_cast<double>(n);
    oy /= static_cast<double>(n);
    oz /= static_cast<double>(n);

    double sxx = 0.0, syy = 0.0, sxy = 0.0, sxz = 0.0, syz = 0.0;
    for (const Point& p : perimeter.points) {
        const double x = p.x - ox;
        const double y = p.y - oy;
        const double z = p.z - oz;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxz += x * z;
        syz += y * z;
    }
    const double delta = sxx * syy - sxy * sxy;
    if (std::abs(delta) < 1e-12) {
        throw std::runtime_error("plane fit: degenerate geometry (collinear perimeter points)");
    }
    Plane plane;
    plane.a = (syz * sxy - sxz * syy) / delta;
    plane.b = (sxy * sxz - sxx * syz) / delta;
    plane.centroid_x = ox;
    plane.centroid_y = oy;
    plane.centroid_z = oz;
    // D vanishes in the centered frame; recover it in the original frame.
    plane.d = -(plane.a * ox + plane.b * oy + oz);
    return plane;
}

double point_height(const Point& p, const Plane& plane) {
    const double num = plane.a * p.x + plane.b * p.y + p.z + plane.d;
    const double den = std::sqrt(plane.a * plane.a + plane.b * plane.b + 1.0);
    return num / den * 1000.0;
}

std::vector<double> point_heights(const PointCloud& cloud, const Plane& plane) {
    std::vector<double> h(cloud.points.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(cloud.points.size()); ++i) {
        h[static_cast<std::size_t>(i)] = point_height(cloud.points[static_cast<std::size_t>(i)], plane);
    }
    return h;
}

double percentile_heights(const std::vector<double>& heights, double q) {
    if (heights.empty()) {
        throw std::runtime_error("percentile of empty height list");
    }
    if (q < 0.0 || q > 100.0) {
        throw std::runtime_error("percentile out of [0,100]");
    }
    std::vector<double> sorted = heights;
    std::sort(sorted.begin(), sorted.end());
    const double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
    if (lo == hi) return sorted[lo];
    const double f = rank - static_cast<double>(lo);
    return sorted[lo] * (1.0 - f) + sorted[hi] * f;
}

namespace {

double reduce_cell(std::vector<double>& cell, const RasterStatistic& stat) {
    switch (stat.kind) {
        case RasterStatistic::Kind::mean: {
            double s = 0.0;
            for (double v : cell) s += v;
            return s / static_cast<double>(cell.size());
        }
        case RasterStatistic::Kind::max:
            return *std::max_element(cell.begin(), cell.end());
        case RasterStatistic::Kind::median:
            return percentile_heights(cell, 50.0);
        case RasterStatistic::Kind::percentile:
            return percentile_heights(cell, stat.q);
    }
    return 0.0;
}

}  // namespace

HeightMap rasterize(const PointCloud& plot, const std::vector<double>& heights_mm,
                    const CropBox& box, int rows, int cols, const RasterStatistic& stat) {
    if (rows < 1 || cols < 1) {
        throw std::runtime_error("raster dims must be at least 1x1");
    }
    if (plot.points.size() != heights_mm.size()) {
        throw std::runtime_error("point and height counts differ");
    }
    if (plot.points.empty()) {
        throw std::runtime_error("rasterize: empty point cloud");
    }
    const double cw = (box.plot_max_x - box.plot_min_x) / cols;
    const double ch = (box.plot_max_y - box.plot_min_y) / rows;

    std::vector<std::vector<double>> cells(static_cast<std::size_t>(rows) * cols);
    for (std::size_t i = 0; i < plot.points.size(); ++i) {
        const Point& p = plot.points[i];
        int c = static_cast<int>(std::floor((p.x - box.plot_min_x) / cw));
        int r = static_cast<int>(std::floor((p.y - box.plot_min_y) / ch));
        if (c < 0 || c >= cols || r < 0 || r >= rows) continue;
        cells[static_cast<std::size_t>(r) * cols + c].push_back(heights_mm[i]);
    }

    HeightMap out(rows, cols);
    std::vector<std::uint8_t> filled(out.size(), 0);
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < static_cast<long long>(out.size()); ++idx) {
        auto& cell = cells[static_cast<std::size_t>(idx)];
        if (!cell.empty()) {
            out.values[static_cast<std::size_t>(idx)] = reduce_cell(cell, stat);
            filled[static_cast<std::size_t>(idx)] = 1;
        }
    }

    // Fill gaps from the nearest nonempty cell center; ties go to the lowest
    // (row, col) in scan order.
    bool any_filled = std::find(filled.begin(), filled.end(), 1) != filled.end();
    if (!any_filled) {
        throw std::runtime_error("rasterize: no point fell inside the raster");
    }
    std::vector<std::pair<int, int>> sources;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (filled[static_cast<std::size_t>(r) * cols + c]) sources.emplace_back(r, c);
        }
    }
#pragma omp parallel for schedule(static)
    for (long long idx = 0; idx < static_cast<long long>(out.size()); ++idx) {
        if (filled[static_cast<std::size_t>(idx)]) continue;
        const int r = static_cast<int>(idx) / cols;
        const int c = static_cast<int>(idx) % cols;
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t s = 0; s < sources.size(); ++s) {
            const double dr = sources[s].first - r;
            const double dc = sources[s].second - c;
            const double d2 = dr * dr + dc * dc;
            if (d2 < best) {
                best = d2;
                best_i = s;
            }
        }
        out.values[static_cast<std::size_t>(idx)] =
            out.at(sources[best_i].first, sources[best_i].second);
    }
    return out;
}

namespace {

template <typename F>
HeightMap neighborhood_filter(const HeightMap& m, F reduce) {
    HeightMap out(m.rows, m.cols);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < m.rows; ++r) {
        double window[9];
        for (int c = 0; c < m.cols; ++c) {
            int k = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    // edge replication
                    int rr = std::clamp(r + dr, 0, m.rows - 1);
                    int cc = std::clamp(c + dc, 0, m.cols - 1);
                    window[k++] = m.at(rr, cc);
                }
            }
            out.at(r, c) = reduce(window);
        }
    }
    return out;
}

}  // namespace

HeightMap median_filter_3x3(const HeightMap& m) {
    return neighborhood_filter(m, [](double* w) {
        std::nth_element(w, w + 4, w + 9);
        return w[4];
    });
}

HeightMap flat_conv_3x3(const HeightMap& m) {
    return neighborhood_filter(m, [](const double* w) {
        double s = 0.0;
        for (int i = 0; i < 9; ++i) s += w[i];
        return s / 9.0;
    });
}

void write_point_cloud(const std::string& path, const PointCloud& cloud) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write point cloud: " + path);
    }
    for (const Point& p : cloud.points) {
        out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << ' '
            << (p.perimeter ? 1 : 0) << '\n';
    }
}

PointCloud read_point_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open point cloud: " + path);
    }
    PointCloud cloud;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Point p;
        if (!(ss >> p.x >> p.y >> p.z)) {
            throw std::runtime_error("bad point cloud line: " + line);
        }
        int flag = 0;
        if (ss >> flag) p.perimeter = flag != 0;
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
            throw std::runtime_error("non-finite point in " + path);
        }
        cloud.points.push_back(p);
    }
    return cloud;
}

}  // namespace pasture::percept
