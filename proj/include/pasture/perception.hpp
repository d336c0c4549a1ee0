#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pasture/heightmap.hpp"
#include "pasture/rng.hpp"

namespace pasture::percept {

struct Point {
    double x = 0.0;  // meters
    double y = 0.0;
    double z = 0.0;
    bool perimeter = false;
};

struct PointCloud {
    std::vector<Point> points;
};

// Ax + By + z + D = 0 (unit z coefficient).
struct Plane {
    double a = 0.0;
    double b = 0.0;
    double d = 0.0;
    double centroid_x = 0.0;
    double centroid_y = 0.0;
    double centroid_z = 0.0;
};

// Inner plot rectangle plus the surrounding mowed band it sits in. Intervals
// are half open: closed on the lower/left edge, open on the upper/right.
struct CropBox {
    double plot_min_x = 0.0;
    double plot_min_y = 0.0;
    double plot_max_x = 10.0;
    double plot_max_y = 10.0;
    double outer_min_x = -1.0;
    double outer_min_y = -1.0;
    double outer_max_x = 11.0;
    double outer_max_y = 11.0;

    void validate() const;
    bool in_plot(double x, double y) const {
        return x >= plot_min_x && x < plot_max_x && y >= plot_min_y && y < plot_max_y;
    }
    bool in_outer(double x, double y) const {
        return x >= outer_min_x && x < outer_max_x && y >= outer_min_y && y < outer_max_y;
    }
};

// Per-cell aggregation statistic for rasterization.
struct RasterStatistic {
    enum class Kind { mean, max, median, percentile } kind = Kind::percentile;
    double q = 95.0;

    static RasterStatistic parse(const std::string& name);  // mean | max | median | p<q>
    std::string name() const;
};

struct SampleParams {
    double density = 500.0;      // points per square meter over the outer box
    double lidar_std_mm = 4.0;   // per-point range noise
    double dropout_frac = 0.0;   // fraction of points dropped to mimic occlusion
};

// Synthetic sweep over the crop box: plot points carry the bilinear truth
// height plus noise, band points carry noise only (mowed ground at z = 0).
PointCloud sample_point_cloud(const HeightMap& truth, const CropBox& box,
                              const SampleParams& params, Rng& rng);

// Partition into plot and perimeter clouds; everything else is discarded.
std::pair<PointCloud, PointCloud> crop_box_filter(const PointCloud& cloud, const CropBox& box);

// Centroid-shifted least squares, 2x2 system solved by Cramer's rule.
// Throws on fewer than 3 points or collinear geometry.
Plane fit_ground_plane(const PointCloud& perimeter);

// Signed perpendicular distances in millimeters, positive above the plane.
std::vector<double> point_heights(const PointCloud& cloud, const Plane& plane);
double point_height(const Point& p, const Plane& plane);

// Bucket plot points into an M x N raster over the plot rectangle and reduce
// each cell with the statistic; empty cells take the nearest nonempty value.
HeightMap rasterize(const PointCloud& plot, const std::vector<double>& heights_mm,
                    const CropBox& box, int rows, int cols, const RasterStatistic& stat);

HeightMap median_filter_3x3(const HeightMap& m);
HeightMap flat_conv_3x3(const HeightMap& m);

// Linear-interpolation percentile of an unsorted list.
double percentile_heights(const std::vector<double>& heights, double q);

// x y z [perimeter] per line, meters.
void write_point_cloud(const std::string& path, const PointCloud& cloud);
PointCloud read_point_cloud(const std::string& path);

}  // namespace pasture::percept
