#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pasture/heightmap.hpp"
#include "pasture/rng.hpp"

namespace pasture::synth {

// Average field heights (mm), one entry per time index.
struct HistoricalSeries {
    std::vector<double> values;
    int start_index = 0;
};

// Gaussian kernel bump: center in field meters, strictly positive length scale.
struct BasisFunction {
    double center_x = 0.0;
    double center_y = 0.0;
    double length_scale = 1.0;
};

// One weight sequence per basis over the synthesis horizon, drawn from a 1D
// Gaussian process with squared-exponential covariance around the initial weight.
struct WeightTrajectories {
    std::vector<std::vector<double>> per_basis;  // [basis][time]
    double gp_length_scale = 0.0;
    double gp_variance = 0.0;  // unit variance scaled per basis by (sigma_frac * w0)^2

    int horizon() const { return per_basis.empty() ? 0 : static_cast<int>(per_basis[0].size()); }
};

struct GridSpec {
    int rows = 100;
    int cols = 100;
    double width_m = 10.0;
    double height_m = 10.0;

    double cell_width() const { return width_m / cols; }
    double cell_height() const { return height_m / rows; }
    // Cells are sampled at their centers.
    double cell_x(int c) const { return (c + 0.5) * cell_width(); }
    double cell_y(int r) const { return (r + 0.5) * cell_height(); }
};

struct DynamicField {
    std::vector<BasisFunction> bases;
    WeightTrajectories weights;
    GridSpec grid;
};

struct GpParams {
    double length_scale = 0.0;  // time steps; must be > 0
    double sigma_frac = 0.25;   // weight stddev as a fraction of the initial weight
};

struct SynthConfig {
    GridSpec grid;
    std::vector<BasisFunction> bases;
    std::vector<double> initial_weights;
    HistoricalSeries series;
    int horizon = 0;  // 0: full series length
    GpParams gp;      // length_scale 0: tenth of the horizon
    double noise_std_mm = 2.0;
    std::uint64_t seed = 42;
};

struct SynthResult {
    std::vector<HeightMap> maps;
    Manifest manifest;
};

// The reference seven-bump layout used throughout the tests and docs.
std::vector<BasisFunction> default_bases();
std::vector<double> default_initial_weights();

// One height per line, '#' comments allowed; rejects negatives and non-finite
// entries, errors on an empty file.
HistoricalSeries load_historical_series(const std::string& path);

// exp(-|p - center|^2 / (2 c^2)); underflow below 1e-300 clamps to zero.
double eval_basis(const BasisFunction& b, double x, double y);

// GP draw per basis: mean = initial weight, squared-exponential covariance,
// Cholesky factorization with 1e-10 diagonal jitter. variance == 0 gives the
// constant mean trajectory.
WeightTrajectories sample_weight_trajectories(int basis_count, int horizon, const GpParams& gp,
                                              const std::vector<double>& initial_weights, Rng& rng);

// Weighted kernel sum over all cell centers at time t.
HeightMap eval_field(const DynamicField& field, int t);

// Uniform shift so the mean of each map matches the series entry exactly.
std::vector<HeightMap> adjust_to_history(const std::vector<HeightMap>& raw,
                                         const HistoricalSeries& h);

// Clamp negatives, add iid Gaussian noise (row-major order), clamp again.
HeightMap truncate_and_noise(const HeightMap& m, double noise_std_mm, Rng& rng);

// Full composition; deterministic in (config, seed). Noise streams are derived
// per time index so parallel evaluation matches sequential output.
SynthResult synthesize_dataset(const SynthConfig& cfg);

void write_dataset(const std::string& dir, const SynthResult& result);
std::vector<HeightMap> read_dataset(const std::string& dir);

}  // namespace pasture::synth
