#include "pasture/field_synth.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace pasture::synth {

namespace fs = std::filesystem;

std::vector<BasisFunction> default_bases() {
    return {
        {5.0, 5.0, 0.13}, {3.0, 4.0, 0.13}, {2.0, 1.5, 0.15}, {8.0, 8.0, 0.18},
        {8.0, 1.5, 0.13}, {1.0, 1.0, 0.13}, {1.0, 9.0, 0.25},
    };
}

std::vector<double> default_initial_weights() {
    return {4.17, 4.17, 2.50, 6.67, 3.33, 3.33, 4.17};
}

HistoricalSeries load_historical_series(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open series file: " + path);
    }
    HistoricalSeries series;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::size_t a = 0;
        while (a < line.size() && std::isspace(static_cast<unsigned char>(line[a]))) ++a;
        std::size_t b = line.size();
        while (b > a && std::isspace(static_cast<unsigned char>(line[b - 1]))) --b;
        if (a == b) continue;
        std::string tok = line.substr(a, b - a);
        std::size_t pos = 0;
        double v = 0;
        try {
            v = std::stod(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size()) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": cannot parse height '" + tok + "'");
        }
        if (!std::isfinite(v)) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-finite height");
        }
        if (v < 0.0) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": negative height");
        }
        series.values.push_back(v);
    }
    if (series.values.empty()) {
        throw std::runtime_error("series file has no heights: " + path);
    }
    return series;
}

double eval_basis(const BasisFunction& b, double x, double y) {
    const double dx = x - b.center_x;
    const double dy = y - b.center_y;
    const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * b.length_scale * b.length_scale));
    return v < 1e-300 ? 0.0 : v;
}

namespace {

// In-place Cholesky of a symmetric positive definite matrix (lower triangle).
void cholesky(std::vector<double>& a, int n) {
    for (int j = 0; j < n; ++j) {
        double d = a[static_cast<std::size_t>(j) * n + j];
        for (int k = 0; k < j; ++k) {
            const double ljk = a[static_cast<std::size_t>(j) * n + k];
            d -= ljk * ljk;
        }
        if (d <= 0.0) {
            throw std::runtime_error("weight covariance not positive definite");
        }
        const double ljj = std::sqrt(d);
        a[static_cast<std::size_t>(j) * n + j] = ljj;
        for (int i = j + 1; i < n; ++i) {
            double s = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k) {
                s -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
            }
            a[static_cast<std::size_t>(i) * n + j] = s / ljj;
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            a[static_cast<std::size_t>(i) * n + j] = 0.0;
        }
    }
}

}  // namespace

WeightTrajectories sample_weight_trajectories(int basis_count, int horizon, const GpParams& gp,
                                              const std::vector<double>& initial_weights, Rng& rng) {
    if (basis_count < 1 || horizon < 1) {
        throw std::runtime_error("weight sampling needs at least one basis and one step");
    }
    if (static_cast<int>(initial_weights.size()) != basis_count) {
        throw std::runtime_error("initial weight count does not match basis count");
    }
    if (!(gp.length_scale > 0.0)) {
        throw std::runtime_error("gp length scale must be positive");
    }
    if (gp.sigma_frac < 0.0) {
        throw std::runtime_error("gp sigma fraction must be nonnegative");
    }

    WeightTrajectories out;
    out.gp_length_scale = gp.length_scale;
    out.gp_variance = gp.sigma_frac * gp.sigma_frac;
    out.per_basis.assign(basis_count, std::vector<double>(horizon, 0.0));

    // Unit-variance correlation factor shared by all bases; each basis scales
    // the draw by its own stddev (sigma_frac * w0).
    std::vector<double> corr;
    const bool stochastic = gp.sigma_frac > 0.0;
    if (stochastic) {
        corr.assign(static_cast<std::size_t>(horizon) * horizon, 0.0);
        for (int i = 0; i < horizon; ++i) {
            for (int j = 0; j < horizon; ++j) {
                const double d = (i - j) / gp.length_scale;
                corr[static_cast<std::size_t>(i) * horizon + j] = std::exp(-0.5 * d * d);
            }
            corr[static_cast<std::size_t>(i) * horizon + i] += 1e-10;
        }
        cholesky(corr, horizon);
    }

    std::vector<double> z(horizon);
    for (int b = 0; b < basis_count; ++b) {
        const double mean = initial_weights[b];
        if (!stochastic) {
            out.per_basis[b].assign(horizon, mean);
            continue;
        }
        for (int t = 0; t < horizon; ++t) z[t] = rng.gaussian();
        const double sigma = gp.sigma_frac * mean;
        for (int i = 0; i < horizon; ++i) {
            double s = 0.0;
            for (int k = 0; k <= i; ++k) {
                s += corr[static_cast<std::size_t>(i) * horizon + k] * z[k];
            }
            out.per_basis[b][i] = mean + sigma * s;
        }
    }
    return out;
}

HeightMap eval_field(const DynamicField& field, int t) {
    if (t < 0 || t >= field.weights.horizon()) {
        throw std::runtime_error("field evaluation time out of range");
    }
    if (field.weights.per_basis.size() != field.bases.size()) {
        throw std::runtime_error("weight trajectory count does not match basis count");
    }
    const GridSpec& g = field.grid;
    HeightMap m(g.rows, g.cols);
    const int basis_count = static_cast<int>(field.bases.size());

#pragma omp parallel for schedule(static)
    for (int r = 0; r < g.rows; ++r) {
        const double y = g.cell_y(r);
        for (int c = 0; c < g.cols; ++c) {
            const double x = g.cell_x(c);
            double s = 0.0;
            for (int b = 0; b < basis_count; ++b) {
                s += field.weights.per_basis[b][t] * eval_basis(field.bases[b], x, y);
            }
            m.at(r, c) = s;
        }
    }
    return m;
}

std::vector<HeightMap> adjust_to_history(const std::vector<HeightMap>& raw,
                                         const HistoricalSeries& h) {
    if (raw.size() != h.values.size()) {
        throw std::runtime_error("map sequence and series lengths differ");
    }
    std::vector<HeightMap> out = raw;
    for (std::size_t t = 0; t < out.size(); ++t) {
        const double target = h.values[t];
        // One uniform shift lands within rounding of the target mean; refine
        // with further uniform shifts until the recomputed mean is bit-exact.
        for (int pass = 0; pass < 4; ++pass) {
            const double shift = target - out[t].mean();
            if (shift == 0.0) break;
            for (double& v : out[t].values) v += shift;
        }
    }
    return out;
}

HeightMap truncate_and_noise(const HeightMap& m, double noise_std_mm, Rng& rng) {
    if (noise_std_mm < 0.0) {
        throw std::runtime_error("noise stddev must be nonnegative");
    }
    HeightMap out = m;
    for (double& v : out.values) {
        if (v < 0.0) v = 0.0;
    }
    if (noise_std_mm > 0.0) {
        for (double& v : out.values) {
            v += rng.gaussian(0.0, noise_std_mm);
            if (v < 0.0) v = 0.0;
        }
    }
    return out;
}

SynthResult synthesize_dataset(const SynthConfig& cfg) {
    if (cfg.grid.rows < 1 || cfg.grid.cols < 1) {
        throw std::runtime_error("grid dims must be at least 1x1");
    }
    if (cfg.series.values.empty()) {
        throw std::runtime_error("synthesis requires a historical series");
    }
    int horizon = cfg.horizon > 0 ? cfg.horizon : static_cast<int>(cfg.series.values.size());
    if (horizon > static_cast<int>(cfg.series.values.size())) {
        throw std::runtime_error("horizon exceeds series length");
    }
    if (cfg.bases.empty() || cfg.bases.size() != cfg.initial_weights.size()) {
        throw std::runtime_error("basis and initial weight counts must match and be nonzero");
    }
    for (const auto& b : cfg.bases) {
        if (!(b.length_scale > 0.0)) {
            throw std::runtime_error("basis length scale must be positive");
        }
    }

    GpParams gp = cfg.gp;
    if (gp.length_scale <= 0.0) gp.length_scale = 0.1 * horizon;

    DynamicField field;
    field.bases = cfg.bases;
    field.grid = cfg.grid;
    Rng weight_rng = stream_rng(cfg.seed, stream::gp_weights);
    field.weights = sample_weight_trajectories(static_cast<int>(cfg.bases.size()), horizon, gp,
                                               cfg.initial_weights, weight_rng);

    HistoricalSeries h;
    h.start_index = cfg.series.start_index;
    h.values.assign(cfg.series.values.begin(), cfg.series.values.begin() + horizon);

    std::vector<HeightMap> raw(horizon);
    for (int t = 0; t < horizon; ++t) {
        raw[t] = eval_field(field, t);
    }
    std::vector<HeightMap> adjusted = adjust_to_history(raw, h);

    SynthResult result;
    result.maps.resize(horizon);
    for (int t = 0; t < horizon; ++t) {
        Rng noise_rng = stream_rng(cfg.seed, stream::map_noise, static_cast<std::uint64_t>(t));
        result.maps[t] = truncate_and_noise(adjusted[t], cfg.noise_std_mm, noise_rng);
    }

    Manifest& man = result.manifest;
    man.emplace_back("grid_rows", std::to_string(cfg.grid.rows));
    man.emplace_back("grid_cols", std::to_string(cfg.grid.cols));
    man.emplace_back("field_width_m", format_double(cfg.grid.width_m));
    man.emplace_back("field_height_m", format_double(cfg.grid.height_m));
    man.emplace_back("horizon", std::to_string(horizon));
    man.emplace_back("basis_count", std::to_string(cfg.bases.size()));
    for (std::size_t i = 0; i < cfg.bases.size(); ++i) {
        const auto& b = cfg.bases[i];
        man.emplace_back("basis_" + std::to_string(i),
                         format_double(b.center_x) + " " + format_double(b.center_y) + " " +
                             format_double(b.length_scale) + " " + format_double(cfg.initial_weights[i]));
    }
    man.emplace_back("gp_length_scale", format_double(gp.length_scale));
    man.emplace_back("gp_sigma_frac", format_double(gp.sigma_frac));
    man.emplace_back("noise_std_mm", format_double(cfg.noise_std_mm));
    man.emplace_back("seed", std::to_string(cfg.seed));
    return result;
}

void write_dataset(const std::string& dir, const SynthResult& result) {
    fs::create_directories(dir);
    for (std::size_t t = 0; t < result.maps.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "map_%04zu.hmap", t);
        write_hmap((fs::path(dir) / name).string(), result.maps[t]);
    }
    write_manifest((fs::path(dir) / "manifest.txt").string(), result.manifest);
}

std::vector<HeightMap> read_dataset(const std::string& dir) {
    std::vector<HeightMap> maps;
    for (std::size_t t = 0;; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "map_%04zu.hmap", t);
        fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) break;
        maps.push_back(read_hmap(p.string()));
    }
    if (maps.empty()) {
        throw std::runtime_error("no heightmaps found in " + dir);
    }
    return maps;
}

}  // namespace pasture::synth
