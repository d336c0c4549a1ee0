#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pasture/field_synth.hpp"
#include "pasture/heightmap.hpp"
#include "pasture/rng.hpp"

using namespace pasture;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
    fs::path p = fs::temp_directory_path() / name;
    std::ofstream out(p);
    out << contents;
    return p;
}

synth::SynthConfig small_config() {
    synth::SynthConfig cfg;
    cfg.grid = {20, 20, 10.0, 10.0};
    cfg.bases = synth::default_bases();
    cfg.initial_weights = synth::default_initial_weights();
    cfg.series.values = {100.0, 102.0, 104.0, 106.0, 108.0};
    cfg.gp = {2.0, 0.25};
    cfg.noise_std_mm = 1.0;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("series loads one height per line with comments") {
    const fs::path p = temp_file("series_ok.txt", "# comment\n100.0\n120.5\n\n  90 # trailing\n");
    const synth::HistoricalSeries s = synth::load_historical_series(p.string());
    REQUIRE(s.values.size() == 3);
    CHECK(s.values[0] == 100.0);
    CHECK(s.values[1] == 120.5);
    CHECK(s.values[2] == 90.0);
}

TEST_CASE("series rejects bad input") {
    CHECK_THROWS(synth::load_historical_series(temp_file("series_empty.txt", "# nothing\n").string()));
    CHECK_THROWS(synth::load_historical_series(temp_file("series_neg.txt", "-3\n").string()));
    CHECK_THROWS(synth::load_historical_series(temp_file("series_junk.txt", "12abc\n").string()));
    CHECK_THROWS(synth::load_historical_series("/nonexistent/series.txt"));
}

TEST_CASE("kernel value at the center and one length scale away") {
    synth::BasisFunction b{5.0, 5.0, 0.13};
    CHECK(synth::eval_basis(b, 5.0, 5.0) == 1.0);
    CHECK(synth::eval_basis(b, 5.13, 5.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("kernel underflow clamps to zero") {
    synth::BasisFunction b{3.0, 4.0, 0.13};
    CHECK(synth::eval_basis(b, 8.0, 8.0) == 0.0);
}

TEST_CASE("zero-variance weights stay at the initial value") {
    Rng rng(1);
    synth::GpParams gp{3.0, 0.0};
    const std::vector<double> init = synth::default_initial_weights();
    const auto w = synth::sample_weight_trajectories(7, 12, gp, init, rng);
    REQUIRE(w.per_basis.size() == 7);
    for (std::size_t b = 0; b < 7; ++b) {
        for (double v : w.per_basis[b]) CHECK(v == init[b]);
    }
}

TEST_CASE("weight trajectories are seed deterministic with the stock mean") {
    synth::GpParams gp{3.0, 0.25};
    const std::vector<double> init = synth::default_initial_weights();
    Rng a(42), b(42);
    const auto wa = synth::sample_weight_trajectories(7, 20, gp, init, a);
    const auto wb = synth::sample_weight_trajectories(7, 20, gp, init, b);
    CHECK(wa.per_basis == wb.per_basis);

    // the process mean is the initial weight: average many seeds
    for (int basis = 0; basis < 7; ++basis) {
        double acc = 0.0;
        const int reps = 400;
        for (int s = 0; s < reps; ++s) {
            Rng r(static_cast<std::uint64_t>(s) + 1000);
            const auto w = synth::sample_weight_trajectories(7, 4, gp, init, r);
            acc += w.per_basis[static_cast<std::size_t>(basis)][0];
        }
        acc /= reps;
        const double sigma = 0.25 * init[static_cast<std::size_t>(basis)];
        CHECK(std::abs(acc - init[static_cast<std::size_t>(basis)]) < 4.0 * sigma / std::sqrt(400.0));
    }
}

TEST_CASE("weight sampling validates hyperparameters") {
    Rng rng(3);
    const std::vector<double> init{1.0};
    CHECK_THROWS(synth::sample_weight_trajectories(1, 5, {0.0, 0.25}, init, rng));
    CHECK_THROWS(synth::sample_weight_trajectories(1, 5, {-1.0, 0.25}, init, rng));
    CHECK_THROWS(synth::sample_weight_trajectories(1, 5, {1.0, -0.1}, init, rng));
    CHECK_THROWS(synth::sample_weight_trajectories(2, 5, {1.0, 0.25}, init, rng));
}

TEST_CASE("field evaluation matches a brute-force resummation") {
    synth::DynamicField field;
    field.bases = synth::default_bases();
    field.grid = {100, 100, 10.0, 10.0};
    Rng rng(5);
    field.weights = synth::sample_weight_trajectories(7, 3, {2.0, 0.25},
                                                      synth::default_initial_weights(), rng);
    const HeightMap m = synth::eval_field(field, 1);
    for (int r = 0; r < 100; r += 7) {
        for (int c = 0; c < 100; c += 9) {
            const double x = (c + 0.5) * 0.1;
            const double y = (r + 0.5) * 0.1;
            double expect = 0.0;
            for (std::size_t b = 0; b < field.bases.size(); ++b) {
                const double dx = x - field.bases[b].center_x;
                const double dy = y - field.bases[b].center_y;
                const double ls = field.bases[b].length_scale;
                expect += field.weights.per_basis[b][1] * std::exp(-(dx * dx + dy * dy) / (2 * ls * ls));
            }
            CHECK(m.at(r, c) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("field evaluation edge cases") {
    synth::DynamicField field;
    field.bases = {{5.0, 5.0, 1.0}};
    field.grid = {5, 5, 10.0, 10.0};  // cell centers at 1, 3, 5, 7, 9
    field.weights.per_basis = {{0.0, 1.0}};

    const HeightMap zero = synth::eval_field(field, 0);
    CHECK(zero.min_value() == 0.0);
    CHECK(zero.max_value() == 0.0);

    // weight one: the cell whose center hits the bump center evaluates to 1
    const HeightMap one = synth::eval_field(field, 1);
    CHECK(one.at(2, 2) == 1.0);
    CHECK(one.max_value() == 1.0);

    CHECK_THROWS(synth::eval_field(field, 2));
    CHECK_THROWS(synth::eval_field(field, -1));
}

TEST_CASE("field evaluation is linear in the weights") {
    synth::DynamicField fa, fb, fsum;
    const auto bases = synth::default_bases();
    const synth::GridSpec grid{16, 16, 10.0, 10.0};
    fa.bases = fb.bases = fsum.bases = bases;
    fa.grid = fb.grid = fsum.grid = grid;
    Rng rng(7);
    fa.weights.per_basis.assign(bases.size(), {});
    fb.weights.per_basis.assign(bases.size(), {});
    fsum.weights.per_basis.assign(bases.size(), {});
    for (std::size_t b = 0; b < bases.size(); ++b) {
        const double wa = rng.uniform(-2.0, 2.0);
        const double wb = rng.uniform(-2.0, 2.0);
        fa.weights.per_basis[b] = {wa};
        fb.weights.per_basis[b] = {wb};
        fsum.weights.per_basis[b] = {wa + wb};
    }
    const HeightMap ma = synth::eval_field(fa, 0);
    const HeightMap mb = synth::eval_field(fb, 0);
    const HeightMap ms = synth::eval_field(fsum, 0);
    for (std::size_t i = 0; i < ms.values.size(); ++i) {
        CHECK(ms.values[i] == doctest::Approx(ma.values[i] + mb.values[i]).epsilon(1e-9));
    }
}

TEST_CASE("history adjustment forces the target means") {
    synth::HistoricalSeries h;
    h.values = {100.0, 100.0, 100.0};
    std::vector<HeightMap> raw(3, HeightMap(4, 4));
    // means 10, 20, 30
    for (int t = 0; t < 3; ++t) {
        for (std::size_t i = 0; i < raw[static_cast<std::size_t>(t)].values.size(); ++i) {
            raw[static_cast<std::size_t>(t)].values[i] = 10.0 * (t + 1) + (static_cast<int>(i % 4) - 1.5);
        }
    }
    const auto adjusted = synth::adjust_to_history(raw, h);
    const double shifts[3] = {90.0, 80.0, 70.0};
    for (int t = 0; t < 3; ++t) {
        CHECK(adjusted[static_cast<std::size_t>(t)].mean() == 100.0);
        for (std::size_t i = 0; i < raw[static_cast<std::size_t>(t)].values.size(); ++i) {
            CHECK(adjusted[static_cast<std::size_t>(t)].values[i] ==
                  doctest::Approx(raw[static_cast<std::size_t>(t)].values[i] + shifts[t]).epsilon(1e-12));
        }
    }

    // already-matching map passes through unchanged
    std::vector<HeightMap> flat(1, HeightMap(3, 3, 100.0));
    synth::HistoricalSeries h1;
    h1.values = {100.0};
    const auto same = synth::adjust_to_history(flat, h1);
    CHECK(same[0].values == flat[0].values);

    CHECK_THROWS(synth::adjust_to_history(raw, h1));
}

TEST_CASE("truncation clamps and noise replays deterministically") {
    HeightMap m(1, 2);
    m.values = {-5.0, 10.0};
    Rng rng(0);
    const HeightMap clamped = synth::truncate_and_noise(m, 0.0, rng);
    CHECK(clamped.values[0] == 0.0);
    CHECK(clamped.values[1] == 10.0);

    HeightMap nonneg(2, 2, 3.0);
    Rng rng2(0);
    const HeightMap same = synth::truncate_and_noise(nonneg, 0.0, rng2);
    CHECK(same.values == nonneg.values);

    // independent replay of the same stream
    HeightMap noisy_in(3, 3);
    for (std::size_t i = 0; i < noisy_in.values.size(); ++i) {
        noisy_in.values[i] = static_cast<double>(i) - 4.0;
    }
    Rng op_rng = stream_rng(77, stream::map_noise, 0);
    const HeightMap out = synth::truncate_and_noise(noisy_in, 1.0, op_rng);
    Rng replay = stream_rng(77, stream::map_noise, 0);
    for (std::size_t i = 0; i < noisy_in.values.size(); ++i) {
        double v = std::max(noisy_in.values[i], 0.0);
        v += replay.gaussian(0.0, 1.0);
        v = std::max(v, 0.0);
        CHECK(out.values[i] == v);
    }
    CHECK_THROWS(synth::truncate_and_noise(m, -1.0, rng));
}

TEST_CASE("synthesis composes deterministically and matches the series") {
    synth::SynthConfig cfg = small_config();
    const synth::SynthResult a = synth::synthesize_dataset(cfg);
    const synth::SynthResult b = synth::synthesize_dataset(cfg);
    REQUIRE(a.maps.size() == 5);
    for (std::size_t t = 0; t < a.maps.size(); ++t) {
        CHECK(a.maps[t].values == b.maps[t].values);
    }

    // noise and gp variance off: per-map means equal the series exactly
    cfg.noise_std_mm = 0.0;
    cfg.gp.sigma_frac = 0.0;
    const synth::SynthResult clean = synth::synthesize_dataset(cfg);
    for (std::size_t t = 0; t < clean.maps.size(); ++t) {
        CHECK(clean.maps[t].mean() == cfg.series.values[t]);
        CHECK(clean.maps[t].min_value() >= 0.0);
    }
}

TEST_CASE("single-basis single-step synthesis is reproducible by hand") {
    synth::SynthConfig cfg;
    cfg.grid = {4, 4, 4.0, 4.0};
    cfg.bases = {{2.0, 2.0, 1.0}};
    cfg.initial_weights = {2.0};
    cfg.series.values = {50.0};
    cfg.gp = {1.0, 0.0};
    cfg.noise_std_mm = 0.0;
    const synth::SynthResult r = synth::synthesize_dataset(cfg);
    REQUIRE(r.maps.size() == 1);

    // hand composition: kernel at cell centers, weight 2, shift to mean 50
    HeightMap expect(4, 4);
    for (int row = 0; row < 4; ++row) {
        for (int col = 0; col < 4; ++col) {
            const double x = col + 0.5, y = row + 0.5;
            expect.at(row, col) = 2.0 * std::exp(-((x - 2) * (x - 2) + (y - 2) * (y - 2)) / 2.0);
        }
    }
    const double shift = 50.0 - expect.mean();
    for (std::size_t i = 0; i < expect.values.size(); ++i) {
        CHECK(r.maps[0].values[i] == doctest::Approx(expect.values[i] + shift).epsilon(1e-12));
    }
}

TEST_CASE("dataset roundtrips through the directory format") {
    synth::SynthConfig cfg = small_config();
    const synth::SynthResult r = synth::synthesize_dataset(cfg);
    const fs::path dir = fs::temp_directory_path() / "pasture_synth_test";
    fs::remove_all(dir);
    synth::write_dataset(dir.string(), r);
    const auto maps = synth::read_dataset(dir.string());
    REQUIRE(maps.size() == r.maps.size());
    for (std::size_t t = 0; t < maps.size(); ++t) {
        CHECK(maps[t].values == r.maps[t].values);
    }
    const Manifest man = read_manifest((dir / "manifest.txt").string());
    CHECK(!man.empty());
    fs::remove_all(dir);
}
