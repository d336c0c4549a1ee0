#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pasture/heightmap.hpp"
#include "pasture/planner.hpp"
#include "pasture/predictor.hpp"
#include "pasture/rng.hpp"

namespace pasture::eval {

struct MetricReport {
    double rmse = 0.0;  // mm
    double mae = 0.0;   // mm
    double mape = 0.0;  // percent
    double astd = 0.0;  // mm
    std::vector<double> per_step_rmse;
    std::vector<double> per_step_mae;
    long long mape_skipped = 0;  // cells below the relative-error floor
    int instances = 0;
};

// Aggregates over H prediction instances and their horizon steps; cell values
// are averaged within each step. Cells with |truth| < 1e-6 mm are skipped by
// the percentage error and counted.
MetricReport metrics(std::span<const std::vector<HeightMap>> truth,
                     std::span<const nn::PredictionResult> pred);

// Uniform rejection sampling over the ground set until the budgets saturate.
plan::Policy random_policy(const plan::GroundSet& ground, const plan::BudgetConstraint& c,
                           Rng& rng);

// Fixed-interval deployment on an evenly spaced location grid, robots assigned
// round robin. Non-square per-day budgets place the remainder at the field
// center.
plan::Policy heuristic_policy(const plan::GroundSet& ground, const plan::BudgetConstraint& c);

struct Observation {
    int x = 0;
    int y = 0;
    int t = 0;          // horizon step of the factor
    int map_index = 0;  // dataset index the height was read from
    double height_mm = 0.0;
};

// Reads the true height under each factor and adds white measurement noise.
// step_to_map translates a horizon step to a dataset map index.
std::vector<Observation> collect_measurements(const plan::Policy& policy,
                                              std::span<const HeightMap> dataset,
                                              std::span<const int> step_to_map,
                                              double meas_std_mm, Rng& rng);

// How collected measurements enter the re-prediction window.
enum class FoldMode {
    latest,   // all observations overwrite cells of the most recent map
    nearest,  // each observation lands on the map whose day is closest
    window,   // a measured cell is corrected in every map, nearest measurement wins
};
FoldMode parse_fold_mode(const std::string& name);

// Measured heights overwrite the matching cells of the most recent window map.
void fold_observations(HeightMap& latest_window_map, std::span<const Observation> observations);

// Generalized folding over the whole window per the mode above.
void fold_observations(std::span<HeightMap> window, std::span<const int> window_days,
                       std::span<const Observation> observations, FoldMode mode);

struct ComparisonConfig {
    int trials = 50;
    int input_end = -1;  // last day of the planning input window; -1 auto
    int alpha = 15;      // window length and planning horizon
    int delta = 2;
    int plan_samples = 60;
    int repredict_samples = 30;
    int repredict_alpha = 10;
    int repredict_delta = 2;
    double dropout_p = 0.4;
    double meas_std_mm = 4.0;
    FoldMode fold_mode = FoldMode::window;
    plan::PlannerWeights weights;
    std::uint64_t seed = 42;
};

struct TrialRow {
    int trial = 0;
    std::string method;
    double f_value = 0.0;
    double uncertainty_term = 0.0;
    double wait_penalty = 0.0;
    double mean_pred_error_mm = 0.0;
    int per_day = 0;
    int total_days = 0;
    int robots = 0;
    plan::Policy policy;
};

struct MethodSummary {
    double mean_f = 0.0;
    double mean_error_mm = 0.0;
};

struct ComparisonResult {
    std::vector<TrialRow> rows;
    MethodSummary intermittent, heuristic, random;
};

// Monte Carlo comparison of the three deployment policies on one trained
// predictor: plan, measure, fold the measurements into the re-prediction
// window, predict again and score the error against the truth.
ComparisonResult run_comparison(const nn::Network& net, std::span<const HeightMap> dataset,
                                const ComparisonConfig& cfg);

void write_comparison_csv(const std::string& path, std::span<const TrialRow> rows);

}  // namespace pasture::eval
