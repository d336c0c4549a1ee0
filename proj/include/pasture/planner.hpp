#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pasture/heightmap.hpp"
#include "pasture/rng.hpp"

namespace pasture::plan {

// One atomic decision: cell (x, y) sensed by robot r on day t.
struct DeploymentFactor {
    int x = 0;  // grid column
    int y = 0;  // grid row
    int r = 0;  // robot id
    int t = 0;  // absolute time index

    friend bool operator==(const DeploymentFactor&, const DeploymentFactor&) = default;
};

// Lexicographic (t, y, x, r); the greedy argmax breaks ties by this order.
bool factor_less(const DeploymentFactor& a, const DeploymentFactor& b);

// Implicit candidate set over grid x robots x horizon, never materialized.
struct GroundSet {
    int rows = 0;
    int cols = 0;
    std::vector<double> robot_weights;  // wait-penalty multiplier per robot
    int t_start = 0;
    int horizon = 0;

    long long size() const {
        return static_cast<long long>(rows) * cols * static_cast<long long>(robot_weights.size()) * horizon;
    }
    bool contains(const DeploymentFactor& v) const;
    std::vector<DeploymentFactor> materialize() const;  // lexicographic order
};

// Predicted variance per horizon day, mm^2.
struct VarianceSet {
    int t_start = 0;
    std::vector<HeightMap> maps;

    double at(const DeploymentFactor& v) const;
};

struct PlannerWeights {
    double w1 = 5.0;   // waiting penalty per day
    double w2 = 0.1;   // log-distance weight
    double w3 = 1.0;   // time-difference weight
};

struct BudgetConstraint {
    int per_day = 1;     // selections allowed on any single day
    int total_days = 1;  // distinct days that may carry deployments
};

// Coincident cells clamp the spatial distance to keep the log finite.
inline constexpr double kMinSpatialDistance = 1e-6;

double factor_distance(const DeploymentFactor& s, const DeploymentFactor& sp,
                       const PlannerWeights& w);

struct ObjectiveParts {
    double total = 0.0;
    double uncertainty_term = 0.0;  // variance-weighted dispersion sum
    double wait_penalty = 0.0;      // subtracted from the total
};

// f(S) = sum_s sigma^2(s) * avg_{s' != s} d(s, s') - w1 * rho_r * (t_s - t1).
// The dispersion average of a singleton is 1; f(empty) = 0.
ObjectiveParts objective_parts(std::span<const DeploymentFactor> s, const VarianceSet& variance,
                               const PlannerWeights& w, const GroundSet& ground);
double objective(std::span<const DeploymentFactor> s, const VarianceSet& variance,
                 const PlannerWeights& w, const GroundSet& ground);

bool is_independent(std::span<const DeploymentFactor> s, const BudgetConstraint& c);

struct TraceEntry {
    DeploymentFactor v;
    double gain = 0.0;
    bool accepted = false;
};

struct Policy {
    std::vector<DeploymentFactor> factors;  // selection order
    std::vector<TraceEntry> trace;
    ObjectiveParts score;
};

struct GreedyOptions {
    bool stop_at_nonpositive = false;  // stop once the best marginal gain is <= 0
};

// Greedy maximization under the intersected budgets: repeatedly add the
// feasible factor with the largest marginal gain until none remains. Robots
// enter the objective only through the wait-penalty weight, so the scan walks
// (t, y, x) and resolves the best free robot per cell-day analytically; the
// selected set matches the full per-factor sweep.
Policy greedy_plan(const GroundSet& ground, const VarianceSet& variance, const PlannerWeights& w,
                   const BudgetConstraint& c, const GreedyOptions& options = {});

// Exhaustive maximizer over independent subsets; enforced |V| <= 20.
Policy brute_force_plan(const GroundSet& ground, const VarianceSet& variance,
                        const PlannerWeights& w, const BudgetConstraint& c);

struct CurvatureReport {
    double c_f = 0.0;       // clamped to [0, 1]
    double raw_value = 0.0;  // 1 - min over v of (f(V) - f(V\v)) / f(v)
    int skipped = 0;        // factors with nonpositive singleton value
    bool out_of_range = false;
};

// Curvature of an arbitrary set function on an explicit ground set.
CurvatureReport curvature_of(const std::function<double(std::span<const DeploymentFactor>)>& f,
                             std::span<const DeploymentFactor> all);
// Curvature of the deployment objective; enforced |V| <= 20.
CurvatureReport curvature(const GroundSet& ground, const VarianceSet& variance,
                          const PlannerWeights& w);

struct CertificateReport {
    bool pass = false;
    double ratio = 0.0;  // greedy / optimal
    double bound = 0.0;  // 1 / (2 + c_f)
};

CertificateReport certificate(double greedy_value, double optimal_value, double c_f);

// Text policy format: key=value header, then one line per factor
// "t x y r gain accepted".
struct PolicyFile {
    PlannerWeights weights;
    BudgetConstraint budget;
    std::uint64_t seed = 0;
    Policy policy;
    bool has_certificate = false;
    double curvature_value = 0.0;
    double theorem_ratio = 0.0;
};

void write_policy(const std::string& path, const PolicyFile& pf);
PolicyFile read_policy(const std::string& path);

}  // namespace pasture::plan
