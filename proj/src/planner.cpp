#include "pasture/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace pasture::plan {

bool factor_less(const DeploymentFactor& a, const DeploymentFactor& b) {
    if (a.t != b.t) return a.t < b.t;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.r < b.r;
}

bool GroundSet::contains(const DeploymentFactor& v) const {
    return v.x >= 0 && v.x < cols && v.y >= 0 && v.y < rows && v.r >= 0 &&
           v.r < static_cast<int>(robot_weights.size()) && v.t >= t_start && v.t < t_start + horizon;
}

std::vector<DeploymentFactor> GroundSet::materialize() const {
    std::vector<DeploymentFactor> all;
    all.reserve(static_cast<std::size_t>(size()));
    for (int t = t_start; t < t_start + horizon; ++t) {
        for (int y = 0; y < rows; ++y) {
            for (int x = 0; x < cols; ++x) {
                for (int r = 0; r < static_cast<int>(robot_weights.size()); ++r) {
                    all.push_back({x, y, r, t});
                }
            }
        }
    }
    return all;
}

double VarianceSet::at(const DeploymentFactor& v) const {
    const int k = v.t - t_start;
    if (k < 0 || k >= static_cast<int>(maps.size())) {
        throw std::runtime_error("variance lookup out of range: day " + std::to_string(v.t));
    }
    const HeightMap& m = maps[static_cast<std::size_t>(k)];
    if (v.y < 0 || v.y >= m.rows || v.x < 0 || v.x >= m.cols) {
        throw std::runtime_error("variance lookup out of range: cell");
    }
    return m.at(v.y, v.x);
}

double factor_distance(const DeploymentFactor& s, const DeploymentFactor& sp,
                       const PlannerWeights& w) {
    const double dx = s.x - sp.x;
    const double dy = s.y - sp.y;
    const double spatial = std::max(std::sqrt(dx * dx + dy * dy), kMinSpatialDistance);
    return w.w2 * std::log(spatial) + w.w3 * std::abs(static_cast<double>(s.t - sp.t));
}

ObjectiveParts objective_parts(std::span<const DeploymentFactor> s, const VarianceSet& variance,
                               const PlannerWeights& w, const GroundSet& ground) {
    ObjectiveParts parts;
    const std::size_t n = s.size();
    for (std::size_t i = 0; i < n; ++i) {
        const DeploymentFactor& v = s[i];
        double dispersion = 1.0;  // singleton convention
        if (n > 1) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                acc += factor_distance(v, s[j], w);
            }
            dispersion = acc / static_cast<double>(n - 1);
        }
        const double rho = ground.robot_weights.empty() ? 1.0 : ground.robot_weights.at(v.r);
        parts.uncertainty_term += variance.at(v) * dispersion;
        parts.wait_penalty += w.w1 * rho * static_cast<double>(v.t - ground.t_start);
    }
    parts.total = parts.uncertainty_term - parts.wait_penalty;
    return parts;
}

double objective(std::span<const DeploymentFactor> s, const VarianceSet& variance,
                 const PlannerWeights& w, const GroundSet& ground) {
    return objective_parts(s, variance, w, ground).total;
}

bool is_independent(std::span<const DeploymentFactor> s, const BudgetConstraint& c) {
    std::unordered_map<int, int> per_day;
    for (const DeploymentFactor& v : s) ++per_day[v.t];
    if (static_cast<int>(per_day.size()) > c.total_days) return false;
    for (const auto& [t, count] : per_day) {
        if (count > c.per_day) return false;
    }
    return true;
}

namespace {

// Spatial log-distance lookup for small grids; larger grids fall back to
// direct evaluation.
class LogDistance {
public:
    LogDistance(int rows, int cols) : rows_(rows), cols_(cols) {
        const std::size_t cells = static_cast<std::size_t>(rows) * cols;
        if (cells > 0 && cells <= 1024) {
            table_.resize(cells * cells);
            for (std::size_t p = 0; p < cells; ++p) {
                for (std::size_t q = 0; q < cells; ++q) {
                    table_[p * cells + q] = compute(static_cast<int>(p), static_cast<int>(q));
                }
            }
        }
    }

    double operator()(int y0, int x0, int y1, int x1) const {
        const std::size_t cells = static_cast<std::size_t>(rows_) * cols_;
        const std::size_t p = static_cast<std::size_t>(y0) * cols_ + x0;
        const std::size_t q = static_cast<std::size_t>(y1) * cols_ + x1;
        if (!table_.empty()) return table_[p * cells + q];
        return compute(static_cast<int>(p), static_cast<int>(q));
    }

private:
    double compute(int p, int q) const {
        const double dy = p / cols_ - q / cols_;
        const double dx = p % cols_ - q % cols_;
        return std::log(std::max(std::sqrt(dx * dx + dy * dy), kMinSpatialDistance));
    }

    int rows_;
    int cols_;
    std::vector<double> table_;
};

struct CellDayKey {
    long long encode(int t, int y, int x, int cols) const {
        return (static_cast<long long>(t) * 1000000 + y) * cols + x;
    }
};

}  // namespace

Policy greedy_plan(const GroundSet& ground, const VarianceSet& variance, const PlannerWeights& w,
                   const BudgetConstraint& c, const GreedyOptions& options) {
    if (ground.rows < 1 || ground.cols < 1 || ground.horizon < 1 || ground.robot_weights.empty()) {
        throw std::runtime_error("greedy plan: empty ground set");
    }
    if (c.per_day < 1 || c.total_days < 1) {
        throw std::runtime_error("greedy plan: budgets must be at least 1");
    }
    if (static_cast<int>(variance.maps.size()) < ground.horizon || variance.t_start != ground.t_start) {
        throw std::runtime_error("greedy plan: variance horizon does not cover the ground set");
    }

    const int robots = static_cast<int>(ground.robot_weights.size());
    const LogDistance log_dist(ground.rows, ground.cols);

    Policy policy;
    std::vector<double> sum_d;        // per selected factor, sum of distances to the rest
    std::vector<double> var_sel;      // cached variance per selected factor
    std::vector<int> day_count(ground.horizon, 0);
    int used_days = 0;
    std::unordered_map<long long, std::vector<std::uint8_t>> taken;  // cell-day -> robots used

    // Best robot for an untouched cell-day on each horizon day: minimizes the
    // wait term, smallest index on ties.
    auto best_robot_for_day = [&](int dt, const std::vector<std::uint8_t>* used) {
        const double wait_base = w.w1 * static_cast<double>(dt);
        int best = -1;
        double best_cost = 0.0;
        for (int r = 0; r < robots; ++r) {
            if (used && (*used)[static_cast<std::size_t>(r)]) continue;
            const double cost = wait_base * ground.robot_weights[static_cast<std::size_t>(r)];
            if (best < 0 || cost < best_cost) {
                best = r;
                best_cost = cost;
            }
        }
        return best;
    };

    std::vector<int> fresh_robot(ground.horizon);
    for (int dt = 0; dt < ground.horizon; ++dt) {
        fresh_robot[dt] = best_robot_for_day(dt, nullptr);
    }

    while (true) {
        const std::size_t n = policy.factors.size();

        // Terms of the gain that do not depend on the candidate.
        double varsum_dot_sumd = 0.0;
        double old_total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            varsum_dot_sumd += var_sel[i] * sum_d[i];
            old_total += var_sel[i] * (n >= 2 ? sum_d[i] / static_cast<double>(n - 1) : 1.0);
        }

        bool found = false;
        double best_gain = 0.0;
        DeploymentFactor best_v;

#pragma omp parallel
        {
            bool local_found = false;
            double local_gain = 0.0;
            DeploymentFactor local_v;

#pragma omp for schedule(static) nowait
            for (int dt = 0; dt < ground.horizon; ++dt) {
                const bool open = day_count[dt] < c.per_day && (day_count[dt] > 0 || used_days < c.total_days);
                if (!open) continue;
                const int t = ground.t_start + dt;
                const HeightMap& var_map = variance.maps[static_cast<std::size_t>(dt)];
                for (int y = 0; y < ground.rows; ++y) {
                    for (int x = 0; x < ground.cols; ++x) {
                        int r = fresh_robot[dt];
                        if (!taken.empty()) {
                            auto it = taken.find(CellDayKey{}.encode(t, y, x, ground.cols));
                            if (it != taken.end()) {
                                r = best_robot_for_day(dt, &it->second);
                                if (r < 0) continue;  // every robot already assigned here
                            }
                        }
                        double sd = 0.0;  // sum of distances to selected
                        double sw = 0.0;  // variance-weighted distances to selected
                        for (std::size_t i = 0; i < n; ++i) {
                            const DeploymentFactor& s = policy.factors[i];
                            const double d = log_dist(y, x, s.y, s.x) * w.w2 +
                                             w.w3 * std::abs(static_cast<double>(t - s.t));
                            sd += d;
                            sw += var_sel[i] * d;
                        }
                        const double sigma2 = var_map.at(y, x);
                        const double wait =
                            w.w1 * ground.robot_weights[static_cast<std::size_t>(r)] * static_cast<double>(dt);
                        double gain;
                        if (n == 0) {
                            gain = sigma2 - wait;
                        } else {
                            gain = sigma2 * sd / static_cast<double>(n) - wait +
                                   (varsum_dot_sumd + sw) / static_cast<double>(n) - old_total;
                        }
                        const DeploymentFactor v{x, y, r, t};
                        if (!local_found || gain > local_gain ||
                            (gain == local_gain && factor_less(v, local_v))) {
                            local_found = true;
                            local_gain = gain;
                            local_v = v;
                        }
                    }
                }
            }

#pragma omp critical
            {
                if (local_found && (!found || local_gain > best_gain ||
                                    (local_gain == best_gain && factor_less(local_v, best_v)))) {
                    found = true;
                    best_gain = local_gain;
                    best_v = local_v;
                }
            }
        }

        if (!found) break;
        if (options.stop_at_nonpositive && best_gain <= 0.0) break;

        // Accept: update the distance cache and the budget counters.
        double sd_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = factor_distance(best_v, policy.factors[i], w);
            sum_d[i] += d;
            sd_new += d;
        }
        policy.factors.push_back(best_v);
        sum_d.push_back(sd_new);
        var_sel.push_back(variance.at(best_v));
        policy.trace.push_back({best_v, best_gain, true});
        const int dt = best_v.t - ground.t_start;
        if (day_count[dt] == 0) ++used_days;
        ++day_count[dt];
        taken[CellDayKey{}.encode(best_v.t, best_v.y, best_v.x, ground.cols)]
            .resize(static_cast<std::size_t>(robots));
        taken[CellDayKey{}.encode(best_v.t, best_v.y, best_v.x, ground.cols)]
             [static_cast<std::size_t>(best_v.r)] = 1;
    }

    policy.score = objective_parts(policy.factors, variance, w, ground);
    return policy;
}

namespace {

struct BruteState {
    const std::vector<DeploymentFactor>* all = nullptr;
    const VarianceSet* variance = nullptr;
    const PlannerWeights* w = nullptr;
    const GroundSet* ground = nullptr;
    const BudgetConstraint* c = nullptr;
    std::vector<DeploymentFactor> current;
    std::vector<DeploymentFactor> best;
    double best_value = 0.0;
};

void brute_dfs(BruteState& st, std::size_t start) {
    const double value = objective(st.current, *st.variance, *st.w, *st.ground);
    if (value > st.best_value) {
        st.best_value = value;
        st.best = st.current;
    }
    for (std::size_t i = start; i < st.all->size(); ++i) {
        st.current.push_back((*st.all)[i]);
        if (is_independent(st.current, *st.c)) {
            brute_dfs(st, i + 1);
        }
        st.current.pop_back();
    }
}

}  // namespace

Policy brute_force_plan(const GroundSet& ground, const VarianceSet& variance,
                        const PlannerWeights& w, const BudgetConstraint& c) {
    if (ground.size() > 20) {
        throw std::runtime_error("brute force plan: ground set larger than 20 factors");
    }
    const std::vector<DeploymentFactor> all = ground.materialize();
    BruteState st;
    st.all = &all;
    st.variance = &variance;
    st.w = &w;
    st.ground = &ground;
    st.c = &c;
    st.best_value = 0.0;  // empty set baseline
    brute_dfs(st, 0);

    Policy policy;
    policy.factors = st.best;
    policy.score = objective_parts(policy.factors, variance, w, ground);
    return policy;
}

// Curvature measures the distance from modularity: a factor whose final
// marginal contribution f(V) - f(V \ v) still equals its lone value f(v)
// contributes nothing to the curvature, and one whose contribution vanishes
// drives it to 1. Factors with nonpositive lone value are skipped.
CurvatureReport curvature_of(const std::function<double(std::span<const DeploymentFactor>)>& f,
                             std::span<const DeploymentFactor> all) {
    const std::vector<DeploymentFactor> full(all.begin(), all.end());
    const double f_full = f(full);
    CurvatureReport report;
    bool any = false;
    double min_ratio = 0.0;
    for (std::size_t i = 0; i < full.size(); ++i) {
        const double f_single = f(std::span<const DeploymentFactor>(&full[i], 1));
        if (!(f_single > 0.0)) {
            ++report.skipped;
            continue;
        }
        std::vector<DeploymentFactor> rest;
        rest.reserve(full.size() - 1);
        for (std::size_t j = 0; j < full.size(); ++j) {
            if (j != i) rest.push_back(full[j]);
        }
        const double ratio = (f_full - f(rest)) / f_single;
        if (!any || ratio < min_ratio) min_ratio = ratio;
        any = true;
    }
    if (!any) {
        throw std::runtime_error("curvature: no factor has a positive singleton value");
    }
    const double raw = 1.0 - min_ratio;
    report.raw_value = raw;
    report.out_of_range = raw < 0.0 || raw > 1.0;
    report.c_f = std::clamp(raw, 0.0, 1.0);
    return report;
}

CurvatureReport curvature(const GroundSet& ground, const VarianceSet& variance,
                          const PlannerWeights& w) {
    if (ground.size() > 20) {
        throw std::runtime_error("curvature: ground set larger than 20 factors");
    }
    const std::vector<DeploymentFactor> all = ground.materialize();
    return curvature_of(
        [&](std::span<const DeploymentFactor> s) { return objective(s, variance, w, ground); }, all);
}

CertificateReport certificate(double greedy_value, double optimal_value, double c_f) {
    CertificateReport report;
    report.bound = 1.0 / (2.0 + c_f);
    if (optimal_value <= 0.0) {
        report.ratio = 1.0;
        report.pass = greedy_value >= optimal_value;
        return report;
    }
    report.ratio = greedy_value / optimal_value;
    const double slack = 1e-12 * std::max(1.0, std::abs(optimal_value));
    report.pass = greedy_value >= optimal_value * report.bound - slack;
    return report;
}

void write_policy(const std::string& path, const PolicyFile& pf) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write policy file: " + path);
    }
    out << "w1=" << format_double(pf.weights.w1) << "\n";
    out << "w2=" << format_double(pf.weights.w2) << "\n";
    out << "w3=" << format_double(pf.weights.w3) << "\n";
    out << "per_day=" << pf.budget.per_day << "\n";
    out << "total_days=" << pf.budget.total_days << "\n";
    out << "seed=" << pf.seed << "\n";
    out << "objective=" << format_double(pf.policy.score.total) << "\n";
    out << "uncertainty=" << format_double(pf.policy.score.uncertainty_term) << "\n";
    out << "wait_penalty=" << format_double(pf.policy.score.wait_penalty) << "\n";
    if (pf.has_certificate) {
        out << "curvature=" << format_double(pf.curvature_value) << "\n";
        out << "theorem_ratio=" << format_double(pf.theorem_ratio) << "\n";
    }
    out << "count=" << pf.policy.trace.size() << "\n";
    out << "factors\n";
    for (const TraceEntry& e : pf.policy.trace) {
        out << e.v.t << ' ' << e.v.x << ' ' << e.v.y << ' ' << e.v.r << ' ' << format_double(e.gain)
            << ' ' << (e.accepted ? 1 : 0) << '\n';
    }
}

PolicyFile read_policy(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open policy file: " + path);
    }
    PolicyFile pf;
    std::string line;
    std::size_t count = 0;
    while (std::getline(in, line)) {
        if (line == "factors") break;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("bad policy header line: " + line);
        }
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "w1") pf.weights.w1 = std::stod(val);
        else if (key == "w2") pf.weights.w2 = std::stod(val);
        else if (key == "w3") pf.weights.w3 = std::stod(val);
        else if (key == "per_day") pf.budget.per_day = std::stoi(val);
        else if (key == "total_days") pf.budget.total_days = std::stoi(val);
        else if (key == "seed") pf.seed = std::stoull(val);
        else if (key == "objective") pf.policy.score.total = std::stod(val);
        else if (key == "uncertainty") pf.policy.score.uncertainty_term = std::stod(val);
        else if (key == "wait_penalty") pf.policy.score.wait_penalty = std::stod(val);
        else if (key == "curvature") { pf.curvature_value = std::stod(val); pf.has_certificate = true; }
        else if (key == "theorem_ratio") pf.theorem_ratio = std::stod(val);
        else if (key == "count") count = std::stoul(val);
        else throw std::runtime_error("unknown policy header key: " + key);
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) {
            throw std::runtime_error("policy file truncated: " + path);
        }
        std::istringstream ss(line);
        TraceEntry e;
        int accepted = 0;
        if (!(ss >> e.v.t >> e.v.x >> e.v.y >> e.v.r >> e.gain >> accepted)) {
            throw std::runtime_error("bad policy factor line: " + line);
        }
        e.accepted = accepted != 0;
        pf.policy.trace.push_back(e);
        if (e.accepted) pf.policy.factors.push_back(e.v);
    }
    return pf;
}

}  // namespace pasture::plan
