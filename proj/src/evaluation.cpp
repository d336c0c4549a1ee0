#include "pasture/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace pasture::eval {

MetricReport metrics(std::span<const std::vector<HeightMap>> truth,
                     std::span<const nn::PredictionResult> pred) {
    if (truth.size() != pred.size() || truth.empty()) {
        throw std::runtime_error("metrics: instance counts differ or are empty");
    }
    const int steps = static_cast<int>(truth[0].size());
    MetricReport report;
    report.instances = static_cast<int>(truth.size());
    report.per_step_rmse.assign(static_cast<std::size_t>(steps), 0.0);
    report.per_step_mae.assign(static_cast<std::size_t>(steps), 0.0);

    double sq_sum = 0.0;
    double abs_sum = 0.0;
    double pct_sum = 0.0;
    double var_sum = 0.0;
    for (std::size_t h = 0; h < truth.size(); ++h) {
        const auto& maps = truth[h];
        const auto& p = pred[h];
        if (static_cast<int>(maps.size()) != steps || static_cast<int>(p.means.size()) != steps) {
            throw std::runtime_error("metrics: horizon lengths differ");
        }
        for (int t = 0; t < steps; ++t) {
            const HeightMap& y = maps[static_cast<std::size_t>(t)];
            const HeightMap& yb = p.means[static_cast<std::size_t>(t)];
            const HeightMap& vb = p.variances[static_cast<std::size_t>(t)];
            if (y.rows != yb.rows || y.cols != yb.cols) {
                throw std::runtime_error("metrics: map shapes differ");
            }
            double sq = 0.0, ab = 0.0, pct = 0.0, var = 0.0;
            long long pct_n = 0;
            for (std::size_t i = 0; i < y.values.size(); ++i) {
                const double diff = y.values[i] - yb.values[i];
                sq += diff * diff;
                ab += std::abs(diff);
                var += vb.values[i];
                if (std::abs(y.values[i]) < 1e-6) {
                    ++report.mape_skipped;
                } else {
                    pct += std::abs(diff / y.values[i]);
                    ++pct_n;
                }
            }
            const double cells = static_cast<double>(y.values.size());
            sq /= cells;
            ab /= cells;
            var /= cells;
            if (pct_n > 0) pct /= static_cast<double>(pct_n);
            sq_sum += sq;
            abs_sum += ab;
            pct_sum += pct;
            var_sum += var;
            report.per_step_rmse[static_cast<std::size_t>(t)] += sq;
            report.per_step_mae[static_cast<std::size_t>(t)] += ab;
        }
    }
    const double inv_h = 1.0 / static_cast<double>(report.instances);
    report.rmse = std::sqrt(sq_sum * inv_h);
    report.mae = abs_sum * inv_h;
    report.mape = 100.0 * pct_sum * inv_h;
    report.astd = std::sqrt(var_sum * inv_h);
    for (int t = 0; t < steps; ++t) {
        report.per_step_rmse[static_cast<std::size_t>(t)] =
            std::sqrt(report.per_step_rmse[static_cast<std::size_t>(t)] * inv_h);
        report.per_step_mae[static_cast<std::size_t>(t)] *= inv_h;
    }
    return report;
}

plan::Policy random_policy(const plan::GroundSet& ground, const plan::BudgetConstraint& c,
                           Rng& rng) {
    plan::Policy policy;
    const int robots = static_cast<int>(ground.robot_weights.size());
    std::vector<int> day_count(static_cast<std::size_t>(ground.horizon), 0);
    int used_days = 0;
    std::unordered_set<long long> selected;
    std::vector<long long> per_day_pool(static_cast<std::size_t>(ground.horizon),
                                        static_cast<long long>(ground.rows) * ground.cols * robots);

    auto any_open_day = [&]() {
        for (int dt = 0; dt < ground.horizon; ++dt) {
            const bool open = day_count[static_cast<std::size_t>(dt)] < c.per_day &&
                              (day_count[static_cast<std::size_t>(dt)] > 0 || used_days < c.total_days) &&
                              per_day_pool[static_cast<std::size_t>(dt)] > 0;
            if (open) return true;
        }
        return false;
    };

    while (any_open_day()) {
        const long long idx = static_cast<long long>(rng.below(static_cast<std::uint64_t>(ground.size())));
        const int r = static_cast<int>(idx % robots);
        long long rest = idx / robots;
        const int x = static_cast<int>(rest % ground.cols);
        rest /= ground.cols;
        const int y = static_cast<int>(rest % ground.rows);
        const int dt = static_cast<int>(rest / ground.rows);
        plan::DeploymentFactor v{x, y, r, ground.t_start + dt};
        if (selected.count(idx)) continue;
        const bool open = day_count[static_cast<std::size_t>(dt)] < c.per_day &&
                          (day_count[static_cast<std::size_t>(dt)] > 0 || used_days < c.total_days);
        if (!open) continue;
        selected.insert(idx);
        if (day_count[static_cast<std::size_t>(dt)] == 0) ++used_days;
        ++day_count[static_cast<std::size_t>(dt)];
        --per_day_pool[static_cast<std::size_t>(dt)];
        policy.factors.push_back(v);
        policy.trace.push_back({v, 0.0, true});
    }
    return policy;
}

plan::Policy heuristic_policy(const plan::GroundSet& ground, const plan::BudgetConstraint& c) {
    plan::Policy policy;
    const int robots = static_cast<int>(ground.robot_weights.size());
    if (robots < 1) {
        throw std::runtime_error("heuristic policy: no robots");
    }
    const int days = std::min(c.total_days, ground.horizon);
    // Fixed-interval schedule at horizon/days spacing. The spacing is kept
    // fractional and rounded per visit: a floored integer interval collapses
    // to consecutive days once the day budget nears the horizon length,
    // wasting the back of the horizon.
    const double interval = static_cast<double>(ground.horizon) / days;

    const int per_day = std::min(c.per_day, ground.rows * ground.cols);
    const int g = static_cast<int>(std::floor(std::sqrt(static_cast<double>(per_day))));
    std::vector<std::pair<int, int>> cells;  // (y, x)
    for (int i = 0; i < g; ++i) {
        for (int j = 0; j < g; ++j) {
            const int y = static_cast<int>((i + 0.5) * ground.rows / g);
            const int x = static_cast<int>((j + 0.5) * ground.cols / g);
            cells.emplace_back(y, x);
        }
    }
    // leftover deployments go to the field center
    const int center_y = ground.rows / 2;
    const int center_x = ground.cols / 2;
    while (static_cast<int>(cells.size()) < per_day) {
        cells.emplace_back(center_y, center_x);
    }

    int robot = 0;
    std::unordered_set<long long> used;
    for (int k = 0; k < days; ++k) {
        const int dt = static_cast<int>(std::llround(k * interval));
        if (dt >= ground.horizon) break;
        for (const auto& [y, x] : cells) {
            int r = robot % robots;
            // avoid duplicating a factor when center cells repeat
            long long key = ((static_cast<long long>(dt) * ground.rows + y) * ground.cols + x) * robots + r;
            int guard = 0;
            while (used.count(key) && guard < robots) {
                ++robot;
                r = robot % robots;
                key = ((static_cast<long long>(dt) * ground.rows + y) * ground.cols + x) * robots + r;
                ++guard;
            }
            if (used.count(key)) continue;
            used.insert(key);
            plan::DeploymentFactor v{x, y, r, ground.t_start + dt};
            policy.factors.push_back(v);
            policy.trace.push_back({v, 0.0, true});
            ++robot;
        }
    }
    return policy;
}

std::vector<Observation> collect_measurements(const plan::Policy& policy,
                                              std::span<const HeightMap> dataset,
                                              std::span<const int> step_to_map,
                                              double meas_std_mm, Rng& rng) {
    std::vector<Observation> obs;
    obs.reserve(policy.factors.size());
    for (const plan::DeploymentFactor& v : policy.factors) {
        if (v.t < 0 || v.t >= static_cast<int>(step_to_map.size())) {
            throw std::runtime_error("measurement step out of range");
        }
        const int map_index = step_to_map[static_cast<std::size_t>(v.t)];
        if (map_index < 0 || map_index >= static_cast<int>(dataset.size())) {
            throw std::runtime_error("measurement map index out of range");
        }
        const HeightMap& m = dataset[static_cast<std::size_t>(map_index)];
        if (v.y < 0 || v.y >= m.rows || v.x < 0 || v.x >= m.cols) {
            throw std::runtime_error("measurement cell out of range");
        }
        Observation o;
        o.x = v.x;
        o.y = v.y;
        o.t = v.t;
        o.map_index = map_index;
        o.height_mm = m.at(v.y, v.x);
        if (meas_std_mm > 0.0) o.height_mm += rng.gaussian(0.0, meas_std_mm);
        obs.push_back(o);
    }
    return obs;
}

void fold_observations(HeightMap& latest_window_map, std::span<const Observation> observations) {
    for (const Observation& o : observations) {
        if (o.y < 0 || o.y >= latest_window_map.rows || o.x < 0 || o.x >= latest_window_map.cols) {
            throw std::runtime_error("observation cell out of range");
        }
        latest_window_map.at(o.y, o.x) = o.height_mm;
    }
}

FoldMode parse_fold_mode(const std::string& name) {
    if (name == "latest") return FoldMode::latest;
    if (name == "nearest") return FoldMode::nearest;
    if (name == "window") return FoldMode::window;
    throw std::runtime_error("unknown fold mode: " + name);
}

void fold_observations(std::span<HeightMap> window, std::span<const int> window_days,
                       std::span<const Observation> observations, FoldMode mode) {
    if (window.size() != window_days.size() || window.empty()) {
        throw std::runtime_error("fold: window and day lists differ");
    }
    if (mode == FoldMode::latest) {
        fold_observations(window.back(), observations);
        return;
    }
    for (const Observation& o : observations) {
        if (o.y < 0 || o.y >= window[0].rows || o.x < 0 || o.x >= window[0].cols) {
            throw std::runtime_error("observation cell out of range");
        }
    }
    if (mode == FoldMode::nearest) {
        for (const Observation& o : observations) {
            std::size_t best = 0;
            int best_gap = std::abs(window_days[0] - o.map_index);
            for (std::size_t j = 1; j < window.size(); ++j) {
                const int gap = std::abs(window_days[j] - o.map_index);
                if (gap <= best_gap) {
                    best = j;
                    best_gap = gap;
                }
            }
            window[best].at(o.y, o.x) = o.height_mm;
        }
        return;
    }
    // window mode: a measured location is trusted across the whole window,
    // each map taking the measurement closest to its own day
    std::unordered_map<long long, std::vector<const Observation*>> by_cell;
    for (const Observation& o : observations) {
        by_cell[static_cast<long long>(o.y) * window[0].cols + o.x].push_back(&o);
    }
    for (std::size_t j = 0; j < window.size(); ++j) {
        for (const auto& [cell, group] : by_cell) {
            const Observation* best = group[0];
            int best_gap = std::abs(window_days[j] - best->map_index);
            for (const Observation* o : group) {
                const int gap = std::abs(window_days[j] - o->map_index);
                if (gap < best_gap || (gap == best_gap && o->map_index >= best->map_index)) {
                    best = o;
                    best_gap = gap;
                }
            }
            window[j].at(best->y, best->x) = best->height_mm;
        }
    }
}

namespace {

const int kTotalDaysChoices[] = {5, 6, 7, 8, 9, 10, 11, 12};
const int kPerDayChoices[] = {4, 9, 16, 25, 36, 49, 64};

double mean_abs_error(std::span<const HeightMap> a, std::span<const HeightMap> b) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a[t].values.size(); ++i) {
            acc += std::abs(a[t].values[i] - b[t].values[i]);
        }
        n += a[t].values.size();
    }
    return acc / static_cast<double>(n);
}

}  // namespace

ComparisonResult run_comparison(const nn::Network& net, std::span<const HeightMap> dataset,
                                const ComparisonConfig& cfg) {
    const int len = static_cast<int>(dataset.size());
    const int alpha = cfg.alpha;
    const int delta = cfg.delta;
    const int re_alpha = cfg.repredict_alpha;
    const int re_delta = cfg.repredict_delta;

    int input_end = cfg.input_end;
    if (input_end < 0) {
        input_end = len - 1 - alpha * delta - re_alpha * re_delta;
    }
    const int window_start = input_end - (alpha - 1) * delta;
    const int horizon_end = input_end + alpha * delta;     // last planned day
    const int re_end = horizon_end + re_alpha * re_delta;  // last re-prediction target
    if (window_start < 0 || re_end > len - 1) {
        throw std::runtime_error("comparison: dataset too short for the configured windows");
    }

    // Planning prediction over the horizon.
    std::vector<HeightMap> window;
    for (int j = 0; j < alpha; ++j) {
        window.push_back(dataset[static_cast<std::size_t>(window_start + j * delta)]);
    }
    nn::PredictionResult planned =
        nn::mc_predict(net, window, cfg.plan_samples, cfg.dropout_p, mix_seed(cfg.seed, 101, 0));

    // Horizon step -> dataset day.
    std::vector<int> step_to_map(static_cast<std::size_t>(alpha));
    for (int k = 0; k < alpha; ++k) {
        step_to_map[static_cast<std::size_t>(k)] = input_end + (k + 1) * delta;
    }

    plan::VarianceSet variance;
    variance.t_start = 0;
    variance.maps = planned.variances;

    // Re-prediction window days must land on either known history or planned
    // horizon days.
    std::vector<int> re_window_days(static_cast<std::size_t>(re_alpha));
    for (int j = 0; j < re_alpha; ++j) {
        re_window_days[static_cast<std::size_t>(j)] = horizon_end - (re_alpha - 1 - j) * re_delta;
    }
    std::vector<HeightMap> re_window_base;
    for (int day : re_window_days) {
        if (day <= input_end) {
            re_window_base.push_back(dataset[static_cast<std::size_t>(day)]);
        } else {
            const int diff = day - input_end;
            if (diff % delta != 0) {
                throw std::runtime_error("comparison: re-prediction window day not on a planned step");
            }
            const int step = diff / delta - 1;
            re_window_base.push_back(planned.means[static_cast<std::size_t>(step)]);
        }
    }

    std::vector<HeightMap> re_truth;
    for (int j = 1; j <= re_alpha; ++j) {
        re_truth.push_back(dataset[static_cast<std::size_t>(horizon_end + j * re_delta)]);
    }

    ComparisonResult result;
    double f_sum[3] = {0, 0, 0};
    double e_sum[3] = {0, 0, 0};
    const char* method_names[3] = {"intermittent", "heuristic", "random"};

    for (int trial = 0; trial < cfg.trials; ++trial) {
        Rng trial_rng = stream_rng(cfg.seed, stream::trial, static_cast<std::uint64_t>(trial));
        plan::BudgetConstraint budget;
        budget.total_days = kTotalDaysChoices[trial_rng.below(std::size(kTotalDaysChoices))];
        budget.per_day = kPerDayChoices[trial_rng.below(std::size(kPerDayChoices))];
        const int robots = budget.per_day * budget.total_days;

        plan::GroundSet ground;
        ground.rows = dataset[0].rows;
        ground.cols = dataset[0].cols;
        ground.t_start = 0;
        ground.horizon = alpha;
        ground.robot_weights.resize(static_cast<std::size_t>(robots));
        for (double& w : ground.robot_weights) w = trial_rng.uniform(0.5, 1.5);

        plan::Policy policies[3];
        policies[0] = plan::greedy_plan(ground, variance, cfg.weights, budget);
        policies[1] = heuristic_policy(ground, budget);
        Rng random_rng = stream_rng(cfg.seed, stream::policy, static_cast<std::uint64_t>(trial));
        policies[2] = random_policy(ground, budget, random_rng);

        for (int m = 0; m < 3; ++m) {
            plan::Policy& policy = policies[m];
            policy.score = plan::objective_parts(policy.factors, variance, cfg.weights, ground);

            Rng meas_rng = stream_rng(cfg.seed, stream::measurement,
                                      static_cast<std::uint64_t>(trial) * 3 + static_cast<std::uint64_t>(m));
            std::vector<Observation> obs =
                collect_measurements(policy, dataset, step_to_map, cfg.meas_std_mm, meas_rng);

            std::vector<HeightMap> re_window = re_window_base;
            fold_observations(re_window, re_window_days, obs, cfg.fold_mode);

            // common random numbers: every method re-predicts under the same
            // mask stream so only the folded measurements differ
            nn::PredictionResult repredicted =
                nn::mc_predict(net, re_window, cfg.repredict_samples, cfg.dropout_p,
                               mix_seed(cfg.seed, 202, static_cast<std::uint64_t>(trial)));
            const double err = mean_abs_error(re_truth, repredicted.means);

            TrialRow row;
            row.trial = trial;
            row.method = method_names[m];
            row.f_value = policy.score.total;
            row.uncertainty_term = policy.score.uncertainty_term;
            row.wait_penalty = policy.score.wait_penalty;
            row.mean_pred_error_mm = err;
            row.per_day = budget.per_day;
            row.total_days = budget.total_days;
            row.robots = robots;
            row.policy = policy;
            result.rows.push_back(std::move(row));

            f_sum[m] += policy.score.total;
            e_sum[m] += err;
        }
    }

    const double inv = 1.0 / static_cast<double>(cfg.trials);
    result.intermittent = {f_sum[0] * inv, e_sum[0] * inv};
    result.heuristic = {f_sum[1] * inv, e_sum[1] * inv};
    result.random = {f_sum[2] * inv, e_sum[2] * inv};
    return result;
}

void write_comparison_csv(const std::string& path, std::span<const TrialRow> rows) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write comparison csv: " + path);
    }
    out << "trial,method,f_value,uncertainty_term,wait_penalty,mean_pred_error_mm\n";
    for (const TrialRow& r : rows) {
        out << r.trial << ',' << r.method << ',' << format_double(r.f_value) << ','
            << format_double(r.uncertainty_term) << ',' << format_double(r.wait_penalty) << ','
            << format_double(r.mean_pred_error_mm) << '\n';
    }
}

}  // namespace pasture::eval
