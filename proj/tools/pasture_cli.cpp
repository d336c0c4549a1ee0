#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pasture/config.hpp"
#include "pasture/evaluation.hpp"
#include "pasture/field_synth.hpp"
#include "pasture/heightmap.hpp"
#include "pasture/perception.hpp"
#include "pasture/planner.hpp"
#include "pasture/predictor.hpp"

namespace fs = std::filesystem;
using namespace pasture;

namespace {

std::string require_path(const RunConfig& cfg, const std::string& key) {
    if (!cfg.has(key)) {
        throw std::runtime_error("config key '" + key + "' is required for this command");
    }
    return cfg.get_string(key);
}

fs::path prepare_out_dir(const RunConfig& cfg) {
    fs::path out(cfg.get_string("out_dir"));
    fs::create_directories(out);
    cfg.write_resolved((out / "resolved_config.cfg").string());
    return out;
}

std::vector<synth::BasisFunction> load_bases(const RunConfig& cfg, std::vector<double>& weights) {
    if (!cfg.has("synth.basis_file")) {
        weights = synth::default_initial_weights();
        return synth::default_bases();
    }
    std::ifstream in(cfg.get_string("synth.basis_file"));
    if (!in) {
        throw std::runtime_error("cannot open basis file: " + cfg.get_string("synth.basis_file"));
    }
    std::vector<synth::BasisFunction> bases;
    weights.clear();
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        synth::BasisFunction b;
        double w = 0.0;
        if (ss >> b.center_x >> b.center_y >> b.length_scale >> w) {
            bases.push_back(b);
            weights.push_back(w);
        }
    }
    if (bases.empty()) {
        throw std::runtime_error("basis file has no entries");
    }
    return bases;
}

int cmd_synth(const RunConfig& cfg) {
    synth::SynthConfig sc;
    sc.series = synth::load_historical_series(require_path(cfg, "synth.series"));
    sc.grid.rows = cfg.get_int("synth.grid_rows");
    sc.grid.cols = cfg.get_int("synth.grid_cols");
    sc.grid.width_m = cfg.get_double("synth.field_width_m");
    sc.grid.height_m = cfg.get_double("synth.field_height_m");
    sc.horizon = cfg.get_int("synth.horizon");
    sc.bases = load_bases(cfg, sc.initial_weights);
    sc.gp.length_scale = cfg.get_double("synth.gp_length_scale");
    sc.gp.sigma_frac = cfg.get_double("synth.gp_sigma_frac");
    sc.noise_std_mm = cfg.get_double("synth.noise_std_mm");
    sc.seed = cfg.get_u64("seed");

    synth::SynthResult result = synth::synthesize_dataset(sc);
    const fs::path out = prepare_out_dir(cfg);
    synth::write_dataset(out.string(), result);
    std::cerr << "synth: wrote " << result.maps.size() << " maps to " << out << "\n";
    return 0;
}

void split_samples(const std::vector<nn::SequenceSample>& all, double val_frac, int origin_stride,
                   std::vector<nn::SequenceSample>& train, std::vector<nn::SequenceSample>& val) {
    std::vector<nn::SequenceSample> kept;
    for (std::size_t i = 0; i < all.size(); i += static_cast<std::size_t>(std::max(1, origin_stride))) {
        kept.push_back(all[i]);
    }
    if (kept.size() < 2) {
        throw std::runtime_error("need at least two sequence samples after striding");
    }
    std::size_t n_val = static_cast<std::size_t>(std::ceil(val_frac * static_cast<double>(kept.size())));
    n_val = std::min(std::max<std::size_t>(n_val, 1), kept.size() - 1);
    train.assign(kept.begin(), kept.end() - static_cast<std::ptrdiff_t>(n_val));
    val.assign(kept.end() - static_cast<std::ptrdiff_t>(n_val), kept.end());
}

int cmd_train(const RunConfig& cfg) {
    const std::vector<HeightMap> dataset = synth::read_dataset(require_path(cfg, "train.dataset"));
    const int alpha = cfg.get_int("train.alpha");
    const int delta = cfg.get_int("train.delta");
    const auto all = nn::build_sequences(static_cast<int>(dataset.size()), delta, alpha);

    std::vector<nn::SequenceSample> train_samples, val_samples;
    split_samples(all, cfg.get_double("train.val_frac"), cfg.get_int("train.origin_stride"),
                  train_samples, val_samples);

    nn::NetworkConfig net_cfg;
    net_cfg.hidden_full = cfg.get_int("train.hidden_full");
    net_cfg.hidden_half = cfg.get_int("train.hidden_half");
    net_cfg.kernel = cfg.get_int("train.kernel");
    nn::Network net = nn::make_network(net_cfg, cfg.get_u64("seed"));

    nn::TrainHyper hyper;
    hyper.lr = cfg.get_double("train.lr");
    hyper.momentum = cfg.get_double("train.momentum");
    hyper.batch = cfg.get_int("train.batch");
    hyper.max_epochs = cfg.get_int("train.max_epochs");
    hyper.patience = cfg.get_int("train.patience");
    hyper.dropout_p = cfg.get_double("train.dropout_p");
    hyper.seed = cfg.get_u64("seed");

    const nn::TrainResult result = nn::train(net, dataset, train_samples, val_samples, hyper);

    const fs::path out = prepare_out_dir(cfg);
    nn::write_model((out / cfg.get_string("train.model")).string(), net);
    std::ofstream hist(out / "loss_history.csv");
    hist << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < result.history.size(); ++e) {
        hist << (e + 1) << ',' << format_double(result.history[e].train_loss) << ','
             << format_double(result.history[e].val_loss) << '\n';
    }
    std::cerr << "train: " << result.history.size() << " epochs, best validation "
              << result.best_val << " at epoch " << (result.best_epoch + 1)
              << (result.stopped_early ? " (early stop)" : "") << "\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg) {
    const nn::Network net = nn::read_model(require_path(cfg, "predict.model"));
    const std::vector<HeightMap> dataset = synth::read_dataset(require_path(cfg, "predict.dataset"));
    const int alpha = cfg.get_int("predict.alpha");
    const int delta = cfg.get_int("predict.delta");
    int input_end = cfg.get_int("predict.input_end");
    if (input_end < 0) input_end = static_cast<int>(dataset.size()) - 1;
    const int start = input_end - (alpha - 1) * delta;
    if (start < 0 || input_end >= static_cast<int>(dataset.size())) {
        throw std::runtime_error("prediction window out of dataset range");
    }
    std::vector<HeightMap> window;
    for (int j = 0; j < alpha; ++j) {
        window.push_back(dataset[static_cast<std::size_t>(start + j * delta)]);
    }

    const int k = cfg.get_int("predict.samples");
    const double p = cfg.get_double("predict.dropout_p");
    const std::uint64_t seed = cfg.get_u64("seed");
    const nn::PredictionResult pred = nn::mc_predict(net, window, k, p, seed);

    const fs::path out = prepare_out_dir(cfg);
    for (std::size_t t = 0; t < pred.means.size(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "mean_%02zu.hmap", t);
        write_hmap((out / name).string(), pred.means[t]);
        std::snprintf(name, sizeof(name), "var_%02zu.hmap", t);
        write_hmap((out / name).string(), pred.variances[t]);
    }
    Manifest man;
    man.emplace_back("samples", std::to_string(k));
    man.emplace_back("dropout_p", format_double(p));
    man.emplace_back("seed", std::to_string(seed));
    man.emplace_back("input_end", std::to_string(input_end));
    man.emplace_back("delta", std::to_string(delta));
    man.emplace_back("variance_normalization", "population");
    write_manifest((out / "prediction_manifest.txt").string(), man);
    std::cerr << "predict: wrote " << pred.means.size() << " mean/variance pairs to " << out << "\n";
    return 0;
}

std::vector<double> parse_robot_weights(const RunConfig& cfg, int robots) {
    std::vector<double> weights;
    if (!cfg.has("plan.robot_weights")) {
        weights.assign(static_cast<std::size_t>(robots), 1.0);
        return weights;
    }
    std::stringstream ss(cfg.get_string("plan.robot_weights"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        weights.push_back(std::stod(tok));
    }
    if (static_cast<int>(weights.size()) != robots) {
        throw std::runtime_error("plan.robot_weights must list exactly plan.robots values");
    }
    return weights;
}

int cmd_plan(const RunConfig& cfg, bool certify) {
    const std::string var_dir = require_path(cfg, "plan.variance_dir");
    plan::VarianceSet variance;
    variance.t_start = cfg.get_int("plan.t_start");
    for (int t = 0;; ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "var_%02d.hmap", t);
        const fs::path p = fs::path(var_dir) / name;
        if (!fs::exists(p)) break;
        variance.maps.push_back(read_hmap(p.string()));
    }
    if (variance.maps.empty()) {
        throw std::runtime_error("no var_XX.hmap files found in " + var_dir);
    }
    bool all_zero = true;
    for (const HeightMap& m : variance.maps) {
        if (m.max_value() > 0.0) {
            all_zero = false;
            break;
        }
    }
    if (all_zero) {
        std::cerr << "plan: warning: variance maps are all zero; the objective has no "
                     "uncertainty signal\n";
    }

    plan::GroundSet ground;
    ground.rows = variance.maps[0].rows;
    ground.cols = variance.maps[0].cols;
    ground.t_start = variance.t_start;
    ground.horizon = static_cast<int>(variance.maps.size());
    ground.robot_weights = parse_robot_weights(cfg, cfg.get_int("plan.robots"));

    plan::PlannerWeights weights;
    weights.w1 = cfg.get_double("plan.w1");
    weights.w2 = cfg.get_double("plan.w2");
    weights.w3 = cfg.get_double("plan.w3");
    plan::BudgetConstraint budget;
    budget.per_day = cfg.get_int("plan.per_day");
    budget.total_days = cfg.get_int("plan.total_days");
    plan::GreedyOptions options;
    options.stop_at_nonpositive = cfg.get_bool("plan.stop_nonpositive");

    if (certify && ground.size() > 20) {
        throw std::runtime_error(
            "--certify needs an exhaustive search and is capped at 20 ground-set factors; this "
            "instance has " +
            std::to_string(ground.size()));
    }

    plan::PolicyFile pf;
    pf.weights = weights;
    pf.budget = budget;
    pf.seed = cfg.get_u64("seed");
    pf.policy = plan::greedy_plan(ground, variance, weights, budget, options);

    if (certify) {
        const plan::Policy optimal = plan::brute_force_plan(ground, variance, weights, budget);
        const plan::CurvatureReport curv = plan::curvature(ground, variance, weights);
        const plan::CertificateReport cert =
            plan::certificate(pf.policy.score.total, optimal.score.total, curv.c_f);
        pf.has_certificate = true;
        pf.curvature_value = curv.c_f;
        pf.theorem_ratio = cert.ratio;
        std::cerr << "plan: certificate " << (cert.pass ? "holds" : "FAILS") << ", ratio "
                  << cert.ratio << " vs bound " << cert.bound << ", curvature " << curv.c_f << "\n";
    }

    const fs::path out = prepare_out_dir(cfg);
    plan::write_policy((out / "policy.txt").string(), pf);
    std::cerr << "plan: selected " << pf.policy.factors.size() << " factors, objective "
              << pf.policy.score.total << "\n";
    return 0;
}

int cmd_perceive(const RunConfig& cfg) {
    const HeightMap truth = read_hmap(require_path(cfg, "perceive.truth"));

    percept::CropBox box;
    box.plot_min_x = 0.0;
    box.plot_min_y = 0.0;
    box.plot_max_x = cfg.get_double("perceive.field_width_m");
    box.plot_max_y = cfg.get_double("perceive.field_height_m");
    const double band = cfg.get_double("perceive.band_width_m");
    box.outer_min_x = -band;
    box.outer_min_y = -band;
    box.outer_max_x = box.plot_max_x + band;
    box.outer_max_y = box.plot_max_y + band;

    percept::SampleParams params;
    params.density = cfg.get_double("perceive.density");
    params.lidar_std_mm = cfg.get_double("perceive.lidar_std_mm");
    params.dropout_frac = cfg.get_double("perceive.dropout_frac");
    Rng rng = stream_rng(cfg.get_u64("seed"), stream::point_cloud);
    const percept::PointCloud cloud = percept::sample_point_cloud(truth, box, params, rng);

    const auto [plot, perimeter] = percept::crop_box_filter(cloud, box);
    if (plot.points.empty()) {
        throw std::runtime_error("perceive: no points fell inside the plot");
    }
    const percept::Plane plane = percept::fit_ground_plane(perimeter);
    const std::vector<double> heights = percept::point_heights(plot, plane);

    int rows = cfg.get_int("perceive.raster_rows");
    int cols = cfg.get_int("perceive.raster_cols");
    if (rows <= 0) rows = truth.rows;
    if (cols <= 0) cols = truth.cols;
    const percept::RasterStatistic stat =
        percept::RasterStatistic::parse(cfg.get_string("perceive.statistic"));
    HeightMap raster = percept::rasterize(plot, heights, box, rows, cols, stat);
    raster = percept::median_filter_3x3(raster);
    raster = percept::flat_conv_3x3(raster);

    const fs::path out = prepare_out_dir(cfg);
    write_hmap((out / "height.hmap").string(), raster);
    if (cfg.get_bool("perceive.write_cloud")) {
        percept::write_point_cloud((out / "cloud.txt").string(), cloud);
    }

    std::ofstream report(out / "report.txt");
    report << "plane_a=" << format_double(plane.a) << "\n";
    report << "plane_b=" << format_double(plane.b) << "\n";
    report << "plane_d=" << format_double(plane.d) << "\n";
    report << "points_total=" << cloud.points.size() << "\n";
    report << "points_plot=" << plot.points.size() << "\n";
    report << "points_perimeter=" << perimeter.points.size() << "\n";
    report << "statistic=" << stat.name() << "\n";
    for (double q : {50.0, 75.0, 90.0, 95.0, 97.5, 99.0, 99.5}) {
        report << "percentile_" << format_double(q) << "="
               << format_double(percept::percentile_heights(heights, q)) << "\n";
    }
    std::cerr << "perceive: " << plot.points.size() << " plot points, plane (" << plane.a << ", "
              << plane.b << ", " << plane.d << ")\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    const std::vector<HeightMap> dataset = synth::read_dataset(require_path(cfg, "eval.dataset"));
    const nn::Network net = nn::read_model(require_path(cfg, "eval.model"));

    eval::ComparisonConfig cc;
    cc.trials = cfg.get_int("eval.trials");
    cc.input_end = cfg.get_int("eval.input_end");
    cc.alpha = cfg.get_int("eval.alpha");
    cc.delta = cfg.get_int("eval.delta");
    cc.plan_samples = cfg.get_int("eval.plan_samples");
    cc.repredict_samples = cfg.get_int("eval.repredict_samples");
    cc.repredict_alpha = cfg.get_int("eval.repredict_alpha");
    cc.repredict_delta = cfg.get_int("eval.repredict_delta");
    cc.dropout_p = cfg.get_double("eval.dropout_p");
    cc.meas_std_mm = cfg.get_double("eval.meas_std_mm");
    cc.fold_mode = eval::parse_fold_mode(cfg.get_string("eval.fold"));
    cc.weights.w1 = cfg.get_double("eval.w1");
    cc.weights.w2 = cfg.get_double("eval.w2");
    cc.weights.w3 = cfg.get_double("eval.w3");
    cc.seed = cfg.get_u64("seed");

    const eval::ComparisonResult result = eval::run_comparison(net, dataset, cc);

    const fs::path out = prepare_out_dir(cfg);
    eval::write_comparison_csv((out / "comparison.csv").string(), result.rows);
    for (const eval::TrialRow& row : result.rows) {
        plan::PolicyFile pf;
        pf.weights = cc.weights;
        pf.budget.per_day = row.per_day;
        pf.budget.total_days = row.total_days;
        pf.seed = cc.seed;
        pf.policy = row.policy;
        char name[64];
        std::snprintf(name, sizeof(name), "policy_trial%03d_%s.txt", row.trial, row.method.c_str());
        plan::write_policy((out / name).string(), pf);
    }
    std::cerr << "eval: mean objective intermittent " << result.intermittent.mean_f << ", heuristic "
              << result.heuristic.mean_f << ", random " << result.random.mean_f << "\n";
    std::cerr << "eval: mean re-prediction error intermittent " << result.intermittent.mean_error_mm
              << ", heuristic " << result.heuristic.mean_error_mm << ", random "
              << result.random.mean_error_mm << " mm\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pasture monitoring pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string seed_override;
    std::string out_override;
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--seed", seed_override, "override the seed key");
    app.add_option("--out", out_override, "override the out_dir key");

    auto* synth_cmd = app.add_subcommand("synth", "synthesize a heightmap dataset");
    auto* train_cmd = app.add_subcommand("train", "train the predictor on a dataset");
    auto* predict_cmd = app.add_subcommand("predict", "emit mean and variance heightmaps");
    auto* plan_cmd = app.add_subcommand("plan", "plan a deployment policy from variance maps");
    bool certify = false;
    plan_cmd->add_flag("--certify", certify, "exhaustive optimum, curvature and greedy bound");
    auto* perceive_cmd = app.add_subcommand("perceive", "estimate a heightmap from a point cloud");
    auto* eval_cmd = app.add_subcommand("eval", "compare deployment policies end to end");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        if (!seed_override.empty()) cfg.set("seed", seed_override);
        if (!out_override.empty()) cfg.set("out_dir", out_override);

        if (synth_cmd->parsed()) return cmd_synth(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (predict_cmd->parsed()) return cmd_predict(cfg);
        if (plan_cmd->parsed()) return cmd_plan(cfg, certify);
        if (perceive_cmd->parsed()) return cmd_perceive(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
