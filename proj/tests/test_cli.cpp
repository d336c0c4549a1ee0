#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pasture/heightmap.hpp"
#include "pasture/planner.hpp"

using namespace pasture;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "pasture_cli_test";

int run_cli(const std::string& args, std::string* err_out = nullptr) {
    const fs::path err_file = kWork / "stderr.txt";
    const std::string cmd =
        std::string(PASTURE_CLI_PATH) + " " + args + " 2> " + err_file.string();
    const int status = std::system(cmd.c_str());
    if (err_out) {
        std::ifstream in(err_file);
        std::stringstream ss;
        ss << in.rdbuf();
        *err_out = ss.str();
    }
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    return -1;
}

void write_file(const fs::path& p, const std::string& contents) {
    std::ofstream out(p);
    out << contents;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workspace {
    Workspace() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
    }
};

std::string base_config() {
    std::ostringstream cfg;
    cfg << "synth.series=" << (kWork / "series.txt").string() << "\n"
        << "synth.grid_rows=8\nsynth.grid_cols=8\n"
        << "synth.basis_file=" << (kWork / "bases.txt").string() << "\n"
        << "synth.gp_length_scale=4\nsynth.noise_std_mm=1\n"
        << "train.dataset=" << (kWork / "data").string() << "\n"
        << "train.alpha=3\ntrain.delta=1\ntrain.max_epochs=3\ntrain.patience=3\n"
        << "train.hidden_full=2\ntrain.hidden_half=2\ntrain.batch=4\n"
        << "predict.dataset=" << (kWork / "data").string() << "\n"
        << "predict.model=" << (kWork / "model" / "model.pstl").string() << "\n"
        << "predict.alpha=3\npredict.delta=1\npredict.samples=5\n"
        << "plan.variance_dir=" << (kWork / "pred").string() << "\n"
        << "plan.robots=2\nplan.per_day=2\nplan.total_days=2\n"
        << "perceive.truth=" << (kWork / "data" / "map_0000.hmap").string() << "\n"
        << "perceive.density=60\nperceive.raster_rows=8\nperceive.raster_cols=8\n"
        << "eval.dataset=" << (kWork / "data").string() << "\n"
        << "eval.model=" << (kWork / "model" / "model.pstl").string() << "\n"
        << "eval.trials=1\neval.alpha=3\neval.delta=1\n"
        << "eval.plan_samples=4\neval.repredict_samples=3\n"
        << "eval.repredict_alpha=2\neval.repredict_delta=1\n";
    return cfg.str();
}

}  // namespace

TEST_CASE("pipeline subcommands run end to end") {
    Workspace ws;

    std::ostringstream series;
    series << "# average heights\n";
    for (int t = 0; t < 20; ++t) series << (100.0 + 0.5 * t) << "\n";
    write_file(kWork / "series.txt", series.str());
    write_file(kWork / "bases.txt", "3 3 2.5 30\n7 7 2.0 25\n");
    write_file(kWork / "run.cfg", base_config());
    const std::string cfg_flag = "--config " + (kWork / "run.cfg").string();

    std::string err;

    SUBCASE("synth produces maps, a manifest and identical bytes under one seed") {
        CHECK(run_cli(cfg_flag + " --out " + (kWork / "data").string() + " synth", &err) == 0);
        CHECK(fs::exists(kWork / "data" / "map_0000.hmap"));
        CHECK(fs::exists(kWork / "data" / "map_0019.hmap"));
        CHECK(fs::exists(kWork / "data" / "manifest.txt"));
        CHECK(fs::exists(kWork / "data" / "resolved_config.cfg"));

        CHECK(run_cli(cfg_flag + " --out " + (kWork / "data2").string() + " synth") == 0);
        CHECK(slurp(kWork / "data" / "map_0005.hmap") == slurp(kWork / "data2" / "map_0005.hmap"));

        // different seed changes the noise
        CHECK(run_cli(cfg_flag + " --seed 777 --out " + (kWork / "data3").string() + " synth") == 0);
        CHECK(slurp(kWork / "data" / "map_0005.hmap") != slurp(kWork / "data3" / "map_0005.hmap"));
    }

    SUBCASE("full pipeline: synth, train, predict, plan, perceive, eval") {
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "data").string() + " synth", &err) == 0);
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "model").string() + " train", &err) == 0);
        CHECK(fs::exists(kWork / "model" / "model.pstl"));
        CHECK(fs::exists(kWork / "model" / "loss_history.csv"));

        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "pred").string() + " predict", &err) == 0);
        CHECK(fs::exists(kWork / "pred" / "mean_00.hmap"));
        CHECK(fs::exists(kWork / "pred" / "var_02.hmap"));
        const Manifest man = read_manifest((kWork / "pred" / "prediction_manifest.txt").string());
        bool has_norm = false;
        for (const auto& [k, v] : man) {
            if (k == "variance_normalization") {
                has_norm = true;
                CHECK(v == "population");
            }
        }
        CHECK(has_norm);

        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "planout").string() + " plan", &err) == 0);
        const plan::PolicyFile pf = plan::read_policy((kWork / "planout" / "policy.txt").string());
        CHECK(!pf.policy.factors.empty());
        CHECK(plan::is_independent(pf.policy.factors, pf.budget));

        // the exhaustive certificate refuses oversized ground sets
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "planbig").string() + " plan --certify",
                        &err) != 0);
        CHECK(err.find("20") != std::string::npos);

        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "percep").string() + " perceive", &err) == 0);
        CHECK(fs::exists(kWork / "percep" / "height.hmap"));
        const std::string report = slurp(kWork / "percep" / "report.txt");
        int percentile_rows = 0;
        std::istringstream rs(report);
        std::string line;
        while (std::getline(rs, line)) {
            if (line.rfind("percentile_", 0) == 0) ++percentile_rows;
        }
        CHECK(percentile_rows == 7);

        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "evalout").string() + " eval", &err) == 0);
        CHECK(fs::exists(kWork / "evalout" / "comparison.csv"));
        CHECK(fs::exists(kWork / "evalout" / "policy_trial000_intermittent.txt"));

        // determinism of the whole eval stage
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "evalout2").string() + " eval", &err) == 0);
        CHECK(slurp(kWork / "evalout" / "comparison.csv") ==
              slurp(kWork / "evalout2" / "comparison.csv"));
    }

    SUBCASE("predictions with p = 0 carry all-zero variance maps") {
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "data").string() + " synth") == 0);
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "model").string() + " train") == 0);

        write_file(kWork / "p0.cfg", base_config() + "predict.dropout_p=0\n");
        REQUIRE(run_cli("--config " + (kWork / "p0.cfg").string() + " --out " +
                        (kWork / "predp0").string() + " predict") == 0);
        const HeightMap var = read_hmap((kWork / "predp0" / "var_00.hmap").string());
        CHECK(var.max_value() == 0.0);

        write_file(kWork / "k1.cfg", base_config() + "predict.samples=1\n");
        REQUIRE(run_cli("--config " + (kWork / "k1.cfg").string() + " --out " +
                        (kWork / "predk1").string() + " predict") == 0);
        const HeightMap var1 = read_hmap((kWork / "predk1" / "var_01.hmap").string());
        CHECK(var1.max_value() == 0.0);
    }

    SUBCASE("failure modes exit nonzero with a diagnostic") {
        // missing series file
        write_file(kWork / "noseries.cfg", "synth.series=" + (kWork / "absent.txt").string() + "\n");
        CHECK(run_cli("--config " + (kWork / "noseries.cfg").string() + " --out " +
                          (kWork / "x1").string() + " synth",
                      &err) != 0);
        CHECK(err.find("absent.txt") != std::string::npos);

        // absent model file
        REQUIRE(run_cli(cfg_flag + " --out " + (kWork / "data").string() + " synth") == 0);
        write_file(kWork / "nomodel.cfg",
                   base_config() + "predict.model=" + (kWork / "nope.pstl").string() + "\n");
        CHECK(run_cli("--config " + (kWork / "nomodel.cfg").string() + " --out " +
                          (kWork / "x2").string() + " predict",
                      &err) != 0);

        // malformed config key is named in the message
        write_file(kWork / "typo.cfg", "plan.bogus_key=3\n");
        CHECK(run_cli("--config " + (kWork / "typo.cfg").string() + " eval", &err) != 0);
        CHECK(err.find("plan.bogus_key") != std::string::npos);

        // empty-variance warning still plans
        fs::create_directories(kWork / "zerovar");
        write_hmap((kWork / "zerovar" / "var_00.hmap").string(), HeightMap(4, 4, 0.0));
        write_file(kWork / "zv.cfg",
                   "plan.variance_dir=" + (kWork / "zerovar").string() + "\nplan.robots=1\n");
        CHECK(run_cli("--config " + (kWork / "zv.cfg").string() + " --out " +
                          (kWork / "zvout").string() + " plan",
                      &err) == 0);
        CHECK(err.find("warning") != std::string::npos);
    }
}
