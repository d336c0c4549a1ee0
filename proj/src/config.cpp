#include "pasture/config.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace pasture {

namespace {

std::string trimmed(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
    static const std::map<std::string, std::string> kDefaults = {
        {"seed", "42"},
        {"out_dir", "out"},

        {"synth.series", ""},
        {"synth.grid_rows", "100"},
        {"synth.grid_cols", "100"},
        {"synth.field_width_m", "10"},
        {"synth.field_height_m", "10"},
        {"synth.horizon", "0"},  // 0: full series length
        {"synth.basis_file", ""},
        {"synth.gp_length_scale", "0"},  // 0: tenth of the horizon
        {"synth.gp_sigma_frac", "0.25"},
        {"synth.noise_std_mm", "2"},

        {"train.dataset", ""},
        {"train.alpha", "15"},
        {"train.delta", "2"},
        {"train.lr", "0.001"},
        {"train.momentum", "0.9"},
        {"train.batch", "4"},
        {"train.max_epochs", "50"},
        {"train.patience", "10"},
        {"train.dropout_p", "0.4"},
        {"train.hidden_full", "8"},
        {"train.hidden_half", "16"},
        {"train.kernel", "3"},
        {"train.val_frac", "0.2"},
        {"train.origin_stride", "1"},
        {"train.model", "model.pstl"},

        {"predict.model", ""},
        {"predict.dataset", ""},
        {"predict.input_end", "-1"},  // -1: last map of the dataset
        {"predict.alpha", "15"},
        {"predict.delta", "2"},
        {"predict.samples", "100"},
        {"predict.dropout_p", "0.4"},

        {"plan.variance_dir", ""},
        {"plan.t_start", "0"},
        {"plan.w1", "5"},
        {"plan.w2", "0.1"},
        {"plan.w3", "1"},
        {"plan.per_day", "4"},
        {"plan.total_days", "3"},
        {"plan.robots", "4"},
        {"plan.robot_weights", ""},  // comma list, empty: all 1.0
        {"plan.stop_nonpositive", "0"},

        {"perceive.truth", ""},
        {"perceive.density", "500"},
        {"perceive.lidar_std_mm", "4"},
        {"perceive.dropout_frac", "0"},
        {"perceive.band_width_m", "1"},
        {"perceive.field_width_m", "10"},
        {"perceive.field_height_m", "10"},
        {"perceive.raster_rows", "0"},  // 0: match truth dims
        {"perceive.raster_cols", "0"},
        {"perceive.statistic", "p95"},
        {"perceive.write_cloud", "0"},

        {"eval.dataset", ""},
        {"eval.model", ""},
        {"eval.trials", "50"},
        {"eval.input_end", "-1"},
        {"eval.alpha", "15"},
        {"eval.delta", "2"},
        {"eval.plan_samples", "60"},
        {"eval.repredict_samples", "30"},
        {"eval.repredict_alpha", "10"},
        {"eval.repredict_delta", "2"},
        {"eval.dropout_p", "0.4"},
        {"eval.meas_std_mm", "4"},
        {"eval.fold", "window"},  // latest | nearest | window
        {"eval.w1", "5"},
        {"eval.w2", "0.1"},
        {"eval.w3", "1"},
    };
    return kDefaults;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw std::runtime_error("unknown config key: " + key);
    }
    it->second = value;
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config file: " + path);
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string s = trimmed(line);
        if (s.empty()) continue;
        auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        set(trimmed(s.substr(0, eq)), trimmed(s.substr(eq + 1)));
    }
}

bool RunConfig::has(const std::string& key) const {
    auto it = values_.find(key);
    return it != values_.end() && !it->second.empty();
}

std::string RunConfig::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw std::runtime_error("unknown config key: " + key);
    }
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string s = get_string(key);
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not a number: '" + s + "'");
    }
    if (pos != s.size()) {
        throw std::runtime_error("config key " + key + ": not a number: '" + s + "'");
    }
    return v;
}

int RunConfig::get_int(const std::string& key) const {
    double v = get_double(key);
    int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) {
        throw std::runtime_error("config key " + key + ": not an integer");
    }
    return i;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const std::string s = get_string(key);
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not an unsigned integer: '" + s + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string s = get_string(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw std::runtime_error("config key " + key + ": not a boolean: '" + s + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
    return {values_.begin(), values_.end()};
}

void RunConfig::write_resolved(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write resolved config: " + path);
    }
    for (const auto& [k, v] : values_) {
        out << k << "=" << v << "\n";
    }
}

}  // namespace pasture
