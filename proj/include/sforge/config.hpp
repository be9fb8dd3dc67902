#pragma once

#include "sforge/common.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace sforge {

/// Invalid experiment configuration; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat experiment configuration. A JSON document supplies any subset of the
/// fields; command-line flags override JSON; recipe defaults fill what's
/// left. The effective configuration is echoed into report.json.
struct ExperimentConfig {
    std::string experiment = "gaussian";
    std::vector<std::string> methods;  // empty -> per-experiment default set
    std::vector<Eigen::Index> dims;    // empty -> per-experiment default
    Eigen::Index particles = 0;        // 0 -> per-experiment default
    std::vector<Eigen::Index> particles_list;  // bounds recipes sweep m; empty -> {particles}
    int iterations = 0;                // 0 -> per-experiment default
    Eigen::Index r = 3;
    std::vector<Eigen::Index> r_values;  // empty -> {r}
    std::vector<Eigen::Index> bands;     // nonsparse sweep; empty -> {1,5,15,35,49}
    std::vector<std::uint64_t> seeds;    // empty -> per-experiment default
    std::string step_mode;               // "adagrad" | "fixed"; empty -> recipe default
    double step_size = -1.0;             // < 0 -> recipe default
    double fudge = 1e-6;
    std::string kernel = "rbf";           // "rbf" | "imq"
    std::string bandwidth_rule = "median";  // "median" | "fixed"
    double fixed_bandwidth = 1.0;
    double init_mean = std::numeric_limits<double>::quiet_NaN();  // NaN -> recipe default
    double init_sd = std::numeric_limits<double>::quiet_NaN();
    std::string ordering = "synchronous";  // "synchronous" | "sequential"
    bool centered_partition = true;
    std::string out = "out";
    std::string dataset;  // logistic: path to CSV/LIBSVM; empty -> synthetic
    Eigen::Index synth_n = 2000;
    Eigen::Index synth_dim = 20;
    std::uint64_t synth_seed = 4242;
    double prior_variance = 1.0;
    Eigen::Index reference_samples = 2000;
    std::vector<Eigen::Index> gaps;  // dependence diagnostic; empty -> {500,1000,1500,2000}
    int snapshot_every = 100;
    int threads = 0;  // 0 -> SFORGE_THREADS or hardware
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace detail

inline const std::vector<std::string>& known_experiments() {
    static const std::vector<std::string> names = {
        "gaussian",      "spaceship",     "nonsparse_sweep", "diffusion",
        "logistic",      "bounds_table1", "bounds_table2",   "mdep_decay"};
    return names;
}

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> names = {"SVGD", "MP_SVGD", "AUMP_SVGD"};
    return names;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        detail::read_field(j, "experiment", cfg.experiment);
        detail::read_field(j, "methods", cfg.methods);
        if (j.contains("method")) {
            if (j.at("method").is_string()) {
                cfg.methods = {j.at("method").get<std::string>()};
            } else {
                cfg.methods = j.at("method").get<std::vector<std::string>>();
            }
        }
        detail::read_field(j, "dims", cfg.dims);
        detail::read_field(j, "particles", cfg.particles);
        detail::read_field(j, "particles_list", cfg.particles_list);
        detail::read_field(j, "iterations", cfg.iterations);
        detail::read_field(j, "r", cfg.r);
        detail::read_field(j, "r_values", cfg.r_values);
        detail::read_field(j, "bands", cfg.bands);
        detail::read_field(j, "seeds", cfg.seeds);
        detail::read_field(j, "step_mode", cfg.step_mode);
        detail::read_field(j, "step_size", cfg.step_size);
        detail::read_field(j, "fudge", cfg.fudge);
        detail::read_field(j, "kernel", cfg.kernel);
        detail::read_field(j, "bandwidth_rule", cfg.bandwidth_rule);
        detail::read_field(j, "fixed_bandwidth", cfg.fixed_bandwidth);
        detail::read_field(j, "init_mean", cfg.init_mean);
        detail::read_field(j, "init_sd", cfg.init_sd);
        detail::read_field(j, "ordering", cfg.ordering);
        detail::read_field(j, "centered_partition", cfg.centered_partition);
        detail::read_field(j, "out", cfg.out);
        detail::read_field(j, "dataset", cfg.dataset);
        detail::read_field(j, "synth_n", cfg.synth_n);
        detail::read_field(j, "synth_dim", cfg.synth_dim);
        detail::read_field(j, "synth_seed", cfg.synth_seed);
        detail::read_field(j, "prior_variance", cfg.prior_variance);
        detail::read_field(j, "reference_samples", cfg.reference_samples);
        detail::read_field(j, "gaps", cfg.gaps);
        detail::read_field(j, "snapshot_every", cfg.snapshot_every);
        detail::read_field(j, "threads", cfg.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["experiment"] = cfg.experiment;
    j["methods"] = cfg.methods;
    j["dims"] = cfg.dims;
    j["particles"] = cfg.particles;
    j["particles_list"] = cfg.particles_list;
    j["iterations"] = cfg.iterations;
    j["r"] = cfg.r;
    j["r_values"] = cfg.r_values;
    j["bands"] = cfg.bands;
    j["seeds"] = cfg.seeds;
    j["step_mode"] = cfg.step_mode;
    j["step_size"] = cfg.step_size;
    j["fudge"] = cfg.fudge;
    j["kernel"] = cfg.kernel;
    j["bandwidth_rule"] = cfg.bandwidth_rule;
    j["fixed_bandwidth"] = cfg.fixed_bandwidth;
    // NaN is not representable in JSON; the echo stores resolved values only.
    j["init_mean"] = std::isnan(cfg.init_mean) ? nlohmann::json() : nlohmann::json(cfg.init_mean);
    j["init_sd"] = std::isnan(cfg.init_sd) ? nlohmann::json() : nlohmann::json(cfg.init_sd);
    j["ordering"] = cfg.ordering;
    j["centered_partition"] = cfg.centered_partition;
    j["out"] = cfg.out;
    j["dataset"] = cfg.dataset;
    j["synth_n"] = cfg.synth_n;
    j["synth_dim"] = cfg.synth_dim;
    j["synth_seed"] = cfg.synth_seed;
    j["prior_variance"] = cfg.prior_variance;
    j["reference_samples"] = cfg.reference_samples;
    j["gaps"] = cfg.gaps;
    j["snapshot_every"] = cfg.snapshot_every;
    j["threads"] = cfg.threads;
    return j;
}

inline void validate_config(const ExperimentConfig& cfg) {
    auto known = [](const std::vector<std::string>& names, const std::string& v) {
        return std::find(names.begin(), names.end(), v) != names.end();
    };
    if (!known(known_experiments(), cfg.experiment)) {
        throw ConfigError("config: unknown experiment '" + cfg.experiment + "'");
    }
    for (const std::string& m : cfg.methods) {
        if (!known(known_methods(), m)) throw ConfigError("config: unknown method '" + m + "'");
    }
    if (cfg.particles < 0 || cfg.iterations < 0) {
        throw ConfigError("config: counts must be positive");
    }
    for (Eigen::Index d : cfg.dims) {
        if (d < 1) throw ConfigError("config: dims must be positive");
    }
    for (Eigen::Index p : cfg.particles_list) {
        if (p < 1) throw ConfigError("config: particles_list entries must be positive");
    }
    if (!cfg.step_mode.empty() && cfg.step_mode != "adagrad" && cfg.step_mode != "fixed") {
        throw ConfigError("config: step_mode must be 'adagrad' or 'fixed'");
    }
    if (cfg.kernel != "rbf" && cfg.kernel != "imq") {
        throw ConfigError("config: kernel must be 'rbf' or 'imq'");
    }
    if (cfg.bandwidth_rule != "median" && cfg.bandwidth_rule != "fixed") {
        throw ConfigError("config: bandwidth_rule must be 'median' or 'fixed'");
    }
    if (cfg.bandwidth_rule == "fixed" && cfg.fixed_bandwidth <= 0.0) {
        throw ConfigError("config: fixed_bandwidth must be positive");
    }
    if (cfg.ordering != "synchronous" && cfg.ordering != "sequential") {
        throw ConfigError("config: ordering must be 'synchronous' or 'sequential'");
    }
    if (cfg.r < 1) throw ConfigError("config: r must be at least 1");
    for (Eigen::Index rv : cfg.r_values) {
        if (rv < 1) throw ConfigError("config: r_values entries must be at least 1");
    }
    if (cfg.prior_variance <= 0.0) throw ConfigError("config: prior_variance must be positive");
    if (cfg.reference_samples < 1) throw ConfigError("config: reference_samples must be positive");
    if (cfg.synth_n < 1 || cfg.synth_dim < 1) {
        throw ConfigError("config: synthetic dataset shape must be positive");
    }
}

}  // namespace sforge
