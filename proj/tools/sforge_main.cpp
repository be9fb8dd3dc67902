// sforge: particle-based variational inference benchmark runner.
#include "sforge/experiments.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace sforge;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    const auto dots = text.find("..");
    if (dots != std::string::npos) {
        const std::uint64_t lo = std::stoull(text.substr(0, dots));
        const std::uint64_t hi = std::stoull(text.substr(dots + 2));
        if (hi < lo) throw ConfigError("seeds: empty range '" + text + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
        return seeds;
    }
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
    }
    if (seeds.empty()) throw ConfigError("seeds: nothing to parse in '" + text + "'");
    return seeds;
}

std::vector<Eigen::Index> parse_index_list(const std::string& text) {
    std::vector<Eigen::Index> out;
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(static_cast<Eigen::Index>(std::stoll(tok)));
    }
    if (out.empty()) throw ConfigError("expected a comma-separated integer list, got '" + text + "'");
    return out;
}

struct RunFlags {
    std::string config_path;
    std::string experiment, method, dims, seeds, out, step_mode, kernel, ordering;
    Eigen::Index particles = -1;
    int iterations = -1;
    Eigen::Index r = -1;
    double step_size = -1.0;
    int threads = -1;
    std::string dataset;
};

ExperimentConfig build_config(const RunFlags& flags) {
    ExperimentConfig cfg;
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in.good()) throw ConfigError("cannot open config file " + flags.config_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse: ") + e.what());
        }
        cfg = config_from_json(j);
    }
    // flags override file values
    if (!flags.experiment.empty()) cfg.experiment = flags.experiment;
    if (!flags.method.empty()) {
        cfg.methods.clear();
        std::istringstream ss(flags.method);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) cfg.methods.push_back(tok);
        }
    }
    if (!flags.dims.empty()) cfg.dims = parse_index_list(flags.dims);
    if (!flags.seeds.empty()) cfg.seeds = parse_seed_list(flags.seeds);
    if (!flags.out.empty()) cfg.out = flags.out;
    if (!flags.step_mode.empty()) cfg.step_mode = flags.step_mode;
    if (!flags.kernel.empty()) cfg.kernel = flags.kernel;
    if (!flags.ordering.empty()) cfg.ordering = flags.ordering;
    if (!flags.dataset.empty()) cfg.dataset = flags.dataset;
    if (flags.particles >= 0) cfg.particles = flags.particles;
    if (flags.iterations >= 0) cfg.iterations = flags.iterations;
    if (flags.r >= 0) cfg.r = flags.r;
    if (flags.step_size >= 0.0) cfg.step_size = flags.step_size;
    if (flags.threads >= 0) cfg.threads = flags.threads;
    return cfg;
}

int do_run(const RunFlags& flags) {
    const ExperimentConfig cfg = build_config(flags);
    const RunReport report = run_experiment(cfg);
    std::printf("experiment %s: %zu rows, results in %s\n", report.config.experiment.c_str(),
                report.rows.size(), report.config.out.c_str());
    if (report.status == 3) {
        std::fprintf(stderr, "divergence: %s\n", report.status_note.c_str());
        return 3;
    }
    return 0;
}

int do_verify_bounds(int table, const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.experiment = (table == 1) ? "bounds_table1" : "bounds_table2";
    cfg.out = out_dir;
    const RunReport report = run_experiment(cfg);
    if (report.status == 3) {
        std::fprintf(stderr, "divergence: %s\n", report.status_note.c_str());
        return 3;
    }
    int failures = 0;
    for (const CsvRow& row : report.rows) {
        if (!row.seed) continue;  // skip aggregates
        bool ok = true;
        std::string what;
        if (table == 1) {
            ok = *row.max_norm_sq <= *row.prop1_bound;
            what = "max|x|^2 " + detail::fmt_num(*row.max_norm_sq) + " vs bound " +
                   detail::fmt_num(*row.prop1_bound);
        } else {
            ok = *row.cov_err_sq <= *row.prop2_bound;
            what = "|cov err|^2 " + detail::fmt_num(*row.cov_err_sq) + " vs bound " +
                   detail::fmt_num(*row.prop2_bound);
        }
        std::printf("[%s] dim=%lld m=%lld seed=%llu: %s\n", ok ? "PASS" : "FAIL",
                    static_cast<long long>(*row.dim), static_cast<long long>(*row.particles),
                    static_cast<unsigned long long>(*row.seed), what.c_str());
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}

int do_selftest() {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    {  // partition selection vs exhaustive subsets
        Rng rng(1);
        bool ok = true;
        for (int rep = 0; rep < 10 && ok; ++rep) {
            Matrix X(6, 5);
            for (Eigen::Index i = 0; i < 6; ++i) X.row(i) = rng.normal_vector(5).transpose();
            for (Eigen::Index d = 0; d < 5 && ok; ++d) {
                for (Eigen::Index r = 1; r <= 4 && ok; ++r) {
                    const Partition p = select_partition(X, d, r);
                    double best = std::numeric_limits<double>::infinity();
                    double got = 0.0;
                    std::vector<double> colsq(5);
                    for (Eigen::Index c = 0; c < 5; ++c) {
                        const double mu = X.col(c).mean();
                        colsq[static_cast<std::size_t>(c)] =
                            (X.col(c).array() - mu).square().sum();
                    }
                    for (Eigen::Index c : p.gamma) got += colsq[static_cast<std::size_t>(c)];
                    std::vector<Eigen::Index> cand;
                    for (Eigen::Index c = 0; c < 5; ++c) {
                        if (c != d) cand.push_back(c);
                    }
                    std::vector<bool> mask(cand.size(), false);
                    std::fill(mask.begin(), mask.begin() + r, true);
                    do {
                        double tr = 0.0;
                        for (std::size_t i = 0; i < cand.size(); ++i) {
                            if (mask[i]) tr += colsq[static_cast<std::size_t>(cand[i])];
                        }
                        best = std::min(best, tr);
                    } while (std::prev_permutation(mask.begin(), mask.end()));
                    ok = std::abs(got - best) <= 1e-12;
                }
            }
        }
        check("partition matches exhaustive min-trace subsets", ok);
    }
    {  // score functions vs finite differences
        Rng rng(2);
        bool ok = true;
        const GaussianTarget g = GaussianTarget::standard(4);
        for (int rep = 0; rep < 10 && ok; ++rep) {
            const Vector x = rng.normal_vector(4);
            Vector fd(4);
            for (Eigen::Index i = 0; i < 4; ++i) {
                Vector hi = x, lo = x;
                hi[i] += 1e-6;
                lo[i] -= 1e-6;
                fd[i] = (g.log_density(hi) - g.log_density(lo)) / 2e-6;
            }
            ok = (g.score(x) - fd).norm() <= 1e-4 * (fd.norm() + 1e-8);
        }
        check("scores match finite differences", ok);
    }
    {  // energy distance vs brute force
        Rng rng(3);
        Matrix X(4, 2), Y(4, 2);
        for (Eigen::Index i = 0; i < 4; ++i) {
            X.row(i) = rng.normal_vector(2).transpose();
            Y.row(i) = rng.normal_vector(2).transpose();
        }
        double a = 0, b = 0, c = 0;
        for (Eigen::Index i = 0; i < 4; ++i) {
            for (Eigen::Index j = 0; j < 4; ++j) {
                a += (X.row(i) - Y.row(j)).norm();
                b += (X.row(i) - X.row(j)).norm();
                c += (Y.row(i) - Y.row(j)).norm();
            }
        }
        const double reference = 2 * a / 16 - b / 16 - c / 16;
        check("energy distance matches brute force",
              std::abs(energy_distance(X, Y) - reference) <= 1e-12);
    }
    {  // complete-graph message passing equals the global direction
        Rng rng(4);
        const GaussianTarget g = GaussianTarget::standard(3);
        Matrix X(7, 3);
        for (Eigen::Index i = 0; i < 7; ++i) X.row(i) = rng.normal_vector(3).transpose();
        const Matrix mp = mp_svgd_direction(X, g, build_banded_graph(3, 2), KernelSpec::rbf_median());
        const Matrix sv = svgd_direction(X, g, KernelSpec::rbf_median());
        check("complete-graph MP equals global SVGD", (mp - sv).cwiseAbs().maxCoeff() == 0.0);
    }
    {  // gamma grid against a second transcription
        Rng rng(5);
        bool ok = true;
        for (int rep = 0; rep < 100 && ok; ++rep) {
            const double alpha = 0.01 + 20.0 * rng.uniform();
            const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.below(100000));
            const double lm = std::log(static_cast<double>(m));
            const double l2 = std::log(2.0);
            ok = gamma_factor(alpha, m) == std::max(2.0, 32.0 * lm / (alpha * l2)) * (lm / l2);
        }
        check("gamma factor matches independent transcription", ok);
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sforge: SVGD-family inference and variance-collapse benchmarks"};
    app.require_subcommand(1);

    RunFlags flags;
    CLI::App* run_cmd = app.add_subcommand("run", "run an experiment recipe");
    run_cmd->add_option("--config", flags.config_path, "JSON config file");
    run_cmd->add_option("--experiment", flags.experiment, "experiment name");
    run_cmd->add_option("--method", flags.method, "method or comma list (SVGD,MP_SVGD,AUMP_SVGD)");
    run_cmd->add_option("--dims", flags.dims, "comma-separated dimensions");
    run_cmd->add_option("--particles", flags.particles, "particle count");
    run_cmd->add_option("--iters", flags.iterations, "iteration count");
    run_cmd->add_option("--r", flags.r, "gamma-block size for AUMP_SVGD");
    run_cmd->add_option("--seeds", flags.seeds, "seed list: 0..9 or 0,3,7");
    run_cmd->add_option("--out", flags.out, "output directory");
    run_cmd->add_option("--step-size", flags.step_size, "step size / AdaGrad scale");
    run_cmd->add_option("--step-mode", flags.step_mode, "fixed | adagrad");
    run_cmd->add_option("--kernel", flags.kernel, "rbf | imq");
    run_cmd->add_option("--ordering", flags.ordering, "synchronous | sequential");
    run_cmd->add_option("--dataset", flags.dataset, "classification dataset (CSV or LIBSVM)");
    run_cmd->add_option("--threads", flags.threads, "worker cap (also SFORGE_THREADS)");

    int table = 1;
    std::string vb_out = "out";
    CLI::App* vb_cmd = app.add_subcommand("verify-bounds", "run a bound-verification table");
    vb_cmd->add_option("--table", table, "1 or 2")->check(CLI::IsMember({1, 2}));
    vb_cmd->add_option("--out", vb_out, "output directory");

    CLI::App* st_cmd = app.add_subcommand("selftest", "run the fast oracle suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run_cmd->parsed()) return do_run(flags);
        if (vb_cmd->parsed()) return do_verify_bounds(table, vb_out);
        if (st_cmd->parsed()) return do_selftest();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
