#include "sforge/dynamics.hpp"
#include "sforge/targets.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace sforge;

namespace {

// Straightforward re-implementation of the local kernelized Stein direction
// for one coordinate: plain loops, its own median bandwidth, no shared code
// with the library path.
double reference_local_direction(const Matrix& X, const Matrix& scores,
                                 const std::vector<Eigen::Index>& kernel_coords,
                                 Eigen::Index coord, Eigen::Index n) {
    const Eigen::Index m = X.rows();
    std::vector<double> dists;
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            double sq = 0.0;
            for (Eigen::Index c : kernel_coords) {
                const double d = X(i, c) - X(j, c);
                sq += d * d;
            }
            dists.push_back(std::sqrt(sq));
        }
    }
    std::sort(dists.begin(), dists.end());
    double med;
    const std::size_t half = dists.size() / 2;
    if (dists.size() % 2 == 1) {
        med = dists[half];
    } else {
        med = 0.5 * (dists[half - 1] + dists[half]);
    }
    const double h = (med > 0.0)
                         ? med * med / std::log(static_cast<double>(std::max<Eigen::Index>(m, 2)))
                         : 1.0;

    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
        double sq = 0.0;
        for (Eigen::Index c : kernel_coords) {
            const double d = X(j, c) - X(n, c);
            sq += d * d;
        }
        const double k = std::exp(-sq / (2.0 * h));
        acc += k * scores(j, coord) - ((X(j, coord) - X(n, coord)) / h) * k;
    }
    return acc / static_cast<double>(m);
}

}  // namespace

TEST_CASE("svgd direction closed-form cases") {
    SECTION("single particle reduces to the score") {
        const GaussianTarget t = GaussianTarget::standard(3);
        Matrix X(1, 3);
        X << 0.4, -1.0, 2.0;
        const Matrix dir = svgd_direction(X, t, KernelSpec::rbf_median());
        CHECK((dir.row(0).transpose() - t.score(X.row(0).transpose())).cwiseAbs().maxCoeff() <=
              1e-15);
    }
    SECTION("two-particle 1-D hand evaluation, h = 1") {
        const GaussianTarget t = GaussianTarget::standard(1);
        Matrix X(2, 1);
        X << 0.0, 1.0;
        const Matrix dir = svgd_direction(X, t, KernelSpec::rbf_fixed(1.0));
        const double e = std::exp(-0.5);
        // phi(x_1) = (1/2)[k(x2,x1) s(x2) + grad_{x2} k(x2,x1)] = -e^{-1/2}
        CHECK_THAT(dir(0, 0), Catch::Matchers::WithinAbs(-e, 1e-12));
        // phi(x_2) = (1/2)[grad_{x1} k(x1,x2) + s(x2)] = (e^{-1/2} - 1)/2
        CHECK_THAT(dir(1, 0), Catch::Matchers::WithinAbs(0.5 * (e - 1.0), 1e-12));
    }
    SECTION("mirrored particles get mirrored directions") {
        const GaussianTarget t = GaussianTarget::standard(1);
        Matrix X(2, 1);
        X << -1.3, 1.3;
        const Matrix dir = svgd_direction(X, t, KernelSpec::rbf_median());
        CHECK_THAT(dir(0, 0), Catch::Matchers::WithinAbs(-dir(1, 0), 1e-14));
    }
    SECTION("non-finite score aborts") {
        const GaussianTarget t = GaussianTarget::standard(1);
        Matrix X(2, 1);
        X << 0.0, 1e200;  // score overflows the kernel-weighted sum? no: score itself is -1e200, fine
        X(1, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(svgd_direction(X, t, KernelSpec::rbf_median()), std::invalid_argument);
    }
}

TEST_CASE("mp-svgd direction") {
    Rng rng(41);
    Matrix cov(3, 3);
    cov << 1.0, 0.4, 0.0, 0.4, 1.2, -0.3, 0.0, -0.3, 0.9;
    const GaussianTarget t(Vector::Zero(3), cov);
    Matrix X(2, 3);
    for (Eigen::Index i = 0; i < 2; ++i) X.row(i) = rng.normal_vector(3).transpose();

    SECTION("chain-graph hand evaluation for the first coordinate") {
        const FactorGraph chain = build_banded_graph(3, 1);
        const Matrix dir = mp_svgd_direction(X, t, chain, KernelSpec::rbf_median());
        const Matrix scores = t.score_batch(X);
        for (Eigen::Index n = 0; n < 2; ++n) {
            const double expected = reference_local_direction(X, scores, {0, 1}, 0, n);
            CHECK_THAT(dir(n, 0), Catch::Matchers::WithinAbs(expected, 1e-12));
        }
    }
    SECTION("complete graph reproduces the global direction bitwise") {
        const FactorGraph complete = build_banded_graph(3, 2);
        const Matrix mp = mp_svgd_direction(X, t, complete, KernelSpec::rbf_median());
        const Matrix global = svgd_direction(X, t, KernelSpec::rbf_median());
        CHECK((mp - global).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("singleton factors evolve coordinates independently") {
        const GaussianTarget iso = GaussianTarget::standard(3);
        const FactorGraph singles = build_banded_graph(3, 0);
        const Matrix dir = mp_svgd_direction(X, iso, singles, KernelSpec::rbf_median());
        // column d must only depend on ensemble column d
        for (Eigen::Index d = 0; d < 3; ++d) {
            Matrix Y = X;
            for (Eigen::Index c = 0; c < 3; ++c) {
                if (c != d) Y.col(c).array() += 3.7 + static_cast<double>(c);
            }
            const Matrix dir_y = mp_svgd_direction(Y, iso, singles, KernelSpec::rbf_median());
            CHECK((dir_y.col(d) - dir.col(d)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("aump stage directions") {
    Rng rng(42);
    const GaussianTarget t = GaussianTarget::standard(3);
    Matrix X(2, 3);
    for (Eigen::Index i = 0; i < 2; ++i) X.row(i) = rng.normal_vector(3).transpose();
    const Matrix scores = t.score_batch(X);

    SECTION("single particle degenerates to the restricted score") {
        Matrix single = X.topRows(1);
        Partition p{0, {1}, {2}};
        const Matrix dir = aump_stage1_direction(single, t, p, KernelSpec::rbf_median());
        CHECK_THAT(dir(0, 0),
                   Catch::Matchers::WithinAbs(t.score(single.row(0).transpose())[1], 1e-15));
        const Vector dir2 =
            aump_stage2_direction(single, t, 0, {0, 2}, KernelSpec::rbf_median());
        CHECK_THAT(dir2[0],
                   Catch::Matchers::WithinAbs(t.score(single.row(0).transpose())[0], 1e-15));
    }
    SECTION("stage 1 hand evaluation: kernel over the complement of d") {
        Partition p{0, {1}, {2}};
        const Matrix dir = aump_stage1_direction(X, t, p, KernelSpec::rbf_median());
        REQUIRE(dir.cols() == 1);
        for (Eigen::Index n = 0; n < 2; ++n) {
            const double expected = reference_local_direction(X, scores, {1, 2}, 1, n);
            CHECK_THAT(dir(n, 0), Catch::Matchers::WithinAbs(expected, 1e-12));
        }
    }
    SECTION("stage 2 hand evaluation on C_d = {0, 2}") {
        const Vector dir = aump_stage2_direction(X, t, 0, {0, 2}, KernelSpec::rbf_median());
        for (Eigen::Index n = 0; n < 2; ++n) {
            const double expected = reference_local_direction(X, scores, {0, 2}, 0, n);
            CHECK_THAT(dir[n], Catch::Matchers::WithinAbs(expected, 1e-12));
        }
    }
    SECTION("gamma covering the full complement equals the restricted direction") {
        Matrix wide(5, 3);
        for (Eigen::Index i = 0; i < 5; ++i) wide.row(i) = rng.normal_vector(3).transpose();
        Partition p{1, {0, 2}, {}};
        const Matrix dir = aump_stage1_direction(wide, t, p, KernelSpec::rbf_median());
        const Matrix wide_scores = t.score_batch(wide);
        for (Eigen::Index n = 0; n < 5; ++n) {
            CHECK_THAT(dir(n, 0), Catch::Matchers::WithinAbs(reference_local_direction(
                                      wide, wide_scores, {0, 2}, 0, n), 1e-12));
            CHECK_THAT(dir(n, 1), Catch::Matchers::WithinAbs(reference_local_direction(
                                      wide, wide_scores, {0, 2}, 2, n), 1e-12));
        }
    }
    SECTION("full C_d reproduces the global direction column bitwise") {
        Matrix wide(6, 3);
        for (Eigen::Index i = 0; i < 6; ++i) wide.row(i) = rng.normal_vector(3).transpose();
        const Matrix global = svgd_direction(wide, t, KernelSpec::rbf_median());
        for (Eigen::Index d = 0; d < 3; ++d) {
            const Vector col =
                aump_stage2_direction(wide, t, d, {0, 1, 2}, KernelSpec::rbf_median());
            CHECK((col - global.col(d)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SECTION("C_d must contain d") {
        CHECK_THROWS_AS(aump_stage2_direction(X, t, 0, {1, 2}, KernelSpec::rbf_median()),
                        std::invalid_argument);
    }
}

TEST_CASE("run: basic contracts") {
    SECTION("single-particle run is gradient ascent to the mode") {
        const GaussianTarget t = GaussianTarget::standard(4);
        RunConfig cfg;
        cfg.particles = 1;
        cfg.iterations = 500;
        cfg.seed = 7;
        cfg.schedule = StepScheduleSpec::fixed(0.1);
        const RunTrajectory traj = run(Method::Svgd, t, cfg);
        CHECK(traj.final_ensemble.cwiseAbs().maxCoeff() <= 1e-3);
    }
    SECTION("same seed is bitwise reproducible for every method") {
        const GaussianTarget t = GaussianTarget::standard(4);
        for (const Method method : {Method::Svgd, Method::MpSvgd, Method::AumpSvgd}) {
            RunConfig cfg;
            cfg.particles = 12;
            cfg.iterations = 30;
            cfg.seed = 99;
            cfg.r = 2;
            if (method == Method::MpSvgd) cfg.graph = build_banded_graph(4, 1);
            const RunTrajectory a = run(method, t, cfg);
            const RunTrajectory b = run(method, t, cfg);
            CHECK((a.final_ensemble - b.final_ensemble).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SECTION("thread count does not change results") {
        const GaussianTarget t = GaussianTarget::standard(5);
        RunConfig cfg;
        cfg.particles = 17;
        cfg.iterations = 25;
        cfg.seed = 5;
        cfg.r = 2;
        cfg.threads = 1;
        const RunTrajectory a = run(Method::AumpSvgd, t, cfg);
        cfg.threads = 8;
        const RunTrajectory b = run(Method::AumpSvgd, t, cfg);
        CHECK((a.final_ensemble - b.final_ensemble).cwiseAbs().maxCoeff() == 0.0);

        cfg.threads = 1;
        const RunTrajectory c = run(Method::Svgd, t, cfg);
        cfg.threads = 8;
        const RunTrajectory d = run(Method::Svgd, t, cfg);
        CHECK((c.final_ensemble - d.final_ensemble).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("divergence is reported with its iteration") {
        const GaussianTarget t = GaussianTarget::standard(2);
        RunConfig cfg;
        cfg.particles = 8;
        cfg.iterations = 2000;
        cfg.seed = 3;
        cfg.schedule = StepScheduleSpec::fixed(1e8);
        bool thrown = false;
        try {
            run(Method::Svgd, t, cfg);
        } catch (const DivergenceError& e) {
            thrown = true;
            CHECK(e.iteration() >= 0);
            CHECK(e.iteration() < 2000);
        }
        CHECK(thrown);
    }
    SECTION("configuration errors") {
        const GaussianTarget t = GaussianTarget::standard(3);
        RunConfig cfg;
        CHECK_THROWS_AS(run(Method::MpSvgd, t, cfg), std::invalid_argument);  // graph missing
        cfg.r = 3;                                                            // out of range
        CHECK_THROWS_AS(run(Method::AumpSvgd, t, cfg), std::invalid_argument);
    }
    SECTION("snapshots are strictly increasing and include the final state") {
        const GaussianTarget t = GaussianTarget::standard(2);
        RunConfig cfg;
        cfg.particles = 6;
        cfg.iterations = 250;
        cfg.snapshot_every = 100;
        const RunTrajectory traj = run(Method::Svgd, t, cfg);
        REQUIRE(traj.snapshots.size() == 3);
        CHECK(traj.snapshots[0].iteration == 100);
        CHECK(traj.snapshots[1].iteration == 200);
        CHECK(traj.snapshots[2].iteration == 250);
    }
}

TEST_CASE("run: sequential ordering matches the literal per-coordinate loop shape") {
    // Smoke-level check: both orderings run, stay finite, and land near the
    // same region for a well-conditioned target.
    const GaussianTarget t = GaussianTarget::standard(4);
    RunConfig cfg;
    cfg.particles = 20;
    cfg.iterations = 200;
    cfg.seed = 11;
    cfg.r = 2;
    cfg.schedule = StepScheduleSpec::adagrad(0.5);
    const RunTrajectory sync = run(Method::AumpSvgd, t, cfg);
    cfg.ordering = UpdateOrdering::Sequential;
    const RunTrajectory seq = run(Method::AumpSvgd, t, cfg);
    CHECK(sync.final_ensemble.allFinite());
    CHECK(seq.final_ensemble.allFinite());
    CHECK((sync.final_ensemble.colwise().mean() - seq.final_ensemble.colwise().mean())
              .cwiseAbs()
              .maxCoeff() <= 0.5);
}
