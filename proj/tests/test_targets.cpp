#include "sforge/diffusion.hpp"
#include "sforge/logistic.hpp"
#include "sforge/targets.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

using namespace sforge;

namespace {

Vector fd_score(const TargetModel& target, const Vector& x, double step = 1e-6) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector hi = x, lo = x;
        hi[i] += step;
        lo[i] -= step;
        g[i] = (target.log_density(hi) - target.log_density(lo)) / (2.0 * step);
    }
    return g;
}

void check_score_against_fd(const TargetModel& target, Rng& rng, int points, double scale = 1.0) {
    for (int rep = 0; rep < points; ++rep) {
        const Vector x = scale * rng.normal_vector(target.dim());
        const Vector g = target.score(x);
        const Vector fd = fd_score(target, x);
        CHECK((g - fd).norm() <= 1e-4 * (fd.norm() + 1e-8));
    }
}

}  // namespace

TEST_CASE("gaussian target") {
    SECTION("identity covariance score") {
        const GaussianTarget t = GaussianTarget::standard(2);
        Vector x(2);
        x << 1.0, 2.0;
        const Vector s = t.score(x);
        CHECK(s[0] == -1.0);
        CHECK(s[1] == -2.0);
    }
    SECTION("log density at the mean of a standard normal") {
        for (const Eigen::Index dim : {1, 3, 7}) {
            const GaussianTarget t = GaussianTarget::standard(dim);
            CHECK_THAT(t.log_density(Vector::Zero(dim)),
                       Catch::Matchers::WithinAbs(
                           -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi), 1e-13));
        }
    }
    SECTION("score is exactly affine") {
        Rng rng(21);
        Matrix A(3, 3);
        for (Eigen::Index i = 0; i < 3; ++i) A.row(i) = rng.normal_vector(3).transpose();
        const Matrix cov = A * A.transpose() + 0.5 * Matrix::Identity(3, 3);
        const GaussianTarget t(rng.normal_vector(3), cov);
        for (int rep = 0; rep < 50; ++rep) {
            const Vector x = 2.0 * rng.normal_vector(3);
            const Vector residual = t.score(x) + t.precision() * (x - t.mean());
            CHECK(residual.cwiseAbs().maxCoeff() <= 1e-13);
        }
    }
    SECTION("mode is the density maximum") {
        Rng rng(22);
        const GaussianTarget t = GaussianTarget::standard(4);
        const double at_mean = t.log_density(Vector::Zero(4));
        for (int rep = 0; rep < 1000; ++rep) {
            CHECK(t.log_density(rng.normal_vector(4)) <= at_mean);
        }
    }
    SECTION("score matches finite differences") {
        Rng rng(23);
        Matrix A(4, 4);
        for (Eigen::Index i = 0; i < 4; ++i) A.row(i) = rng.normal_vector(4).transpose();
        const GaussianTarget t(rng.normal_vector(4), A * A.transpose() + Matrix::Identity(4, 4));
        check_score_against_fd(t, rng, 20);
    }
    SECTION("construction rejects non-spd covariance") {
        Matrix bad = Matrix::Identity(2, 2);
        bad(1, 1) = -1.0;
        CHECK_THROWS_AS(GaussianTarget(Vector::Zero(2), bad), std::invalid_argument);
    }
    SECTION("batched scores agree with pointwise scores") {
        Rng rng(24);
        const GaussianTarget t = GaussianTarget::standard(3);
        Matrix X(5, 3);
        for (Eigen::Index i = 0; i < 5; ++i) X.row(i) = rng.normal_vector(3).transpose();
        const Matrix batch = t.score_batch(X);
        for (Eigen::Index i = 0; i < 5; ++i) {
            CHECK((batch.row(i).transpose() - t.score(X.row(i).transpose())).norm() <= 1e-13);
        }
    }
}

TEST_CASE("mixture target") {
    SECTION("symmetric two-component mixture has zero score at the origin") {
        Vector a(3);
        a << 1.5, -0.5, 2.0;
        std::vector<GaussianTarget> comps;
        comps.emplace_back(a, Matrix::Identity(3, 3));
        comps.emplace_back(-a, Matrix::Identity(3, 3));
        const MixtureTarget t({0.5, 0.5}, std::move(comps));
        CHECK(t.score(Vector::Zero(3)).cwiseAbs().maxCoeff() <= 1e-14);
    }
    SECTION("score matches finite differences, including far points") {
        Rng rng(25);
        Vector a(2);
        a << 2.0, -1.0;
        std::vector<GaussianTarget> comps;
        comps.emplace_back(a, 0.8 * Matrix::Identity(2, 2));
        comps.emplace_back(-a, 1.3 * Matrix::Identity(2, 2));
        const MixtureTarget t({0.3, 0.7}, std::move(comps));
        check_score_against_fd(t, rng, 20, 3.0);
    }
    SECTION("log-space path stays finite far from all components") {
        Vector a(2);
        a << 1.0, 1.0;
        std::vector<GaussianTarget> comps;
        comps.emplace_back(a, Matrix::Identity(2, 2));
        comps.emplace_back(-a, Matrix::Identity(2, 2));
        const MixtureTarget t({0.5, 0.5}, std::move(comps));
        const Vector far = Vector::Constant(2, 40.0);
        CHECK(std::isfinite(t.log_density(far)));
        CHECK(t.score(far).allFinite());
    }
    SECTION("weights must sum to one") {
        std::vector<GaussianTarget> comps;
        comps.push_back(GaussianTarget::standard(2));
        comps.push_back(GaussianTarget::standard(2));
        CHECK_THROWS_AS(MixtureTarget({0.6, 0.6}, std::move(comps)), std::invalid_argument);
    }
}

TEST_CASE("spaceship mixture construction") {
    const MixtureTarget t = make_spaceship(6);
    CHECK(t.dim() == 6);
    const Matrix cov = *t.covariance();
    // head block correlations cancel between the two components
    CHECK_THAT(cov(0, 1), Catch::Matchers::WithinAbs(0.0, 1e-15));
    CHECK_THAT(cov(2, 3), Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(cov(4, 5), Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(cov(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-15));
    CHECK_THROWS_AS(make_spaceship(5), std::invalid_argument);
}

TEST_CASE("banded gaussian covariances stay positive definite") {
    for (const Eigen::Index band : {1, 5, 15, 35, 49}) {
        const GaussianTarget t = make_banded_gaussian(50, band, 0.5);
        Eigen::SelfAdjointEigenSolver<Matrix> es(*t.covariance(), Eigen::EigenvaluesOnly);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
    CHECK((*make_banded_gaussian(10, 0).covariance() - Matrix::Identity(10, 10)).norm() == 0.0);
}

TEST_CASE("diffusion forward model") {
    SECTION("zero forcing stays at the unstable equilibrium") {
        CHECK(simulate_diffusion(Vector::Zero(10), 0.1).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("single step") {
        Vector inc(1);
        inc << 0.1;
        const Vector path = simulate_diffusion(inc, 1.0);
        CHECK_THAT(path[0], Catch::Matchers::WithinAbs(0.1, 1e-15));
    }
    SECTION("two-step hand value") {
        Vector inc(2);
        inc << 0.1, 0.0;
        const Vector path = simulate_diffusion(inc, 0.5);
        CHECK_THAT(path[0], Catch::Matchers::WithinAbs(0.1, 1e-15));
        CHECK_THAT(path[1], Catch::Matchers::WithinAbs(0.34504950495049503, 1e-14));
    }
}

TEST_CASE("diffusion posterior") {
    Rng rng(26);
    const Eigen::Index steps = 20;
    const Vector truth = 0.22 * rng.normal_vector(steps);
    Vector obs = simulate_diffusion(truth, 1.0 / static_cast<double>(steps));
    for (Eigen::Index i = 0; i < steps; ++i) obs[i] += 0.1 * rng.normal();
    const DiffusionPosterior post = DiffusionPosterior::dense(obs);

    SECTION("score matches finite differences") {
        check_score_against_fd(post, rng, 20, 0.2);
    }
    SECTION("first-order expansion has quadratic error decay") {
        const Vector x = 0.2 * rng.normal_vector(steps);
        const Vector g = post.score(x);
        const double f0 = post.log_density(x);
        auto err = [&](double delta) {
            Vector xp = x;
            xp[7] += delta;
            return std::abs(post.log_density(xp) - f0 - g[7] * delta);
        };
        const double e4 = err(1e-4);
        const double e5 = err(1e-5);
        CHECK(e4 <= 200.0 * e5);
        CHECK(e4 >= 50.0 * e5);
    }
    SECTION("sparse observation grids are accepted") {
        const DiffusionPosterior sparse(obs.head(3), {2, 9, 17}, steps);
        check_score_against_fd(sparse, rng, 5, 0.2);
    }
}

TEST_CASE("logistic posterior") {
    Rng rng(27);
    const Eigen::Index n = 40, dim = 3;
    Matrix F(n, dim);
    Vector y(n);
    const Vector w_true = rng.normal_vector(dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        F.row(i) = rng.normal_vector(dim).transpose();
        y[i] = (rng.uniform() < detail::sigmoid(F.row(i).dot(w_true))) ? 1.0 : -1.0;
    }
    const LogisticPosterior post(F, y, 1.0);

    SECTION("score matches finite differences") {
        check_score_against_fd(post, rng, 20);
    }
    SECTION("gradient ascent from zero converges to a unique maximizer") {
        Vector w = Vector::Zero(dim);
        double step = 0.05;
        for (int iter = 0; iter < 20000; ++iter) {
            const Vector g = post.score(w);
            if (g.norm() < 1e-10) break;
            w += step * g;
        }
        CHECK(post.score(w).norm() < 1e-8);
        CHECK(post.log_density(w) > post.log_density(Vector::Zero(dim)));
    }
    SECTION("batched scores agree with pointwise scores") {
        Matrix W(4, dim);
        for (Eigen::Index i = 0; i < 4; ++i) W.row(i) = rng.normal_vector(dim).transpose();
        const Matrix batch = post.score_batch(W);
        for (Eigen::Index i = 0; i < 4; ++i) {
            CHECK((batch.row(i).transpose() - post.score(W.row(i).transpose())).norm() <= 1e-10);
        }
    }
    SECTION("labels outside {-1, +1} are rejected") {
        Vector bad = y;
        bad[0] = 2.0;
        CHECK_THROWS_AS(LogisticPosterior(F, bad), std::invalid_argument);
    }
}

TEST_CASE("exact samplers") {
    SECTION("same seed reproduces the matrix bitwise") {
        const GaussianTarget t = GaussianTarget::standard(4);
        Rng r1(99), r2(99);
        const Matrix a = t.exact_sample(64, r1);
        const Matrix b = t.exact_sample(64, r2);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    }
    SECTION("standard normal moments at n = 100000") {
        const GaussianTarget t = GaussianTarget::standard(5);
        Rng rng(123);
        const Matrix s = t.exact_sample(100000, rng);
        const Vector mean = s.colwise().mean();
        CHECK(mean.cwiseAbs().maxCoeff() <= 0.02);
        const Matrix centered = s.rowwise() - mean.transpose();
        const Matrix cov = centered.transpose() * centered / static_cast<double>(s.rows());
        CHECK((cov - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() <= 0.03);
    }
    SECTION("mixture component assignment fractions") {
        Vector a = Vector::Zero(2);
        a[0] = 10.0;
        std::vector<GaussianTarget> comps;
        comps.emplace_back(a, Matrix::Identity(2, 2));
        comps.emplace_back(-a, Matrix::Identity(2, 2));
        const MixtureTarget t({0.5, 0.5}, std::move(comps));
        Rng rng(321);
        const Matrix s = t.exact_sample(100000, rng);
        Eigen::Index first = 0;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            if (s(i, 0) > 0.0) ++first;
        }
        const double frac = static_cast<double>(first) / static_cast<double>(s.rows());
        CHECK(std::abs(frac - 0.5) <= 0.01);
    }
}
