#include "sforge/kernel.hpp"
#include "sforge/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace sforge;

namespace {

Vector vec1(double x) {
    Vector v(1);
    v << x;
    return v;
}

// Central finite differences of the kernel in its first argument.
Vector fd_grad_x(const KernelSpec& spec, const Vector& x, const Vector& y, double step = 1e-6) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector hi = x, lo = x;
        hi[i] += step;
        lo[i] -= step;
        g[i] = (kernel_eval(spec, hi, y) - kernel_eval(spec, lo, y)) / (2.0 * step);
    }
    return g;
}

}  // namespace

TEST_CASE("kernel evaluation closed forms") {
    SECTION("coincident points give 1 for any bandwidth") {
        Rng rng(11);
        for (int rep = 0; rep < 20; ++rep) {
            const Vector x = rng.normal_vector(3);
            const double h = 0.1 + 5.0 * rng.uniform();
            CHECK(kernel_eval(KernelSpec::rbf_fixed(h), x, x) == 1.0);
            CHECK(kernel_eval(KernelSpec::imq_fixed(h), x, x) == 1.0);
        }
    }
    SECTION("hand values") {
        CHECK_THAT(kernel_eval(KernelSpec::rbf_fixed(2.0), vec1(0.0), vec1(2.0)),
                   Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));
        CHECK_THAT(kernel_eval(KernelSpec::imq_fixed(1.0), vec1(0.0), vec1(std::sqrt(2.0))),
                   Catch::Matchers::WithinAbs(1.0 / std::sqrt(2.0), 1e-15));
    }
    SECTION("errors") {
        CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf_fixed(1.0), vec1(0.0), Vector::Zero(2)),
                        std::invalid_argument);
        Vector bad = vec1(std::nan(""));
        CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf_fixed(1.0), bad, vec1(0.0)),
                        std::invalid_argument);
        CHECK_THROWS_AS(kernel_eval(KernelSpec::rbf_fixed(-1.0), vec1(0.0), vec1(1.0)),
                        std::invalid_argument);
    }
}

TEST_CASE("kernel gradient") {
    SECTION("vanishes at coincident points") {
        Rng rng(12);
        const Vector x = rng.normal_vector(4);
        CHECK(kernel_grad_x(KernelSpec::rbf_fixed(0.7), x, x).norm() == 0.0);
        CHECK(kernel_grad_x(KernelSpec::imq_fixed(0.7), x, x).norm() == 0.0);
    }
    SECTION("1-D hand value") {
        const Vector g = kernel_grad_x(KernelSpec::rbf_fixed(2.0), vec1(0.0), vec1(2.0));
        CHECK_THAT(g[0], Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));
    }
    SECTION("matches central finite differences on random triples") {
        Rng rng(13);
        for (int rep = 0; rep < 100; ++rep) {
            const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.below(5));
            const Vector x = rng.normal_vector(dim);
            Vector y = rng.normal_vector(dim);
            if ((x - y).norm() < 0.1) y.array() += 0.5;
            const double h = 0.3 + 3.0 * rng.uniform();
            const KernelSpec spec = (rep % 2 == 0) ? KernelSpec::rbf_fixed(h)
                                                   : KernelSpec::imq_fixed(h);
            const Vector g = kernel_grad_x(spec, x, y);
            const Vector fd = fd_grad_x(spec, x, y);
            CHECK((g - fd).norm() <= 1e-4 * (fd.norm() + 1e-12));
        }
    }
    SECTION("antisymmetry under argument swap") {
        Rng rng(14);
        const Vector x = rng.normal_vector(3);
        const Vector y = rng.normal_vector(3);
        const KernelSpec spec = KernelSpec::rbf_fixed(1.3);
        CHECK((kernel_grad_x(spec, x, y) + kernel_grad_x(spec, y, x)).norm() <= 1e-15);
    }
}

TEST_CASE("median bandwidth rule") {
    SECTION("two points") {
        Matrix pts(2, 1);
        pts << 0.0, 2.0;
        CHECK_THAT(median_bandwidth(pts), Catch::Matchers::WithinAbs(4.0 / std::log(2.0), 1e-12));
    }
    SECTION("three points, odd pair count") {
        Matrix pts(3, 1);
        pts << 0.0, 1.0, 3.0;
        CHECK_THAT(median_bandwidth(pts), Catch::Matchers::WithinAbs(4.0 / std::log(3.0), 1e-12));
    }
    SECTION("degenerate ensembles fall back to 1") {
        CHECK(median_bandwidth(Matrix::Zero(5, 2)) == 1.0);
        CHECK(median_bandwidth(Matrix::Zero(1, 3)) == 1.0);
    }
    SECTION("empty input is an error") {
        CHECK_THROWS_AS(median_bandwidth(Matrix(0, 2)), std::invalid_argument);
    }
}

TEST_CASE("kernel invariants") {
    SECTION("symmetry on random pairs") {
        Rng rng(15);
        for (int rep = 0; rep < 1000; ++rep) {
            const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.below(4));
            const Vector x = rng.normal_vector(dim);
            const Vector y = rng.normal_vector(dim);
            const double h = 0.2 + 2.0 * rng.uniform();
            CHECK(kernel_eval(KernelSpec::rbf_fixed(h), x, y) ==
                  kernel_eval(KernelSpec::rbf_fixed(h), y, x));
            CHECK(kernel_eval(KernelSpec::imq_fixed(h), x, y) ==
                  kernel_eval(KernelSpec::imq_fixed(h), y, x));
        }
    }
    SECTION("gram matrices are positive semidefinite") {
        Rng rng(16);
        for (const KernelFamily family : {KernelFamily::Rbf, KernelFamily::Imq}) {
            const Eigen::Index n = 20;
            Matrix pts(n, 3);
            for (Eigen::Index i = 0; i < n; ++i) pts.row(i) = rng.normal_vector(3).transpose();
            const KernelSpec spec{family, BandwidthRule::Fixed, 1.1};
            Matrix gram(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    gram(i, j) = kernel_eval(spec, pts.row(i).transpose(), pts.row(j).transpose());
                }
            }
            Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
            CHECK(es.eigenvalues().minCoeff() >= -1e-8);
        }
    }
    SECTION("strict monotone decay in distance, values in (0, 1]") {
        for (const KernelFamily family : {KernelFamily::Rbf, KernelFamily::Imq}) {
            const KernelSpec spec{family, BandwidthRule::Fixed, 0.9};
            double prev = 2.0;
            for (double radius = 0.0; radius <= 6.0; radius += 0.25) {
                const double k = kernel_eval(spec, vec1(0.0), vec1(radius));
                CHECK(k > 0.0);
                CHECK(k <= 1.0);
                CHECK(k < prev);
                prev = k;
            }
        }
    }
}
