#pragma once

#include "sforge/common.hpp"
#include "sforge/kernel.hpp"
#include "sforge/target.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace sforge {

/// Mean-centered empirical covariance with 1/m normalization.
inline Matrix empirical_covariance(const Eigen::Ref<const Matrix>& X) {
    require(X.rows() >= 1, "empirical_covariance: empty ensemble");
    const Vector mean = X.colwise().mean();
    const Matrix centered = X.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(X.rows());
}

/// Largest absolute eigenvalue of a symmetric matrix (its spectral norm).
inline double spectral_norm_sym(const Eigen::Ref<const Matrix>& A) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

namespace detail {

// mean over all ordered pairs (self-pairs included, contributing zero)
inline double mean_pairwise_norm(const Eigen::Ref<const Matrix>& A) {
    const Eigen::Index n = A.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) total += (A.row(i) - A.row(j)).norm();
    }
    return 2.0 * total / (static_cast<double>(n) * static_cast<double>(n));
}

}  // namespace detail

/// Reference sample set with its pairwise term precomputed; lets a metric
/// curve reuse the expensive constant part across snapshots.
struct EnergyReference {
    Matrix samples;
    double self_mean = 0.0;
};

inline EnergyReference make_energy_reference(Matrix samples) {
    require(samples.rows() >= 1, "make_energy_reference: empty sample set");
    EnergyReference ref;
    ref.self_mean = detail::mean_pairwise_norm(samples);
    ref.samples = std::move(samples);
    return ref;
}

inline double energy_distance_cached(const Eigen::Ref<const Matrix>& X,
                                     const EnergyReference& ref) {
    require(X.rows() >= 1, "energy_distance: empty sample set");
    require(X.cols() == ref.samples.cols(), "energy_distance: dimension mismatch");
    const Eigen::Index n = X.rows();
    const Eigen::Index k = ref.samples.rows();
    double cross = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) cross += (X.row(i) - ref.samples.row(j)).norm();
    }
    return 2.0 * cross / (static_cast<double>(n) * static_cast<double>(k)) -
           detail::mean_pairwise_norm(X) - ref.self_mean;
}

/// Energy-distance V-statistic between two sample sets:
/// 2 E|X-Y| - E|X-X'| - E|Y-Y'| with means over all pairs, self-pairs
/// included (they contribute zero).
inline double energy_distance(const Eigen::Ref<const Matrix>& X,
                              const Eigen::Ref<const Matrix>& Y) {
    require(X.cols() == Y.cols(), "energy_distance: dimension mismatch");
    return energy_distance_cached(X, make_energy_reference(Y));
}

/// Spectral-norm error between the ensemble covariance and the target's.
inline double cov_error(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Sigma) {
    require(X.rows() >= 2, "cov_error: need at least two particles");
    require(X.cols() == Sigma.rows() && Sigma.rows() == Sigma.cols(),
            "cov_error: covariance shape mismatch");
    return spectral_norm_sym(empirical_covariance(X) - Sigma);
}

/// gamma(alpha, m) = (log m / log 2) * max(2, 32 log m / (alpha log 2)).
inline double gamma_factor(double alpha, Eigen::Index m) {
    require(alpha > 0.0, "gamma_factor: alpha must be positive");
    require(m >= 1, "gamma_factor: particle count must be positive");
    const double log2 = std::log(2.0);
    const double logm = std::log(static_cast<double>(m));
    return (logm / log2) * std::max(2.0, 32.0 * logm / (alpha * log2));
}

/// Estimated constants behind the concentration bounds, plus the bound
/// values themselves and the matching empirical quantities.
struct BoundReport {
    // first bound
    double M = 0.0;            // kernel Lipschitz constant e^{-1/2} / (2 sqrt(h))
    double c = 0.0;            // (2/h) exp(-c0 tr(Sigma_m) / h)
    double c0 = 0.0;           // max deviation ratio, clamped to (1, m]
    double K = 0.0;            // 2M/c + 1
    double prop1_bound = 0.0;  // K * sqrt(tr Sigma)
    double max_norm = 0.0;     // empirical max_i |x_i|
    double max_norm_sq = 0.0;  // empirical max_i |x_i|^2
    double trace_sigma_m = 0.0;
    // second bound
    double alpha = 0.0;
    double v2 = 0.0;
    double gamma = 0.0;
    double prop2_bound = 0.0;  // unsquared right-hand side
    bool alpha_degenerate = false;
};

/// Particle-cluster bound for a zero-mean target under the RBF kernel:
/// |x_i| <= (2M/c + 1) sqrt(E|x|^2). Also records the empirical maximum for
/// comparison. A fully collapsed multi-particle ensemble is an error; the
/// single-particle case uses the tr(Sigma_m) -> 0 limit of c.
inline BoundReport prop1_bound(const Eigen::Ref<const Matrix>& X, double bandwidth,
                               double trace_sigma) {
    require(bandwidth > 0.0, "prop1_bound: bandwidth must be positive");
    require(trace_sigma > 0.0, "prop1_bound: target trace must be positive");
    const Eigen::Index m = X.rows();
    require(m >= 1, "prop1_bound: empty ensemble");

    const Vector center = X.colwise().mean();
    double max_dev_sq = 0.0;
    double trace_m = 0.0;
    double max_norm_sq = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const double dev = (X.row(i).transpose() - center).squaredNorm();
        max_dev_sq = std::max(max_dev_sq, dev);
        trace_m += dev;
        max_norm_sq = std::max(max_norm_sq, X.row(i).squaredNorm());
    }
    trace_m /= static_cast<double>(m);

    BoundReport report;
    report.M = std::exp(-0.5) / (2.0 * std::sqrt(bandwidth));
    if (trace_m <= 0.0) {
        if (m >= 2) throw std::invalid_argument("prop1_bound: collapsed ensemble (tr Sigma_m = 0)");
        report.c0 = 1.0 + 1e-9;
        report.c = 2.0 / bandwidth;
    } else {
        report.c0 = std::clamp(max_dev_sq / trace_m, 1.0 + 1e-9, static_cast<double>(m));
        report.c = (2.0 / bandwidth) * std::exp(-report.c0 * trace_m / bandwidth);
    }
    report.K = 2.0 * report.M / report.c + 1.0;
    report.prop1_bound = report.K * std::sqrt(trace_sigma);
    report.max_norm_sq = max_norm_sq;
    report.max_norm = std::sqrt(max_norm_sq);
    report.trace_sigma_m = trace_m;
    return report;
}

namespace detail {

// sup over contiguous windows of norm-sorted particles of
// (1/|N|) lambda_max((sum_{i in N} (x_i x_i' - Sigma))^2), window sizes
// 1, 2, 4, ..., capped by and including m. An estimator, not the exact sup.
inline double variance_proxy_sq(const Eigen::Ref<const Matrix>& X,
                                const Eigen::Ref<const Matrix>& Sigma) {
    const Eigen::Index m = X.rows();
    const Eigen::Index dim = X.cols();

    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> norms(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) norms[static_cast<std::size_t>(i)] = X.row(i).squaredNorm();
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        return norms[static_cast<std::size_t>(a)] < norms[static_cast<std::size_t>(b)];
    });

    // prefix sums of the centered outer products in sorted order
    std::vector<Matrix> prefix(static_cast<std::size_t>(m) + 1, Matrix::Zero(dim, dim));
    for (Eigen::Index k = 0; k < m; ++k) {
        const Vector x = X.row(idx[static_cast<std::size_t>(k)]).transpose();
        prefix[static_cast<std::size_t>(k) + 1] =
            prefix[static_cast<std::size_t>(k)] + (x * x.transpose() - Sigma);
    }

    std::vector<Eigen::Index> sizes;
    for (Eigen::Index w = 1; w < m; w *= 2) sizes.push_back(w);
    sizes.push_back(m);

    double v2 = 0.0;
    for (Eigen::Index w : sizes) {
        for (Eigen::Index s = 0; s + w <= m; ++s) {
            const Matrix window =
                prefix[static_cast<std::size_t>(s + w)] - prefix[static_cast<std::size_t>(s)];
            const double sn = spectral_norm_sym(window);
            v2 = std::max(v2, sn * sn / static_cast<double>(w));
        }
    }
    return v2;
}

}  // namespace detail

/// Covariance-error bound
///   30 v sqrt(log D / m) + (2 K^2 tr(Sigma) / m)(4 alpha^{-1/2} sqrt(log D)
///                                                + gamma(alpha, m) log D),
/// with v^2 estimated from contiguous windows of norm-sorted particles.
/// K comes from prop1_bound; fills the second-bound fields of `report`.
inline void prop2_bound(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& Sigma,
                        double alpha, BoundReport& report) {
    const Eigen::Index dim = X.cols();
    require(dim >= 2, "prop2_bound: dimension must be at least 2");
    require(alpha > 0.0, "prop2_bound: alpha must be positive");
    require(Sigma.rows() == dim && Sigma.cols() == dim, "prop2_bound: covariance shape mismatch");
    const Eigen::Index m = X.rows();
    require(m >= 1, "prop2_bound: empty ensemble");

    const double logd = std::log(static_cast<double>(dim));
    report.alpha = alpha;
    report.v2 = detail::variance_proxy_sq(X, Sigma);
    report.gamma = gamma_factor(alpha, m);
    const double md = static_cast<double>(m);
    report.prop2_bound = 30.0 * std::sqrt(report.v2) * std::sqrt(logd / md) +
                         (2.0 * report.K * report.K * Sigma.trace() / md) *
                             (4.0 / std::sqrt(alpha) * std::sqrt(logd) + report.gamma * logd);
}

/// Evaluate the covariance-error bound formula for given constants; used to
/// study its m-dependence with everything else held fixed.
inline double prop2_bound_formula(double v2, double K, double trace_sigma, double alpha,
                                  Eigen::Index m, Eigen::Index dim) {
    const double logd = std::log(static_cast<double>(dim));
    const double md = static_cast<double>(m);
    return 30.0 * std::sqrt(v2) * std::sqrt(logd / md) +
           (2.0 * K * K * trace_sigma / md) *
               (4.0 / std::sqrt(alpha) * std::sqrt(logd) + gamma_factor(alpha, m) * logd);
}

/// Pairwise update-force magnitude between particles n and j:
/// |(1/m) [grad log p(x_n) k(x_n, x_j) + grad_{x_n} k(x_n, x_j)]|.
inline double interaction_magnitude(const Eigen::Ref<const Matrix>& X, const TargetModel& target,
                                    const KernelSpec& resolved, Eigen::Index n, Eigen::Index j) {
    const Eigen::Index m = X.rows();
    require(n >= 0 && n < m && j >= 0 && j < m, "interaction_magnitude: particle index out of range");
    const Vector xn = X.row(n).transpose();
    const Vector xj = X.row(j).transpose();
    const double k = kernel_eval(resolved, xn, xj);
    const Vector force = target.score(xn) * k + kernel_grad_x(resolved, xn, xj);
    return force.norm() / static_cast<double>(m);
}

/// Mean pairwise force at each norm-sorted index gap; the decay of this
/// curve is the dependence diagnostic.
inline std::vector<std::pair<Eigen::Index, double>> interaction_decay_curve(
    const Eigen::Ref<const Matrix>& X, const TargetModel& target, const KernelSpec& resolved,
    const std::vector<Eigen::Index>& gaps) {
    const Eigen::Index m = X.rows();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> norms(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) norms[static_cast<std::size_t>(i)] = X.row(i).norm();
    std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
        return norms[static_cast<std::size_t>(a)] < norms[static_cast<std::size_t>(b)];
    });

    std::vector<std::pair<Eigen::Index, double>> curve;
    for (Eigen::Index gap : gaps) {
        require(gap >= 1 && gap < m, "interaction_decay_curve: gap out of range");
        double total = 0.0;
        Eigen::Index count = 0;
        for (Eigen::Index s = 0; s + gap < m; ++s) {
            total += interaction_magnitude(X, target, resolved, idx[static_cast<std::size_t>(s)],
                                           idx[static_cast<std::size_t>(s + gap)]);
            ++count;
        }
        curve.emplace_back(gap, total / static_cast<double>(count));
    }
    return curve;
}

struct AlphaFit {
    double alpha = 1e-3;
    bool degenerate = false;
};

/// Dependence-decay rate fitted so exp(-alpha (gap-1)) envelops the
/// diagnostic curve: negated least-squares slope of log magnitude against
/// (gap - 1), clamped below at 1e-3.
inline AlphaFit estimate_alpha(const std::vector<std::pair<Eigen::Index, double>>& curve) {
    require(curve.size() >= 2, "estimate_alpha: need at least two points");
    bool all_zero = true;
    for (const auto& [gap, mag] : curve) {
        require(mag >= 0.0, "estimate_alpha: negative magnitude");
        if (mag > 0.0) all_zero = false;
    }
    if (all_zero) return {1e-3, true};

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    double n = 0.0;
    for (const auto& [gap, mag] : curve) {
        if (mag <= 0.0) continue;
        const double x = static_cast<double>(gap) - 1.0;
        const double y = std::log(mag);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        n += 1.0;
    }
    if (n < 2.0) return {1e-3, true};
    const double denom = n * sxx - sx * sx;
    if (denom <= 0.0) return {1e-3, true};
    const double slope = (n * sxy - sx * sy) / denom;
    const double alpha = -slope;
    if (alpha < 1e-3) return {1e-3, true};
    return {alpha, false};
}

}  // namespace sforge
