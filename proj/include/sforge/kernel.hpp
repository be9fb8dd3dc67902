#pragma once

#include "sforge/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sforge {

enum class KernelFamily { Rbf, Imq };

enum class BandwidthRule { Median, Fixed };

/// Kernel family plus bandwidth (or the rule to resolve one from data).
/// RBF:  k(x,y) = exp(-|x-y|^2 / (2h));  IMQ:  k(x,y) = 1/sqrt(1 + |x-y|^2 / (2h)).
struct KernelSpec {
    KernelFamily family = KernelFamily::Rbf;
    BandwidthRule rule = BandwidthRule::Median;
    double bandwidth = 1.0;  // used when rule == Fixed, or after resolution

    static KernelSpec rbf_median() { return {KernelFamily::Rbf, BandwidthRule::Median, 1.0}; }
    static KernelSpec rbf_fixed(double h) { return {KernelFamily::Rbf, BandwidthRule::Fixed, h}; }
    static KernelSpec imq_median() { return {KernelFamily::Imq, BandwidthRule::Median, 1.0}; }
    static KernelSpec imq_fixed(double h) { return {KernelFamily::Imq, BandwidthRule::Fixed, h}; }
};

namespace detail {

inline double kernel_from_sq(KernelFamily family, double sq_dist, double h) {
    if (family == KernelFamily::Rbf) return std::exp(-sq_dist / (2.0 * h));
    return 1.0 / std::sqrt(1.0 + sq_dist / (2.0 * h));
}

}  // namespace detail

inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                          const Eigen::Ref<const Vector>& y) {
    require(x.size() == y.size(), "kernel_eval: dimension mismatch");
    require(spec.bandwidth > 0.0, "kernel_eval: bandwidth must be positive");
    require_finite(x, "kernel_eval");
    require_finite(y, "kernel_eval");
    return detail::kernel_from_sq(spec.family, (x - y).squaredNorm(), spec.bandwidth);
}

/// Gradient with respect to the first argument.
inline Vector kernel_grad_x(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                            const Eigen::Ref<const Vector>& y) {
    require(x.size() == y.size(), "kernel_grad_x: dimension mismatch");
    require(spec.bandwidth > 0.0, "kernel_grad_x: bandwidth must be positive");
    require_finite(x, "kernel_grad_x");
    require_finite(y, "kernel_grad_x");
    const double h = spec.bandwidth;
    const double k = detail::kernel_from_sq(spec.family, (x - y).squaredNorm(), h);
    if (spec.family == KernelFamily::Rbf) {
        return (-(x - y) / h) * k;
    }
    return (-(x - y) / (2.0 * h)) * (k * k * k);
}

/// Median heuristic from a list of pairwise distances (not squared): the
/// bandwidth is med^2 / log(max(m, 2)) for m points. Falls back to 1 when
/// every pairwise distance is zero.
inline double median_bandwidth_from_distances(std::vector<double>& distances, std::size_t m) {
    if (distances.empty()) return 1.0;
    const std::size_t n = distances.size();
    const std::size_t mid = n / 2;
    std::nth_element(distances.begin(), distances.begin() + mid, distances.end());
    double med = distances[mid];
    if (n % 2 == 0) {
        const double lower =
            *std::max_element(distances.begin(), distances.begin() + mid);
        med = 0.5 * (lower + med);
    }
    if (med <= 0.0) return 1.0;
    return med * med / std::log(static_cast<double>(std::max<std::size_t>(m, 2)));
}

/// Median-heuristic bandwidth over the rows of a point set.
inline double median_bandwidth(const Eigen::Ref<const Matrix>& points) {
    const Eigen::Index m = points.rows();
    require(m >= 1, "median_bandwidth: empty input");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = i + 1; j < m; ++j) {
            dists.push_back((points.row(i) - points.row(j)).norm());
        }
    }
    return median_bandwidth_from_distances(dists, static_cast<std::size_t>(m));
}

/// Resolve a spec's rule against concrete points.
inline double resolve_bandwidth(const KernelSpec& spec, const Eigen::Ref<const Matrix>& points) {
    if (spec.rule == BandwidthRule::Fixed) {
        require(spec.bandwidth > 0.0, "resolve_bandwidth: fixed bandwidth must be positive");
        return spec.bandwidth;
    }
    return median_bandwidth(points);
}

}  // namespace sforge
