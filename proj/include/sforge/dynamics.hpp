#pragma once

#include "sforge/common.hpp"
#include "sforge/kernel.hpp"
#include "sforge/parallel.hpp"
#include "sforge/rng.hpp"
#include "sforge/structure.hpp"
#include "sforge/target.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace sforge {

/// m x D matrix of particle positions; the central mutable state.
using ParticleEnsemble = Matrix;

enum class Method { Svgd, MpSvgd, AumpSvgd };

enum class StepMode { Fixed, AdaGrad };

/// Coordinate update ordering for the two-stage engine. Synchronous computes
/// every direction of a stage from the stage-start ensemble and applies them
/// at once; Sequential reproduces the literal per-coordinate loop.
enum class UpdateOrdering { Synchronous, Sequential };

struct StepScheduleSpec {
    StepMode mode = StepMode::AdaGrad;
    double step_size = 0.1;
    double fudge = 1e-6;

    static StepScheduleSpec fixed(double eps) { return {StepMode::Fixed, eps, 1e-6}; }
    static StepScheduleSpec adagrad(double eps0, double fudge = 1e-6) {
        return {StepMode::AdaGrad, eps0, fudge};
    }
};

/// Step-size state. AdaGrad keeps one per-entry accumulator for the whole
/// run; it only ever grows.
class StepSchedule {
public:
    StepSchedule(const StepScheduleSpec& spec, Eigen::Index rows, Eigen::Index cols) : spec_(spec) {
        require(spec.step_size > 0.0, "StepSchedule: step size must be positive");
        if (spec_.mode == StepMode::AdaGrad) accum_ = Eigen::ArrayXXd::Zero(rows, cols);
    }

    void apply(Matrix& X, const Matrix& G) {
        if (spec_.mode == StepMode::Fixed) {
            X += spec_.step_size * G;
            return;
        }
        accum_ += G.array().square();
        X.array() += spec_.step_size * G.array() / (spec_.fudge + accum_.sqrt());
    }

    /// Update a subset of columns only (sequential two-stage mode).
    void apply_columns(Matrix& X, const std::vector<Eigen::Index>& cols, const Matrix& G) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const Eigen::Index c = cols[k];
            if (spec_.mode == StepMode::Fixed) {
                X.col(c) += spec_.step_size * G.col(static_cast<Eigen::Index>(k));
                continue;
            }
            accum_.col(c) += G.col(static_cast<Eigen::Index>(k)).array().square();
            X.col(c).array() += spec_.step_size * G.col(static_cast<Eigen::Index>(k)).array() /
                                (spec_.fudge + accum_.col(c).sqrt());
        }
    }

private:
    StepScheduleSpec spec_;
    Eigen::ArrayXXd accum_;
};

namespace detail {

// Pairwise squared distances restricted to a coordinate subset, accumulated
// coordinate by coordinate in ascending order of `coords`; every entry's sum
// order is fixed, so callers that must agree bitwise can share this path.
inline void sq_dist_over_into(const Eigen::Ref<const Matrix>& X,
                              const std::vector<Eigen::Index>& coords, Matrix& S,
                              int threads = 0) {
    const Eigen::Index m = X.rows();
    S.resize(m, m);
    if (m * m * static_cast<Eigen::Index>(coords.size()) < (1 << 21)) threads = 1;
    parallel_for_strided(static_cast<std::size_t>(m), [&](std::size_t ji) {
        const Eigen::Index j = static_cast<Eigen::Index>(ji);
        double* scol = S.col(j).data();
        for (Eigen::Index i = 0; i < m; ++i) scol[i] = 0.0;
        for (Eigen::Index c : coords) {
            const double* col = X.col(c).data();
            const double xj = col[j];
            for (Eigen::Index i = 0; i < m; ++i) {
                const double d = col[i] - xj;
                scol[i] += d * d;
            }
        }
    }, threads);
}

inline Matrix sq_dist_over(const Eigen::Ref<const Matrix>& X,
                           const std::vector<Eigen::Index>& coords, int threads = 0) {
    Matrix S;
    sq_dist_over_into(X, coords, S, threads);
    return S;
}

inline std::vector<Eigen::Index> all_coords(Eigen::Index dims) {
    std::vector<Eigen::Index> c(static_cast<std::size_t>(dims));
    for (Eigen::Index i = 0; i < dims; ++i) c[static_cast<std::size_t>(i)] = i;
    return c;
}

// One (x_id - x_jd)^2 matrix per coordinate; engine-side cache.
inline void sq_diff_stack_into(const Eigen::Ref<const Matrix>& X, std::vector<Matrix>& stack) {
    stack.resize(static_cast<std::size_t>(X.cols()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        sq_dist_over_into(X, {c}, stack[static_cast<std::size_t>(c)], 1);
    }
}

// Median-heuristic bandwidth straight from a squared-distance matrix. The
// selection runs on squared values (sqrt is monotone) and takes roots only
// of the middle order statistics, giving the same median of distances.
inline double median_bandwidth_from_sq_matrix(const Eigen::Ref<const Matrix>& S,
                                              std::vector<double>& buf) {
    const Eigen::Index m = S.rows();
    buf.clear();
    buf.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < j; ++i) buf.push_back(S(i, j));
    }
    if (buf.empty()) return 1.0;
    const std::size_t n = buf.size();
    const std::size_t mid = n / 2;
    std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
    double med = std::sqrt(buf[mid]);
    if (n % 2 == 0) {
        const double lower = *std::max_element(buf.begin(), buf.begin() + mid);
        med = 0.5 * (std::sqrt(lower) + med);
    }
    if (med <= 0.0) return 1.0;
    return med * med / std::log(static_cast<double>(std::max<Eigen::Index>(m, 2)));
}

inline void build_kernel_matrix(KernelFamily family, const Eigen::Ref<const Matrix>& S, double h,
                                Matrix& K, int threads = 0) {
    const Eigen::Index m = S.rows();
    K.resize(m, m);
    if (m * m < (1 << 21)) threads = 1;
    const double inv_2h = 1.0 / (2.0 * h);
    parallel_for_strided(static_cast<std::size_t>(m), [&](std::size_t ji) {
        const Eigen::Index j = static_cast<Eigen::Index>(ji);
        if (family == KernelFamily::Rbf) {
            K.col(j) = (-S.col(j).array() * inv_2h).exp();
        } else {
            K.col(j) = (1.0 + S.col(j).array() * inv_2h).sqrt().inverse();
        }
    }, threads);
}

// Fixed-topology reduction over particles j for one (particle n, coordinate t)
// pair: four interleaved partial sums, combined pairwise. The order never
// depends on the coordinate subset or the thread count.
inline double direction_dot_rbf(const double* kcol, const double* scol, const double* xcol,
                                double x_nt, double inv_h, Eigen::Index m) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    Eigen::Index j = 0;
    for (; j + 4 <= m; j += 4) {
        a0 += kcol[j + 0] * (scol[j + 0] + (x_nt - xcol[j + 0]) * inv_h);
        a1 += kcol[j + 1] * (scol[j + 1] + (x_nt - xcol[j + 1]) * inv_h);
        a2 += kcol[j + 2] * (scol[j + 2] + (x_nt - xcol[j + 2]) * inv_h);
        a3 += kcol[j + 3] * (scol[j + 3] + (x_nt - xcol[j + 3]) * inv_h);
    }
    double tail = 0.0;
    for (; j < m; ++j) tail += kcol[j] * (scol[j] + (x_nt - xcol[j]) * inv_h);
    return ((a0 + a1) + (a2 + a3)) + tail;
}

inline double direction_dot_imq(const double* kcol, const double* scol, const double* xcol,
                                double x_nt, double inv_2h, Eigen::Index m) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    Eigen::Index j = 0;
    for (; j + 4 <= m; j += 4) {
        const double k0 = kcol[j + 0], k1 = kcol[j + 1], k2 = kcol[j + 2], k3 = kcol[j + 3];
        a0 += k0 * scol[j + 0] + (x_nt - xcol[j + 0]) * inv_2h * (k0 * k0 * k0);
        a1 += k1 * scol[j + 1] + (x_nt - xcol[j + 1]) * inv_2h * (k1 * k1 * k1);
        a2 += k2 * scol[j + 2] + (x_nt - xcol[j + 2]) * inv_2h * (k2 * k2 * k2);
        a3 += k3 * scol[j + 3] + (x_nt - xcol[j + 3]) * inv_2h * (k3 * k3 * k3);
    }
    double tail = 0.0;
    for (; j < m; ++j) {
        const double k = kcol[j];
        tail += k * scol[j] + (x_nt - xcol[j]) * inv_2h * (k * k * k);
    }
    return ((a0 + a1) + (a2 + a3)) + tail;
}

// Kernelized Stein direction for the coordinates in `targets`, given a kernel
// matrix K over some coordinate restriction: row n of the result is
// (1/m) sum_j [ k(x_j, x_n) score(x_j)_t + d/dx_{j,t} k(x_j, x_n) ].
inline Matrix direction_block(const Matrix& K, const Eigen::Ref<const Matrix>& X,
                              const Matrix& scores, KernelFamily family, double h,
                              const std::vector<Eigen::Index>& targets, int threads) {
    const Eigen::Index m = X.rows();
    // thread spawn is not worth it below ~1M flops; values never depend on
    // the thread count either way
    if (m * m * static_cast<Eigen::Index>(targets.size()) < (1 << 20)) threads = 1;
    Matrix out(m, static_cast<Eigen::Index>(targets.size()));
    const double inv_h = 1.0 / h;
    const double inv_2h = 1.0 / (2.0 * h);
    const double inv_m = 1.0 / static_cast<double>(m);
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t ni) {
        const Eigen::Index n = static_cast<Eigen::Index>(ni);
        const double* kcol = K.col(n).data();
        for (std::size_t ti = 0; ti < targets.size(); ++ti) {
            const Eigen::Index t = targets[ti];
            const double* scol = scores.col(t).data();
            const double* xcol = X.col(t).data();
            const double x_nt = xcol[n];
            double acc;
            if (family == KernelFamily::Rbf) {
                acc = direction_dot_rbf(kcol, scol, xcol, x_nt, inv_h, m);
            } else {
                acc = direction_dot_imq(kcol, scol, xcol, x_nt, inv_2h, m);
            }
            out(n, static_cast<Eigen::Index>(ti)) = acc * inv_m;
        }
    }, threads);
    return out;
}

inline Matrix checked_scores(const TargetModel& target, const Eigen::Ref<const Matrix>& X) {
    Matrix scores = target.score_batch(X);
    if (!scores.allFinite()) {
        throw DivergenceError(-1, "non-finite score: target/particle blow-up");
    }
    return scores;
}

inline double resolve_from_sq(const KernelSpec& spec, const Eigen::Ref<const Matrix>& S,
                              std::vector<double>& buf) {
    if (spec.rule == BandwidthRule::Fixed) {
        require(spec.bandwidth > 0.0, "kernel: fixed bandwidth must be positive");
        return spec.bandwidth;
    }
    return median_bandwidth_from_sq_matrix(S, buf);
}

// Markov-blanket closures C_d = blanket(d) u {d}, grouped by identical
// closure so coordinates sharing a local kernel are computed together.
inline std::map<std::vector<Eigen::Index>, std::vector<Eigen::Index>> closure_groups(
    const FactorGraph& graph) {
    std::map<std::vector<Eigen::Index>, std::vector<Eigen::Index>> groups;
    for (Eigen::Index d = 0; d < graph.dim; ++d) {
        std::vector<Eigen::Index> closure = markov_blanket(graph, d);
        closure.insert(std::lower_bound(closure.begin(), closure.end(), d), d);
        groups[closure].push_back(d);
    }
    return groups;
}

}  // namespace detail

/// Eq.-style global update direction: row n is
/// (1/m) sum_i [ k(x_i, x_n) grad log p(x_i) + grad_{x_i} k(x_i, x_n) ].
inline Matrix svgd_direction(const Eigen::Ref<const Matrix>& X, const TargetModel& target,
                             const KernelSpec& spec, int threads = 0) {
    require(X.rows() >= 1 && X.cols() == target.dim(), "svgd_direction: ensemble shape mismatch");
    require(X.allFinite(), "svgd_direction: non-finite ensemble");
    const Matrix scores = detail::checked_scores(target, X);
    const std::vector<Eigen::Index> coords = detail::all_coords(X.cols());
    const Matrix S = detail::sq_dist_over(X, coords, threads);
    std::vector<double> buf;
    const double h = detail::resolve_from_sq(spec, S, buf);
    Matrix K;
    detail::build_kernel_matrix(spec.family, S, h, K, threads);
    return detail::direction_block(K, X, scores, spec.family, h, coords, threads);
}

/// Per-coordinate message-passing direction: coordinate d uses a local kernel
/// over C_d = blanket(d) u {d} with its own median bandwidth.
inline Matrix mp_svgd_direction(const Eigen::Ref<const Matrix>& X, const TargetModel& target,
                                const FactorGraph& graph, const KernelSpec& spec, int threads = 0) {
    require(X.cols() == target.dim(), "mp_svgd_direction: ensemble shape mismatch");
    require(graph.dim == X.cols(), "mp_svgd_direction: graph dimension mismatch");
    require(X.allFinite(), "mp_svgd_direction: non-finite ensemble");
    const Matrix scores = detail::checked_scores(target, X);
    Matrix out(X.rows(), X.cols());
    std::vector<double> buf;
    Matrix K;
    for (const auto& [closure, ds] : detail::closure_groups(graph)) {
        const Matrix S = detail::sq_dist_over(X, closure, threads);
        const double h = detail::resolve_from_sq(spec, S, buf);
        detail::build_kernel_matrix(spec.family, S, h, K, threads);
        const Matrix block = detail::direction_block(K, X, scores, spec.family, h, ds, threads);
        for (std::size_t k = 0; k < ds.size(); ++k) {
            out.col(ds[k]) = block.col(static_cast<Eigen::Index>(k));
        }
    }
    return out;
}

/// Stage-1 direction for the gamma block: kernel over all coordinates except
/// d, scores and kernel gradients restricted to gamma. Returns m x |gamma|.
inline Matrix aump_stage1_direction(const Eigen::Ref<const Matrix>& X, const TargetModel& target,
                                    const Partition& partition, const KernelSpec& spec,
                                    int threads = 0) {
    require(X.cols() == target.dim(), "aump_stage1_direction: ensemble shape mismatch");
    require(X.allFinite(), "aump_stage1_direction: non-finite ensemble");
    const Matrix scores = detail::checked_scores(target, X);
    std::vector<Eigen::Index> not_d;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
        if (c != partition.d) not_d.push_back(c);
    }
    const Matrix S = detail::sq_dist_over(X, not_d, threads);
    std::vector<double> buf;
    const double h = detail::resolve_from_sq(spec, S, buf);
    Matrix K;
    detail::build_kernel_matrix(spec.family, S, h, K, threads);
    return detail::direction_block(K, X, scores, spec.family, h, partition.gamma, threads);
}

/// Stage-2 direction for coordinate d: kernel over C_d (which must contain
/// d), score component d, kernel gradient component d. Returns one value per
/// particle.
inline Vector aump_stage2_direction(const Eigen::Ref<const Matrix>& X, const TargetModel& target,
                                    Eigen::Index d, const std::vector<Eigen::Index>& c_d,
                                    const KernelSpec& spec, int threads = 0) {
    require(X.cols() == target.dim(), "aump_stage2_direction: ensemble shape mismatch");
    require(std::find(c_d.begin(), c_d.end(), d) != c_d.end(),
            "aump_stage2_direction: C_d must contain d");
    require(X.allFinite(), "aump_stage2_direction: non-finite ensemble");
    const Matrix scores = detail::checked_scores(target, X);
    std::vector<Eigen::Index> coords = c_d;
    std::sort(coords.begin(), coords.end());
    const Matrix S = detail::sq_dist_over(X, coords, threads);
    std::vector<double> buf;
    const double h = detail::resolve_from_sq(spec, S, buf);
    Matrix K;
    detail::build_kernel_matrix(spec.family, S, h, K, threads);
    return detail::direction_block(K, X, scores, spec.family, h, {d}, threads).col(0);
}

struct InitSpec {
    Vector mean;
    Vector sd;

    static InitSpec isotropic(Eigen::Index dim, double mean_value, double sd_value) {
        return {Vector::Constant(dim, mean_value), Vector::Constant(dim, sd_value)};
    }
};

struct RunConfig {
    Eigen::Index particles = 100;
    int iterations = 1000;
    std::uint64_t seed = 0;
    StepScheduleSpec schedule;                     // AdaGrad(0.1) by default
    KernelSpec kernel = KernelSpec::rbf_median();  // median recomputed per restriction
    Eigen::Index r = 3;                            // |gamma_d| for the two-stage engine
    std::optional<FactorGraph> graph;              // required for MP
    std::optional<InitSpec> init;                  // default N(10 * 1, I)
    int snapshot_every = 100;
    bool store_ensembles = false;
    UpdateOrdering ordering = UpdateOrdering::Synchronous;
    bool centered_partition = true;
    bool refresh_between_stage2 = true;  // second stage-2 update sees the first one
    int threads = 0;
};

struct Snapshot {
    int iteration = 0;
    Vector mean;
    Matrix cov;
    double direction_inf_norm = 0.0;
    std::optional<Matrix> ensemble;
};

struct RunTrajectory {
    std::vector<Snapshot> snapshots;
    Matrix final_ensemble;
    int iterations = 0;
};

namespace detail {

inline Matrix draw_initial(Eigen::Index particles, const InitSpec& init, Rng& rng) {
    const Eigen::Index dim = init.mean.size();
    Matrix X(particles, dim);
    for (Eigen::Index i = 0; i < particles; ++i) {
        for (Eigen::Index c = 0; c < dim; ++c) X(i, c) = init.mean[c] + init.sd[c] * rng.normal();
    }
    return X;
}

inline Matrix mean_centered_cov(const Eigen::Ref<const Matrix>& X) {
    const Vector mean = X.colwise().mean();
    const Matrix centered = X.rowwise() - mean.transpose();
    return centered.transpose() * centered / static_cast<double>(X.rows());
}

// Engine-side two-stage state: per-coordinate squared-difference stack plus
// their full sum, refreshed whenever particle columns change. Restrictions
// are assembled by subtracting the complement when that is cheaper; tiny
// cancellation residues are clamped at zero.
struct TwoStageBuffers {
    Matrix scores;
    std::vector<Matrix> stack;
    Matrix S_full;
    Matrix S_work, K;
    std::vector<double> med_buf;

    void rebuild(const Eigen::Ref<const Matrix>& X, const TargetModel& target) {
        scores = checked_scores(target, X);
        sq_diff_stack_into(X, stack);
        S_full = stack[0];
        for (std::size_t c = 1; c < stack.size(); ++c) S_full += stack[c];
    }

    void restrict_excluding(const std::vector<Eigen::Index>& excluded) {
        S_work = S_full;
        for (Eigen::Index c : excluded) S_work -= stack[static_cast<std::size_t>(c)];
        S_work = S_work.cwiseMax(0.0);
    }

    void restrict_to(const std::vector<Eigen::Index>& coords) {
        S_work = stack[static_cast<std::size_t>(coords.front())];
        for (std::size_t k = 1; k < coords.size(); ++k) {
            S_work += stack[static_cast<std::size_t>(coords[k])];
        }
    }
};

inline double aump_iteration(const TargetModel& target, const RunConfig& cfg, Matrix& X,
                             StepSchedule& schedule, TwoStageBuffers& bufs);

}  // namespace detail

/// Run one inference method for a fixed iteration budget. Deterministic given
/// the seed; aborts with DivergenceError (carrying the iteration index) when
/// any particle or score stops being finite.
inline RunTrajectory run(Method method, const TargetModel& target, const RunConfig& cfg) {
    const Eigen::Index dim = target.dim();
    require(cfg.particles >= 1, "run: need at least one particle");
    require(cfg.iterations >= 0, "run: negative iteration count");
    if (method == Method::MpSvgd) {
        require(cfg.graph.has_value(), "run: MP-SVGD requires a factor graph");
        require(cfg.graph->dim == dim, "run: graph dimension mismatch");
        cfg.graph->validate();
    }
    if (method == Method::AumpSvgd) {
        require(cfg.r >= 1 && cfg.r <= dim - 1, "run: gamma size out of range");
    }

    const InitSpec init = cfg.init.value_or(InitSpec::isotropic(dim, 10.0, 1.0));
    require(init.mean.size() == dim && init.sd.size() == dim, "run: init spec dimension mismatch");

    Rng rng(mix_seed(cfg.seed, 0x696e6974ULL));
    Matrix X = detail::draw_initial(cfg.particles, init, rng);

    StepSchedule schedule(cfg.schedule, cfg.particles, dim);
    RunTrajectory traj;

    const auto groups =
        (method == Method::MpSvgd) ? detail::closure_groups(*cfg.graph)
                                   : std::map<std::vector<Eigen::Index>, std::vector<Eigen::Index>>{};

    detail::TwoStageBuffers bufs;
    const std::vector<Eigen::Index> coords = detail::all_coords(dim);

    auto snapshot = [&](int iteration, double dir_norm) {
        Snapshot s;
        s.iteration = iteration;
        s.mean = X.colwise().mean();
        s.cov = detail::mean_centered_cov(X);
        s.direction_inf_norm = dir_norm;
        if (cfg.store_ensembles) s.ensemble = X;
        traj.snapshots.push_back(std::move(s));
    };

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        if (!X.allFinite()) throw DivergenceError(iter, "run: non-finite particle at iteration " +
                                                            std::to_string(iter));
        double dir_norm = 0.0;
        try {
            if (method == Method::Svgd) {
                bufs.scores = detail::checked_scores(target, X);
                detail::sq_dist_over_into(X, coords, bufs.S_work, cfg.threads);
                const double h = detail::resolve_from_sq(cfg.kernel, bufs.S_work, bufs.med_buf);
                detail::build_kernel_matrix(cfg.kernel.family, bufs.S_work, h, bufs.K, cfg.threads);
                const Matrix G = detail::direction_block(bufs.K, X, bufs.scores, cfg.kernel.family,
                                                         h, coords, cfg.threads);
                dir_norm = G.cwiseAbs().maxCoeff();
                schedule.apply(X, G);
            } else if (method == Method::MpSvgd) {
                bufs.rebuild(X, target);
                Matrix G(X.rows(), dim);
                for (const auto& [closure, ds] : groups) {
                    if (2 * static_cast<Eigen::Index>(closure.size()) > dim) {
                        std::vector<Eigen::Index> excluded;
                        std::set_difference(coords.begin(), coords.end(), closure.begin(),
                                            closure.end(), std::back_inserter(excluded));
                        bufs.restrict_excluding(excluded);
                    } else {
                        bufs.restrict_to(closure);
                    }
                    const double h = detail::resolve_from_sq(cfg.kernel, bufs.S_work, bufs.med_buf);
                    detail::build_kernel_matrix(cfg.kernel.family, bufs.S_work, h, bufs.K);
                    const Matrix block = detail::direction_block(bufs.K, X, bufs.scores,
                                                                 cfg.kernel.family, h, ds,
                                                                 cfg.threads);
                    for (std::size_t k = 0; k < ds.size(); ++k) {
                        G.col(ds[k]) = block.col(static_cast<Eigen::Index>(k));
                    }
                }
                dir_norm = G.cwiseAbs().maxCoeff();
                schedule.apply(X, G);
            } else {
                dir_norm = detail::aump_iteration(target, cfg, X, schedule, bufs);
            }
        } catch (const DivergenceError& e) {
            if (e.iteration() >= 0) throw;
            throw DivergenceError(iter, std::string(e.what()) + " at iteration " +
                                            std::to_string(iter));
        }
        const int done = iter + 1;
        if (cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0 && done != cfg.iterations) {
            snapshot(done, dir_norm);
        }
        if (done == cfg.iterations) snapshot(done, dir_norm);
    }
    if (!X.allFinite()) {
        throw DivergenceError(cfg.iterations, "run: non-finite particle at final iteration");
    }
    if (cfg.iterations == 0) snapshot(0, 0.0);

    traj.final_ensemble = std::move(X);
    traj.iterations = cfg.iterations;
    return traj;
}

namespace detail {

// One AUMP iteration; returns the largest raw direction magnitude seen.
// Synchronous mode: three Jacobi phases (gamma blocks, then x_d against
// S_d u {d}, then x_d against gamma_d u {d}), each applied as a whole.
// Sequential mode reproduces the literal per-coordinate listing.
inline double aump_iteration(const TargetModel& target, const RunConfig& cfg, Matrix& X,
                             StepSchedule& schedule, TwoStageBuffers& bufs) {
    const Eigen::Index dim = target.dim();
    const Eigen::Index m = X.rows();
    const std::vector<Eigen::Index> order = column_norm_order(X, cfg.centered_partition);
    double dir_norm = 0.0;

    std::vector<Partition> parts;
    parts.reserve(static_cast<std::size_t>(dim));
    for (Eigen::Index d = 0; d < dim; ++d) parts.push_back(partition_from_order(order, d, cfg.r));

    auto stage1_block = [&](const Partition& p) {
        bufs.restrict_excluding({p.d});
        const double h = resolve_from_sq(cfg.kernel, bufs.S_work, bufs.med_buf);
        build_kernel_matrix(cfg.kernel.family, bufs.S_work, h, bufs.K);
        return direction_block(bufs.K, X, bufs.scores, cfg.kernel.family, h, p.gamma, cfg.threads);
    };
    auto stage2_col = [&](Eigen::Index d, const std::vector<Eigen::Index>& others, bool exclude) {
        if (exclude) {
            bufs.restrict_excluding(others);  // kernel over complement of `others`
        } else {
            std::vector<Eigen::Index> coords = others;
            coords.insert(std::lower_bound(coords.begin(), coords.end(), d), d);
            bufs.restrict_to(coords);
        }
        const double h = resolve_from_sq(cfg.kernel, bufs.S_work, bufs.med_buf);
        build_kernel_matrix(cfg.kernel.family, bufs.S_work, h, bufs.K);
        return direction_block(bufs.K, X, bufs.scores, cfg.kernel.family, h, {d}, cfg.threads);
    };

    if (cfg.ordering == UpdateOrdering::Synchronous) {
        // Phase 1: all gamma-block directions from the iteration-start state.
        bufs.rebuild(X, target);
        Matrix G1 = Matrix::Zero(m, dim);
        for (const Partition& p : parts) {
            const Matrix block = stage1_block(p);
            for (std::size_t k = 0; k < p.gamma.size(); ++k) {
                G1.col(p.gamma[k]) += block.col(static_cast<Eigen::Index>(k));
            }
        }
        dir_norm = std::max(dir_norm, G1.cwiseAbs().maxCoeff());
        schedule.apply(X, G1);

        // Phase 2: x_d from S_d u {d}.
        bufs.rebuild(X, target);
        Matrix G2(m, dim);
        for (const Partition& p : parts) G2.col(p.d) = stage2_col(p.d, p.gamma, true);
        dir_norm = std::max(dir_norm, G2.cwiseAbs().maxCoeff());
        schedule.apply(X, G2);

        // Phase 3: x_d from gamma_d u {d}.
        if (cfg.refresh_between_stage2) bufs.rebuild(X, target);
        Matrix G3(m, dim);
        for (const Partition& p : parts) G3.col(p.d) = stage2_col(p.d, p.gamma, false);
        dir_norm = std::max(dir_norm, G3.cwiseAbs().maxCoeff());
        schedule.apply(X, G3);
        return dir_norm;
    }

    // Sequential: per coordinate, apply stage 1 then both stage-2 updates in
    // listing order, refreshing the cached distances after each write.
    bufs.rebuild(X, target);
    auto refresh_columns = [&](const std::vector<Eigen::Index>& cols) {
        for (Eigen::Index c : cols) {
            bufs.S_full -= bufs.stack[static_cast<std::size_t>(c)];
            sq_dist_over_into(X, {c}, bufs.stack[static_cast<std::size_t>(c)], 1);
            bufs.S_full += bufs.stack[static_cast<std::size_t>(c)];
        }
        bufs.S_full = bufs.S_full.cwiseMax(0.0);
        bufs.scores = checked_scores(target, X);
    };
    for (const Partition& p : parts) {
        const Matrix block = stage1_block(p);
        dir_norm = std::max(dir_norm, block.cwiseAbs().maxCoeff());
        schedule.apply_columns(X, p.gamma, block);
        refresh_columns(p.gamma);

        Matrix col = stage2_col(p.d, p.gamma, true);
        dir_norm = std::max(dir_norm, col.cwiseAbs().maxCoeff());
        schedule.apply_columns(X, {p.d}, col);
        refresh_columns({p.d});

        col = stage2_col(p.d, p.gamma, false);
        dir_norm = std::max(dir_norm, col.cwiseAbs().maxCoeff());
        schedule.apply_columns(X, {p.d}, col);
        refresh_columns({p.d});
    }
    return dir_norm;
}

}  // namespace detail

}  // namespace sforge
