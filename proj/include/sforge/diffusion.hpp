#pragma once

#include "sforge/target.hpp"

#include <cmath>
#include <vector>

namespace sforge {

inline double diffusion_drift(double u) { return 5.0 * u * (1.0 - u * u) / (1.0 + u * u); }

inline double diffusion_drift_deriv(double u) {
    const double u2 = u * u;
    const double denom = 1.0 + u2;
    return 5.0 * (1.0 - 4.0 * u2 - u2 * u2) / (denom * denom);
}

/// Forward Euler through du = drift(u) dt + dx from u_0 = 0. The input holds
/// one Brownian increment per step; the returned path holds u at the end of
/// each step (length n_t, u_0 excluded).
inline Vector simulate_diffusion(const Eigen::Ref<const Vector>& increments, double dt) {
    require(dt > 0.0, "simulate_diffusion: dt must be positive");
    const Eigen::Index n = increments.size();
    Vector path(n);
    double u = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        u = u + diffusion_drift(u) * dt + increments[k];
        path[k] = u;
    }
    return path;
}

/// Posterior over the Brownian increments of the conditioned diffusion:
/// prior increment_k ~ N(0, dt) i.i.d., observations z_j = u_{t_j} + noise
/// with noise sd sigma. The score's likelihood part is the adjoint of the
/// Euler recursion (reverse accumulation).
class DiffusionPosterior : public TargetModel {
public:
    /// obs_index[j] is the 0-based path position of observation j.
    DiffusionPosterior(Vector observations, std::vector<Eigen::Index> obs_index, Eigen::Index n_steps,
                       double noise_sd = 0.1)
        : obs_(std::move(observations)),
          obs_index_(std::move(obs_index)),
          n_steps_(n_steps),
          dt_(1.0 / static_cast<double>(n_steps)),
          sigma_(noise_sd) {
        require(n_steps_ >= 1, "DiffusionPosterior: need at least one step");
        require(sigma_ > 0.0, "DiffusionPosterior: noise sd must be positive");
        require(obs_.size() == static_cast<Eigen::Index>(obs_index_.size()),
                "DiffusionPosterior: observation/index count mismatch");
        for (Eigen::Index idx : obs_index_) {
            require(idx >= 0 && idx < n_steps_, "DiffusionPosterior: observation index out of range");
        }
        require_finite(obs_, "DiffusionPosterior");
    }

    /// Observations at every step (the standard 50-point setup).
    static DiffusionPosterior dense(Vector observations, double noise_sd = 0.1) {
        const Eigen::Index n = observations.size();
        std::vector<Eigen::Index> idx(n);
        for (Eigen::Index i = 0; i < n; ++i) idx[i] = i;
        return DiffusionPosterior(std::move(observations), std::move(idx), n, noise_sd);
    }

    Eigen::Index dim() const override { return n_steps_; }
    double dt() const { return dt_; }
    double noise_sd() const { return sigma_; }
    const Vector& observations() const { return obs_; }
    const std::vector<Eigen::Index>& observation_index() const { return obs_index_; }

    double log_density(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "DiffusionPosterior::log_density");
        const Vector path = simulate_diffusion(x, dt_);
        double lp = -x.squaredNorm() / (2.0 * dt_);
        for (std::size_t j = 0; j < obs_index_.size(); ++j) {
            const double r = obs_[static_cast<Eigen::Index>(j)] - path[obs_index_[j]];
            lp -= r * r / (2.0 * sigma_ * sigma_);
        }
        return lp;
    }

    Vector score(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "DiffusionPosterior::score");
        const Vector path = simulate_diffusion(x, dt_);

        // d log-likelihood / d u_k at observed positions.
        Vector obs_grad = Vector::Zero(n_steps_);
        for (std::size_t j = 0; j < obs_index_.size(); ++j) {
            const Eigen::Index k = obs_index_[j];
            obs_grad[k] += (obs_[static_cast<Eigen::Index>(j)] - path[k]) / (sigma_ * sigma_);
        }

        // Adjoint sweep: a_k = dL/du_k, with u_{k+1} = u_k + drift(u_k) dt + x_k.
        Vector adj(n_steps_);
        adj[n_steps_ - 1] = obs_grad[n_steps_ - 1];
        for (Eigen::Index k = n_steps_ - 2; k >= 0; --k) {
            adj[k] = obs_grad[k] + adj[k + 1] * (1.0 + diffusion_drift_deriv(path[k]) * dt_);
        }

        // x_k feeds u_{k+1}; path[k] is u_{k+1} in 0-based storage.
        return (-x / dt_) + adj;
    }

private:
    Vector obs_;
    std::vector<Eigen::Index> obs_index_;
    Eigen::Index n_steps_;
    double dt_;
    double sigma_;
};

}  // namespace sforge
