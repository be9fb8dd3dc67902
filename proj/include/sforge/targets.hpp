#pragma once

#include "sforge/target.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

namespace sforge {

/// Multivariate normal with SPD covariance. Keeps the precision matrix and
/// Cholesky factor around; score and sampling are closed form.
class GaussianTarget : public TargetModel {
public:
    GaussianTarget(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
        require(cov_.rows() == cov_.cols(), "GaussianTarget: covariance must be square");
        require(mean_.size() == cov_.rows(), "GaussianTarget: mean/covariance size mismatch");
        require((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + cov_.cwiseAbs().maxCoeff()),
                "GaussianTarget: covariance must be symmetric");
        Eigen::LLT<Matrix> llt(cov_);
        require(llt.info() == Eigen::Success, "GaussianTarget: covariance must be positive definite");
        chol_lower_ = llt.matrixL();
        precision_ = llt.solve(Matrix::Identity(cov_.rows(), cov_.cols()));
        double logdet = 0.0;
        for (Eigen::Index i = 0; i < cov_.rows(); ++i) logdet += 2.0 * std::log(chol_lower_(i, i));
        log_norm_ = -0.5 * static_cast<double>(cov_.rows()) * std::log(2.0 * std::numbers::pi) - 0.5 * logdet;
    }

    static GaussianTarget standard(Eigen::Index dim) {
        return GaussianTarget(Vector::Zero(dim), Matrix::Identity(dim, dim));
    }

    Eigen::Index dim() const override { return mean_.size(); }

    double log_density(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "GaussianTarget::log_density");
        const Vector centered = x - mean_;
        return log_norm_ - 0.5 * centered.dot(precision_ * centered);
    }

    Vector score(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "GaussianTarget::score");
        return -(precision_ * (x - mean_));
    }

    Matrix score_batch(const Eigen::Ref<const Matrix>& X) const override {
        return -((X.rowwise() - mean_.transpose()) * precision_);
    }

    bool has_exact_sampler() const override { return true; }

    Matrix exact_sample(Eigen::Index n, Rng& rng) const override {
        Matrix out(n, dim());
        for (Eigen::Index i = 0; i < n; ++i) {
            out.row(i) = (mean_ + chol_lower_ * rng.normal_vector(dim())).transpose();
        }
        return out;
    }

    std::optional<Matrix> covariance() const override { return cov_; }

    const Vector& mean() const { return mean_; }
    const Matrix& precision() const { return precision_; }

private:
    Vector mean_;
    Matrix cov_;
    Matrix chol_lower_;
    Matrix precision_;
    double log_norm_ = 0.0;
};

/// Finite mixture of Gaussians. The score is the responsibility-weighted sum
/// of component scores, evaluated in log space with max subtraction.
class MixtureTarget : public TargetModel {
public:
    MixtureTarget(std::vector<double> weights, std::vector<GaussianTarget> components)
        : weights_(std::move(weights)), components_(std::move(components)) {
        require(!components_.empty(), "MixtureTarget: no components");
        require(weights_.size() == components_.size(), "MixtureTarget: weight/component count mismatch");
        double sum = 0.0;
        for (double w : weights_) {
            require(w >= 0.0, "MixtureTarget: negative weight");
            sum += w;
        }
        require(std::abs(sum - 1.0) <= 1e-12, "MixtureTarget: weights must sum to 1");
        for (const auto& c : components_) {
            require(c.dim() == components_.front().dim(), "MixtureTarget: component dimension mismatch");
        }
    }

    Eigen::Index dim() const override { return components_.front().dim(); }

    double log_density(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "MixtureTarget::log_density");
        const std::vector<double> lw = component_log_terms(x);
        return log_sum_exp(lw);
    }

    Vector score(const Eigen::Ref<const Vector>& x) const override {
        check_point(x, "MixtureTarget::score");
        const std::vector<double> lw = component_log_terms(x);
        const double lse = log_sum_exp(lw);
        Vector out = Vector::Zero(dim());
        for (std::size_t i = 0; i < components_.size(); ++i) {
            if (weights_[i] == 0.0) continue;
            const double resp = std::exp(lw[i] - lse);
            out += resp * components_[i].score(x);
        }
        return out;
    }

    bool has_exact_sampler() const override { return true; }

    Matrix exact_sample(Eigen::Index n, Rng& rng) const override {
        Matrix out(n, dim());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double u = rng.uniform();
            double acc = 0.0;
            std::size_t pick = components_.size() - 1;
            for (std::size_t c = 0; c < components_.size(); ++c) {
                acc += weights_[c];
                if (u < acc) {
                    pick = c;
                    break;
                }
            }
            out.row(i) = components_[pick].exact_sample(1, rng);
        }
        return out;
    }

    std::optional<Matrix> covariance() const override {
        Vector mu = Vector::Zero(dim());
        for (std::size_t i = 0; i < components_.size(); ++i) mu += weights_[i] * components_[i].mean();
        Matrix cov = Matrix::Zero(dim(), dim());
        for (std::size_t i = 0; i < components_.size(); ++i) {
            const Vector& mi = components_[i].mean();
            cov += weights_[i] * (*components_[i].covariance() + mi * mi.transpose());
        }
        cov -= mu * mu.transpose();
        return cov;
    }

    const std::vector<double>& weights() const { return weights_; }
    const std::vector<GaussianTarget>& components() const { return components_; }

private:
    std::vector<double> component_log_terms(const Eigen::Ref<const Vector>& x) const {
        std::vector<double> lw(components_.size(), -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < components_.size(); ++i) {
            if (weights_[i] > 0.0) lw[i] = std::log(weights_[i]) + components_[i].log_density(x);
        }
        return lw;
    }

    static double log_sum_exp(const std::vector<double>& v) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double t : v) mx = std::max(mx, t);
        if (!std::isfinite(mx)) return mx;
        double s = 0.0;
        for (double t : v) s += std::exp(t - mx);
        return mx + std::log(s);
    }

    std::vector<double> weights_;
    std::vector<GaussianTarget> components_;
};

/// Two-component "spaceship" mixture: both means are 1 in the first two
/// coordinates, covariances are block diagonal with 2x2 correlated blocks.
/// The leading block carries +rho_head in one component and -rho_head in the
/// other, which crosses the two densities in the first two dimensions.
inline MixtureTarget make_spaceship(Eigen::Index dim, double rho_head = 0.9, double rho_tail = 0.5) {
    require(dim >= 2 && dim % 2 == 0, "make_spaceship: dimension must be even and >= 2");
    Vector mean = Vector::Zero(dim);
    mean[0] = 1.0;
    mean[1] = 1.0;
    auto block_cov = [dim](double rho_first, double rho_rest) {
        Matrix cov = Matrix::Identity(dim, dim);
        for (Eigen::Index b = 0; b < dim / 2; ++b) {
            const double rho = (b == 0) ? rho_first : rho_rest;
            cov(2 * b, 2 * b + 1) = rho;
            cov(2 * b + 1, 2 * b) = rho;
        }
        return cov;
    };
    std::vector<GaussianTarget> comps;
    comps.emplace_back(mean, block_cov(rho_head, rho_tail));
    comps.emplace_back(mean, block_cov(-rho_head, rho_tail));
    return MixtureTarget({0.5, 0.5}, std::move(comps));
}

/// Gaussian with banded exponential-decay correlations: Sigma_ij =
/// rho^|i-j| for |i-j| <= band, 0 beyond. band = 0 gives the identity,
/// band = D-1 the dense decay matrix.
inline GaussianTarget make_banded_gaussian(Eigen::Index dim, Eigen::Index band, double rho = 0.5) {
    require(band >= 0 && band <= dim - 1, "make_banded_gaussian: band out of range");
    Matrix cov = Matrix::Identity(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        for (Eigen::Index j = i + 1; j <= std::min(dim - 1, i + band); ++j) {
            cov(i, j) = cov(j, i) = std::pow(rho, static_cast<double>(j - i));
        }
    }
    return GaussianTarget(Vector::Zero(dim), cov);
}

}  // namespace sforge
