#pragma once

#include "sforge/target.hpp"

#include <cmath>

namespace sforge {

namespace detail {

// log(1 + exp(t)) without overflow.
inline double softplus(double t) {
    if (t > 0.0) return t + std::log1p(std::exp(-t));
    return std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace detail

/// Bayesian logistic regression posterior over the weight vector with an
/// isotropic normal prior: labels in {-1, +1}, p(y|x, w) = sigmoid(y x'w).
class LogisticPosterior : public TargetModel {
public:
    LogisticPosterior(Matrix features, Vector labels, double prior_variance = 1.0)
        : features_(std::move(features)), labels_(std::move(labels)), prior_var_(prior_variance) {
        require(features_.rows() == labels_.size(), "LogisticPosterior: row/label count mismatch");
        require(features_.rows() >= 1, "LogisticPosterior: empty dataset");
        require(prior_var_ > 0.0, "LogisticPosterior: prior variance must be positive");
        require(features_.allFinite(), "LogisticPosterior: non-finite feature values");
        for (Eigen::Index i = 0; i < labels_.size(); ++i) {
            require(labels_[i] == 1.0 || labels_[i] == -1.0, "LogisticPosterior: labels must be -1 or +1");
        }
    }

    Eigen::Index dim() const override { return features_.cols(); }

    double log_density(const Eigen::Ref<const Vector>& w) const override {
        check_point(w, "LogisticPosterior::log_density");
        const Vector margins = labels_.cwiseProduct(features_ * w);
        double ll = 0.0;
        for (Eigen::Index i = 0; i < margins.size(); ++i) ll -= detail::softplus(-margins[i]);
        return ll - w.squaredNorm() / (2.0 * prior_var_);
    }

    Vector score(const Eigen::Ref<const Vector>& w) const override {
        check_point(w, "LogisticPosterior::score");
        const Vector t = features_ * w;
        Vector coeff(t.size());
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            coeff[i] = labels_[i] * detail::sigmoid(-labels_[i] * t[i]);
        }
        return features_.transpose() * coeff - w / prior_var_;
    }

    Matrix score_batch(const Eigen::Ref<const Matrix>& X) const override {
        Matrix t = X * features_.transpose();  // m x n
        for (Eigen::Index i = 0; i < t.rows(); ++i) {
            for (Eigen::Index j = 0; j < t.cols(); ++j) {
                t(i, j) = labels_[j] * detail::sigmoid(-labels_[j] * t(i, j));
            }
        }
        return t * features_ - X / prior_var_;
    }

    const Matrix& features() const { return features_; }
    const Vector& labels() const { return labels_; }
    double prior_variance() const { return prior_var_; }

private:
    Matrix features_;
    Vector labels_;
    double prior_var_;
};

}  // namespace sforge
