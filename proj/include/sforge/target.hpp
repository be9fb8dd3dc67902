#pragma once

#include "sforge/common.hpp"
#include "sforge/rng.hpp"

#include <optional>

namespace sforge {

/// A differentiable (unnormalized) target density: dimension, log-density up
/// to an additive constant, and the score field grad log p. Implementations
/// are immutable after construction and safe to share across threads.
class TargetModel {
public:
    virtual ~TargetModel() = default;

    virtual Eigen::Index dim() const = 0;

    virtual double log_density(const Eigen::Ref<const Vector>& x) const = 0;

    virtual Vector score(const Eigen::Ref<const Vector>& x) const = 0;

    /// Scores for every row of X (m x D in, m x D out). The default loops;
    /// targets with a cheaper batched form override it.
    virtual Matrix score_batch(const Eigen::Ref<const Matrix>& X) const {
        Matrix out(X.rows(), X.cols());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out.row(i) = score(X.row(i).transpose());
        return out;
    }

    virtual bool has_exact_sampler() const { return false; }

    /// n i.i.d. draws, one per row. Deterministic given the RNG state.
    virtual Matrix exact_sample(Eigen::Index /*n*/, Rng& /*rng*/) const {
        throw std::logic_error("exact_sample: target has no exact sampler");
    }

    /// True covariance when known in closed form (used for error metrics).
    virtual std::optional<Matrix> covariance() const { return std::nullopt; }

protected:
    void check_point(const Eigen::Ref<const Vector>& x, const char* who) const {
        require(x.size() == dim(), std::string(who) + ": dimension mismatch");
        require_finite(x, who);
    }
};

}  // namespace sforge
