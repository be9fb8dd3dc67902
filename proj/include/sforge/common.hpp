#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sforge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Signals that a particle system produced non-finite coordinates.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(int iteration, const std::string& what)
        : std::runtime_error(what), iteration_(iteration) {}

    int iteration() const { return iteration_; }

private:
    int iteration_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(const Eigen::Ref<const Vector>& x, const std::string& who) {
    if (!x.allFinite()) throw std::invalid_argument(who + ": non-finite input");
}

}  // namespace sforge
