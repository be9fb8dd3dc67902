#pragma once

#include "sforge/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <vector>

namespace sforge {

/// Undirected factor structure over coordinates: each factor is a set of
/// coordinate indices. Only membership matters; potentials never appear.
struct FactorGraph {
    Eigen::Index dim = 0;
    std::vector<std::vector<Eigen::Index>> factors;

    void validate() const {
        std::vector<bool> seen(static_cast<std::size_t>(dim), false);
        for (const auto& f : factors) {
            for (Eigen::Index i : f) {
                require(i >= 0 && i < dim, "FactorGraph: index out of range");
                seen[static_cast<std::size_t>(i)] = true;
            }
        }
        for (bool s : seen) require(s, "FactorGraph: every coordinate must appear in some factor");
    }
};

/// Union of all factors containing d, minus d itself.
inline std::vector<Eigen::Index> markov_blanket(const FactorGraph& graph, Eigen::Index d) {
    require(d >= 0 && d < graph.dim, "markov_blanket: coordinate out of range");
    std::set<Eigen::Index> blanket;
    for (const auto& f : graph.factors) {
        if (std::find(f.begin(), f.end(), d) == f.end()) continue;
        for (Eigen::Index i : f) {
            if (i != d) blanket.insert(i);
        }
    }
    return {blanket.begin(), blanket.end()};
}

/// Pairwise factors {i, j} for 0 < j - i <= band; singletons when band = 0.
inline FactorGraph build_banded_graph(Eigen::Index dim, Eigen::Index band) {
    require(dim >= 1, "build_banded_graph: dimension must be positive");
    require(band >= 0 && band <= dim - 1, "build_banded_graph: band out of range");
    FactorGraph g;
    g.dim = dim;
    if (band == 0) {
        for (Eigen::Index i = 0; i < dim; ++i) g.factors.push_back({i});
        return g;
    }
    for (Eigen::Index i = 0; i < dim; ++i) {
        for (Eigen::Index j = i + 1; j <= std::min(dim - 1, i + band); ++j) {
            g.factors.push_back({i, j});
        }
    }
    return g;
}

/// Pairwise factors {2b, 2b+1}, the Markov structure of 2x2 block targets.
inline FactorGraph build_pair_graph(Eigen::Index dim) {
    require(dim >= 2 && dim % 2 == 0, "build_pair_graph: dimension must be even");
    FactorGraph g;
    g.dim = dim;
    for (Eigen::Index b = 0; b < dim / 2; ++b) g.factors.push_back({2 * b, 2 * b + 1});
    return g;
}

inline nlohmann::json factor_graph_to_json(const FactorGraph& graph) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& f : graph.factors) j.push_back(f);
    return j;
}

inline FactorGraph factor_graph_from_json(const nlohmann::json& j, Eigen::Index dim) {
    FactorGraph g;
    g.dim = dim;
    require(j.is_array(), "factor_graph_from_json: expected a list of integer lists");
    for (const auto& f : j) {
        require(f.is_array(), "factor_graph_from_json: expected a list of integer lists");
        std::vector<Eigen::Index> factor;
        for (const auto& v : f) factor.push_back(v.get<Eigen::Index>());
        g.factors.push_back(std::move(factor));
    }
    g.validate();
    return g;
}

/// Coordinate split for the two-stage updates: gamma and s partition all
/// coordinates except d.
struct Partition {
    Eigen::Index d = 0;
    std::vector<Eigen::Index> gamma;
    std::vector<Eigen::Index> s;
};

/// Coordinates ordered by ensemble column 2-norm (ascending, ties by lower
/// index). Columns are mean-centered first unless centered = false, so the
/// ranking picks low-variance coordinates.
inline std::vector<Eigen::Index> column_norm_order(const Eigen::Ref<const Matrix>& ensemble,
                                                   bool centered = true) {
    const Eigen::Index dims = ensemble.cols();
    std::vector<std::pair<double, Eigen::Index>> keyed(static_cast<std::size_t>(dims));
    for (Eigen::Index c = 0; c < dims; ++c) {
        double sq;
        if (centered) {
            const double mean = ensemble.col(c).mean();
            sq = (ensemble.col(c).array() - mean).square().sum();
        } else {
            sq = ensemble.col(c).squaredNorm();
        }
        keyed[static_cast<std::size_t>(c)] = {sq, c};
    }
    std::stable_sort(keyed.begin(), keyed.end());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(dims));
    for (std::size_t i = 0; i < keyed.size(); ++i) order[i] = keyed[i].second;
    return order;
}

/// Pick gamma from a precomputed ranking: the first r ranked coordinates
/// excluding d; everything else goes to s.
inline Partition partition_from_order(const std::vector<Eigen::Index>& order, Eigen::Index d,
                                      Eigen::Index r) {
    const Eigen::Index dims = static_cast<Eigen::Index>(order.size());
    require(d >= 0 && d < dims, "partition_from_order: coordinate out of range");
    require(r >= 1 && r <= dims - 1, "partition_from_order: r out of range");
    Partition p;
    p.d = d;
    for (Eigen::Index c : order) {
        if (c == d) continue;
        if (static_cast<Eigen::Index>(p.gamma.size()) < r) {
            p.gamma.push_back(c);
        } else {
            p.s.push_back(c);
        }
    }
    std::sort(p.gamma.begin(), p.gamma.end());
    std::sort(p.s.begin(), p.s.end());
    return p;
}

inline Partition select_partition(const Eigen::Ref<const Matrix>& ensemble, Eigen::Index d,
                                  Eigen::Index r, bool centered = true) {
    return partition_from_order(column_norm_order(ensemble, centered), d, r);
}

}  // namespace sforge
