#pragma once

#include "sforge/common.hpp"
#include "sforge/logistic.hpp"
#include "sforge/rng.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sforge {

struct Dataset {
    Matrix features;
    Vector labels;  // -1 / +1
};

struct SplitDataset {
    Dataset train;
    Dataset test;
};

namespace detail {

struct RawRows {
    std::vector<std::vector<double>> dense;                        // CSV rows
    std::vector<std::vector<std::pair<Eigen::Index, double>>> sparse;  // LIBSVM rows
    std::vector<double> labels;
    Eigen::Index dim = 0;
    bool is_sparse = false;
};

inline bool looks_like_libsvm(const std::string& line) {
    return line.find(':') != std::string::npos;
}

inline RawRows parse_rows(std::istream& in, const std::string& origin) {
    RawRows raw;
    std::string line;
    std::size_t line_no = 0;
    bool format_known = false;
    while (std::getline(in, line)) {
        ++line_no;
        // strip comments and surrounding whitespace
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const auto first = line.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r\n");
        line = line.substr(first, last - first + 1);

        if (!format_known) {
            raw.is_sparse = looks_like_libsvm(line);
            format_known = true;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        try {
            if (raw.is_sparse) {
                std::istringstream ss(line);
                double label;
                if (!(ss >> label)) throw std::invalid_argument("missing label");
                std::vector<std::pair<Eigen::Index, double>> row;
                std::string tok;
                while (ss >> tok) {
                    const auto colon = tok.find(':');
                    if (colon == std::string::npos) throw std::invalid_argument("malformed pair '" + tok + "'");
                    const long idx = std::stol(tok.substr(0, colon));
                    const double val = std::stod(tok.substr(colon + 1));
                    if (idx < 1) throw std::invalid_argument("feature index must be >= 1");
                    row.emplace_back(static_cast<Eigen::Index>(idx - 1), val);  // 1-based on disk
                    raw.dim = std::max(raw.dim, static_cast<Eigen::Index>(idx));
                }
                raw.sparse.push_back(std::move(row));
                raw.labels.push_back(label);
            } else {
                std::vector<double> vals;
                std::istringstream ss(line);
                std::string cell;
                while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
                if (vals.size() < 2) throw std::invalid_argument("need at least one feature and a label");
                raw.labels.push_back(vals.back());
                vals.pop_back();
                if (raw.dim == 0) raw.dim = static_cast<Eigen::Index>(vals.size());
                if (raw.dim != static_cast<Eigen::Index>(vals.size())) {
                    throw std::invalid_argument("inconsistent column count");
                }
                raw.dense.push_back(std::move(vals));
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument(where + ": " + e.what());
        }
    }
    require(!raw.labels.empty(), origin + ": no data rows");
    return raw;
}

// Exactly two distinct label values are accepted; the smaller maps to -1.
inline void map_labels(std::vector<double>& labels, const std::string& origin) {
    std::set<double> distinct(labels.begin(), labels.end());
    require(distinct.size() == 2, origin + ": expected exactly two distinct label values, found " +
                                      std::to_string(distinct.size()));
    const double lo = *distinct.begin();
    for (double& l : labels) l = (l == lo) ? -1.0 : 1.0;
}

}  // namespace detail

/// Load a binary classification dataset from LIBSVM sparse text or dense CSV
/// (feature columns then one label column). Labels are mapped to {-1, +1}
/// with the smaller raw value becoming -1.
inline Dataset load_classification_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_classification_file: cannot open " + path);
    detail::RawRows raw = detail::parse_rows(in, path);
    detail::map_labels(raw.labels, path);

    Dataset data;
    const Eigen::Index n = static_cast<Eigen::Index>(raw.labels.size());
    data.labels = Eigen::Map<Vector>(raw.labels.data(), n);
    data.features = Matrix::Zero(n, raw.dim);
    if (raw.is_sparse) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (const auto& [j, v] : raw.sparse[static_cast<std::size_t>(i)]) data.features(i, j) = v;
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < raw.dim; ++j) {
                data.features(i, j) = raw.dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            }
        }
    }
    return data;
}

/// Deterministic seeded shuffle split: floor(0.7 n) training rows, the rest
/// test.
inline SplitDataset split_70_30(const Dataset& data, std::uint64_t seed) {
    const Eigen::Index n = data.features.rows();
    require(n >= 1, "split_70_30: empty dataset");
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    const std::vector<std::size_t> perm = rng.permutation(static_cast<std::size_t>(n));
    const Eigen::Index n_train = static_cast<Eigen::Index>(0.7 * static_cast<double>(n));

    SplitDataset out;
    out.train.features = Matrix(n_train, data.features.cols());
    out.train.labels = Vector(n_train);
    out.test.features = Matrix(n - n_train, data.features.cols());
    out.test.labels = Vector(n - n_train);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index src = static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]);
        if (i < n_train) {
            out.train.features.row(i) = data.features.row(src);
            out.train.labels[i] = data.labels[src];
        } else {
            out.test.features.row(i - n_train) = data.features.row(src);
            out.test.labels[i - n_train] = data.labels[src];
        }
    }
    return out;
}

struct SyntheticLogistic {
    Dataset data;
    Vector true_weights;
};

/// Standard-normal features, labels drawn from the logistic model under a
/// weight vector that is itself drawn (deterministically) from the seed.
inline SyntheticLogistic synth_logistic(Eigen::Index n, Eigen::Index dim, std::uint64_t seed,
                                        double weight_scale = 1.0) {
    require(n >= 1 && dim >= 1, "synth_logistic: n and dim must be positive");
    Rng rng(mix_seed(seed, 0x73796e7468ULL));
    SyntheticLogistic out;
    out.true_weights = weight_scale * rng.normal_vector(dim);
    out.data.features = Matrix(n, dim);
    out.data.labels = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < dim; ++j) out.data.features(i, j) = rng.normal();
        const double p = detail::sigmoid(out.data.features.row(i).dot(out.true_weights));
        out.data.labels[i] = (rng.uniform() < p) ? 1.0 : -1.0;
    }
    return out;
}

/// Fraction of correct sign predictions of x'w on a labeled set.
inline double classification_accuracy(const Dataset& data, const Eigen::Ref<const Vector>& w) {
    const Vector margins = data.features * w;
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < margins.size(); ++i) {
        const double pred = margins[i] >= 0.0 ? 1.0 : -1.0;
        if (pred == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(margins.size());
}

/// Accuracy of the particle-averaged predictive probability.
inline double predictive_accuracy(const Dataset& data, const Eigen::Ref<const Matrix>& particles) {
    Matrix margins = data.features * particles.transpose();  // n x m
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < margins.rows(); ++i) {
        double p = 0.0;
        for (Eigen::Index k = 0; k < margins.cols(); ++k) p += detail::sigmoid(margins(i, k));
        p /= static_cast<double>(margins.cols());
        const double pred = p >= 0.5 ? 1.0 : -1.0;
        if (pred == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(margins.rows());
}

}  // namespace sforge
