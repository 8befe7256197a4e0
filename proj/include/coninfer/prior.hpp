#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "types.hpp"

namespace coninfer {

/// Text prototype vectors. Several rows may belong to the same class when a
/// class is described by synonyms.
struct TextPrototypes {
    Matrix vectors;                 ///< C' x d
    std::vector<std::size_t> owner; ///< owner[j] = class index of row j
    std::size_t num_classes = 0;

    /// Checks finiteness, nonzero norms and that every class owns a row.
    void validate() const {
        if (owner.size() != static_cast<std::size_t>(vectors.rows())) {
            throw ShapeError("prototype owner map has " + std::to_string(owner.size()) + " entries for " +
                             std::to_string(vectors.rows()) + " rows");
        }
        std::vector<bool> owned(num_classes, false);
        for (Index j = 0; j < vectors.rows(); ++j) {
            if (!vectors.row(j).allFinite()) throw DegenerateInputError("prototype row " + std::to_string(j) + " is not finite");
            if (!(vectors.row(j).norm() > 0.0)) throw DegenerateInputError("prototype row " + std::to_string(j) + " has zero norm");
            const std::size_t k = owner[static_cast<std::size_t>(j)];
            if (k >= num_classes) throw ShapeError("prototype row " + std::to_string(j) + " owned by unknown class");
            owned[k] = true;
        }
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (!owned[k]) throw ShapeError("class " + std::to_string(k) + " owns no prototype row");
        }
    }

    /// Owner map for rows laid out class by class with `rows_per_class[k]` rows each.
    static std::vector<std::size_t> consecutive_owners(const std::vector<std::size_t>& rows_per_class) {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < rows_per_class.size(); ++k) out.insert(out.end(), rows_per_class[k], k);
        return out;
    }
};

enum class SynonymMode { max, mean };

struct PriorConfig {
    double tau = 0.01;
    SynonymMode synonym_mode = SynonymMode::max;
    unsigned threads = 1;
};

/// Cosine similarity of every feature row with every prototype row (N x C').
inline Matrix cosine_scores(const Matrix& features, const TextPrototypes& protos) {
    if (features.cols() != protos.vectors.cols()) {
        throw ShapeError("feature dimension " + std::to_string(features.cols()) + " != prototype dimension " +
                         std::to_string(protos.vectors.cols()));
    }
    const Vector row_norms = features.rowwise().norm();
    for (Index i = 0; i < features.rows(); ++i) {
        if (!std::isfinite(row_norms(i))) throw DegenerateInputError("feature row " + std::to_string(i) + " is not finite");
        if (row_norms(i) == 0.0) throw DegenerateInputError("feature row " + std::to_string(i) + " has zero norm");
    }
    const Matrix unit_protos = protos.vectors.rowwise().normalized();
    Matrix scores = (features.array().colwise() / row_norms.array()).matrix() * unit_protos.transpose();
    // Rounding can push |s| a hair past 1.
    return scores.cwiseMax(-1.0).cwiseMin(1.0);
}

/// Collapses per-prototype scores to one score per class.
inline Matrix aggregate_synonyms(const Matrix& scores, const TextPrototypes& protos, SynonymMode mode) {
    const Index n = scores.rows();
    const auto c = static_cast<Index>(protos.num_classes);
    Matrix out(n, c);
    if (mode == SynonymMode::max) {
        out.setConstant(-std::numeric_limits<double>::infinity());
        for (Index j = 0; j < scores.cols(); ++j) {
            const auto k = static_cast<Index>(protos.owner[static_cast<std::size_t>(j)]);
            out.col(k) = out.col(k).cwiseMax(scores.col(j));
        }
    } else {
        out.setZero();
        Vector counts = Vector::Zero(c);
        for (Index j = 0; j < scores.cols(); ++j) {
            const auto k = static_cast<Index>(protos.owner[static_cast<std::size_t>(j)]);
            out.col(k) += scores.col(j);
            counts(k) += 1.0;
        }
        out.array().rowwise() /= counts.transpose().array();
    }
    return out;
}

/// Row-wise softmax of scores / tau, evaluated with max subtraction.
inline ProbMatrix softmax_rows(const Matrix& scores, double tau, unsigned threads = 1) {
    if (!(tau > 0.0)) throw InputError("softmax temperature must be positive");
    ProbMatrix out(scores.rows(), scores.cols());
    parallel_for(static_cast<std::size_t>(scores.rows()), threads, [&](std::size_t r) {
        const auto i = static_cast<Index>(r);
        const auto logits = scores.row(i).array() / tau;
        const double peak = logits.maxCoeff();
        out.row(i) = (logits - peak).exp().matrix();
        out.row(i) /= out.row(i).sum();
    });
    return out;
}

/// Semantic prior: cosine scores, synonym fusion, then tempered softmax.
inline ProbMatrix encode_prior(const Matrix& features, const TextPrototypes& protos, const PriorConfig& cfg = {}) {
    protos.validate();
    const Matrix per_class = aggregate_synonyms(cosine_scores(features, protos), protos, cfg.synonym_mode);
    return softmax_rows(per_class, cfg.tau, cfg.threads);
}

/// Rejects priors that are not on the probability simplex.
inline void validate_prob_rows(const ProbMatrix& p, double tol = 1e-5) {
    for (Index i = 0; i < p.rows(); ++i) {
        const auto row = static_cast<std::size_t>(i);
        if (!p.row(i).allFinite()) throw SimplexError(row, "non-finite entry");
        if ((p.row(i).array() < 0.0).any()) throw SimplexError(row, "negative entry");
        const double s = p.row(i).sum();
        if (std::abs(s - 1.0) > tol) throw SimplexError(row, "row sums to " + std::to_string(s));
    }
}

} // namespace coninfer
