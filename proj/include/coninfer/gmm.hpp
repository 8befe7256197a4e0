#pragma once

// Gaussian mixture with one component per class and fixed uniform weights.
// Mixture weights never change, so they cancel out of every posterior.
//
// Work is split into (component, row block) tasks with a fixed block size, and
// every reduction runs in the same order whatever the thread count, so results
// are bitwise identical for any `threads` value.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "types.hpp"

namespace coninfer {

enum class CovMode { full, diag };

struct GmmConfig {
    CovMode cov_mode = CovMode::full;
    /// Diagonal loading. When unset, 1e-6 times the mean per-dimension feature variance.
    std::optional<double> reg_eps;
    bool l2_normalize = false;
    unsigned threads = 1;
};

struct GmmParams {
    CovMode cov_mode = CovMode::full;
    double reg_eps = 0.0;
    Matrix means; ///< K x d
    /// Per component: d x d covariance (full) or d x 1 variances (diag). Loading already applied.
    std::vector<Eigen::MatrixXd> covs;
    /// Components that were reset to the global moments when these parameters were fit.
    std::size_t recovered_components = 0;

    std::size_t components() const { return static_cast<std::size_t>(means.rows()); }
    Index dim() const { return means.cols(); }
};

/// Total responsibility below which a component is treated as empty.
inline constexpr double kEmptyComponentMass = 1e-8;

namespace detail {

inline constexpr Index kRowBlock = 512;

inline Index row_blocks(Index n) { return (n + kRowBlock - 1) / kRowBlock; }

struct WeightedMoments {
    double weight = 0.0;
    Vector mean;
    Eigen::MatrixXd cov; // d x d or d x 1
};

// Weighted mean and (co)variance about that mean, accumulated block by block in
// row order. No loading applied here.
inline WeightedMoments weighted_moments(const Matrix& x, const Eigen::Ref<const Vector>& w, CovMode mode) {
    WeightedMoments m;
    const Index n = x.rows();
    const Index d = x.cols();
    m.weight = w.sum();
    m.mean = (x.transpose() * w) / m.weight;
    m.cov = mode == CovMode::full ? Eigen::MatrixXd::Zero(d, d) : Eigen::MatrixXd::Zero(d, 1);
    for (Index b = 0; b < n; b += kRowBlock) {
        const Index len = std::min(kRowBlock, n - b);
        const Matrix centered = x.middleRows(b, len).rowwise() - m.mean.transpose();
        const auto wb = w.segment(b, len);
        if (mode == CovMode::full) {
            const Matrix scaled = centered.array().colwise() * wb.array();
            m.cov.noalias() += centered.transpose() * scaled;
        } else {
            m.cov.col(0) += (centered.array().square().colwise() * wb.array()).colwise().sum().transpose().matrix();
        }
    }
    m.cov /= m.weight;
    if (mode == CovMode::full) m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
    return m;
}

inline void load_diagonal(Eigen::MatrixXd& cov, CovMode mode, double eps) {
    if (mode == CovMode::full) {
        cov.diagonal().array() += eps;
    } else {
        cov.array() += eps;
    }
}

} // namespace detail

/// 1e-6 times the mean per-dimension variance of the features; 1e-6 if the features are constant.
inline double default_reg_eps(const Matrix& x) {
    if (x.rows() == 0) return 1e-6;
    const Matrix centered = x.rowwise() - x.colwise().mean();
    const double mean_var = centered.array().square().colwise().sum().mean() / static_cast<double>(x.rows());
    return mean_var > 0.0 && std::isfinite(mean_var) ? 1e-6 * mean_var : 1e-6;
}

inline double resolve_reg_eps(const Matrix& x, const GmmConfig& cfg) {
    const double eps = cfg.reg_eps.value_or(default_reg_eps(x));
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw InputError("covariance regularization must be a finite value >= 0");
    if (cfg.cov_mode == CovMode::diag && eps == 0.0) throw InputError("diag covariance mode needs reg_eps > 0");
    return eps;
}

/// Optional L2 row normalization applied before any fitting.
inline Matrix prepare_features(const Matrix& x, const GmmConfig& cfg) {
    if (!cfg.l2_normalize) return x;
    Matrix out = x;
    for (Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n > 0.0) out.row(i) /= n;
    }
    return out;
}

/// M-step: re-estimates means and covariances with `resp` as soft responsibilities.
///
/// A component whose total responsibility is below kEmptyComponentMass is reset to
/// the global mean and covariance of x.
inline GmmParams m_step(const Matrix& x, const ProbMatrix& resp, CovMode mode, double reg_eps, unsigned threads = 1) {
    if (resp.rows() != x.rows()) {
        throw ShapeError("responsibilities have " + std::to_string(resp.rows()) + " rows, features have " +
                         std::to_string(x.rows()));
    }
    if (resp.cols() < 1) throw ShapeError("need at least one mixture component");
    if (x.rows() < 1) throw ShapeError("need at least one feature row");

    const Index k_count = resp.cols();
    GmmParams params;
    params.cov_mode = mode;
    params.reg_eps = reg_eps;
    params.means.resize(k_count, x.cols());
    params.covs.resize(static_cast<std::size_t>(k_count));

    std::vector<char> empty(static_cast<std::size_t>(k_count), 0);
    const Matrix resp_cols = resp; // row-major copy; columns are read as strided views below
    parallel_for(static_cast<std::size_t>(k_count), threads, [&](std::size_t k) {
        const Vector w = resp_cols.col(static_cast<Index>(k));
        if (!(w.sum() >= kEmptyComponentMass)) {
            empty[k] = 1;
            return;
        }
        auto m = detail::weighted_moments(x, w, mode);
        detail::load_diagonal(m.cov, mode, reg_eps);
        params.means.row(static_cast<Index>(k)) = m.mean.transpose();
        params.covs[k] = std::move(m.cov);
    });

    if (std::any_of(empty.begin(), empty.end(), [](char e) { return e != 0; })) {
        auto global = detail::weighted_moments(x, Vector::Ones(x.rows()), mode);
        detail::load_diagonal(global.cov, mode, reg_eps);
        for (std::size_t k = 0; k < empty.size(); ++k) {
            if (!empty[k]) continue;
            params.means.row(static_cast<Index>(k)) = global.mean.transpose();
            params.covs[k] = global.cov;
            ++params.recovered_components;
            logger().info("empty mixture component {} reset to global moments", k);
        }
    }
    return params;
}

/// Initial parameters from the semantic prior. Identical to an M-step with the prior as responsibilities.
inline GmmParams init_from_prior(const Matrix& x, const ProbMatrix& prior, CovMode mode, double reg_eps,
                                 unsigned threads = 1) {
    return m_step(x, prior, mode, reg_eps, threads);
}

/// N x K matrix of log N(x_i | mu_k, Sigma_k).
inline Matrix log_density(const Matrix& x, const GmmParams& params, unsigned threads = 1) {
    const Index d = x.cols();
    if (d != params.dim()) {
        throw ShapeError("features have dimension " + std::to_string(d) + ", mixture has " + std::to_string(params.dim()));
    }
    const auto k_count = params.components();
    const double log_2pi = std::log(2.0 * std::numbers::pi);

    // Per component: inverse Cholesky factor (full) or inverse std devs (diag), and log det.
    std::vector<Eigen::MatrixXd> whiten(k_count);
    std::vector<double> log_det(k_count, 0.0);
    parallel_for(k_count, threads, [&](std::size_t k) {
        const auto& cov = params.covs[k];
        if (params.cov_mode == CovMode::full) {
            Eigen::LLT<Eigen::MatrixXd> llt(cov);
            if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
                throw SingularCovarianceError("covariance of component " + std::to_string(k) +
                                              " is not positive definite after regularization");
            }
            log_det[k] = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
            whiten[k] = llt.matrixL().solve(Eigen::MatrixXd::Identity(d, d));
        } else {
            if (!(cov.array() > 0.0).all()) {
                throw SingularCovarianceError("variance of component " + std::to_string(k) + " is not positive");
            }
            log_det[k] = cov.array().log().sum();
            whiten[k] = cov.array().rsqrt().matrix();
        }
    });

    Matrix out(x.rows(), static_cast<Index>(k_count));
    const auto blocks = static_cast<std::size_t>(detail::row_blocks(x.rows()));
    parallel_for(k_count * blocks, threads, [&](std::size_t task) {
        const std::size_t k = task / blocks;
        const Index b = static_cast<Index>(task % blocks) * detail::kRowBlock;
        const Index len = std::min(detail::kRowBlock, x.rows() - b);
        const Matrix centered = x.middleRows(b, len).rowwise() - params.means.row(static_cast<Index>(k));
        Vector maha;
        if (params.cov_mode == CovMode::full) {
            // ||L^{-1}(x - mu)||^2, one row per patch.
            const Matrix white = centered * whiten[k].transpose();
            maha = white.rowwise().squaredNorm();
        } else {
            maha = (centered.array().rowwise() * whiten[k].col(0).transpose().array()).square().rowwise().sum();
        }
        out.col(static_cast<Index>(k)).segment(b, len) =
            (-0.5 * (static_cast<double>(d) * log_2pi + log_det[k] + maha.array())).matrix();
    });
    if (!out.allFinite()) throw SingularCovarianceError("non-finite log density");
    return out;
}

/// Row-wise softmax of log densities. Uniform mixture weights cancel.
inline ProbMatrix posterior_from_log_density(const Matrix& logd, unsigned threads = 1) {
    ProbMatrix q(logd.rows(), logd.cols());
    parallel_for(static_cast<std::size_t>(logd.rows()), threads, [&](std::size_t r) {
        const auto i = static_cast<Index>(r);
        const double peak = logd.row(i).maxCoeff();
        q.row(i) = (logd.row(i).array() - peak).exp().matrix();
        q.row(i) /= q.row(i).sum();
    });
    return q;
}

/// E-step: posterior over components for every patch.
inline ProbMatrix e_step(const Matrix& x, const GmmParams& params, unsigned threads = 1) {
    return posterior_from_log_density(log_density(x, params, threads), threads);
}

} // namespace coninfer
