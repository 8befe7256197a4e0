#pragma once

// Context-aware calibration of per-patch class probabilities.
//
// The prior P (from a vision-language model) and the posterior Q of a
// class-aligned Gaussian mixture over context features are fused into a
// consensus Z, which in turn re-estimates the mixture. Each iteration runs
// E-step -> fuse -> M-step, in that order.

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "error.hpp"
#include "gmm.hpp"
#include "parallel.hpp"
#include "prior.hpp"
#include "types.hpp"

namespace coninfer {

struct SolverConfig {
    std::size_t iters = 10;
    /// Floor applied to p and q inside the KL terms only.
    double log_clamp = 1e-12;
    /// Stop once max |z_new - z_old| drops below this. 0 disables.
    double early_stop_tol = 0.0;
};

/// Objective and step size per iteration. Entry 0 describes the starting point
/// (Z = P against the initial mixture posterior); entry l is iteration l.
struct RunTrace {
    std::vector<double> objective;
    std::vector<double> max_z_delta;
    /// Rows where p and q had no overlapping mass; those rows fell back to p.
    std::size_t degenerate_rows = 0;
    /// Mixture components reset to global moments over the whole run.
    std::size_t recovered_components = 0;

    std::size_t iterations() const { return objective.empty() ? 0 : objective.size() - 1; }
};

struct ConsensusResult {
    ProbMatrix z;
    GmmParams params;
    RunTrace trace;
};

/// What an observer passed to run() sees after each iteration's fuse step.
struct IterationView {
    std::size_t iteration; ///< 1-based
    const ProbMatrix& q;
    const ProbMatrix& z;
    double objective;
};

struct NoObserver {
    void operator()(const IterationView&) const {}
};

/// Product mass below which a row counts as degenerate in fuse().
inline constexpr double kDegenerateRowMass = 1e-300;

/// z_ik = p_ik q_ik / sum_l p_il q_il. Rows with no overlap fall back to the normalized p row.
inline ProbMatrix fuse(const ProbMatrix& p, const ProbMatrix& q, std::size_t* degenerate_rows = nullptr,
                       unsigned threads = 1) {
    if (p.rows() != q.rows() || p.cols() != q.cols()) {
        throw ShapeError("fuse: prior is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                         ", posterior is " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()));
    }
    ProbMatrix z(p.rows(), p.cols());
    std::vector<char> fallback(static_cast<std::size_t>(p.rows()), 0);
    parallel_for(static_cast<std::size_t>(p.rows()), threads, [&](std::size_t r) {
        const auto i = static_cast<Index>(r);
        z.row(i) = p.row(i).cwiseProduct(q.row(i));
        const double mass = z.row(i).sum();
        if (mass < kDegenerateRowMass || !std::isfinite(mass)) {
            z.row(i) = p.row(i) / p.row(i).sum();
            fallback[r] = 1;
        } else {
            z.row(i) /= mass;
        }
    });
    if (degenerate_rows) *degenerate_rows += static_cast<std::size_t>(std::count(fallback.begin(), fallback.end(), 1));
    return z;
}

/// J = sum_i KL(z_i || p_i) + KL(z_i || q_i), with p and q floored at log_clamp and 0 log 0 = 0.
inline double objective(const ProbMatrix& z, const ProbMatrix& p, const ProbMatrix& q, double log_clamp = 1e-12) {
    if (z.rows() != p.rows() || z.rows() != q.rows() || z.cols() != p.cols() || z.cols() != q.cols()) {
        throw ShapeError("objective: Z, P and Q must have the same shape");
    }
    double total = 0.0;
    for (Index i = 0; i < z.rows(); ++i) {
        for (Index k = 0; k < z.cols(); ++k) {
            const double zk = z(i, k);
            if (zk <= 0.0) continue;
            total += zk * (2.0 * std::log(zk) - std::log(std::max(p(i, k), log_clamp)) -
                           std::log(std::max(q(i, k), log_clamp)));
        }
    }
    return total;
}

/// max_ik |a_ik - b_ik|
inline double max_abs_delta(const ProbMatrix& a, const ProbMatrix& b) {
    return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

namespace detail {

struct PreparedRun {
    Matrix x;
    double reg_eps;
};

inline PreparedRun prepare_run(const Matrix& x, const ProbMatrix& p, const GmmConfig& gcfg, const SolverConfig& scfg) {
    if (x.rows() != p.rows()) {
        throw ShapeError("features have " + std::to_string(x.rows()) + " rows, prior has " + std::to_string(p.rows()));
    }
    if (p.cols() < 1) throw ShapeError("prior needs at least one class column");
    if (scfg.iters < 1) throw InputError("iteration count must be >= 1");
    if (!x.allFinite()) throw DegenerateInputError("features contain non-finite values");
    validate_prob_rows(p);
    PreparedRun prep{prepare_features(x, gcfg), 0.0};
    prep.reg_eps = resolve_reg_eps(prep.x, gcfg);
    return prep;
}

} // namespace detail

/// Joint optimization of the consensus and the mixture parameters.
///
/// The mixture is initialized from the prior, then each of `scfg.iters`
/// iterations computes Q by an E-step, sets Z = fuse(P, Q), and re-fits the
/// mixture with Z as responsibilities.
template <typename Observer = NoObserver>
ConsensusResult run(const Matrix& features, const ProbMatrix& prior, const GmmConfig& gcfg = {},
                    const SolverConfig& scfg = {}, Observer&& observer = {}) {
    const auto prep = detail::prepare_run(features, prior, gcfg, scfg);
    const Matrix& x = prep.x;
    const unsigned threads = gcfg.threads;

    ConsensusResult result;
    RunTrace& trace = result.trace;
    result.params = init_from_prior(x, prior, gcfg.cov_mode, prep.reg_eps, threads);
    trace.recovered_components += result.params.recovered_components;

    ProbMatrix z = prior;
    for (std::size_t l = 1; l <= scfg.iters; ++l) {
        const ProbMatrix q = e_step(x, result.params, threads);
        if (l == 1) {
            trace.objective.push_back(objective(prior, prior, q, scfg.log_clamp));
            trace.max_z_delta.push_back(0.0);
        }
        ProbMatrix z_next = fuse(prior, q, &trace.degenerate_rows, threads);
        const double j = objective(z_next, prior, q, scfg.log_clamp);
        const double delta = max_abs_delta(z_next, z);
        trace.objective.push_back(j);
        trace.max_z_delta.push_back(delta);
        z = std::move(z_next);
        observer(IterationView{l, q, z, j});

        result.params = m_step(x, z, gcfg.cov_mode, prep.reg_eps, threads);
        trace.recovered_components += result.params.recovered_components;
        if (scfg.early_stop_tol > 0.0 && delta < scfg.early_stop_tol) break;
    }
    result.z = std::move(z);
    return result;
}

/// Two-stage variant: plain EM on the features starting from the prior, then a
/// single fusion of the last E-step posterior with the prior.
///
/// The trace reports, per EM iteration, the objective the fusion would reach
/// if EM stopped there.
template <typename Observer = NoObserver>
ConsensusResult run_decoupled(const Matrix& features, const ProbMatrix& prior, const GmmConfig& gcfg = {},
                              const SolverConfig& scfg = {}, Observer&& observer = {}) {
    const auto prep = detail::prepare_run(features, prior, gcfg, scfg);
    const Matrix& x = prep.x;
    const unsigned threads = gcfg.threads;

    ConsensusResult result;
    RunTrace& trace = result.trace;
    result.params = init_from_prior(x, prior, gcfg.cov_mode, prep.reg_eps, threads);
    trace.recovered_components += result.params.recovered_components;

    ProbMatrix q;
    ProbMatrix z = prior;
    for (std::size_t l = 1; l <= scfg.iters; ++l) {
        q = e_step(x, result.params, threads);
        if (l == 1) {
            trace.objective.push_back(objective(prior, prior, q, scfg.log_clamp));
            trace.max_z_delta.push_back(0.0);
        }
        std::size_t scratch = 0;
        ProbMatrix z_next = fuse(prior, q, &scratch, threads);
        const double j = objective(z_next, prior, q, scfg.log_clamp);
        const double delta = max_abs_delta(z_next, z);
        trace.objective.push_back(j);
        trace.max_z_delta.push_back(delta);
        z = std::move(z_next);
        observer(IterationView{l, q, z, j});

        result.params = m_step(x, q, gcfg.cov_mode, prep.reg_eps, threads);
        trace.recovered_components += result.params.recovered_components;
        if (scfg.early_stop_tol > 0.0 && delta < scfg.early_stop_tol) break;
    }
    result.z = fuse(prior, q, &trace.degenerate_rows, threads);
    return result;
}

/// Writes "iteration,objective,max_z_delta" rows.
template <typename Stream>
void write_trace_csv(Stream& out, const RunTrace& trace, bool header = true) {
    const auto saved = out.precision(17);
    if (header) out << "iteration,objective,max_z_delta\n";
    for (std::size_t l = 0; l < trace.objective.size(); ++l) {
        out << l << ',' << trace.objective[l] << ',' << trace.max_z_delta[l] << '\n';
    }
    out.precision(saved);
}

} // namespace coninfer
