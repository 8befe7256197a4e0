#pragma once

// Seeded synthetic scenes plus reference implementations used as test oracles.
//
// The oracles below deliberately share no code with gmm.hpp: they work on
// nested std::vectors, invert covariances explicitly with Gauss-Jordan
// elimination and take determinants from the same elimination.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "types.hpp"

namespace coninfer::synth {

/// SplitMix64: the n-th output is a pure function of (seed, n), so streams are
/// reproducible on every platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection keeps the draw unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    /// Standard normal via Box-Muller; one output per two uniforms.
    double normal() {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Stream derived from this seed for an independent purpose.
    static SplitMix64 stream(std::uint64_t seed, std::uint64_t id) {
        SplitMix64 mixer(seed ^ (0xD1B54A32D192ED03ULL * (id + 1)));
        return SplitMix64(mixer.next());
    }

private:
    std::uint64_t state_;
};

struct SynthSpec {
    std::size_t clusters = 4;
    std::size_t dim = 8;
    std::size_t n_per_cluster = 500;
    /// Minimum pairwise distance between cluster centers.
    double center_spread = 6.0;
    /// Per-cluster isotropic variance.
    double cluster_cov = 1.0;
    /// Fraction of rows whose prior is replaced by the uniform distribution.
    double prior_noise = 0.0;
    /// Fraction of rows whose one-hot prior points at a wrong class.
    double prior_flip = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (clusters < 1 || dim < 1 || n_per_cluster < 1) throw InputError("synth: clusters, dim and n_per_cluster must be >= 1");
        if (!(prior_noise >= 0.0 && prior_noise <= 1.0) || !(prior_flip >= 0.0 && prior_flip <= 1.0)) {
            throw InputError("synth: prior_noise and prior_flip must lie in [0, 1]");
        }
        if (!(center_spread >= 0.0) || !(cluster_cov >= 0.0)) throw InputError("synth: spread and covariance must be >= 0");
    }
};

struct SynthScene {
    Matrix x;                        ///< N x d
    ProbMatrix prior;                ///< N x K, corrupted
    std::vector<std::size_t> labels; ///< true cluster per row
    Matrix centers;                  ///< K x d
};

/// Cluster centers with pairwise distance >= spread: scaled simplex vertices
/// (spread / sqrt(2) times the unit axes) when K <= d, otherwise an axis-aligned
/// lattice with spacing `spread`.
inline Matrix make_centers(std::size_t k, std::size_t d, double spread) {
    Matrix centers = Matrix::Zero(static_cast<Index>(k), static_cast<Index>(d));
    if (k <= d) {
        for (std::size_t c = 0; c < k; ++c) centers(static_cast<Index>(c), static_cast<Index>(c)) = spread / std::numbers::sqrt2;
        return centers;
    }
    std::size_t base = 2;
    while (std::pow(static_cast<double>(base), static_cast<double>(d)) < static_cast<double>(k)) ++base;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t rest = c;
        for (std::size_t j = 0; j < d; ++j) {
            centers(static_cast<Index>(c), static_cast<Index>(j)) = spread * static_cast<double>(rest % base);
            rest /= base;
        }
    }
    return centers;
}

/// Rows are shuffled, so any prefix is a fair sample of the clusters.
inline SynthScene generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t k = spec.clusters;
    const std::size_t n = k * spec.n_per_cluster;
    const auto d = static_cast<Index>(spec.dim);

    SynthScene s;
    s.centers = make_centers(k, spec.dim, spec.center_spread);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = SplitMix64::stream(spec.seed, 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    s.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) s.labels[i] = order[i] / spec.n_per_cluster;

    s.x.resize(static_cast<Index>(n), d);
    auto noise_rng = SplitMix64::stream(spec.seed, 1);
    const double sd = std::sqrt(spec.cluster_cov);
    for (std::size_t i = 0; i < n; ++i) {
        for (Index j = 0; j < d; ++j) {
            s.x(static_cast<Index>(i), j) = s.centers(static_cast<Index>(s.labels[i]), j) + sd * noise_rng.normal();
        }
    }

    // Flipped rows are chosen first, then noisy rows from the remainder.
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    auto prior_rng = SplitMix64::stream(spec.seed, 2);
    for (std::size_t i = n; i > 1; --i) std::swap(pick[i - 1], pick[prior_rng.below(i)]);
    const auto n_flip = static_cast<std::size_t>(std::llround(spec.prior_flip * static_cast<double>(n)));
    const auto n_noise =
        std::min(n - n_flip, static_cast<std::size_t>(std::llround(spec.prior_noise * static_cast<double>(n))));

    s.prior = ProbMatrix::Zero(static_cast<Index>(n), static_cast<Index>(k));
    for (std::size_t i = 0; i < n; ++i) s.prior(static_cast<Index>(i), static_cast<Index>(s.labels[i])) = 1.0;
    for (std::size_t j = 0; j < n_flip && k > 1; ++j) {
        const std::size_t i = pick[j];
        const std::size_t wrong = (s.labels[i] + 1 + prior_rng.below(k - 1)) % k;
        s.prior.row(static_cast<Index>(i)).setZero();
        s.prior(static_cast<Index>(i), static_cast<Index>(wrong)) = 1.0;
    }
    for (std::size_t j = n_flip; j < n_flip + n_noise; ++j) {
        s.prior.row(static_cast<Index>(pick[j])).setConstant(1.0 / static_cast<double>(k));
    }
    return s;
}

/// Fraction of rows whose argmax (ties to the lowest index) equals the label.
inline double argmax_accuracy(const Matrix& probs, const std::vector<std::size_t>& labels) {
    std::size_t hit = 0;
    for (Index i = 0; i < probs.rows(); ++i) {
        Index best = 0;
        for (Index c = 1; c < probs.cols(); ++c) {
            if (probs(i, c) > probs(i, best)) best = c;
        }
        if (static_cast<std::size_t>(best) == labels[static_cast<std::size_t>(i)]) ++hit;
    }
    return probs.rows() == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(probs.rows());
}

// ---------------------------------------------------------------------------
// Oracles

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct OracleParams {
    std::vector<Vec> means;
    std::vector<Mat> covs;
};

struct OracleEmResult {
    /// posteriors[t] is the E-step output of iteration t+1.
    std::vector<Mat> posteriors;
    OracleParams params;
};

/// Inverse and log|det| of a symmetric positive definite matrix via Gauss-Jordan
/// with partial pivoting. Throws SingularCovarianceError on a non-positive pivot product.
inline std::pair<Mat, double> oracle_inverse_logdet(Mat a) {
    const std::size_t d = a.size();
    Mat inv(d, Vec(d, 0.0));
    for (std::size_t i = 0; i < d; ++i) inv[i][i] = 1.0;
    double log_det = 0.0;
    int sign = 1;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        }
        if (a[piv][col] == 0.0) throw SingularCovarianceError("oracle: singular covariance");
        if (piv != col) {
            std::swap(a[piv], a[col]);
            std::swap(inv[piv], inv[col]);
            sign = -sign;
        }
        const double pivot = a[col][col];
        if (pivot < 0.0) sign = -sign;
        log_det += std::log(std::abs(pivot));
        for (std::size_t j = 0; j < d; ++j) {
            a[col][j] /= pivot;
            inv[col][j] /= pivot;
        }
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    if (sign < 0) throw SingularCovarianceError("oracle: covariance has negative determinant");
    return {inv, log_det};
}

inline double oracle_log_density(const Vec& x, const Vec& mean, const Mat& cov) {
    const auto [inv, log_det] = oracle_inverse_logdet(cov);
    const std::size_t d = x.size();
    double quad = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) quad += (x[a] - mean[a]) * inv[a][b] * (x[b] - mean[b]);
    }
    return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

inline Mat to_nested(const Matrix& m) {
    Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
    return out;
}

/// Weighted means and full covariances with eps added to the diagonal.
inline OracleParams oracle_moments(const Mat& x, const Mat& resp, double eps) {
    const std::size_t n = x.size();
    const std::size_t d = x.front().size();
    const std::size_t k = resp.front().size();
    OracleParams p;
    for (std::size_t c = 0; c < k; ++c) {
        double w = 0.0;
        Vec mean(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            w += resp[i][c];
            for (std::size_t j = 0; j < d; ++j) mean[j] += resp[i][c] * x[i][j];
        }
        if (w < 1e-8) throw SingularCovarianceError("oracle: component " + std::to_string(c) + " has no mass");
        for (auto& v : mean) v /= w;
        Mat cov(d, Vec(d, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t b = 0; b < d; ++b) cov[a][b] += resp[i][c] * (x[i][a] - mean[a]) * (x[i][b] - mean[b]);
            }
        }
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) cov[a][b] /= w;
            cov[a][a] += eps;
        }
        p.means.push_back(std::move(mean));
        p.covs.push_back(std::move(cov));
    }
    return p;
}

/// Posterior over components with equal weights.
inline Mat oracle_posterior(const Mat& x, const OracleParams& p) {
    const std::size_t k = p.means.size();
    Mat out;
    out.reserve(x.size());
    for (const auto& row : x) {
        Vec logd(k);
        for (std::size_t c = 0; c < k; ++c) logd[c] = oracle_log_density(row, p.means[c], p.covs[c]);
        double peak = logd[0];
        for (double v : logd) peak = std::max(peak, v);
        double total = 0.0;
        for (auto& v : logd) total += (v = std::exp(v - peak));
        for (auto& v : logd) v /= total;
        out.push_back(std::move(logd));
    }
    return out;
}

/// Plain EM with fixed uniform weights and full covariances, for small instances.
inline OracleEmResult oracle_em(const Mat& x, OracleParams init, std::size_t iters, double eps) {
    OracleEmResult r;
    r.params = std::move(init);
    for (std::size_t t = 0; t < iters; ++t) {
        r.posteriors.push_back(oracle_posterior(x, r.params));
        r.params = oracle_moments(x, r.posteriors.back(), eps);
    }
    return r;
}

/// KL(z||p) + KL(z||q) with 0 log 0 = 0; +inf when z puts mass where p or q has none.
inline double oracle_pair_kl(const Vec& z, const Vec& p, const Vec& q) {
    double j = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        if (z[k] <= 0.0) continue;
        if (p[k] <= 0.0 || q[k] <= 0.0) return std::numeric_limits<double>::infinity();
        j += z[k] * (std::log(z[k] / p[k]) + std::log(z[k] / q[k]));
    }
    return j;
}

/// Brute-force minimizer of KL(z||p) + KL(z||q) over a simplex grid (C <= 3).
inline Vec oracle_argmin_z(const Vec& p, const Vec& q, std::size_t grid_steps) {
    const std::size_t c = p.size();
    if (c == 0 || c > 3 || q.size() != c) throw InputError("oracle_argmin_z supports 1 to 3 classes");
    if (grid_steps < 1 || grid_steps > 2000) throw InputError("oracle_argmin_z: grid_steps must be in [1, 2000]");
    if (c == 1) return {1.0};

    const auto steps = static_cast<double>(grid_steps);
    Vec best;
    double best_j = std::numeric_limits<double>::infinity();
    auto consider = [&](Vec z) {
        const double j = oracle_pair_kl(z, p, q);
        if (j < best_j) {
            best_j = j;
            best = std::move(z);
        }
    };
    for (std::size_t a = 0; a <= grid_steps; ++a) {
        if (c == 2) {
            consider({static_cast<double>(a) / steps, static_cast<double>(grid_steps - a) / steps});
            continue;
        }
        for (std::size_t b = 0; a + b <= grid_steps; ++b) {
            consider({static_cast<double>(a) / steps, static_cast<double>(b) / steps,
                      static_cast<double>(grid_steps - a - b) / steps});
        }
    }
    return best;
}

} // namespace coninfer::synth
