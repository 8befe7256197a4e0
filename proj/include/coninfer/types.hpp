#pragma once

#include <cstddef>

#include <Eigen/Dense>

namespace coninfer {

/// Dense row-major matrix; rows are patches throughout the engine.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// N x d patch features.
using FeatureMatrix = Matrix;

/// N x C row-stochastic matrix. Used for priors, GMM posteriors and consensus alike.
using ProbMatrix = Matrix;

using Index = Eigen::Index;

} // namespace coninfer

#include <cstdint>
#include <vector>

namespace coninfer {

/// Dense 2-D map of class indices, row-major.
struct LabelMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;

    LabelMask() = default;
    LabelMask(std::size_t r, std::size_t c, std::uint8_t fill = 0)
        : rows(r), cols(c), pixels(r * c, fill) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return pixels[r * cols + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return pixels[r * cols + c]; }

    friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

} // namespace coninfer
