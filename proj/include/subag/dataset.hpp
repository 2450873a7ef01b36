#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

#include "subag/distributions.hpp"

namespace subag {

/// Simulated linear model y = X theta_star + noise with X_ij ~ N(0, 1/p).
struct Dataset {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd theta_star;
    Eigen::VectorXd noise;
    Eigen::Index n = 0;
    Eigen::Index p = 0;
    std::uint64_t seed = 0;
};

/// X, theta and noise come from independent streams derived from `seed`.
Dataset gen_data(Eigen::Index n, Eigen::Index p, const SignalDist& signal, const NoiseDist& noise,
                 std::uint64_t seed);

/**
 * Writes `<stem>.bin` (little-endian float64: X row-major, then y, then theta_star)
 * and `<stem>.json` with n, p, seed and the distributions.
 */
void save_dataset(const Dataset& ds, const SignalDist& signal, const NoiseDist& noise,
                  const std::filesystem::path& stem);

/// Reads back the pair written by save_dataset. The noise vector is recomputed as y - X theta.
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace subag
