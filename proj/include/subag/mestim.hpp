#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "subag/dataset.hpp"
#include "subag/error.hpp"
#include "subag/prox.hpp"

namespace subag {

using Index = Eigen::Index;

struct SubsampleSet {
    std::vector<Index> indices;  ///< sorted, unique, in [0, n)
    Index k = 0;
    std::uint64_t seed = 0;
};

/// One subsample of size sizes[m] per component, drawn without replacement from its own stream.
std::vector<SubsampleSet> draw_subsamples(Index n, const std::vector<Index>& sizes, std::uint64_t seed);

struct FitOptions {
    double tol = 1e-8;
    int max_iter = 50000;
    /// Fit the lambda -> 0+ limit of the penalty shape (needed when k < p without a strongly convex penalty).
    bool interpolate = false;
    int power_iters = 20;
    /// Keep the objective after every accepted step.
    bool track_objective = false;
};

struct FitResult {
    Eigen::VectorXd theta_hat;
    Eigen::VectorXd residuals;      ///< y_I - X_I theta_hat
    Eigen::VectorXd loss_grad_vec;  ///< loss'(residuals)
    std::vector<Index> active_set;  ///< theta_hat_j != 0
    std::vector<Index> inlier_set;  ///< loss''(r_i) > 0
    double kkt_residual = 0.0;
    int iterations = 0;
    /// Penalty actually used; the last homotopy level in interpolation mode.
    RegSpec reg = RegSpec::none();
    LossSpec loss = LossSpec::square();
    std::vector<double> objective;
};

/// Minimizes sum_i loss(y_i - x_i' theta) + sum_j reg(theta_j).
FitResult fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const LossSpec& loss, const RegSpec& reg,
              const FitOptions& opts = {});

/// Stationarity defect: max_j distance of (X' loss'(r))_j from the subdifferential of reg at theta_j.
double kkt_residual(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                    const LossSpec& loss, const RegSpec& reg);

/// Component of an ensemble with an integer subsample size.
struct FitSpec {
    LossSpec loss;
    RegSpec reg;
    Index k;
};

struct EnsembleFit {
    std::vector<SubsampleSet> subsets;
    std::vector<FitSpec> specs;
    std::vector<FitResult> fits;
    Eigen::VectorXd theta_tilde;

    std::size_t size() const noexcept { return fits.size(); }
};

/// Raised when some components fail; `failed()` lists them.
class EnsembleFitError : public Error {
public:
    EnsembleFitError(const std::string& what, std::vector<std::size_t> failed)
        : Error(what), failed_(std::move(failed)) {}
    const std::vector<std::size_t>& failed() const noexcept { return failed_; }

private:
    std::vector<std::size_t> failed_;
};

EnsembleFit ensemble_fit(const Dataset& ds, const std::vector<FitSpec>& specs, std::uint64_t seed,
                         const FitOptions& opts = {});

/// Same, on subsamples supplied by the caller.
EnsembleFit ensemble_fit(const Dataset& ds, const std::vector<FitSpec>& specs, std::vector<SubsampleSet> subsets,
                         const FitOptions& opts = {});

/// Average of the first m component coefficients.
Eigen::VectorXd average_first(const EnsembleFit& ens, std::size_t m);

/// ||theta_tilde - theta_star||^2 / p.
double empirical_risk(const EnsembleFit& ens, const Eigen::VectorXd& theta_star);
double empirical_risk(const Eigen::VectorXd& theta, const Eigen::VectorXd& theta_star);

/// Rows of X (or entries of y) listed in `idx`.
Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Index>& idx);
Eigen::VectorXd take_rows(const Eigen::VectorXd& y, const std::vector<Index>& idx);

}  // namespace subag
