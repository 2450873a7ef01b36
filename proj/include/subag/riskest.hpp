#pragma once

#include <string>

#include <Eigen/Dense>

#include "subag/dataset.hpp"
#include "subag/mestim.hpp"

namespace subag {

struct DfReport {
    double df = 0.0;
    double tr_v = 0.0;  ///< residual degrees of freedom tr[V]
    std::string formula_used;
};

/// Closed-form df and tr[V] for square/Huber loss with ridge, lasso or elastic-net penalty.
DfReport compute_df(const FitResult& fit, const Eigen::MatrixXd& X_I, const LossSpec& loss, const RegSpec& reg);

/// Uses the loss and penalty recorded in the fit.
DfReport compute_df(const FitResult& fit, const Eigen::MatrixXd& X_I);

/**
 * (1/n) sum_i (r_i + 1{i in I} (df / trV) loss'(r_i)) (r~_i + 1{i in I~} (df~ / trV~) loss~'(r~_i)),
 * with r_i = y_i - x_i' theta_hat over the full sample.
 */
double est_component(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const FitResult& fitA,
                     const FitResult& fitB, const SubsampleSet& I, const SubsampleSet& It, const DfReport& dfA,
                     const DfReport& dfB);

enum class Guarantee { Proved, Empirical };

const char* to_string(Guarantee g) noexcept;

struct EstReport {
    double est = 0.0;
    /// Consistency is proved only when every penalty is strongly convex.
    Guarantee guarantee = Guarantee::Empirical;
    std::vector<DfReport> df;
};

/// (1/M^2) sum over all ordered pairs (m, l), diagonal included.
EstReport est_ensemble(const EnsembleFit& ens, const Dataset& ds);

/// Same, restricted to the first m components.
EstReport est_ensemble(const EnsembleFit& ens, const Dataset& ds, std::size_t m);

}  // namespace subag
