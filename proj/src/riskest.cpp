#include "subag/riskest.hpp"

#include <algorithm>
#include <cmath>

namespace subag {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

/// tr[(A + lambda I)^{-1} A] for A = Xs' diag(w) Xs, through whichever Gram matrix is smaller.
double resolvent_trace(const MatrixXd& Xs, const VectorXd& w, double lambda) {
    const Index rows = Xs.rows(), cols = Xs.cols();
    if (rows == 0 || cols == 0) return 0.0;
    MatrixXd K;
    if (cols <= rows) {
        K = Xs.transpose() * w.asDiagonal() * Xs;
    } else {
        const VectorXd sw = w.cwiseSqrt();
        const MatrixXd Z = sw.asDiagonal() * Xs;
        K = Z * Z.transpose();
    }
    MatrixXd A = K;
    A.diagonal().array() += lambda;
    Eigen::LDLT<MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * std::max(1.0, K.diagonal().maxCoeff())))
        throw NumericError("degrees-of-freedom system is singular");
    return ldlt.solve(K).trace();
}

}  // namespace

DfReport compute_df(const FitResult& fit, const MatrixXd& X_I, const LossSpec& loss, const RegSpec& reg) {
    const Index k = X_I.rows();
    if (fit.theta_hat.size() != X_I.cols() || fit.residuals.size() != k)
        throw DomainError("fit does not match the subsample design");
    const bool square = loss.kind() == LossSpec::Kind::Square;

    // Observation weights loss''(r_i): 1 for square loss, 1/rho on inliers for Huber.
    VectorXd w(k);
    for (Index i = 0; i < k; ++i) w(i) = loss.second(fit.residuals(i));
    const double tr_d = w.sum();

    DfReport out;
    const std::string lname = square ? "square" : "huber";
    const bool lasso_like = reg.lambda2() > 0.0 && reg.lambda1() == 0.0;
    if (lasso_like) {
        out.df = static_cast<double>(fit.active_set.size());
        out.formula_used = lname + "+lasso";
    } else if (reg.lambda2() > 0.0) {
        MatrixXd Xs(k, static_cast<Index>(fit.active_set.size()));
        for (std::size_t j = 0; j < fit.active_set.size(); ++j) Xs.col(static_cast<Index>(j)) = X_I.col(fit.active_set[j]);
        out.df = resolvent_trace(Xs, w, reg.lambda1());
        out.formula_used = lname + "+elastic_net";
    } else {
        // Ridge row; lambda1 = 0 covers unpenalized fits with a nonsingular weighted Gram matrix.
        if (reg.lambda1() == 0.0 && X_I.cols() > k) {
            // Interpolator: the fit reproduces y_I, so df = k.
            out.df = static_cast<double>(k);
        } else {
            out.df = resolvent_trace(X_I, w, reg.lambda1());
        }
        out.formula_used = lname + (reg.lambda1() > 0.0 ? "+ridge" : "+none");
    }
    // tr[V] = tr[D] - tr[D X J] and tr[D X J] = df * (loss'' on inliers): (|T| - df) / rho for Huber.
    const double scale = square ? 1.0 : 1.0 / loss.rho();
    out.tr_v = std::max(0.0, tr_d - scale * out.df);
    return out;
}

DfReport compute_df(const FitResult& fit, const MatrixXd& X_I) { return compute_df(fit, X_I, fit.loss, fit.reg); }

double est_component(const MatrixXd& X, const VectorXd& y, const FitResult& fitA, const FitResult& fitB,
                     const SubsampleSet& I, const SubsampleSet& It, const DfReport& dfA, const DfReport& dfB) {
    const Index n = X.rows();
    if (y.size() != n) throw DomainError("response length does not match the design");
    auto correction = [](const DfReport& d, const SubsampleSet& s) {
        if (d.tr_v < 1e-8 * static_cast<double>(s.k))
            throw DegenerateCorrection("residual degrees of freedom vanish (interpolating fit); df / tr[V] undefined");
        return d.df / d.tr_v;
    };
    const double ca = correction(dfA, I), cb = correction(dfB, It);
    VectorXd a = y - X * fitA.theta_hat;
    VectorXd b = y - X * fitB.theta_hat;
    // Subsample residuals line up with the sorted index lists.
    for (std::size_t j = 0; j < I.indices.size(); ++j)
        a(I.indices[j]) += ca * fitA.loss_grad_vec(static_cast<Index>(j));
    for (std::size_t j = 0; j < It.indices.size(); ++j)
        b(It.indices[j]) += cb * fitB.loss_grad_vec(static_cast<Index>(j));
    return a.dot(b) / static_cast<double>(n);
}

const char* to_string(Guarantee g) noexcept { return g == Guarantee::Proved ? "proved" : "empirical"; }

EstReport est_ensemble(const EnsembleFit& ens, const Dataset& ds) { return est_ensemble(ens, ds, ens.size()); }

EstReport est_ensemble(const EnsembleFit& ens, const Dataset& ds, std::size_t M) {
    if (M == 0 || M > ens.size()) throw DomainError("requested more components than were fit");
    EstReport rep;
    rep.guarantee = Guarantee::Proved;
    for (std::size_t m = 0; m < M; ++m) {
        rep.df.push_back(compute_df(ens.fits[m], take_rows(ds.X, ens.subsets[m].indices)));
        if (!ens.fits[m].reg.strongly_convex()) rep.guarantee = Guarantee::Empirical;
    }
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t l = m; l < M; ++l) {
            const double v = est_component(ds.X, ds.y, ens.fits[m], ens.fits[l], ens.subsets[m], ens.subsets[l],
                                           rep.df[m], rep.df[l]);
            s += (l == m ? 1.0 : 2.0) * v;
        }
    }
    rep.est = s / (static_cast<double>(M) * static_cast<double>(M));
    return rep;
}

}  // namespace subag
