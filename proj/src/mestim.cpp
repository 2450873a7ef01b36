#include "subag/mestim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>

#include "subag/rng.hpp"

namespace subag {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<SubsampleSet> draw_subsamples(Index n, const std::vector<Index>& sizes, std::uint64_t seed) {
    if (n < 1) throw DomainError("sample size must be positive");
    std::vector<SubsampleSet> out;
    out.reserve(sizes.size());
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (std::size_t m = 0; m < sizes.size(); ++m) {
        const Index k = sizes[m];
        if (k < 1 || k > n)
            throw DomainError("subsample size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
        SubsampleSet s;
        s.k = k;
        s.seed = derive_seed(seed, {m});
        std::iota(perm.begin(), perm.end(), Index{0});
        if (k < n) {
            Engine eng(s.seed);
            // Partial Fisher-Yates: the first k slots are a uniform k-subset.
            for (Index i = 0; i < k; ++i) {
                std::uniform_int_distribution<Index> pick(i, n - 1);
                std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(eng))]);
            }
        }
        s.indices.assign(perm.begin(), perm.begin() + k);
        std::sort(s.indices.begin(), s.indices.end());
        out.push_back(std::move(s));
    }
    return out;
}

MatrixXd take_rows(const MatrixXd& X, const std::vector<Index>& idx) {
    MatrixXd out(static_cast<Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = X.row(idx[i]);
    return out;
}

VectorXd take_rows(const VectorXd& y, const std::vector<Index>& idx) {
    VectorXd out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = y(idx[i]);
    return out;
}

namespace {

double penalty_value(const RegSpec& reg, const VectorXd& theta) {
    if (reg.vanishes()) return 0.0;
    return 0.5 * reg.lambda1() * theta.squaredNorm() + reg.lambda2() * theta.lpNorm<1>();
}

double loss_value(const LossSpec& loss, const VectorXd& r) {
    if (loss.kind() == LossSpec::Kind::Square) return 0.5 * r.squaredNorm();
    double s = 0.0;
    for (Index i = 0; i < r.size(); ++i) s += loss.value(r(i));
    return s;
}

VectorXd prox_vec(const RegSpec& reg, const VectorXd& x, double step) {
    if (reg.vanishes()) return x;
    const double k = reg.lambda2() * step, shrink = 1.0 / (1.0 + reg.lambda1() * step);
    VectorXd out(x.size());
    for (Index j = 0; j < x.size(); ++j) out(j) = soft_threshold(x(j), k) * shrink;
    return out;
}

double max_sq_singular(const MatrixXd& X, int iters) {
    VectorXd v = VectorXd::Ones(X.cols()) / std::sqrt(static_cast<double>(X.cols()));
    double est = 0.0;
    for (int it = 0; it < iters; ++it) {
        const VectorXd w = X.transpose() * (X * v);
        est = w.norm();
        if (est == 0.0) return 0.0;
        v = w / est;
    }
    return est;
}

/// Smooth part f(theta) = sum loss(y - X theta), with a Gram shortcut for square loss when p <= k.
class Smooth {
public:
    Smooth(const MatrixXd& X, const VectorXd& y, const LossSpec& loss) : X_(X), y_(y), loss_(loss) {
        if (loss.kind() == LossSpec::Kind::Square && X.cols() <= X.rows()) {
            G_ = X.transpose() * X;
            b_ = X.transpose() * y;
            yy_ = y.squaredNorm();
            gram_ = true;
        }
    }

    /// Value and gradient at theta.
    double eval(const VectorXd& theta, VectorXd& grad) const {
        if (gram_) {
            const VectorXd Gt = G_ * theta;
            grad = Gt - b_;
            return 0.5 * theta.dot(Gt) - b_.dot(theta) + 0.5 * yy_;
        }
        const VectorXd r = y_ - X_ * theta;
        grad = -(X_.transpose() * loss_grad(loss_, r));
        return loss_value(loss_, r);
    }

    double value(const VectorXd& theta) const {
        if (gram_) return 0.5 * theta.dot(G_ * theta) - b_.dot(theta) + 0.5 * yy_;
        return loss_value(loss_, y_ - X_ * theta);
    }

private:
    const MatrixXd& X_;
    const VectorXd& y_;
    LossSpec loss_;
    bool gram_ = false;
    MatrixXd G_;
    VectorXd b_;
    double yy_ = 0.0;
};

double kkt_from_grad(const VectorXd& v, const VectorXd& theta, const RegSpec& reg) {
    // v = X' loss'(r) = -grad f; stationarity asks v_j in the subdifferential of reg at theta_j.
    double worst = 0.0;
    for (Index j = 0; j < theta.size(); ++j) {
        double d;
        if (theta(j) != 0.0) {
            d = std::abs(v(j) - reg.lambda1() * theta(j) - reg.lambda2() * (theta(j) > 0.0 ? 1.0 : -1.0));
        } else {
            d = std::max(0.0, std::abs(v(j)) - reg.lambda2());
        }
        worst = std::max(worst, d);
    }
    return worst;
}

struct ProxGradOut {
    VectorXd theta;
    int iterations = 0;
    double kkt = 0.0;
};

/**
 * Accelerated proximal gradient with backtracking. A step that would raise the objective
 * restarts the momentum and is redone from the current iterate, so the accepted objective
 * never increases.
 */
ProxGradOut prox_grad(const MatrixXd& X, const VectorXd& y, const LossSpec& loss, const RegSpec& reg,
                      VectorXd theta, double L, double tol, int max_iter, std::vector<double>* trace) {
    const Smooth sm(X, y, loss);
    VectorXd g, gz;
    double f = sm.eval(theta, g);
    double F = f + penalty_value(reg, theta);
    if (trace) trace->push_back(F);
    VectorXd z = theta;
    double fz = f;
    gz = g;
    double t = 1.0;
    ProxGradOut out;
    for (int it = 1; it <= max_iter; ++it) {
        out.iterations = it;
        VectorXd cand;
        double fc = 0.0;
        for (;;) {
            cand = prox_vec(reg, z - gz / L, 1.0 / L);
            fc = sm.value(cand);
            const VectorXd d = cand - z;
            if (fc <= fz + gz.dot(d) + 0.5 * L * d.squaredNorm() + 1e-12 * std::abs(fz)) break;
            L *= 2.0;
        }
        const double Fc = fc + penalty_value(reg, cand);
        if (Fc > F + 1e-12 * std::abs(F)) {
            if (t == 1.0 && z == theta) {
                // Even a plain step from theta fails to decrease: roundoff floor.
                break;
            }
            z = theta;
            fz = f;
            gz = g;
            t = 1.0;
            continue;
        }
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        VectorXd next_z = cand + ((t - 1.0) / tn) * (cand - theta);
        // Gradient-mapping restart: momentum pointing uphill is dropped.
        const bool uphill = (z - cand).dot(cand - theta) > 0.0;
        theta = std::move(cand);
        F = Fc;
        if (trace) trace->push_back(F);
        f = sm.eval(theta, g);
        out.kkt = kkt_from_grad(-g, theta, reg);
        if (out.kkt < tol) {
            out.theta = std::move(theta);
            return out;
        }
        if (uphill) {
            t = 1.0;
            z = theta;
        } else {
            t = tn;
            z = std::move(next_z);
        }
        fz = sm.eval(z, gz);
    }
    out.kkt = kkt_from_grad(-g, theta, reg);
    if (out.kkt < tol) {
        out.theta = std::move(theta);
        return out;
    }
    std::vector<double> last(theta.data(), theta.data() + theta.size());
    throw NoConvergence("proximal gradient hit its iteration cap", std::move(last), out.kkt);
}

/// Minimum-norm interpolator X' (X X')^{-1} y, the ridgeless limit for k < p.
VectorXd min_norm_interpolator(const MatrixXd& X, const VectorXd& y) {
    const MatrixXd K = X * X.transpose();
    Eigen::LDLT<MatrixXd> ldlt(K);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
        throw NumericError("design rows are linearly dependent; no interpolator");
    return X.transpose() * ldlt.solve(y);
}

VectorXd ridge_square(const MatrixXd& X, const VectorXd& y, double lambda1) {
    const Index k = X.rows(), p = X.cols();
    if (k >= p) {
        MatrixXd A = X.transpose() * X;
        A.diagonal().array() += lambda1;
        if (lambda1 == 0.0) return A.colPivHouseholderQr().solve(X.transpose() * y);
        return A.ldlt().solve(X.transpose() * y);
    }
    MatrixXd K = X * X.transpose();
    K.diagonal().array() += lambda1;
    return X.transpose() * K.ldlt().solve(y);
}

FitResult finish(const MatrixXd& X, const VectorXd& y, const LossSpec& loss, const RegSpec& reg, VectorXd theta,
                 int iterations) {
    FitResult r;
    r.residuals = y - X * theta;
    r.loss_grad_vec = loss_grad(loss, r.residuals);
    r.kkt_residual = kkt_from_grad(X.transpose() * r.loss_grad_vec, theta, reg);
    for (Index j = 0; j < theta.size(); ++j)
        if (theta(j) != 0.0) r.active_set.push_back(j);
    for (Index i = 0; i < r.residuals.size(); ++i)
        if (loss.second(r.residuals(i)) > 0.0) r.inlier_set.push_back(i);
    r.theta_hat = std::move(theta);
    r.iterations = iterations;
    r.reg = reg;
    r.loss = loss;
    return r;
}

}  // namespace

double kkt_residual(const MatrixXd& X, const VectorXd& y, const VectorXd& theta, const LossSpec& loss,
                    const RegSpec& reg) {
    return kkt_from_grad(X.transpose() * loss_grad(loss, y - X * theta), theta, reg);
}

FitResult fit(const MatrixXd& X, const VectorXd& y, const LossSpec& loss, const RegSpec& reg, const FitOptions& opts) {
    const Index k = X.rows(), p = X.cols();
    if (k == 0 || p == 0) throw DomainError("empty design");
    if (y.size() != k) throw DomainError("response length does not match the design");
    if (!(opts.tol > 0.0) || opts.max_iter < 1) throw DomainError("fit tolerance and iteration cap must be positive");

    const bool square = loss.kind() == LossSpec::Kind::Square;
    const bool ridge_shape = reg.lambda2() == 0.0;
    const bool needs_limit = opts.interpolate || (reg.vanishes() && k < p);
    if (reg.vanishes() && k < p && !opts.interpolate)
        throw DomainError("unpenalized fit with k < p has no unique solution; request interpolation mode");

    if (needs_limit) {
        if (k >= p) {
            // The lambda -> 0+ limit is the unpenalized fit.
            const RegSpec none = RegSpec::none();
            if (square) return finish(X, y, loss, none, ridge_square(X, y, 0.0), 0);
            const double L = loss.lipschitz() * max_sq_singular(X, opts.power_iters) * 1.02;
            FitResult r;
            auto pg = prox_grad(X, y, loss, none, VectorXd::Zero(p), L, opts.tol, opts.max_iter,
                                opts.track_objective ? &r.objective : nullptr);
            auto res = finish(X, y, loss, none, std::move(pg.theta), pg.iterations);
            res.objective = std::move(r.objective);
            return res;
        }
        if (ridge_shape) {
            // Small residuals put every loss in its quadratic zone, so the limit is the min-norm interpolator.
            return finish(X, y, loss, RegSpec::none(), min_norm_interpolator(X, y), 0);
        }
        // Homotopy lambda_t = lambda0 2^-t down to 1e-8 lambda0 with warm starts.
        const RegSpec shape = reg.scaled(1.0 / reg.level());
        const double lambda0 = (X.transpose() * loss_grad(loss, y)).lpNorm<Eigen::Infinity>();
        if (!(lambda0 > 0.0)) return finish(X, y, loss, shape.scaled(0.0), VectorXd::Zero(p), 0);
        const double L = loss.lipschitz() * max_sq_singular(X, opts.power_iters) * 1.02;
        const double lambda_end = 1e-8 * lambda0;
        VectorXd theta = VectorXd::Zero(p);
        int total = 0;
        FitResult dummy;
        for (double lam = 0.5 * lambda0;; lam *= 0.5) {
            const bool last = lam <= lambda_end;
            if (last) lam = lambda_end;
            const RegSpec g = shape.scaled(lam);
            const double stage_tol = last ? std::min(opts.tol, 1e-3 * lam) : std::max(opts.tol, 1e-3 * lam);
            auto pg = prox_grad(X, y, loss, g, std::move(theta), L, stage_tol, opts.max_iter,
                                opts.track_objective && last ? &dummy.objective : nullptr);
            theta = std::move(pg.theta);
            total += pg.iterations;
            if (last) {
                auto res = finish(X, y, loss, g, std::move(theta), total);
                res.objective = std::move(dummy.objective);
                return res;
            }
        }
    }

    if (square && ridge_shape) return finish(X, y, loss, reg, ridge_square(X, y, reg.lambda1()), 0);

    const double L = loss.lipschitz() * max_sq_singular(X, opts.power_iters) * 1.02;
    FitResult r;
    auto pg = prox_grad(X, y, loss, reg, VectorXd::Zero(p), L, opts.tol, opts.max_iter,
                        opts.track_objective ? &r.objective : nullptr);
    auto res = finish(X, y, loss, reg, std::move(pg.theta), pg.iterations);
    res.objective = std::move(r.objective);
    return res;
}

EnsembleFit ensemble_fit(const Dataset& ds, const std::vector<FitSpec>& specs, std::uint64_t seed,
                         const FitOptions& opts) {
    std::vector<Index> sizes;
    sizes.reserve(specs.size());
    for (const auto& s : specs) sizes.push_back(s.k);
    return ensemble_fit(ds, specs, draw_subsamples(ds.n, sizes, seed), opts);
}

EnsembleFit ensemble_fit(const Dataset& ds, const std::vector<FitSpec>& specs, std::vector<SubsampleSet> subsets,
                         const FitOptions& opts) {
    if (specs.empty()) throw DomainError("ensemble needs at least one component");
    if (subsets.size() != specs.size()) throw DomainError("one subsample per component is required");
    EnsembleFit ens;
    ens.specs = specs;
    ens.subsets = std::move(subsets);
    ens.fits.resize(specs.size());
    std::vector<std::size_t> failed;
    std::string why;
    for (std::size_t m = 0; m < specs.size(); ++m) {
        try {
            const auto& idx = ens.subsets[m].indices;
            ens.fits[m] = fit(take_rows(ds.X, idx), take_rows(ds.y, idx), specs[m].loss, specs[m].reg, opts);
        } catch (const Error& e) {
            failed.push_back(m);
            why += " [" + std::to_string(m) + "] " + e.what();
        }
    }
    if (!failed.empty()) throw EnsembleFitError("ensemble components failed:" + why, std::move(failed));
    ens.theta_tilde = average_first(ens, ens.fits.size());
    return ens;
}

VectorXd average_first(const EnsembleFit& ens, std::size_t m) {
    if (m == 0 || m > ens.fits.size()) throw DomainError("requested more components than were fit");
    VectorXd s = ens.fits[0].theta_hat;
    for (std::size_t i = 1; i < m; ++i) s += ens.fits[i].theta_hat;
    return s / static_cast<double>(m);
}

double empirical_risk(const VectorXd& theta, const VectorXd& theta_star) {
    if (theta.size() != theta_star.size()) throw DomainError("coefficient dimensions differ");
    return (theta - theta_star).squaredNorm() / static_cast<double>(theta.size());
}

double empirical_risk(const EnsembleFit& ens, const VectorXd& theta_star) {
    return empirical_risk(ens.theta_tilde, theta_star);
}

}  // namespace subag
