#include "subag/fixedpoint.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include "subag/error.hpp"

namespace subag {

namespace {

using boost::math::tools::eps_tolerance;
using boost::math::tools::toms748_solve;

constexpr int kRootIter = 300;

template <class F>
double bracket_root(F&& f, double lo, double hi, double flo, double fhi, const char* what) {
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo > 0.0) == (fhi > 0.0)) throw NumericError(std::string(what) + ": root is not bracketed");
    std::uintmax_t it = kRootIter;
    auto r = toms748_solve(f, lo, hi, flo, fhi, eps_tolerance<double>(50), it);
    if (it >= static_cast<std::uintmax_t>(kRootIter))
        throw NoConvergence(std::string(what) + ": root finder hit its iteration cap", {r.first, r.second},
                            r.second - r.first);
    return 0.5 * (r.first + r.second);
}

/// Grows hi geometrically until pred(hi) holds.
template <class P>
double grow_until(double hi, P&& pred, const char* what) {
    for (int i = 0; i < 200; ++i) {
        if (pred(hi)) return hi;
        hi *= 2.0;
    }
    throw NoConvergence(std::string(what) + ": could not bracket a root", {hi}, kNaN);
}

void check_cdelta(double cdelta) {
    if (!(cdelta > 0.0) || !std::isfinite(cdelta)) throw DomainError("c * delta must be positive and finite");
}

void check_recoverable(const SignalDist& signal, const NoiseDist& noise) {
    if (signal.is_zero() && noise.is_zero())
        throw PerfectRecovery("zero signal with zero noise: the system has no positive solution");
}

/// Quadrature nodes for one data model.
struct Model {
    Integrator integ;
    std::vector<Node> sig;
    std::vector<Node> noi;
    const NoiseDist* noise;

    Model(const QuadratureConfig& cfg, const SignalDist& signal, const NoiseDist& nz)
        : integ(cfg), sig(integ.signal_nodes(signal)), noi(integ.noise_nodes(nz)), noise(&nz) {}
};

inline const std::array<Node, 1> kZeroNode = {Node{0.0, 1.0}};

// ---------------------------------------------------------------------------
// Penalty side: Theta + s H through prox_g(.; t).

/// (E[(prox - Theta)^2], E[(prox - Theta) H], E[prox']).
Eigen::Vector3d reg_moments(const RegSpec& g, double s, double t, const Model& md) {
    const double k = g.lambda2() * t;
    auto kinks = [&](double th, Breaks& b) {
        if (k > 0.0) {
            b.add((-k - th) / s);
            b.add((k - th) / s);
        }
    };
    const double shrink = 1.0 / (1.0 + g.lambda1() * t);
    auto f = [&](double th, double h) {
        const double x = th + s * h;
        const double d = soft_threshold(x, k) * shrink - th;
        const double pp = std::abs(x) >= k ? shrink : 0.0;
        return Eigen::Vector3d(d * d, d * h, pp);
    };
    return md.integ.outer_single(md.sig, f, kinks);
}

// ---------------------------------------------------------------------------
// Loss side: Z + alpha G through env'_l(.; kappa).

double loss_kink(const LossSpec& l, double kappa) {
    return l.kind() == LossSpec::Kind::Huber ? l.rho() + kappa : 0.0;
}

/// (E[env'^2], E[env' G]).
Eigen::Vector2d loss_moments(const LossSpec& l, double alpha, double kappa, const Model& md) {
    const double k = loss_kink(l, kappa);
    if (md.noise->is_gaussian()) {
        // Z + alpha G is N(0, sigma^2 + alpha^2); E[G | U] = alpha U / a^2.
        const double a = std::sqrt(md.noise->sigma() * md.noise->sigma() + alpha * alpha);
        auto kinks = [&](double, Breaks& b) {
            if (k > 0.0) {
                b.add(-k / a);
                b.add(k / a);
            }
        };
        auto f = [&](double, double w) {
            const double e = env_prime(l, a * w, kappa);
            return Eigen::Vector2d(e * e, e * w);
        };
        Eigen::Vector2d m = md.integ.outer_single(kZeroNode, f, kinks);
        m(1) *= alpha / a;
        return m;
    }
    auto kinks = [&](double z, Breaks& b) {
        if (k > 0.0) {
            b.add((-k - z) / alpha);
            b.add((k - z) / alpha);
        }
    };
    auto f = [&](double z, double g) {
        const double e = env_prime(l, z + alpha * g, kappa);
        return Eigen::Vector2d(e * e, e * g);
    };
    return md.integ.outer_single(md.noi, f, kinks);
}

// ---------------------------------------------------------------------------
// System 1a.

using Vec4 = Eigen::Vector4d;

struct Sys1aEval {
    Vec4 defect;
    Vec4 mapped;  // one Jacobi sweep of the equations read as an update
};

Sys1aEval eval_sys1a(const Vec4& v, const LossSpec& loss, const RegSpec& reg, double cdelta, const Model& md) {
    const double alpha = v(0), beta = v(1), kappa = v(2), nu = v(3);
    const Eigen::Vector2d lm = loss_moments(loss, alpha, kappa, md);
    const Eigen::Vector3d rm = reg_moments(reg, beta / nu, 1.0 / nu, md);
    Sys1aEval out;
    out.defect << alpha * alpha - rm(0), beta * beta - cdelta * lm(0), kappa * beta - rm(1), nu * alpha - cdelta * lm(1);
    out.mapped << std::sqrt(std::max(rm(0), 0.0)), std::sqrt(std::max(cdelta * lm(0), 0.0)), rm(1) / beta,
        cdelta * lm(1) / alpha;
    return out;
}

/// Square loss with ridge penalty lambda (lambda may be 0 when cdelta > 1).
SystemSolution ridge_square_closed_form(double lambda, double cdelta, double m2, double sigma2) {
    double kappa;
    if (lambda > 0.0) {
        const double b = cdelta + lambda - 1.0;
        kappa = (-b + std::sqrt(b * b + 4.0 * lambda)) / (2.0 * lambda);
    } else {
        if (!(cdelta > 1.0)) throw DomainError("unpenalized square loss needs c * delta > 1");
        kappa = 1.0 / (cdelta - 1.0);
    }
    const double q = kappa / (1.0 + kappa);
    const double alpha2 = (kappa * kappa * lambda * lambda * m2 + cdelta * q * q * sigma2) / (1.0 - cdelta * q * q);
    SystemSolution s;
    s.alpha = std::sqrt(alpha2);
    s.kappa = kappa;
    s.nu = cdelta / (1.0 + kappa);
    s.beta = std::sqrt(cdelta * (sigma2 + alpha2)) / (1.0 + kappa);
    return s;
}

SystemSolution solve_sys1a_generic(const LossSpec& loss, const RegSpec& reg, double cdelta, const SignalDist& signal,
                                   const NoiseDist& noise, const QuadratureConfig& cfg, const SolverOptions& opts) {
    if (reg.vanishes() && !(cdelta > 1.0))
        throw DomainError("an unpenalized fit needs c * delta > 1 for a finite solution");
    const Model md(cfg, signal, noise);

    const double lam0 = reg.vanishes() ? 0.0 : std::max(reg.lambda1() + reg.lambda2(), 1e-3);
    const auto init = opts.initial ? *opts.initial
                                   : ridge_square_closed_form(lam0, cdelta, signal.second_moment(),
                                                              noise.effective_variance());

    Vec4 v(init.alpha, init.beta, init.kappa, init.nu);
    Sys1aEval ev = eval_sys1a(v, loss, reg, cdelta, md);
    double res = ev.defect.cwiseAbs().maxCoeff();
    double omega = 1.0;
    int iter = 0;

    // Damped fixed point in log coordinates; halve the step whenever the residual grows.
    const int fp_budget = std::min(opts.max_iter, 400);
    for (; iter < fp_budget && res > std::max(opts.tol, 1e-6); ++iter) {
        const Vec4 cand = (v.array().log() + omega * (ev.mapped.array().log() - v.array().log())).exp().matrix();
        const Sys1aEval ec = eval_sys1a(cand, loss, reg, cdelta, md);
        const double rc = ec.defect.cwiseAbs().maxCoeff();
        if (std::isfinite(rc) && rc < res) {
            v = cand;
            ev = ec;
            res = rc;
            omega = std::min(1.0, omega * 1.25);
        } else {
            omega *= 0.5;
            if (omega < 1e-6) break;
        }
    }

    // Newton polish on the defect with a central-difference Jacobian in log coordinates.
    for (; iter < opts.max_iter && res > opts.tol; ++iter) {
        Eigen::Matrix4d J;
        const double h = 1e-6;
        for (int j = 0; j < 4; ++j) {
            Vec4 vp = v, vm = v;
            vp(j) *= std::exp(h);
            vm(j) *= std::exp(-h);
            J.col(j) = (eval_sys1a(vp, loss, reg, cdelta, md).defect - eval_sys1a(vm, loss, reg, cdelta, md).defect) /
                       (2.0 * h);
        }
        const Vec4 step = J.colPivHouseholderQr().solve(-ev.defect);
        if (!step.allFinite()) break;
        double damp = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 30; ++ls, damp *= 0.5) {
            const Vec4 cand = (v.array().log() + damp * step.array()).exp().matrix();
            const Sys1aEval ec = eval_sys1a(cand, loss, reg, cdelta, md);
            const double rc = ec.defect.cwiseAbs().maxCoeff();
            if (std::isfinite(rc) && rc < res) {
                v = cand;
                ev = ec;
                res = rc;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    if (!(res <= opts.tol))
        throw NoConvergence("generic single-estimator system did not converge", {v(0), v(1), v(2), v(3)}, res);

    SystemSolution s;
    s.alpha = v(0);
    s.beta = v(1);
    s.kappa = v(2);
    s.nu = v(3);
    s.residual = res;
    s.route = "generic";
    s.iterations = iter;
    return s;
}

// ---------------------------------------------------------------------------
// Least-squares systems in (tau, a): penalty lambda * g0 with g0.level() == 1.

RegSpec normalized(const RegSpec& base) {
    const double lv = base.level();
    if (!(lv > 0.0)) throw DomainError("penalty shape must have a positive level");
    return base.scaled(1.0 / lv);
}

class LsqCore {
public:
    LsqCore(const RegSpec& g0, double cdelta, double sigma2, const Model& md)
        : g0_(g0), cdelta_(cdelta), sigma2_(sigma2), md_(md) {}

    /// E[prox'(Theta + s H; t)].
    double ep(double s, double t) const { return reg_moments(g0_, s, t, md_)(2); }
    /// E[(prox(Theta + s H; t) - Theta)^2].
    double err2(double s, double t) const { return reg_moments(g0_, s, t, md_)(0); }

    /// Threshold t solving lambda = t (c delta - E[prox']).
    double t_regularized(double s, double lambda) const {
        auto f = [&](double t) { return t * (cdelta_ - ep(s, t)) - lambda; };
        const double hi = grow_until(1.0, [&](double t) { return f(t) > 0.0; }, "threshold equation");
        return bracket_root(f, 0.0, hi, -lambda, f(hi), "threshold equation");
    }

    /// Threshold t solving E[prox'] = c delta (the lambda -> 0+ limit, c delta < 1).
    double t_interpolating(double s) const {
        auto f = [&](double t) { return ep(s, t) - cdelta_; };
        const double hi = grow_until(1.0, [&](double t) { return f(t) < 0.0; }, "interpolator threshold");
        return bracket_root(f, 0.0, hi, 1.0 - cdelta_, f(hi), "interpolator threshold");
    }

    /// Solves tau^2 = E[(prox - Theta)^2] + sigma^2 with t = t_of(s), s = tau / sqrt(c delta).
    template <class T>
    std::pair<double, double> solve_tau(T&& t_of, double m2) const {
        auto h = [&](double tau) {
            const double s = tau / std::sqrt(cdelta_);
            return err2(s, t_of(s)) + sigma2_ - tau * tau;
        };
        double lo = sigma2_ > 0.0 ? std::sqrt(sigma2_) : 1e-8 * std::sqrt(m2);
        double hlo = h(lo);
        if (!(hlo > 0.0)) {
            if (sigma2_ == 0.0) throw PerfectRecovery("noiseless model recovers the signal exactly (tau -> 0)");
            if (hlo < 0.0) throw NumericError("state-evolution map is below the noise floor");
        }
        const double start = std::sqrt(sigma2_ + m2) * 1.5 + 1e-12;
        const double hi = grow_until(std::max(start, lo * 2.0), [&](double tau) { return h(tau) < 0.0; },
                                     "state-evolution equation");
        const double tau = bracket_root(h, lo, hi, hlo, h(hi), "state-evolution equation");
        const double s = tau / std::sqrt(cdelta_);
        return {tau, t_of(s)};
    }

    /// E[(prox(Theta + s H) - Theta)(prox(Theta + s Ht) - Theta)], corr(H, Ht) = eta.
    double cross(double s, double t, double eta) const {
        const double k = g0_.lambda2() * t;
        const double shrink = 1.0 / (1.0 + g0_.lambda1() * t);
        auto kinks = [&](double th, Breaks& b) {
            if (k > 0.0) {
                b.add((-k - th) / s);
                b.add((k - th) / s);
            }
        };
        auto f = [&](double th, double h, double ht) {
            return (soft_threshold(th + s * h, k) * shrink - th) * (soft_threshold(th + s * ht, k) * shrink - th);
        };
        return md_.integ.outer_pair(md_.sig, eta, f, kinks, kinks);
    }

    /// eta_H solving eta = c (cross(eta) + sigma^2) / tau^2, iterated from 0.
    std::pair<double, int> eta_h(double tau, double s, double t, double c, double tol = 1e-13,
                                 int max_iter = 1000) const {
        if (c >= 1.0) return {1.0, 0};
        auto phi = [&](double eta) { return c * (cross(s, t, eta) + sigma2_) / (tau * tau); };
        double eta = 0.0;
        for (int it = 1; it <= max_iter; ++it) {
            const double next = phi(eta);
            if (std::abs(next - eta) < tol) return {next, it};
            eta = next;
        }
        auto g = [&](double e) { return e - phi(e); };
        return {bracket_root(g, -c, c, g(-c), g(c), "ensemble correlation"), max_iter};
    }

private:
    RegSpec g0_;
    double cdelta_;
    double sigma2_;
    const Model& md_;
};

// ---------------------------------------------------------------------------
// Pairwise correlation maps.

class LossPair {
public:
    LossPair(const SystemSolution& A, const SystemSolution& B, const LossSpec& lA, const LossSpec& lB, double c,
             double ct, const Model& md)
        : A_(A), B_(B), lA_(lA), lB_(lB), scale_(std::sqrt(c * ct)), md_(md) {
        denA_ = loss_moments(lA, A.alpha, A.kappa, md)(0);
        denB_ = loss_moments(lB, B.alpha, B.kappa, md)(0);
    }

    double numerator(double eta) const {
        const double kA = loss_kink(lA_, A_.kappa), kB = loss_kink(lB_, B_.kappa);
        if (md_.noise->is_gaussian()) {
            const double s2 = md_.noise->sigma() * md_.noise->sigma();
            const double aA = std::sqrt(s2 + A_.alpha * A_.alpha), aB = std::sqrt(s2 + B_.alpha * B_.alpha);
            const double rho = std::clamp((s2 + A_.alpha * B_.alpha * eta) / (aA * aB), -1.0, 1.0);
            auto kg = [&](double, Breaks& b) {
                if (kA > 0.0) {
                    b.add(-kA / aA);
                    b.add(kA / aA);
                }
            };
            auto kt = [&](double, Breaks& b) {
                if (kB > 0.0) {
                    b.add(-kB / aB);
                    b.add(kB / aB);
                }
            };
            auto f = [&](double, double w, double wt) {
                return env_prime(lA_, aA * w, A_.kappa) * env_prime(lB_, aB * wt, B_.kappa);
            };
            return md_.integ.outer_pair(kZeroNode, rho, f, kg, kt);
        }
        auto kg = [&](double z, Breaks& b) {
            if (kA > 0.0) {
                b.add((-kA - z) / A_.alpha);
                b.add((kA - z) / A_.alpha);
            }
        };
        auto kt = [&](double z, Breaks& b) {
            if (kB > 0.0) {
                b.add((-kB - z) / B_.alpha);
                b.add((kB - z) / B_.alpha);
            }
        };
        auto f = [&](double z, double g, double gt) {
            return env_prime(lA_, z + A_.alpha * g, A_.kappa) * env_prime(lB_, z + B_.alpha * gt, B_.kappa);
        };
        return md_.integ.outer_pair(md_.noi, eta, f, kg, kt);
    }

    double F(double eta) const { return scale_ * numerator(eta) / std::sqrt(denA_ * denB_); }

private:
    SystemSolution A_, B_;
    LossSpec lA_, lB_;
    double scale_;
    const Model& md_;
    double denA_ = 0.0, denB_ = 0.0;
};

class RegPair {
public:
    RegPair(const SystemSolution& A, const SystemSolution& B, const RegSpec& gA, const RegSpec& gB, const Model& md)
        : gA_(gA), gB_(gB), md_(md) {
        sA_ = A.beta / A.nu;
        tA_ = 1.0 / A.nu;
        sB_ = B.beta / B.nu;
        tB_ = 1.0 / B.nu;
        denA_ = reg_moments(gA, sA_, tA_, md)(0);
        denB_ = reg_moments(gB, sB_, tB_, md)(0);
    }

    double numerator(double eta) const {
        const double kA = gA_.lambda2() * tA_, kB = gB_.lambda2() * tB_;
        const double shA = 1.0 / (1.0 + gA_.lambda1() * tA_), shB = 1.0 / (1.0 + gB_.lambda1() * tB_);
        auto kg = [&](double th, Breaks& b) {
            if (kA > 0.0) {
                b.add((-kA - th) / sA_);
                b.add((kA - th) / sA_);
            }
        };
        auto kt = [&](double th, Breaks& b) {
            if (kB > 0.0) {
                b.add((-kB - th) / sB_);
                b.add((kB - th) / sB_);
            }
        };
        auto f = [&](double th, double h, double ht) {
            return (soft_threshold(th + sA_ * h, kA) * shA - th) * (soft_threshold(th + sB_ * ht, kB) * shB - th);
        };
        return md_.integ.outer_pair(md_.sig, eta, f, kg, kt);
    }

    double F(double eta) const { return numerator(eta) / std::sqrt(denA_ * denB_); }

private:
    RegSpec gA_, gB_;
    const Model& md_;
    double sA_, tA_, sB_, tB_;
    double denA_ = 0.0, denB_ = 0.0;
};

int sign_with_tol(double x, double tol) {
    if (x > tol) return 1;
    if (x < -tol) return -1;
    return 0;
}

bool is_ridge(const RegSpec& reg) {
    return reg.lambda2() == 0.0 && reg.lambda1() > 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------

EnsembleSize EnsembleSize::finite(long m) {
    if (m < 1) throw DomainError("ensemble size must be at least 1");
    return EnsembleSize{m};
}

std::string EnsembleSize::str() const { return m ? std::to_string(*m) : std::string("inf"); }

double sys1a_residual(const SystemSolution& sol, const LossSpec& loss, const RegSpec& reg, double cdelta,
                      const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg) {
    const Model md(cfg, signal, noise);
    const Vec4 v(sol.alpha, sol.beta, sol.kappa, sol.nu);
    return eval_sys1a(v, loss, reg, cdelta, md).defect.cwiseAbs().maxCoeff();
}

SystemSolution solve_sys1a(const LossSpec& loss, const RegSpec& reg, double cdelta, const SignalDist& signal,
                           const NoiseDist& noise, const QuadratureConfig& cfg, const SolverOptions& opts) {
    check_cdelta(cdelta);
    check_recoverable(signal, noise);
    if (!opts.force_generic) {
        if (loss.kind() == LossSpec::Kind::Square) {
            const double sigma2 = noise.second_moment();
            if (!std::isfinite(sigma2)) throw DomainError("square loss needs noise with finite variance");
            SystemSolution s;
            if (reg.vanishes()) {
                if (!(cdelta > 1.0))
                    throw DomainError("lambda -> 0+ with c * delta <= 1 has no finite (beta, kappa, nu); "
                                      "use the interpolator system");
                s = ridge_square_closed_form(0.0, cdelta, signal.second_moment(), sigma2);
                s.route = "least-squares";
            } else {
                const auto ls = solve_sys2(reg, reg.level(), cdelta, sigma2, signal, cfg);
                s = lsq_to_system(ls, reg.level(), cdelta);
                s.route = "least-squares";
            }
            s.residual = sys1a_residual(s, loss, reg, cdelta, signal, noise, cfg);
            return s;
        }
        if (is_ridge(reg)) {
            auto s = solve_sys3(loss, reg.lambda1(), cdelta, signal, noise, cfg);
            s.residual = sys1a_residual(s, loss, reg, cdelta, signal, noise, cfg);
            return s;
        }
    }
    return solve_sys1a_generic(loss, reg, cdelta, signal, noise, cfg, opts);
}

double eval_F_loss(double eta_g, const SystemSolution& solA, const SystemSolution& solB, double c, double ct,
                   const LossSpec& lossA, const LossSpec& lossB, const NoiseDist& noise, const QuadratureConfig& cfg) {
    if (!(std::abs(eta_g) <= 1.0)) throw DomainError("eta_G must lie in [-1, 1]");
    const Model md(cfg, SignalDist::point_mass(0.0), noise);
    return LossPair(solA, solB, lossA, lossB, c, ct, md).F(eta_g);
}

double eval_F_reg(double eta_h, const SystemSolution& solA, const SystemSolution& solB, const RegSpec& regA,
                  const RegSpec& regB, const SignalDist& signal, const QuadratureConfig& cfg) {
    if (!(std::abs(eta_h) <= 1.0)) throw DomainError("eta_H must lie in [-1, 1]");
    const NoiseDist none = NoiseDist::gaussian(0.0);
    const Model md(cfg, signal, none);
    return RegPair(solA, solB, regA, regB, md).F(eta_h);
}

CorrSolution solve_sys1b(const SystemSolution& solA, const SystemSolution& solB, const Component& A,
                         const Component& B, const SignalDist& signal, const NoiseDist& noise,
                         const QuadratureConfig& cfg, double tol, int max_iter) {
    if (!(std::min(A.c, B.c) < 1.0))
        throw ContractionUnavailable("contraction hypothesis min{c, c~} < 1 is violated");
    const Model md(cfg, signal, noise);
    const LossPair lp(solA, solB, A.loss, B.loss, A.c, B.c, md);
    const RegPair rp(solA, solB, A.reg, B.reg, md);
    const double bound = std::sqrt(A.c * B.c);
    auto clampH = [&](double e) { return std::clamp(e, -bound, bound); };

    CorrSolution out;
    double eta = 0.0;
    out.iterates.push_back(eta);
    bool done = false;
    for (int it = 1; it <= max_iter; ++it) {
        const double next = clampH(lp.F(std::clamp(rp.F(eta), -1.0, 1.0)));
        out.iterates.push_back(next);
        out.iterations = it;
        const bool small = std::abs(next - eta) < tol;
        eta = next;
        if (small) {
            done = true;
            break;
        }
    }
    if (!done) {
        auto h = [&](double e) { return e - lp.F(std::clamp(rp.F(e), -1.0, 1.0)); };
        eta = bracket_root(h, -bound, bound, h(-bound), h(bound), "correlation system");
        out.bracketed = true;
        out.iterates.push_back(eta);
    }
    out.eta_h = eta;
    out.eta_g = std::clamp(rp.F(eta), -1.0, 1.0);
    return out;
}

std::pair<int, int> sign_pattern(const SystemSolution& solA, const SystemSolution& solB, const Component& A,
                                 const Component& B, const SignalDist& signal, const NoiseDist& noise,
                                 const QuadratureConfig& cfg, double zero_tol) {
    const Model md(cfg, signal, noise);
    const LossPair lp(solA, solB, A.loss, B.loss, A.c, B.c, md);
    const RegPair rp(solA, solB, A.reg, B.reg, md);
    const double g = rp.F(std::clamp(lp.F(0.0), -1.0, 1.0));
    const double h = lp.F(std::clamp(rp.F(0.0), -1.0, 1.0));
    return {sign_with_tol(g, zero_tol), sign_with_tol(h, zero_tol)};
}

LsqSolution solve_sys2(const RegSpec& base, double lambda, double cdelta, double sigma2, const SignalDist& signal,
                       const QuadratureConfig& cfg, bool want_xi, double c) {
    check_cdelta(cdelta);
    if (!(lambda > 0.0)) throw DomainError("lambda must be positive; use the interpolator system for lambda -> 0+");
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("noise variance must be finite");
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("subsample ratio must lie in (0, 1]");
    const NoiseDist nz = NoiseDist::gaussian(std::sqrt(sigma2));
    check_recoverable(signal, nz);
    const Model md(cfg, signal, nz);
    const LsqCore core(normalized(base), cdelta, sigma2, md);

    const auto [tau, t] = core.solve_tau([&](double s) { return core.t_regularized(s, lambda); },
                                         signal.second_moment());
    LsqSolution out;
    out.tau = tau;
    out.sigma2 = sigma2;
    const double s = tau / std::sqrt(cdelta);
    out.a = t / s;
    if (want_xi) {
        const auto [eta, its] = core.eta_h(tau, s, t, c);
        out.eta_h = eta;
        out.iterations = its;
        out.xi = tau * std::sqrt(eta / c);
    }
    return out;
}

SystemSolution lsq_to_system(const LsqSolution& ls, double lambda, double cdelta) {
    SystemSolution s;
    s.alpha = std::sqrt(std::max(ls.R1(), 0.0));
    s.beta = lambda / ls.a;
    s.nu = std::sqrt(cdelta) * s.beta / ls.tau;
    s.kappa = cdelta / s.nu - 1.0;
    s.route = "least-squares";
    return s;
}

SystemSolution solve_sys3(const LossSpec& loss, double lambda, double cdelta, const SignalDist& signal,
                          const NoiseDist& noise, const QuadratureConfig& cfg, double tol) {
    check_cdelta(cdelta);
    check_recoverable(signal, noise);
    if (!(lambda > 0.0)) throw DomainError("ridge weight must be positive");
    const Model md(cfg, signal, noise);
    const double m2 = signal.second_moment();

    // kappa(alpha) is the unique root in (0, 1/lambda) of alpha (1 - lambda kappa) = c delta kappa E[env' G].
    auto kappa_of = [&](double alpha) {
        auto f = [&](double k) { return alpha * (1.0 - lambda * k) - cdelta * k * loss_moments(loss, alpha, k, md)(1); };
        const double hi = 1.0 / lambda;
        return bracket_root(f, 0.0, hi, alpha, f(hi), "ridge system kappa");
    };
    auto g = [&](double alpha) {
        const double k = kappa_of(alpha);
        const double B = loss_moments(loss, alpha, k, md)(0);
        return alpha * alpha - cdelta * k * k * B - lambda * lambda * k * k * m2;
    };
    double lo = 1e-6 * std::sqrt(std::max(m2, 1e-300) + noise.effective_variance());
    double glo = g(lo);
    while (glo >= 0.0 && lo > 1e-300) {
        lo *= 1e-3;
        glo = g(lo);
    }
    const double hi = grow_until(std::sqrt(m2 + noise.effective_variance()) + lo,
                                 [&](double a) { return g(a) > 0.0; }, "ridge system alpha");
    std::uintmax_t it = kRootIter;
    auto r = toms748_solve(g, lo, hi, glo, g(hi), [tol](double a, double b) { return std::abs(b - a) <= tol * b; }, it);
    const double alpha = 0.5 * (r.first + r.second);
    const double kappa = kappa_of(alpha);

    SystemSolution s;
    s.alpha = alpha;
    s.kappa = kappa;
    const double beta2 = alpha * alpha / (kappa * kappa) - lambda * lambda * m2;
    if (!(beta2 > 0.0))
        throw NumericError("ridge system gave beta^2 = " + std::to_string(beta2) + " at alpha = " +
                           std::to_string(alpha) + ", kappa = " + std::to_string(kappa));
    s.beta = std::sqrt(beta2);
    s.nu = 1.0 / kappa - lambda;
    s.route = "ridge";
    s.iterations = static_cast<int>(it);
    s.residual = std::abs(g(alpha));
    return s;
}

CorrSolution solve_sys3_corr(const SystemSolution& sol, const LossSpec& loss, double lambda, double c, double delta,
                             const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg, double tol,
                             int max_iter) {
    CorrSolution out;
    if (c >= 1.0) {
        out.eta_g = out.eta_h = 1.0;
        return out;
    }
    const Model md(cfg, signal, noise);
    const LossPair lp(sol, sol, loss, loss, c, c, md);
    const double lm2 = lambda * lambda * signal.second_moment();
    const double b2 = sol.beta * sol.beta;
    auto etaG = [&](double eh) { return (eh * b2 + lm2) / (b2 + lm2); };
    // c^2 delta / beta^2 * E[env' env'~] written through the normalized loss map.
    auto etaH = [&](double eg) { return c * c * delta / b2 * lp.numerator(std::clamp(eg, -1.0, 1.0)); };
    double eh = 0.0;
    out.iterates.push_back(eh);
    for (int it = 1; it <= max_iter; ++it) {
        const double next = etaH(etaG(eh));
        out.iterates.push_back(next);
        out.iterations = it;
        const bool small = std::abs(next - eh) < tol;
        eh = next;
        if (small) break;
    }
    out.eta_h = eh;
    out.eta_g = etaG(eh);
    return out;
}

LsqSolution solve_sys4(Interpolator kind, double c, double delta, double sigma2, const SignalDist& signal,
                       const QuadratureConfig& cfg, bool want_xi) {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("subsample ratio must lie in (0, 1]");
    if (!(delta > 0.0)) throw DomainError("delta must be positive");
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("noise variance must be finite");
    const double cdelta = c * delta;
    if (std::abs(cdelta - 1.0) < 1e-12)
        throw InterpolationThreshold("c * delta = 1: the single-estimator risk diverges");
    LsqSolution out;
    out.sigma2 = sigma2;
    if (cdelta > 1.0) {
        // Underparameterized: the least-squares closed forms; only delta matters for the full ensemble.
        out.tau = std::sqrt(sigma2 * cdelta / (cdelta - 1.0));
        out.a = 0.0;
        if (want_xi) {
            const double xi2 = sigma2 * delta / (delta - 1.0);
            out.xi = std::sqrt(xi2);
            out.eta_h = c * xi2 / (out.tau * out.tau);
        }
        return out;
    }
    const NoiseDist nz = NoiseDist::gaussian(std::sqrt(sigma2));
    check_recoverable(signal, nz);
    const Model md(cfg, signal, nz);
    const RegSpec g0 = kind == Interpolator::Ridgeless ? RegSpec::ridge(1.0) : RegSpec::lasso(1.0);
    const LsqCore core(g0, cdelta, sigma2, md);
    const auto [tau, t] = core.solve_tau([&](double s) { return core.t_interpolating(s); }, signal.second_moment());
    out.tau = tau;
    const double s = tau / std::sqrt(cdelta);
    out.a = t / s;
    if (want_xi) {
        const auto [eta, its] = core.eta_h(tau, s, t, c);
        out.eta_h = eta;
        out.iterations = its;
        out.xi = tau * std::sqrt(eta / c);
    }
    return out;
}

double homogeneous_risk(double R1, double Rinf, const EnsembleSize& M) {
    if (M.is_infinite()) return Rinf;
    const double m = static_cast<double>(*M.m);
    return R1 / m + (1.0 - 1.0 / m) * Rinf;
}

double TheoryPoint::RM(const EnsembleSize& M) const { return homogeneous_risk(R1, Rinf, M); }

TheoryPoint homogeneous_theory(const LossSpec& loss, const RegSpec& reg, double c, double delta,
                               const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg) {
    if (!(c > 0.0 && c <= 1.0)) throw DomainError("subsample ratio must lie in (0, 1]");
    if (!(delta > 0.0)) throw DomainError("delta must be positive");
    const double cdelta = c * delta;
    check_recoverable(signal, noise);
    TheoryPoint tp;
    if (loss.kind() == LossSpec::Kind::Square) {
        const double sigma2 = noise.second_moment();
        if (!std::isfinite(sigma2)) throw DomainError("square loss needs noise with finite variance");
        LsqSolution ls;
        if (reg.vanishes()) {
            const auto kind = reg.kind() == RegSpec::Kind::Lasso ? Interpolator::Lassoless : Interpolator::Ridgeless;
            ls = solve_sys4(kind, c, delta, sigma2, signal, cfg, true);
            tp.route = cdelta > 1.0 ? "least-squares" : (kind == Interpolator::Lassoless ? "lassoless" : "ridgeless");
            if (cdelta > 1.0) {
                tp.sys = ridge_square_closed_form(0.0, cdelta, signal.second_moment(), sigma2);
            } else {
                tp.sys.alpha = std::sqrt(ls.R1());
            }
        } else {
            ls = solve_sys2(reg, reg.level(), cdelta, sigma2, signal, cfg, true, c);
            tp.sys = lsq_to_system(ls, reg.level(), cdelta);
            tp.route = "least-squares";
        }
        tp.sys.route = tp.route;
        tp.tau = ls.tau;
        tp.a = ls.a;
        tp.xi = *ls.xi;
        tp.R1 = ls.R1();
        tp.Rinf = ls.Rinf();
        tp.eta_h = ls.eta_h;
        tp.eta_g = c >= 1.0 ? 1.0 : tp.Rinf / tp.R1;
        return tp;
    }
    tp.sys = solve_sys1a(loss, reg, cdelta, signal, noise, cfg);
    tp.route = tp.sys.route;
    CorrSolution cs;
    if (c >= 1.0) {
        cs.eta_g = cs.eta_h = 1.0;
    } else if (is_ridge(reg)) {
        cs = solve_sys3_corr(tp.sys, loss, reg.lambda1(), c, delta, signal, noise, cfg);
    } else {
        const Component comp{loss, reg, c};
        cs = solve_sys1b(tp.sys, tp.sys, comp, comp, signal, noise, cfg);
    }
    tp.eta_g = cs.eta_g;
    tp.eta_h = cs.eta_h;
    tp.R1 = tp.sys.alpha * tp.sys.alpha;
    tp.Rinf = tp.eta_g * tp.R1;
    return tp;
}

double ensemble_risk(const std::vector<SystemSolution>& solutions, const CorrMatrix& eta_g) {
    const std::size_t M = solutions.size();
    if (M == 0) throw DomainError("ensemble needs at least one component");
    double diag = 0.0, off = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        diag += solutions[m].alpha * solutions[m].alpha;
        for (std::size_t l = 0; l < M; ++l) {
            if (l == m) continue;
            if (m >= eta_g.size() || l >= eta_g[m].size() || !eta_g[m][l])
                throw DependencyError("missing correlation for pair (" + std::to_string(m) + ", " + std::to_string(l) +
                                      ")");
            off += *eta_g[m][l] * solutions[m].alpha * solutions[l].alpha;
        }
    }
    const double M2 = static_cast<double>(M) * static_cast<double>(M);
    return diag / M2 + off / M2;
}

double ensemble_risk(const EnsembleConfig& ens, const SignalDist& signal, const NoiseDist& noise,
                     const QuadratureConfig& cfg) {
    const std::size_t M = ens.components.size();
    std::vector<SystemSolution> sols;
    sols.reserve(M);
    for (const auto& comp : ens.components)
        sols.push_back(solve_sys1a(comp.loss, comp.reg, comp.c * ens.delta, signal, noise, cfg));
    CorrMatrix eta(M, std::vector<std::optional<double>>(M));
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t l = m + 1; l < M; ++l) {
            const auto& A = ens.components[m];
            const auto& B = ens.components[l];
            double v;
            if (A.c >= 1.0 && B.c >= 1.0 && A.loss == B.loss && A.reg == B.reg) {
                v = 1.0;  // both components see the full sample
            } else {
                v = solve_sys1b(sols[m], sols[l], A, B, signal, noise, cfg).eta_g;
            }
            eta[m][l] = eta[l][m] = v;
        }
    }
    return ensemble_risk(sols, eta);
}

RegSpec make_penalty(RegSpec::Kind kind, double lambda, double elastic_ratio) {
    switch (kind) {
        case RegSpec::Kind::None: return RegSpec::none();
        case RegSpec::Kind::Ridge: return RegSpec::ridge(lambda);
        case RegSpec::Kind::Lasso: return RegSpec::lasso(lambda);
        case RegSpec::Kind::ElasticNet:
            return RegSpec::elastic_net(elastic_ratio * lambda, (1.0 - elastic_ratio) * lambda);
    }
    return RegSpec::none();
}

SweepTable sweep(const SweepGrid& grid, const QuadratureConfig& cfg, int workers) {
    if (grid.delta.empty() || grid.c.empty() || grid.lambda.empty() || grid.M.empty())
        throw DomainError("sweep grid axes must be non-empty");
    const std::vector<double> rhos = grid.huber_rho.empty() ? std::vector<double>{kNaN} : grid.huber_rho;

    struct Point {
        double delta, c, lambda, rho;
        TheoryPoint th;
        std::string status;
    };
    std::vector<Point> pts;
    for (double d : grid.delta)
        for (double c : grid.c)
            for (double l : grid.lambda)
                for (double r : rhos) pts.push_back({d, c, l, r, {}, {}});

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < pts.size(); i = next++) {
            auto& pt = pts[i];
            try {
                const LossSpec loss = std::isnan(pt.rho) ? LossSpec::square() : LossSpec::huber(pt.rho);
                const RegSpec reg = make_penalty(grid.reg, pt.lambda, grid.elastic_ratio);
                pt.th = homogeneous_theory(loss, reg, pt.c, pt.delta, grid.signal, grid.noise, cfg);
                pt.status = "ok";
            } catch (...) {
                pt.status = status_tag(std::current_exception());
            }
        }
    };
    const int nw = std::max(1, std::min<int>(workers, static_cast<int>(pts.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < nw; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    SweepTable table;
    for (const auto& pt : pts) {
        for (const auto& M : grid.M) {
            SweepRow row{pt.delta, pt.c, pt.lambda, pt.rho, M, pt.th, kNaN, pt.status};
            if (pt.status == "ok") row.RM = pt.th.RM(M);
            table.rows.push_back(std::move(row));
        }
    }

    // Argmin markers; exact ties go to the smaller c (or lambda).
    auto mkey = [](const EnsembleSize& M) { return M.m ? *M.m : -1L; };
    std::map<std::tuple<double, double, double, long>, const SweepRow*> best_c, best_l;
    auto better = [](const SweepRow* cur, const SweepRow& cand, double SweepRow::*axis) {
        if (!cur) return true;
        if (cand.RM < cur->RM) return true;
        return cand.RM == cur->RM && cand.*axis < cur->*axis;
    };
    auto rho_key = [](double r) { return std::isnan(r) ? -1.0 : r; };
    for (const auto& row : table.rows) {
        if (row.status != "ok" || !std::isfinite(row.RM)) continue;
        auto kc = std::make_tuple(row.delta, row.lambda, rho_key(row.huber_rho), mkey(row.M));
        if (better(best_c[kc], row, &SweepRow::c)) best_c[kc] = &row;
        auto kl = std::make_tuple(row.delta, row.c, rho_key(row.huber_rho), mkey(row.M));
        if (better(best_l[kl], row, &SweepRow::lambda)) best_l[kl] = &row;
    }
    for (const auto& [k, r] : best_c)
        table.optima.push_back({"c_star", r->delta, r->c, r->lambda, r->huber_rho, r->M, r->RM});
    for (const auto& [k, r] : best_l)
        table.optima.push_back({"lambda_star", r->delta, r->c, r->lambda, r->huber_rho, r->M, r->RM});
    return table;
}

}  // namespace subag
