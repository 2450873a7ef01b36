#pragma once

#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "subag/distributions.hpp"
#include "subag/prox.hpp"
#include "subag/quadrature.hpp"

namespace subag {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Solution (alpha, beta, kappa, nu) of the single-estimator system.
struct SystemSolution {
    double alpha = kNaN;  ///< limiting estimation error ||theta_hat - theta|| / sqrt(p)
    double beta = kNaN;   ///< limiting loss-gradient norm
    double kappa = kNaN;  ///< limiting df / tr[V]
    double nu = kNaN;     ///< limiting tr[V] / p
    double residual = kNaN;
    std::string route;
    int iterations = 0;
};

/// Solution (eta_G, eta_H) of the correlation system for one pair of components.
struct CorrSolution {
    double eta_g = kNaN;
    double eta_h = kNaN;
    int iterations = 0;
    /// eta_H iterates starting from 0; the last entry is the returned eta_H.
    std::vector<double> iterates;
    /// True when the fixed-point loop stalled and a bracketed root finder finished the job.
    bool bracketed = false;
};

/// Solution of the least-squares systems in the (tau, a, xi) parameterization.
struct LsqSolution {
    double tau = kNaN;
    double a = kNaN;
    std::optional<double> xi;
    double sigma2 = kNaN;
    /// eta_H = c xi^2 / tau^2 when xi is available.
    double eta_h = kNaN;
    int iterations = 0;

    double R1() const { return tau * tau - sigma2; }
    double Rinf() const { return xi ? *xi * *xi - sigma2 : kNaN; }
};

struct Component {
    LossSpec loss;
    RegSpec reg;
    double c;  ///< subsample ratio k / n in (0, 1]
};

/// Number of ensemble members; nullopt encodes M = infinity.
struct EnsembleSize {
    std::optional<long> m;

    static EnsembleSize finite(long m);
    static EnsembleSize infinite() { return {}; }
    bool is_infinite() const noexcept { return !m.has_value(); }
    std::string str() const;
    bool operator==(const EnsembleSize&) const = default;
};

struct EnsembleConfig {
    double delta;
    std::vector<Component> components;
};

struct SolverOptions {
    double tol = 1e-9;
    int max_iter = 2000;
    /// Skip the least-squares and ridge shortcuts and run the generic damped fixed point.
    bool force_generic = false;
    /// Start of the generic iteration; defaults to the square-loss ridge solution.
    std::optional<SystemSolution> initial;
};

/// Max absolute defect of the four single-estimator equations at `sol`.
double sys1a_residual(const SystemSolution& sol, const LossSpec& loss, const RegSpec& reg, double cdelta,
                      const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg = {});

SystemSolution solve_sys1a(const LossSpec& loss, const RegSpec& reg, double cdelta, const SignalDist& signal,
                           const NoiseDist& noise, const QuadratureConfig& cfg = {}, const SolverOptions& opts = {});

double eval_F_loss(double eta_g, const SystemSolution& solA, const SystemSolution& solB, double c, double ct,
                   const LossSpec& lossA, const LossSpec& lossB, const NoiseDist& noise,
                   const QuadratureConfig& cfg = {});

double eval_F_reg(double eta_h, const SystemSolution& solA, const SystemSolution& solB, const RegSpec& regA,
                  const RegSpec& regB, const SignalDist& signal, const QuadratureConfig& cfg = {});

CorrSolution solve_sys1b(const SystemSolution& solA, const SystemSolution& solB, const Component& A,
                         const Component& B, const SignalDist& signal, const NoiseDist& noise,
                         const QuadratureConfig& cfg = {}, double tol = 1e-10, int max_iter = 200);

/// Signs of F_g(F_l(0)) and F_l(F_g(0)), each in {-1, 0, 1}; |x| <= zero_tol counts as 0.
std::pair<int, int> sign_pattern(const SystemSolution& solA, const SystemSolution& solB, const Component& A,
                                 const Component& B, const SignalDist& signal, const NoiseDist& noise,
                                 const QuadratureConfig& cfg = {}, double zero_tol = 1e-13);

/// Penalty lambda * g0: `base` fixes the shape and is rescaled so that base.level() == 1.
LsqSolution solve_sys2(const RegSpec& base, double lambda, double cdelta, double sigma2, const SignalDist& signal,
                       const QuadratureConfig& cfg = {}, bool want_xi = false, double c = 1.0);

/// Maps a least-squares solution to (alpha, beta, kappa, nu).
SystemSolution lsq_to_system(const LsqSolution& s, double lambda, double cdelta);

SystemSolution solve_sys3(const LossSpec& loss, double lambda, double cdelta, const SignalDist& signal,
                          const NoiseDist& noise, const QuadratureConfig& cfg = {}, double tol = 1e-12);

/// Homogeneous correlations for the ridge-regularized system.
CorrSolution solve_sys3_corr(const SystemSolution& sol, const LossSpec& loss, double lambda, double c, double delta,
                             const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg = {},
                             double tol = 1e-12, int max_iter = 500);

enum class Interpolator { Ridgeless, Lassoless };

LsqSolution solve_sys4(Interpolator kind, double c, double delta, double sigma2, const SignalDist& signal,
                       const QuadratureConfig& cfg = {}, bool want_xi = false);

/// Everything the homogeneous risk formula needs for one (loss, reg, c, delta).
struct TheoryPoint {
    SystemSolution sys;
    double tau = kNaN, a = kNaN, xi = kNaN;
    double eta_g = kNaN, eta_h = kNaN;
    double R1 = kNaN, Rinf = kNaN;
    std::string route;

    double alpha2() const { return R1; }
    double RM(const EnsembleSize& M) const;
};

TheoryPoint homogeneous_theory(const LossSpec& loss, const RegSpec& reg, double c, double delta,
                               const SignalDist& signal, const NoiseDist& noise, const QuadratureConfig& cfg = {});

/// R_1 / M + (1 - 1/M) R_inf.
double homogeneous_risk(double R1, double Rinf, const EnsembleSize& M);

/// Pairwise eta_G; entry (m, l) for m != l must be set.
using CorrMatrix = std::vector<std::vector<std::optional<double>>>;

/// (1/M^2) sum_m alpha_m^2 + (1/M^2) sum_{m != l} eta_G(m, l) alpha_m alpha_l.
double ensemble_risk(const std::vector<SystemSolution>& solutions, const CorrMatrix& eta_g);

/// Solves every component and pair, then assembles the heterogeneous risk.
double ensemble_risk(const EnsembleConfig& ens, const SignalDist& signal, const NoiseDist& noise,
                     const QuadratureConfig& cfg = {});

struct SweepGrid {
    std::vector<double> delta;
    std::vector<double> c;
    std::vector<double> lambda;
    std::vector<EnsembleSize> M;
    /// Empty means square loss; otherwise one Huber threshold per entry.
    std::vector<double> huber_rho;
    RegSpec::Kind reg = RegSpec::Kind::Ridge;
    /// For elastic net: lambda1 = ratio * lambda, lambda2 = (1 - ratio) * lambda.
    double elastic_ratio = 0.5;
    SignalDist signal = SignalDist::point_mass(1.0);
    NoiseDist noise = NoiseDist::gaussian(1.0);
};

struct SweepRow {
    double delta, c, lambda, huber_rho;
    EnsembleSize M;
    TheoryPoint th;
    double RM = kNaN;
    std::string status;
};

struct SweepOptimum {
    std::string kind;  ///< "c_star" (argmin over c) or "lambda_star" (argmin over lambda)
    double delta, c, lambda, huber_rho;
    EnsembleSize M;
    double RM;
};

struct SweepTable {
    std::vector<SweepRow> rows;
    std::vector<SweepOptimum> optima;
};

RegSpec make_penalty(RegSpec::Kind kind, double lambda, double elastic_ratio = 0.5);

/// Rows ordered by (delta, c, lambda, huber_rho, M) grid index. Per-point failures land in `status`.
SweepTable sweep(const SweepGrid& grid, const QuadratureConfig& cfg = {}, int workers = 1);

}  // namespace subag
