#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace subag {

/**
 * Differentiable convex loss applied to residuals.
 *
 * Square:    l(x) = x^2 / 2
 * Huber(rho): l(x) = x^2 / (2 rho)       if |x| <= rho
 *                    |x| - rho / 2        otherwise
 *
 * Huber(rho) is the Moreau envelope of |.| at parameter rho, so its derivative
 * is (1/rho)-Lipschitz and clipped to [-1, 1].
 */
class LossSpec {
public:
    enum class Kind { Square, Huber };

    static LossSpec square() { return LossSpec(Kind::Square, 1.0); }
    static LossSpec huber(double rho);

    Kind kind() const noexcept { return kind_; }
    double rho() const noexcept { return rho_; }

    /// Lipschitz constant of l'.
    double lipschitz() const noexcept { return kind_ == Kind::Square ? 1.0 : 1.0 / rho_; }

    double value(double r) const noexcept;
    double deriv(double r) const noexcept;
    /// l''(r); Huber counts |r| == rho as inside the quadratic zone.
    double second(double r) const noexcept;

    std::string name() const;
    bool operator==(const LossSpec&) const = default;

private:
    LossSpec(Kind k, double rho) : kind_(k), rho_(rho) {}
    Kind kind_;
    double rho_;
};

/**
 * Separable penalty g(b) = lambda1 b^2 / 2 + lambda2 |b|.
 *
 * The kind is kept even when the weights vanish: Ridge(0), Lasso(0) and None
 * are the same function, but Ridge(0) and Lasso(0) name the ridgeless and
 * lassoless limits lambda -> 0+.
 */
class RegSpec {
public:
    enum class Kind { None, Ridge, Lasso, ElasticNet };

    static RegSpec none() { return RegSpec(Kind::None, 0.0, 0.0); }
    static RegSpec ridge(double lambda1);
    static RegSpec lasso(double lambda2);
    static RegSpec elastic_net(double lambda1, double lambda2);

    Kind kind() const noexcept { return kind_; }
    double lambda1() const noexcept { return lambda1_; }
    double lambda2() const noexcept { return lambda2_; }

    /// The penalty s * g, same kind.
    RegSpec scaled(double s) const;
    /// Overall regularization level used by the least-squares parameterization.
    double level() const noexcept;
    /// True when the penalty term is identically zero.
    bool vanishes() const noexcept { return lambda1_ == 0.0 && lambda2_ == 0.0; }
    bool strongly_convex() const noexcept { return lambda1_ > 0.0; }

    double value(double b) const noexcept;

    std::string name() const;
    bool operator==(const RegSpec&) const = default;

private:
    RegSpec(Kind k, double l1, double l2) : kind_(k), lambda1_(l1), lambda2_(l2) {}
    Kind kind_;
    double lambda1_;
    double lambda2_;
};

// Proximal calculus. Every function throws DomainError when tau <= 0.
//   prox_f(x; tau)       = argmin_y f(y) + (x - y)^2 / (2 tau)
//   env_f'(x; tau)       = (x - prox_f(x; tau)) / tau

double prox(const LossSpec& f, double x, double tau);
double prox(const RegSpec& f, double x, double tau);

/// Derivative in x. At the lasso kink |x| = lambda2 tau the right limit is returned.
double prox_prime(const LossSpec& f, double x, double tau);
double prox_prime(const RegSpec& f, double x, double tau);

double env_prime(const LossSpec& f, double x, double tau);
double env_prime(const RegSpec& f, double x, double tau);

/// Points where x -> prox_f(x; tau) is not differentiable (sorted).
std::vector<double> prox_kinks(const LossSpec& f, double tau);
std::vector<double> prox_kinks(const RegSpec& f, double tau);

/// Soft threshold (|x| - t)_+ sign(x).
double soft_threshold(double x, double t) noexcept;

/// Coordinate-wise l'(r).
Eigen::VectorXd loss_grad(const LossSpec& f, const Eigen::Ref<const Eigen::VectorXd>& r);

}  // namespace subag
