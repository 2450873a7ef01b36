#pragma once

#include <string>
#include <vector>

#include "subag/rng.hpp"

namespace subag {

/// Law F_theta of the i.i.d. signal coordinates.
class SignalDist {
public:
    enum class Kind { TwoPointSparse, GaussPointMass, PointMass };

    /// strength / sqrt(support) with probability `support`, else 0.
    static SignalDist two_point(double strength, double support);
    /// N(0, variance) with probability eps, else 0.
    static SignalDist gauss_point_mass(double eps, double variance);
    static SignalDist point_mass(double value);

    Kind kind() const noexcept { return kind_; }
    double param1() const noexcept { return p1_; }
    double param2() const noexcept { return p2_; }

    double second_moment() const noexcept;
    /// P(Theta == 0) == 1.
    bool is_zero() const noexcept;
    double sample(Engine& eng) const;

    struct Atom {
        double value;
        double weight;
    };
    /// Discrete part of the law.
    std::vector<Atom> atoms() const;
    /// Weight and variance of the centred Gaussian component (0 if none).
    double gaussian_weight() const noexcept;
    double gaussian_variance() const noexcept;

    std::string describe() const;

private:
    SignalDist(Kind k, double a, double b) : kind_(k), p1_(a), p2_(b) {}
    Kind kind_;
    double p1_;
    double p2_;
};

/// Law F_eps of the i.i.d. noise coordinates.
class NoiseDist {
public:
    enum class Kind { Gaussian, StudentT };

    /// sigma >= 0; sigma == 0 is the noiseless model.
    static NoiseDist gaussian(double sigma);
    /// dof >= 2; dof <= 2 has infinite variance.
    static NoiseDist student_t(double dof, double scale = 1.0);

    Kind kind() const noexcept { return kind_; }
    bool is_gaussian() const noexcept { return kind_ == Kind::Gaussian; }
    double sigma() const noexcept { return scale_; }
    double scale() const noexcept { return scale_; }
    double dof() const noexcept { return dof_; }

    double second_moment() const noexcept;
    bool heavy_tailed() const noexcept { return kind_ == Kind::StudentT && dof_ <= 2.0; }
    bool is_zero() const noexcept { return kind_ == Kind::Gaussian && scale_ == 0.0; }
    /// Second moment if finite, else scale^2; used only to seed solvers.
    double effective_variance() const noexcept;

    double quantile(double u) const;
    double sample(Engine& eng) const;

    std::string describe() const;

private:
    NoiseDist(Kind k, double scale, double dof) : kind_(k), scale_(scale), dof_(dof) {}
    Kind kind_;
    double scale_;
    double dof_;
};

}  // namespace subag
