#include "subag/distributions.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "subag/error.hpp"

namespace subag {

double standard_normal(Engine& eng) {
    static const boost::math::normal_distribution<double> N01;
    return boost::math::quantile(N01, uniform_open(eng));
}

SignalDist SignalDist::two_point(double strength, double support) {
    if (!std::isfinite(strength)) throw DomainError("signal strength must be finite");
    if (!(support > 0.0 && support <= 1.0)) throw DomainError("signal support must lie in (0, 1]");
    return SignalDist(Kind::TwoPointSparse, strength, support);
}

SignalDist SignalDist::gauss_point_mass(double eps, double variance) {
    if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("Gaussian mixture weight must lie in (0, 1]");
    if (!(variance > 0.0) || !std::isfinite(variance)) throw DomainError("signal variance must be positive");
    return SignalDist(Kind::GaussPointMass, eps, variance);
}

SignalDist SignalDist::point_mass(double value) {
    if (!std::isfinite(value)) throw DomainError("point mass location must be finite");
    return SignalDist(Kind::PointMass, value, 0.0);
}

double SignalDist::second_moment() const noexcept {
    switch (kind_) {
        case Kind::TwoPointSparse: return p1_ * p1_;
        case Kind::GaussPointMass: return p1_ * p2_;
        case Kind::PointMass: return p1_ * p1_;
    }
    return 0.0;
}

bool SignalDist::is_zero() const noexcept {
    return (kind_ == Kind::PointMass || kind_ == Kind::TwoPointSparse) && p1_ == 0.0;
}

double SignalDist::sample(Engine& eng) const {
    switch (kind_) {
        case Kind::TwoPointSparse: return uniform_open(eng) < p2_ ? p1_ / std::sqrt(p2_) : 0.0;
        case Kind::GaussPointMass: {
            const double u = uniform_open(eng);
            const double g = standard_normal(eng);
            return u < p1_ ? std::sqrt(p2_) * g : 0.0;
        }
        case Kind::PointMass: return p1_;
    }
    return 0.0;
}

std::vector<SignalDist::Atom> SignalDist::atoms() const {
    switch (kind_) {
        case Kind::TwoPointSparse:
            if (p2_ == 1.0) return {{p1_, 1.0}};
            return {{0.0, 1.0 - p2_}, {p1_ / std::sqrt(p2_), p2_}};
        case Kind::GaussPointMass:
            if (p1_ == 1.0) return {};
            return {{0.0, 1.0 - p1_}};
        case Kind::PointMass: return {{p1_, 1.0}};
    }
    return {};
}

double SignalDist::gaussian_weight() const noexcept {
    return kind_ == Kind::GaussPointMass ? p1_ : 0.0;
}

double SignalDist::gaussian_variance() const noexcept {
    return kind_ == Kind::GaussPointMass ? p2_ : 0.0;
}

std::string SignalDist::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::TwoPointSparse: os << "two_point(strength=" << p1_ << ",support=" << p2_ << ")"; break;
        case Kind::GaussPointMass: os << "gauss_point_mass(eps=" << p1_ << ",variance=" << p2_ << ")"; break;
        case Kind::PointMass: os << "point_mass(" << p1_ << ")"; break;
    }
    return os.str();
}

NoiseDist NoiseDist::gaussian(double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be non-negative");
    return NoiseDist(Kind::Gaussian, sigma, std::numeric_limits<double>::infinity());
}

NoiseDist NoiseDist::student_t(double dof, double scale) {
    if (!(dof >= 2.0) || !std::isfinite(dof)) throw DomainError("Student-t degrees of freedom must be >= 2");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw DomainError("Student-t scale must be positive");
    return NoiseDist(Kind::StudentT, scale, dof);
}

double NoiseDist::second_moment() const noexcept {
    if (kind_ == Kind::Gaussian) return scale_ * scale_;
    if (dof_ <= 2.0) return std::numeric_limits<double>::infinity();
    return scale_ * scale_ * dof_ / (dof_ - 2.0);
}

double NoiseDist::effective_variance() const noexcept {
    const double m2 = second_moment();
    return std::isfinite(m2) ? m2 : scale_ * scale_;
}

double NoiseDist::quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
    if (kind_ == Kind::Gaussian) {
        static const boost::math::normal_distribution<double> N01;
        return scale_ * boost::math::quantile(N01, u);
    }
    const boost::math::students_t_distribution<double> t(dof_);
    return scale_ * boost::math::quantile(t, u);
}

double NoiseDist::sample(Engine& eng) const {
    if (kind_ == Kind::Gaussian) return scale_ * standard_normal(eng);
    return quantile(uniform_open(eng));
}

std::string NoiseDist::describe() const {
    std::ostringstream os;
    if (kind_ == Kind::Gaussian) {
        os << "gaussian(sigma=" << scale_ << ")";
    } else {
        os << "student_t(dof=" << dof_ << ",scale=" << scale_ << ")";
    }
    return os.str();
}

}  // namespace subag
