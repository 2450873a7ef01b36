#include "subag/prox.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "subag/error.hpp"

namespace subag {

namespace {

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw DomainError("proximal parameter tau must be positive and finite");
    }
}

void check_weight(double w, const char* what) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
        throw DomainError(std::string(what) + " must be a finite non-negative number");
    }
}

}  // namespace

LossSpec LossSpec::huber(double rho) {
    if (!(rho > 0.0) || !std::isfinite(rho)) throw DomainError("Huber threshold must be positive");
    return LossSpec(Kind::Huber, rho);
}

double LossSpec::value(double r) const noexcept {
    if (kind_ == Kind::Square) return 0.5 * r * r;
    const double a = std::abs(r);
    return a <= rho_ ? r * r / (2.0 * rho_) : a - 0.5 * rho_;
}

double LossSpec::deriv(double r) const noexcept {
    if (kind_ == Kind::Square) return r;
    return std::clamp(r / rho_, -1.0, 1.0);
}

double LossSpec::second(double r) const noexcept {
    if (kind_ == Kind::Square) return 1.0;
    return std::abs(r) <= rho_ ? 1.0 / rho_ : 0.0;
}

std::string LossSpec::name() const {
    if (kind_ == Kind::Square) return "square";
    std::ostringstream os;
    os << "huber(" << rho_ << ")";
    return os.str();
}

RegSpec RegSpec::ridge(double lambda1) {
    check_weight(lambda1, "ridge weight");
    return RegSpec(Kind::Ridge, lambda1, 0.0);
}

RegSpec RegSpec::lasso(double lambda2) {
    check_weight(lambda2, "lasso weight");
    return RegSpec(Kind::Lasso, 0.0, lambda2);
}

RegSpec RegSpec::elastic_net(double lambda1, double lambda2) {
    check_weight(lambda1, "elastic-net ridge weight");
    check_weight(lambda2, "elastic-net lasso weight");
    return RegSpec(Kind::ElasticNet, lambda1, lambda2);
}

RegSpec RegSpec::scaled(double s) const {
    check_weight(s, "penalty scale");
    return RegSpec(kind_, lambda1_ * s, lambda2_ * s);
}

double RegSpec::level() const noexcept {
    switch (kind_) {
        case Kind::None: return 0.0;
        case Kind::Ridge: return lambda1_;
        case Kind::Lasso: return lambda2_;
        case Kind::ElasticNet: return lambda2_ > 0.0 ? lambda2_ : lambda1_;
    }
    return 0.0;
}

double RegSpec::value(double b) const noexcept {
    return 0.5 * lambda1_ * b * b + lambda2_ * std::abs(b);
}

std::string RegSpec::name() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::None: os << "none"; break;
        case Kind::Ridge: os << "ridge(" << lambda1_ << ")"; break;
        case Kind::Lasso: os << "lasso(" << lambda2_ << ")"; break;
        case Kind::ElasticNet: os << "elastic_net(" << lambda1_ << "," << lambda2_ << ")"; break;
    }
    return os.str();
}

double soft_threshold(double x, double t) noexcept {
    const double a = std::abs(x) - t;
    if (a <= 0.0) return 0.0;
    return x > 0.0 ? a : -a;
}

double prox(const LossSpec& f, double x, double tau) {
    check_tau(tau);
    if (f.kind() == LossSpec::Kind::Square) return x / (1.0 + tau);
    return x - tau * std::clamp(x / (f.rho() + tau), -1.0, 1.0);
}

double prox(const RegSpec& f, double x, double tau) {
    check_tau(tau);
    // soft(x; lambda2 tau) / (1 + lambda1 tau)
    return soft_threshold(x, f.lambda2() * tau) / (1.0 + f.lambda1() * tau);
}

double prox_prime(const LossSpec& f, double x, double tau) {
    check_tau(tau);
    if (f.kind() == LossSpec::Kind::Square) return 1.0 / (1.0 + tau);
    return std::abs(x) <= f.rho() + tau ? f.rho() / (f.rho() + tau) : 1.0;
}

double prox_prime(const RegSpec& f, double x, double tau) {
    check_tau(tau);
    const double scale = 1.0 / (1.0 + f.lambda1() * tau);
    return std::abs(x) >= f.lambda2() * tau ? scale : 0.0;
}

double env_prime(const LossSpec& f, double x, double tau) {
    check_tau(tau);
    if (f.kind() == LossSpec::Kind::Square) return x / (1.0 + tau);
    return std::clamp(x / (f.rho() + tau), -1.0, 1.0);
}

double env_prime(const RegSpec& f, double x, double tau) {
    return (x - prox(f, x, tau)) / tau;
}

std::vector<double> prox_kinks(const LossSpec& f, double tau) {
    check_tau(tau);
    if (f.kind() == LossSpec::Kind::Square) return {};
    const double k = f.rho() + tau;
    return {-k, k};
}

std::vector<double> prox_kinks(const RegSpec& f, double tau) {
    check_tau(tau);
    if (f.lambda2() == 0.0) return {};
    const double k = f.lambda2() * tau;
    return {-k, k};
}

Eigen::VectorXd loss_grad(const LossSpec& f, const Eigen::Ref<const Eigen::VectorXd>& r) {
    if (f.kind() == LossSpec::Kind::Square) return r;
    const double rho = f.rho();
    return r.unaryExpr([rho](double v) { return std::clamp(v / rho, -1.0, 1.0); });
}

}  // namespace subag
