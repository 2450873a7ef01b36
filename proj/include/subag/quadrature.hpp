#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "subag/distributions.hpp"
#include "subag/error.hpp"

namespace subag {

struct MonteCarloNoise {
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 0;
};

struct QuadratureConfig {
    /// Gauss-Hermite nodes for smooth Gaussian integrands.
    int gauss_nodes = 64;
    /// Gauss-Legendre nodes per panel when the integrand has kinks.
    int panel_nodes = 16;
    double panel_width = 2.0;
    /// Panels cover [-truncation, truncation] in standard-normal units.
    double truncation = 9.0;
    /// Quantile-rule nodes for Student-t noise.
    int noise_nodes = 128;
    /// When set, Student-t noise is integrated by seeded Monte Carlo instead.
    std::optional<MonteCarloNoise> monte_carlo;
    /// Student-t noise nodes are clamped to +-tail_truncation * scale.
    double tail_truncation = 40.0;

    void validate() const;
};

struct Node {
    double x;
    double w;
};

/// Probabilists' Gauss-Hermite rule: nodes for N(0,1), weights summing to 1. Cached.
const std::vector<Node>& gauss_hermite(int n);
/// Gauss-Legendre rule on [-1, 1]. Cached.
const std::vector<Node>& gauss_legendre(int n);

namespace detail {

template <class R>
R zero_of() {
    if constexpr (std::is_arithmetic_v<R>)
        return R(0);
    else
        return R::Zero();
}

inline bool all_finite(double v) { return std::isfinite(v); }

template <class R>
bool all_finite(const R& v) {
    return v.allFinite();
}

}  // namespace detail

/// Small fixed-capacity list of kink locations.
struct Breaks {
    static constexpr int kCapacity = 16;
    std::array<double, kCapacity> v{};
    int n = 0;

    void add(double x) {
        if (!std::isfinite(x)) return;
        if (n == kCapacity) throw std::logic_error("too many integrand breakpoints");
        v[static_cast<std::size_t>(n++)] = x;
    }
    bool empty() const noexcept { return n == 0; }
};

/**
 * Expectations over standard normal variables.
 *
 * Smooth integrands use Gauss-Hermite. Integrands with kinks use composite
 * Gauss-Legendre on [-L, L] with panel edges placed on the kinks, which keeps
 * the rule exact-order on every smooth piece.
 */
class Integrator {
public:
    explicit Integrator(const QuadratureConfig& cfg = {});

    const QuadratureConfig& config() const noexcept { return cfg_; }

    // Integrands may return double or a fixed-size Eigen vector (several moments in one pass).

    /// E[f(H)], H ~ N(0, 1).
    template <class F>
    auto normal(F&& f) const {
        using R = std::decay_t<decltype(f(0.0))>;
        R s = detail::zero_of<R>();
        for (const auto& nd : *gh_) s += nd.w * f(nd.x);
        return s;
    }

    /// E[f(H)] where f may fail to be smooth at the given points.
    template <class F>
    auto normal(F&& f, const Breaks& breaks) const {
        using R = std::decay_t<decltype(f(0.0))>;
        if (breaks.empty()) return normal(f);
        std::array<double, Breaks::kCapacity + 2> edges{};
        int ne = 0;
        edges[ne++] = -L_;
        for (int i = 0; i < breaks.n; ++i) {
            const double b = breaks.v[static_cast<std::size_t>(i)];
            if (b > -L_ && b < L_) edges[ne++] = b;
        }
        edges[ne++] = L_;
        std::sort(edges.begin(), edges.begin() + ne);
        R s = detail::zero_of<R>();
        for (int e = 0; e + 1 < ne; ++e) {
            const double a = edges[static_cast<std::size_t>(e)];
            const double b = edges[static_cast<std::size_t>(e + 1)];
            if (b - a <= 0.0) continue;
            const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / width_)));
            const double h = (b - a) / panels;
            for (int k = 0; k < panels; ++k) {
                const double mid = a + (k + 0.5) * h;
                for (const auto& nd : *gl_) {
                    const double x = mid + 0.5 * h * nd.x;
                    s += (0.5 * h * nd.w * kInvSqrt2Pi * std::exp(-0.5 * x * x)) * f(x);
                }
            }
        }
        return s;
    }

    /**
     * sum_u w_u E[f(u, G)] over an outer node list, G ~ N(0, 1).
     * kinks(u, Breaks&) appends the non-smooth points of g -> f(u, g).
     */
    template <class F, class K>
    auto outer_single(std::span<const Node> outer, F&& f, K&& kinks) const {
        using R = std::decay_t<decltype(f(0.0, 0.0))>;
        R s = detail::zero_of<R>();
        for (const auto& o : outer) {
            Breaks br;
            kinks(o.x, br);
            const R v = normal([&](double g) { return f(o.x, g); }, br);
            if (!detail::all_finite(v)) throw IntegrationError("non-finite integrand value", o.x);
            s += o.w * v;
        }
        return s;
    }

    /**
     * sum_u w_u E[f(u, G, Gt)] with (G, Gt) standard bivariate normal, corr(G, Gt) = eta,
     * realized as Gt = eta G + sqrt(1 - eta^2) Gbar.
     * kinks_g(u, Breaks&) gives kinks of f in g, kinks_gt(u, Breaks&) kinks in gt.
     */
    template <class F, class KG, class KT>
    auto outer_pair(std::span<const Node> outer, double eta, F&& f, KG&& kinks_g, KT&& kinks_gt) const {
        using R = std::decay_t<decltype(f(0.0, 0.0, 0.0))>;
        if (!(std::abs(eta) <= 1.0)) throw DomainError("correlation must lie in [-1, 1]");
        const double r2 = 1.0 - eta * eta;
        R s = detail::zero_of<R>();
        for (const auto& o : outer) {
            const double u = o.x;
            Breaks kg, kt;
            kinks_g(u, kg);
            kinks_gt(u, kt);
            R v;
            if (r2 < 1e-14) {
                const double sg = eta >= 0.0 ? 1.0 : -1.0;
                Breaks mid = kg;
                for (int i = 0; i < kt.n; ++i) mid.add(sg * kt.v[static_cast<std::size_t>(i)]);
                v = normal([&](double g) { return f(u, g, sg * g); }, mid);
            } else {
                const double r = std::sqrt(r2);
                Breaks mid = kg;
                if (eta != 0.0)
                    for (int i = 0; i < kt.n; ++i) mid.add(kt.v[static_cast<std::size_t>(i)] / eta);
                v = normal(
                    [&](double g) {
                        Breaks inner;
                        for (int i = 0; i < kt.n; ++i) inner.add((kt.v[static_cast<std::size_t>(i)] - eta * g) / r);
                        return normal([&](double gb) { return f(u, g, eta * g + r * gb); }, inner);
                    },
                    mid);
            }
            if (!detail::all_finite(v)) throw IntegrationError("non-finite integrand value", u);
            s += o.w * v;
        }
        return s;
    }

    /// Outer nodes for Theta: atoms plus Gauss-Hermite for a Gaussian component.
    std::vector<Node> signal_nodes(const SignalDist& signal) const;
    /// Outer nodes for Z: Gauss-Hermite, a quantile rule for Student-t, or Monte Carlo.
    std::vector<Node> noise_nodes(const NoiseDist& noise) const;

private:
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    QuadratureConfig cfg_;
    const std::vector<Node>* gh_;
    const std::vector<Node>* gl_;
    double L_;
    double width_;
};

inline void no_kinks(double, Breaks&) {}

using KinkFn = std::function<void(double, Breaks&)>;

/// E[f(Theta, H)] with H ~ N(0,1) independent of Theta ~ signal.
double expect_theta_h(const std::function<double(double, double)>& f, const QuadratureConfig& cfg,
                      const SignalDist& signal, const KinkFn& kinks_h = no_kinks);

/// E[f(Z, G, Gt)] with Z ~ noise independent of (G, Gt), corr(G, Gt) = eta.
double expect_corr_pair(const std::function<double(double, double, double)>& f, double eta,
                        const QuadratureConfig& cfg, const NoiseDist& noise, const KinkFn& kinks_g = no_kinks,
                        const KinkFn& kinks_gt = no_kinks);

}  // namespace subag
