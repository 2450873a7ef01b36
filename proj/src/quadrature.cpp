#include "subag/quadrature.hpp"

#include <map>
#include <mutex>

#include <Eigen/Eigenvalues>

namespace subag {

namespace {

// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix,
// weights are mass * (first eigenvector component)^2.
std::vector<Node> golub_welsch(int n, double mass, double (*offdiag)(int)) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k - 1, k) = J(k, k - 1) = offdiag(k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    std::vector<Node> nodes(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double v = es.eigenvectors()(0, i);
        nodes[static_cast<std::size_t>(i)] = {es.eigenvalues()(i), mass * v * v};
    }
    // Both weight functions are even; symmetrize so odd integrands cancel exactly.
    for (int i = 0; i < n / 2; ++i) {
        auto& a = nodes[static_cast<std::size_t>(i)];
        auto& b = nodes[static_cast<std::size_t>(n - 1 - i)];
        const double x = 0.5 * (b.x - a.x);
        const double w = 0.5 * (a.w + b.w);
        a = {-x, w};
        b = {x, w};
    }
    if (n % 2 == 1) nodes[static_cast<std::size_t>(n / 2)].x = 0.0;
    double total = 0.0;
    for (const auto& nd : nodes) total += nd.w;
    for (auto& nd : nodes) nd.w *= mass / total;
    return nodes;
}

double hermite_offdiag(int k) { return std::sqrt(static_cast<double>(k)); }
double legendre_offdiag(int k) {
    const double kk = static_cast<double>(k);
    return kk / std::sqrt(4.0 * kk * kk - 1.0);
}

const std::vector<Node>& cached_rule(int n, bool hermite) {
    static std::mutex mu;
    static std::map<std::pair<int, bool>, std::vector<Node>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, hermite);
    auto it = cache.find(key);
    if (it == cache.end()) {
        auto rule = hermite ? golub_welsch(n, 1.0, hermite_offdiag) : golub_welsch(n, 2.0, legendre_offdiag);
        it = cache.emplace(key, std::move(rule)).first;
    }
    return it->second;
}

}  // namespace

void QuadratureConfig::validate() const {
    if (gauss_nodes < 8) throw DomainError("gauss_nodes must be at least 8");
    if (panel_nodes < 2) throw DomainError("panel_nodes must be at least 2");
    if (!(panel_width > 0.0)) throw DomainError("panel_width must be positive");
    if (!(truncation >= 5.0)) throw DomainError("truncation must be at least 5");
    if (noise_nodes < 16) throw DomainError("noise_nodes must be at least 16");
    if (!(tail_truncation > 0.0)) throw DomainError("tail_truncation must be positive");
    if (monte_carlo && monte_carlo->samples < 1) throw DomainError("monte_carlo samples must be positive");
}

const std::vector<Node>& gauss_hermite(int n) {
    if (n < 1) throw DomainError("rule size must be positive");
    return cached_rule(n, true);
}

const std::vector<Node>& gauss_legendre(int n) {
    if (n < 1) throw DomainError("rule size must be positive");
    return cached_rule(n, false);
}

Integrator::Integrator(const QuadratureConfig& cfg)
    : cfg_(cfg), gh_(nullptr), gl_(nullptr), L_(cfg.truncation), width_(cfg.panel_width) {
    cfg_.validate();
    gh_ = &gauss_hermite(cfg_.gauss_nodes);
    gl_ = &gauss_legendre(cfg_.panel_nodes);
}

std::vector<Node> Integrator::signal_nodes(const SignalDist& signal) const {
    std::vector<Node> out;
    for (const auto& a : signal.atoms())
        if (a.weight > 0.0) out.push_back({a.value, a.weight});
    const double eps = signal.gaussian_weight();
    if (eps > 0.0) {
        const double sd = std::sqrt(signal.gaussian_variance());
        for (const auto& nd : *gh_) out.push_back({sd * nd.x, eps * nd.w});
    }
    return out;
}

std::vector<Node> Integrator::noise_nodes(const NoiseDist& noise) const {
    if (noise.is_gaussian()) {
        if (noise.sigma() == 0.0) return {{0.0, 1.0}};
        std::vector<Node> out;
        out.reserve(gh_->size());
        for (const auto& nd : *gh_) out.push_back({noise.sigma() * nd.x, nd.w});
        return out;
    }
    const double clamp = cfg_.tail_truncation * noise.scale();
    if (cfg_.monte_carlo) {
        Engine eng = make_engine(cfg_.monte_carlo->seed, {0x6e6f697365ULL});
        const auto m = cfg_.monte_carlo->samples;
        std::vector<Node> out(m);
        const double w = 1.0 / static_cast<double>(m);
        for (auto& nd : out) nd = {std::clamp(noise.sample(eng), -clamp, clamp), w};
        return out;
    }
    // Composite Gauss-Legendre in the uniform variable u with panels graded
    // toward both tails; z = F^{-1}(u).
    static constexpr std::array<double, 12> left = {0.0,  1e-14, 1e-10, 1e-7, 1e-5, 1e-4,
                                                     1e-3, 1e-2,  5e-2,  0.15, 0.3,  0.5};
    std::vector<double> edges(left.begin(), left.end());
    for (int i = static_cast<int>(left.size()) - 2; i >= 0; --i) edges.push_back(1.0 - left[static_cast<std::size_t>(i)]);
    const int panels = static_cast<int>(edges.size()) - 1;
    const auto& gl = gauss_legendre(std::max(4, cfg_.noise_nodes / panels));
    std::vector<Node> out;
    for (int k = 0; k < panels; ++k) {
        const double a = edges[static_cast<std::size_t>(k)];
        const double b = edges[static_cast<std::size_t>(k + 1)];
        const double mid = 0.5 * (a + b);
        const double half = 0.5 * (b - a);
        for (const auto& nd : gl) {
            const double u = mid + half * nd.x;
            out.push_back({std::clamp(noise.quantile(u), -clamp, clamp), half * nd.w});
        }
    }
    return out;
}

double expect_theta_h(const std::function<double(double, double)>& f, const QuadratureConfig& cfg,
                      const SignalDist& signal, const KinkFn& kinks_h) {
    Integrator integ(cfg);
    const auto outer = integ.signal_nodes(signal);
    return integ.outer_single(outer, f, kinks_h);
}

double expect_corr_pair(const std::function<double(double, double, double)>& f, double eta,
                        const QuadratureConfig& cfg, const NoiseDist& noise, const KinkFn& kinks_g,
                        const KinkFn& kinks_gt) {
    if (!(std::abs(eta) <= 1.0)) throw DomainError("correlation must lie in [-1, 1]");
    Integrator integ(cfg);
    const auto outer = integ.noise_nodes(noise);
    return integ.outer_pair(outer, eta, f, kinks_g, kinks_gt);
}

}  // namespace subag
