#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "subag/dataset.hpp"
#include "subag/error.hpp"
#include "subag/fixedpoint.hpp"
#include "subag/mestim.hpp"

using namespace subag;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian_matrix(Index k, Index p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(p)));
    MatrixXd X(k, p);
    for (Index i = 0; i < k; ++i)
        for (Index j = 0; j < p; ++j) X(i, j) = nd(rng);
    return X;
}

VectorXd gaussian_vector(Index n, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sd);
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = nd(rng);
    return v;
}

double huber_ridge_objective(const MatrixXd& X, const VectorXd& y, const VectorXd& th, double rho, double lam) {
    const auto l = LossSpec::huber(rho);
    const VectorXd r = y - X * th;
    double s = 0.5 * lam * th.squaredNorm();
    for (Index i = 0; i < r.size(); ++i) s += l.value(r(i));
    return s;
}

// Damped Newton on the Huber + ridge objective; written out independently of the library solver.
VectorXd newton_huber_ridge(const MatrixXd& X, const VectorXd& y, double rho, double lam) {
    VectorXd th = VectorXd::Zero(X.cols());
    for (int it = 0; it < 200; ++it) {
        const VectorXd r = y - X * th;
        VectorXd psi(r.size()), d(r.size());
        for (Index i = 0; i < r.size(); ++i) {
            psi(i) = std::abs(r(i)) <= rho ? r(i) / rho : (r(i) > 0 ? 1.0 : -1.0);
            d(i) = std::abs(r(i)) <= rho ? 1.0 / rho : 0.0;
        }
        const VectorXd grad = -X.transpose() * psi + lam * th;
        if (grad.norm() < 1e-14) break;
        MatrixXd H = X.transpose() * d.asDiagonal() * X;
        H.diagonal().array() += lam;
        const VectorXd step = H.ldlt().solve(-grad);
        double s = 1.0;
        const double f0 = huber_ridge_objective(X, y, th, rho, lam);
        while (huber_ridge_objective(X, y, th + s * step, rho, lam) > f0 + 1e-4 * s * grad.dot(step) && s > 1e-12)
            s *= 0.5;
        th += s * step;
    }
    return th;
}

const std::vector<LossSpec> kLosses = {LossSpec::square(), LossSpec::huber(0.5)};
const std::vector<RegSpec> kRegs = {RegSpec::ridge(0.3), RegSpec::lasso(0.2), RegSpec::elastic_net(0.2, 0.1)};

}  // namespace

TEST_CASE("subsample draws") {
    const auto full = draw_subsamples(10, {10}, 1);
    std::vector<Index> all(10);
    std::iota(all.begin(), all.end(), Index{0});
    CHECK(full[0].indices == all);

    const auto a = draw_subsamples(50, {20, 20, 7}, 99);
    const auto b = draw_subsamples(50, {20, 20, 7}, 99);
    for (std::size_t m = 0; m < a.size(); ++m) CHECK(a[m].indices == b[m].indices);
    CHECK(a[0].indices != a[1].indices);
    for (const auto& s : a) {
        CHECK(static_cast<Index>(s.indices.size()) == s.k);
        CHECK(std::is_sorted(s.indices.begin(), s.indices.end()));
        CHECK(std::adjacent_find(s.indices.begin(), s.indices.end()) == s.indices.end());
        CHECK(s.indices.front() >= 0);
        CHECK(s.indices.back() < 50);
    }
    CHECK_THROWS_AS(draw_subsamples(5, {6}, 0), DomainError);
    CHECK_THROWS_AS(draw_subsamples(5, {0}, 0), DomainError);
}

TEST_CASE("overlap of two half subsamples is hypergeometric") {
    const Index n = 40;
    const int reps = 10000;
    double sum = 0.0, sum2 = 0.0;
    std::vector<int> hits(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < reps; ++r) {
        const auto s = draw_subsamples(n, {n / 2, n / 2}, static_cast<std::uint64_t>(r));
        std::vector<Index> both;
        std::set_intersection(s[0].indices.begin(), s[0].indices.end(), s[1].indices.begin(), s[1].indices.end(),
                              std::back_inserter(both));
        const double o = static_cast<double>(both.size());
        sum += o;
        sum2 += o * o;
        for (Index i : s[0].indices) ++hits[static_cast<std::size_t>(i)];
    }
    const double mean = sum / reps, sd = std::sqrt(sum2 / reps - mean * mean);
    CHECK(std::abs(mean - n / 4.0) < 3.0 * sd / std::sqrt(static_cast<double>(reps)));
    // Each index lands in a half sample with probability 1/2.
    for (int h : hits) CHECK(std::abs(h / static_cast<double>(reps) - 0.5) < 4.0 * 0.5 / std::sqrt(double(reps)));
}

TEST_CASE("exact least squares and orthogonal lasso") {
    MatrixXd X = 2.0 * MatrixXd::Identity(2, 2);
    VectorXd y(2);
    y << 2.0, 4.0;
    const auto r = fit(X, y, LossSpec::square(), RegSpec::none());
    CHECK(r.theta_hat(0) == doctest::Approx(1.0));
    CHECK(r.theta_hat(1) == doctest::Approx(2.0));

    // Orthonormal columns: X'X = I and X'y = (3, 0.5).
    const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(gaussian_matrix(6, 2, 4)).householderQ() * MatrixXd::Identity(6, 2);
    VectorXd c(2);
    c << 3.0, 0.5;
    const VectorXd yq = Q * c;
    const auto l = fit(Q, yq, LossSpec::square(), RegSpec::lasso(1.0), {.tol = 1e-12});
    CHECK(std::abs(l.theta_hat(0) - 2.0) < 1e-10);
    CHECK(l.theta_hat(1) == 0.0);
    CHECK(l.active_set == std::vector<Index>{0});
}

TEST_CASE("Huber plus ridge against a Newton oracle") {
    const MatrixXd X = gaussian_matrix(20, 10, 5);
    VectorXd y = X * VectorXd::Ones(10) + gaussian_vector(20, 6);
    y(3) += 8.0;  // one gross outlier so both Huber regimes are active
    const auto r = fit(X, y, LossSpec::huber(0.7), RegSpec::ridge(0.4), {.tol = 1e-12});
    const VectorXd ref = newton_huber_ridge(X, y, 0.7, 0.4);
    CHECK((r.theta_hat - ref).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(r.inlier_set.size() < 20);
}

TEST_CASE("KKT certificates and monotone objective for every pair") {
    for (Index k : {30, 12}) {
        const MatrixXd X = gaussian_matrix(k, 20, 7 + static_cast<std::uint64_t>(k));
        const VectorXd y = gaussian_vector(k, 8, 1.5);
        for (const auto& loss : kLosses) {
            for (const auto& reg : kRegs) {
                FitOptions o;
                o.track_objective = true;
                const auto r = fit(X, y, loss, reg, o);
                CHECK(r.kkt_residual < 1e-8);
                CHECK(kkt_residual(X, y, r.theta_hat, loss, reg) < 1e-8);
                for (std::size_t i = 1; i < r.objective.size(); ++i)
                    CHECK(r.objective[i] <= r.objective[i - 1] + 1e-12 * std::abs(r.objective[i - 1]));
                const VectorXd v = X.transpose() * r.loss_grad_vec;
                for (Index j = 0; j < 20; ++j)
                    if (r.theta_hat(j) == 0.0) CHECK(std::abs(v(j)) <= reg.lambda2() + 1e-8);
                CHECK((r.residuals - (y - X * r.theta_hat)).norm() < 1e-12);
            }
        }
    }
}

TEST_CASE("row permutation leaves the fit unchanged") {
    const MatrixXd X = gaussian_matrix(40, 15, 11);
    const VectorXd y = gaussian_vector(40, 12);
    std::vector<Index> perm(40);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    for (const auto& reg : {RegSpec::ridge(0.5), RegSpec::elastic_net(0.5, 0.1)}) {
        const auto a = fit(X, y, LossSpec::huber(1.0), reg, {.tol = 1e-13});
        const auto b = fit(take_rows(X, perm), take_rows(y, perm), LossSpec::huber(1.0), reg, {.tol = 1e-13});
        CHECK((a.theta_hat - b.theta_hat).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("interpolation mode and unpenalized refusals") {
    const MatrixXd X = gaussian_matrix(15, 40, 13);
    const VectorXd y = gaussian_vector(15, 14);
    CHECK_THROWS_AS(fit(X, y, LossSpec::square(), RegSpec::none()), DomainError);

    FitOptions o;
    o.interpolate = true;
    for (const auto& reg : {RegSpec::lasso(1.0), RegSpec::none(), RegSpec::ridge(1.0)}) {
        const auto r = fit(X, y, LossSpec::square(), reg, o);
        CHECK(r.residuals.lpNorm<Eigen::Infinity>() < 1e-6 * y.lpNorm<Eigen::Infinity>());
    }
    // The ridgeless limit is the minimum-norm interpolator: orthogonal to the null space of X.
    const auto mn = fit(X, y, LossSpec::square(), RegSpec::none(), o);
    const VectorXd proj = X.transpose() * (X * X.transpose()).ldlt().solve(X * mn.theta_hat);
    CHECK((proj - mn.theta_hat).norm() < 1e-10);
    // Lassoless has a smaller l1 norm than the minimum-l2 interpolator.
    const auto ll = fit(X, y, LossSpec::square(), RegSpec::lasso(1.0), o);
    CHECK(ll.theta_hat.lpNorm<1>() <= mn.theta_hat.lpNorm<1>() + 1e-9);
    CHECK(static_cast<Index>(ll.active_set.size()) <= 15);
}

TEST_CASE("iteration cap raises with the KKT defect") {
    const MatrixXd X = gaussian_matrix(30, 20, 15);
    const VectorXd y = gaussian_vector(30, 16);
    FitOptions o;
    o.max_iter = 2;
    o.tol = 1e-14;
    try {
        fit(X, y, LossSpec::huber(0.3), RegSpec::lasso(0.05), o);
        FAIL("expected NoConvergence");
    } catch (const NoConvergence& e) {
        CHECK(e.residual() > 0.0);
        CHECK(e.last_iterate().size() == 20);
    }
}

TEST_CASE("ensemble aggregation") {
    const auto ds = gen_data(60, 10, SignalDist::point_mass(1.0), NoiseDist::gaussian(1.0), 21);
    const FitSpec spec{LossSpec::square(), RegSpec::ridge(0.5), 30};

    const auto one = ensemble_fit(ds, {spec}, 1);
    CHECK(one.theta_tilde == one.fits[0].theta_hat);

    const auto sub = draw_subsamples(60, {30}, 4);
    const auto twin = ensemble_fit(ds, {spec, spec}, {sub[0], sub[0]});
    CHECK(twin.theta_tilde.isApprox(twin.fits[0].theta_hat, 1e-15));

    const auto two = ensemble_fit(ds, {spec, FitSpec{LossSpec::huber(1.0), RegSpec::lasso(0.1), 40}}, 5);
    CHECK(two.theta_tilde == (two.fits[0].theta_hat + two.fits[1].theta_hat) / 2.0);

    try {
        ensemble_fit(ds, {spec, FitSpec{LossSpec::square(), RegSpec::none(), 5}}, 6);
        FAIL("expected EnsembleFitError");
    } catch (const EnsembleFitError& e) {
        CHECK(e.failed() == std::vector<std::size_t>{1});
    }
}

TEST_CASE("empirical risk") {
    VectorXd t = VectorXd::Ones(8);
    CHECK(empirical_risk(t, t) == 0.0);
    VectorXd u = t;
    u(0) += 1.0;
    CHECK(empirical_risk(u, t) == doctest::Approx(1.0 / 8.0));
    CHECK_THROWS_AS(empirical_risk(u, VectorXd::Ones(3)), DomainError);
}

TEST_CASE("ridge ensemble risk matches theory over replications") {
    const Index n = 2000, p = 200;
    const double delta = 10.0, c = 0.05, lambda = 0.5;
    const Index k = static_cast<Index>(c * n);
    const auto sig = SignalDist::point_mass(1.0);
    const auto noise = NoiseDist::gaussian(1.0);
    const auto th = homogeneous_theory(LossSpec::square(), RegSpec::ridge(lambda), c, delta, sig, noise);
    const double want = th.RM(EnsembleSize::finite(2));
    const int reps = 50;
    double s = 0.0, s2 = 0.0;
    const FitSpec spec{LossSpec::square(), RegSpec::ridge(lambda), k};
    for (int r = 0; r < reps; ++r) {
        const auto ds = gen_data(n, p, sig, noise, 1000 + static_cast<std::uint64_t>(r));
        const auto ens = ensemble_fit(ds, {spec, spec}, 77 + static_cast<std::uint64_t>(r));
        const double v = empirical_risk(ens, ds.theta_star);
        s += v;
        s2 += v * v;
    }
    const double mean = s / reps, se = std::sqrt((s2 / reps - mean * mean) / (reps - 1));
    CHECK(std::abs(mean - want) < 3.0 * se);
}
