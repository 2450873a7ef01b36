#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "subag/dataset.hpp"
#include "subag/error.hpp"
#include "subag/mestim.hpp"
#include "subag/riskest.hpp"

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

// Central-difference traces of y -> X theta_hat(y) and y -> loss'(y - X theta_hat(y)).
std::pair<double, double> fd_traces(const MatrixXd& X, const VectorXd& y, const LossSpec& loss, const RegSpec& reg,
                                    double h = 1e-6) {
    FitOptions o;
    o.tol = 1e-13;
    double df = 0.0, tv = 0.0;
    for (Index i = 0; i < y.size(); ++i) {
        VectorXd yp = y, ym = y;
        yp(i) += h;
        ym(i) -= h;
        const auto fp = fit(X, yp, loss, reg, o), fm = fit(X, ym, loss, reg, o);
        df += (X.row(i).dot(fp.theta_hat) - X.row(i).dot(fm.theta_hat)) / (2 * h);
        tv += (fp.loss_grad_vec(i) - fm.loss_grad_vec(i)) / (2 * h);
    }
    return {df, tv};
}

}  // namespace

TEST_CASE("df closed forms against finite-difference Jacobians") {
    const MatrixXd X = gaussian_matrix(30, 10, 1);
    VectorXd y = X * VectorXd::LinSpaced(10, -1.0, 1.0) * 3.0 + gaussian_vector(30, 2, 0.5);
    y(4) += 6.0;
    y(17) -= 5.0;
    const std::vector<LossSpec> losses = {LossSpec::square(), LossSpec::huber(0.4)};
    const std::vector<RegSpec> regs = {RegSpec::ridge(0.5), RegSpec::lasso(0.3), RegSpec::elastic_net(0.5, 0.3)};
    for (const auto& loss : losses) {
        for (const auto& reg : regs) {
            const auto f = fit(X, y, loss, reg, {.tol = 1e-13});
            const auto d = compute_df(f, X);
            const auto [fdf, ftv] = fd_traces(X, y, loss, reg);
            INFO(d.formula_used);
            CHECK(std::abs(d.df - fdf) < 1e-4);
            CHECK(std::abs(d.tr_v - ftv) < 1e-4);
            CHECK(d.df >= 0.0);
            CHECK(d.tr_v >= 0.0);
        }
    }
}

TEST_CASE("square ridge df on a small instance") {
    const MatrixXd X = gaussian_matrix(12, 6, 3);
    const VectorXd y = gaussian_vector(12, 4);
    const auto f = fit(X, y, LossSpec::square(), RegSpec::ridge(0.2));
    const auto d = compute_df(f, X);
    const auto [fdf, ftv] = fd_traces(X, y, LossSpec::square(), RegSpec::ridge(0.2));
    CHECK(std::abs(d.df - fdf) < 1e-5);
    CHECK(d.tr_v == doctest::Approx(12.0 - d.df));
    CHECK(d.formula_used == "square+ridge");

    double prev = d.df;
    for (double lam : {1e3, 1e6, 1e9}) {
        const double df = compute_df(fit(X, y, LossSpec::square(), RegSpec::ridge(lam)), X).df;
        CHECK(df < prev);
        prev = df;
    }
    CHECK(prev < 1e-7);
}

TEST_CASE("lasso df counts the active set") {
    // Orthonormal design: theta_hat = soft(X'y; lambda), three coordinates survive.
    const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(gaussian_matrix(10, 5, 5)).householderQ() * MatrixXd::Identity(10, 5);
    VectorXd c(5);
    c << 3.0, -2.0, 0.4, 1.5, -0.2;
    const auto f = fit(Q, Q * c, LossSpec::square(), RegSpec::lasso(1.0), {.tol = 1e-12});
    CHECK(f.active_set.size() == 3);
    const auto d = compute_df(f, Q);
    CHECK(d.df == 3.0);
    CHECK(d.tr_v == 7.0);
    // Elastic net with lambda1 = 0 dispatches to the lasso row.
    const auto e = fit(Q, Q * c, LossSpec::square(), RegSpec::elastic_net(0.0, 1.0), {.tol = 1e-12});
    CHECK(compute_df(e, Q).formula_used == "square+lasso");
}

TEST_CASE("Huber residual degrees of freedom count inliers") {
    const MatrixXd X = gaussian_matrix(25, 8, 6);
    VectorXd y = gaussian_vector(25, 7, 2.0);
    const auto loss = LossSpec::huber(1.0);
    const auto f = fit(X, y, loss, RegSpec::ridge(0.3), {.tol = 1e-12});
    const auto d = compute_df(f, X);
    CHECK(f.inlier_set.size() < 25);
    CHECK(d.tr_v == doctest::Approx(static_cast<double>(f.inlier_set.size()) - d.df).epsilon(1e-12));
}

TEST_CASE("OLS risk estimate is the rescaled residual sum of squares") {
    const Index n = 80, p = 20;
    const auto ds = gen_data(n, p, SignalDist::point_mass(1.0), NoiseDist::gaussian(1.0), 9);
    const FitSpec spec{LossSpec::square(), RegSpec::none(), n};
    const auto ens = ensemble_fit(ds, {spec}, 1);
    const auto rep = est_ensemble(ens, ds);
    const double rss = (ds.y - ds.X * ens.theta_tilde).squaredNorm();
    const double ratio = static_cast<double>(p) / static_cast<double>(n);
    CHECK(std::abs(rep.est * n * (1.0 - ratio) * (1.0 - ratio) - rss) < 1e-12 * rss);
    CHECK(rep.guarantee == Guarantee::Empirical);

    // Noiseless response: zero residuals everywhere give a zero estimate.
    Dataset clean = ds;
    clean.y = ds.X * ds.theta_star;
    const auto e0 = est_ensemble(ensemble_fit(clean, {spec}, 1), clean);
    CHECK(std::abs(e0.est) < 1e-20);
}

TEST_CASE("ensemble estimate structure") {
    const auto ds = gen_data(120, 15, SignalDist::point_mass(1.0), NoiseDist::gaussian(1.0), 10);
    const FitSpec a{LossSpec::square(), RegSpec::ridge(0.5), 60}, b{LossSpec::huber(1.0), RegSpec::lasso(0.2), 80};
    const auto ens = ensemble_fit(ds, {a, b}, 11);
    const auto d0 = compute_df(ens.fits[0], take_rows(ds.X, ens.subsets[0].indices));
    const auto d1 = compute_df(ens.fits[1], take_rows(ds.X, ens.subsets[1].indices));
    auto E = [&](int i, int j) {
        const auto& di = i == 0 ? d0 : d1;
        const auto& dj = j == 0 ? d0 : d1;
        return est_component(ds.X, ds.y, ens.fits[i], ens.fits[j], ens.subsets[i], ens.subsets[j], di, dj);
    };
    CHECK(E(0, 1) == doctest::Approx(E(1, 0)).epsilon(1e-14));
    const auto rep = est_ensemble(ens, ds);
    CHECK(rep.est == doctest::Approx((E(0, 0) + E(0, 1) + E(1, 0) + E(1, 1)) / 4.0).epsilon(1e-14));
    CHECK(est_ensemble(ens, ds, 1).est == doctest::Approx(E(0, 0)).epsilon(1e-14));
    CHECK(rep.guarantee == Guarantee::Empirical);
    CHECK(est_ensemble(ens, ds, 1).guarantee == Guarantee::Proved);
}

TEST_CASE("interpolating fits have no correction") {
    const auto ds = gen_data(40, 30, SignalDist::point_mass(1.0), NoiseDist::gaussian(1.0), 12);
    FitOptions o;
    o.interpolate = true;
    const auto ens = ensemble_fit(ds, {FitSpec{LossSpec::square(), RegSpec::none(), 20}}, 13, o);
    CHECK_THROWS_AS(est_ensemble(ens, ds), DegenerateCorrection);
}

TEST_CASE("ridge pair estimate tracks the realized cross risk") {
    const Index n = 200, p = 20;
    const int reps = 200;
    double s = 0.0, s2 = 0.0;
    const FitSpec spec{LossSpec::square(), RegSpec::ridge(1.0), 100};
    for (int r = 0; r < reps; ++r) {
        const auto ds = gen_data(n, p, SignalDist::point_mass(1.0), NoiseDist::gaussian(1.0), 500 + r);
        const auto ens = ensemble_fit(ds, {spec, spec}, 900 + r);
        const auto dA = compute_df(ens.fits[0], take_rows(ds.X, ens.subsets[0].indices));
        const auto dB = compute_df(ens.fits[1], take_rows(ds.X, ens.subsets[1].indices));
        const double est = est_component(ds.X, ds.y, ens.fits[0], ens.fits[1], ens.subsets[0], ens.subsets[1], dA, dB);
        const double truth = (ens.fits[0].theta_hat - ds.theta_star).dot(ens.fits[1].theta_hat - ds.theta_star) / p +
                             ds.noise.squaredNorm() / n;
        const double d = est - truth;
        s += d;
        s2 += d * d;
    }
    const double mean = s / reps, se = std::sqrt((s2 / reps - mean * mean) / (reps - 1));
    CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("heavy-tailed Huber lasso: tuning by the estimate") {
    // Sparse Gaussian signal, t_2 noise, Huber threshold 1; the grid brackets the risk minimizer in its interior.
    const Index n = 1000, p = 100;
    const std::vector<double> lambdas = {0.2, 0.8, 3.2, 12.8};
    const auto sig = SignalDist::gauss_point_mass(0.1, 1.0);
    const auto noise = NoiseDist::student_t(2.0);
    const int reps = 50;
    int agree = 0, near = 0, interior = 0;
    for (int r = 0; r < reps; ++r) {
        const auto ds = gen_data(n, p, sig, noise, 3000 + r);
        std::vector<double> est, truth;
        for (double lam : lambdas) {
            const FitSpec spec{LossSpec::huber(1.0), RegSpec::lasso(lam), n / 2};
            const auto ens = ensemble_fit(ds, {spec, spec}, 4000 + r);
            est.push_back(est_ensemble(ens, ds).est);
            truth.push_back(empirical_risk(ens, ds.theta_star) + ds.noise.squaredNorm() / n);
        }
        const auto be = std::min_element(est.begin(), est.end()) - est.begin();
        const auto bt = std::min_element(truth.begin(), truth.end()) - truth.begin();
        agree += be == bt;
        interior += bt > 0 && bt + 1 < static_cast<long>(lambdas.size());
        // Excess risk of the selected lambda within 0.05 of the best on the grid.
        near += truth[be] - truth[bt] < 0.05;
    }
    MESSAGE("argmin agreement " << agree << "/" << reps << ", near-optimal " << near << "/" << reps);
    CHECK(interior >= 40);
    CHECK(near >= 45);
    CHECK(agree >= 40);
}
