#include "subag/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <thread>

#include <boost/version.hpp>
#include <json.hpp>

#include "subag/dataset.hpp"
#include "subag/error.hpp"
#include "subag/riskest.hpp"
#include "subag/rng.hpp"

#ifndef SUBAG_VERSION
#define SUBAG_VERSION "unknown"
#endif
#ifndef SUBAG_YAML_CPP_VERSION
#define SUBAG_YAML_CPP_VERSION "unknown"
#endif

namespace subag {

namespace {

using ojson = nlohmann::ordered_json;

constexpr double kThresholdTol = 1e-12;

LossSpec make_loss(const LossConfig& l) { return l.kind == "huber" ? LossSpec::huber(l.rho) : LossSpec::square(); }

RegSpec::Kind reg_kind(const std::string& s) {
    if (s == "none") return RegSpec::Kind::None;
    if (s == "ridge") return RegSpec::Kind::Ridge;
    if (s == "lasso") return RegSpec::Kind::Lasso;
    return RegSpec::Kind::ElasticNet;
}

RegSpec make_reg(const RegConfig& r, double lambda) { return make_penalty(reg_kind(r.kind), lambda, r.ratio); }

bool simulation_mode(Mode m) { return m == Mode::Simulate || m == Mode::Estimate || m == Mode::Compare; }

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

/// Runs fn(i) for i in [0, count) on at most `workers` threads; fn must not throw.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
    };
    const int nw = std::max(1, std::min<int>(workers, static_cast<int>(std::min<std::size_t>(count, 1024))));
    std::vector<std::thread> pool;
    for (int w = 1; w < nw; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

struct Moments {
    double sum = 0.0, sum2 = 0.0;
    long count = 0;

    void add(double v) {
        sum += v;
        sum2 += v * v;
        ++count;
    }
    double mean() const { return count ? sum / static_cast<double>(count) : kNaN; }
    /// Sample standard deviation over sqrt(count).
    double se() const {
        if (count < 2) return kNaN;
        const double m = mean();
        const double var = std::max(0.0, (sum2 - static_cast<double>(count) * m * m) / static_cast<double>(count - 1));
        return std::sqrt(var / static_cast<double>(count));
    }
};

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns)
        : out_(path), width_(columns.size()) {
        if (!out_) throw Error("cannot write " + path.string());
        row(columns);
    }
    void row(const std::vector<std::string>& fields) {
        if (fields.size() != width_) throw Error("internal: csv row width mismatch");
        for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
        out_ << '\n';
        ++rows_;
    }
    std::size_t data_rows() const { return rows_ - 1; }

private:
    std::ofstream out_;
    std::size_t width_;
    std::size_t rows_ = 0;
};

std::vector<long> finite_sizes(const std::vector<EnsembleSize>& Ms) {
    std::vector<long> v;
    for (const auto& M : Ms) v.push_back(M.m.value_or(0));
    return v;
}

/// Homogeneous simulation cell: one (c, lambda, rho) triple.
struct SimCell {
    double c = kNaN, lambda = kNaN, rho = kNaN;
    Index k = 0;
    std::vector<FitSpec> specs;  ///< as many as the largest M
    bool interpolate = false;
};

struct RepResult {
    std::string status = "ok";
    std::vector<double> risk, est, target;
    std::vector<std::string> est_status;
    std::vector<Guarantee> guarantee;
};

SweepGrid make_grid(const ExperimentConfig& cfg, const std::vector<double>& deltas) {
    SweepGrid g;
    g.delta = deltas;
    g.c = cfg.grid_c;
    g.lambda = cfg.lambdas();
    g.M = cfg.grid_M;
    g.huber_rho = cfg.rhos();
    g.reg = reg_kind(cfg.reg.kind);
    g.elastic_ratio = cfg.reg.ratio;
    g.signal = make_signal(cfg.signal);
    g.noise = make_noise(cfg.noise);
    return g;
}

std::size_t run_sweep(const ExperimentConfig& cfg, const RunOptions& opts, const std::filesystem::path& csv,
                      std::size_t& failed) {
    const auto table = sweep(make_grid(cfg, cfg.deltas()), cfg.quadrature, opts.workers);
    auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
    auto marked = [&](const SweepRow& r, const char* kind) {
        for (const auto& o : table.optima)
            if (o.kind == kind && o.delta == r.delta && o.c == r.c && o.lambda == r.lambda &&
                same(o.huber_rho, r.huber_rho) && o.M == r.M)
                return true;
        return false;
    };
    CsvWriter w(csv, csv_columns(Mode::Sweep));
    for (const auto& r : table.rows) {
        if (r.status != "ok") ++failed;
        const auto& t = r.th;
        w.row({num(r.delta), num(r.c), num(r.lambda), r.M.str(), num(t.alpha2()), num(t.eta_g), num(t.eta_h),
               num(t.R1), num(t.Rinf), num(r.RM), num(t.tau), num(t.a), num(t.xi), r.status, num(r.huber_rho),
               marked(r, "c_star") ? "1" : "0", marked(r, "lambda_star") ? "1" : "0"});
    }
    return w.data_rows();
}

std::size_t run_theory(const ExperimentConfig& cfg, const RunOptions& opts, const std::filesystem::path& csv,
                       std::size_t& failed) {
    CsvWriter w(csv, csv_columns(Mode::Theory));
    const auto deltas = cfg.deltas();
    if (cfg.components.empty()) {
        const auto table = sweep(make_grid(cfg, deltas), cfg.quadrature, opts.workers);
        const std::size_t per_cell = cfg.grid_M.size();
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& r = table.rows[i];
            const auto& t = r.th;
            if (r.status != "ok") ++failed;
            w.row({std::to_string(i / per_cell), num(r.delta), num(r.c), num(r.lambda), num(r.huber_rho), r.M.str(),
                   num(t.sys.alpha), num(t.sys.beta), num(t.sys.kappa), num(t.sys.nu), num(t.R1), num(t.Rinf),
                   num(r.RM), num(t.eta_g), num(t.eta_h), num(t.tau), num(t.a), num(t.xi),
                   t.route.empty() ? "none" : t.route, r.status});
        }
        return w.data_rows();
    }
    // Heterogeneous ensemble: one cell per delta, M counts leading components.
    const auto signal = make_signal(cfg.signal);
    const auto noise = make_noise(cfg.noise);
    struct Out {
        std::vector<double> RM;
        std::vector<std::string> status;
    };
    std::vector<Out> outs(deltas.size());
    parallel_for(deltas.size(), opts.workers, [&](std::size_t i) {
        for (const auto& M : cfg.grid_M) {
            EnsembleConfig ens{deltas[i], {}};
            for (long m = 0; m < *M.m; ++m) {
                const auto& cc = cfg.components[static_cast<std::size_t>(m)];
                ens.components.push_back({make_loss(cc.loss), make_reg(cc.reg, cc.reg.lambda), cc.c});
            }
            try {
                outs[i].RM.push_back(ensemble_risk(ens, signal, noise, cfg.quadrature));
                outs[i].status.push_back("ok");
            } catch (...) {
                outs[i].RM.push_back(kNaN);
                outs[i].status.push_back(status_tag(std::current_exception()));
            }
        }
    });
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        for (std::size_t j = 0; j < cfg.grid_M.size(); ++j) {
            if (outs[i].status[j] != "ok") ++failed;
            w.row({std::to_string(i), num(deltas[i]), "nan", "nan", "nan", cfg.grid_M[j].str(), "nan", "nan", "nan",
                   "nan", "nan", "nan", num(outs[i].RM[j]), "nan", "nan", "nan", "nan", "nan", "heterogeneous",
                   outs[i].status[j]});
        }
    }
    return w.data_rows();
}

std::size_t run_simulation(const ExperimentConfig& cfg, Mode mode, const RunOptions& opts,
                           const std::filesystem::path& csv, std::size_t& failed) {
    const Index n = *cfg.n, p = *cfg.p;
    const auto signal = make_signal(cfg.signal);
    const auto noise = make_noise(cfg.noise);
    const auto sizes = finite_sizes(cfg.grid_M);
    const long Mmax = *std::max_element(sizes.begin(), sizes.end());
    auto k_of = [&](double c) { return std::max<Index>(1, static_cast<Index>(std::llround(c * static_cast<double>(n)))); };

    std::vector<SimCell> cells;
    if (cfg.components.empty()) {
        const auto rhos = cfg.rhos();
        const std::vector<double> rho_axis = rhos.empty() ? std::vector<double>{kNaN} : rhos;
        for (double c : cfg.grid_c)
            for (double lam : cfg.lambdas())
                for (double rho : rho_axis) {
                    SimCell cell{c, lam, rho, k_of(c), {}, false};
                    const LossSpec loss = std::isnan(rho) ? LossSpec::square() : LossSpec::huber(rho);
                    const RegSpec reg = make_reg(cfg.reg, lam);
                    cell.interpolate = reg.vanishes();
                    cell.specs.assign(static_cast<std::size_t>(Mmax), FitSpec{loss, reg, cell.k});
                    cells.push_back(std::move(cell));
                }
    } else {
        SimCell cell;
        for (long m = 0; m < Mmax; ++m) {
            const auto& cc = cfg.components[static_cast<std::size_t>(m)];
            const RegSpec reg = make_reg(cc.reg, cc.reg.lambda);
            cell.interpolate = cell.interpolate || reg.vanishes();
            cell.specs.push_back(FitSpec{make_loss(cc.loss), reg, k_of(cc.c)});
        }
        cells.push_back(std::move(cell));
    }

    const std::size_t R = static_cast<std::size_t>(cfg.replications);
    const bool want_est = mode == Mode::Estimate;
    std::vector<RepResult> reps(cells.size() * R);
    parallel_for(reps.size(), opts.workers, [&](std::size_t t) {
        const std::size_t g = t / R, r = t % R;
        const auto& cell = cells[g];
        auto& out = reps[t];
        try {
            const std::uint64_t seed = cell_seed(cfg.base_seed, g, r);
            const auto ds = gen_data(n, p, signal, noise, derive_seed(seed, {0}));
            if (!opts.out_dir.empty() && opts.dump_datasets)
                save_dataset(ds, signal, noise,
                             opts.out_dir / "datasets" / ("cell" + std::to_string(g) + "_rep" + std::to_string(r)));
            FitOptions fo = cfg.fit;
            fo.interpolate = cell.interpolate;
            const auto ens = ensemble_fit(ds, cell.specs, derive_seed(seed, {1}), fo);
            const double noise_term = ds.noise.squaredNorm() / static_cast<double>(n);
            for (long M : sizes) {
                const double risk = empirical_risk(average_first(ens, static_cast<std::size_t>(M)), ds.theta_star);
                out.risk.push_back(risk);
                if (!want_est) continue;
                out.target.push_back(risk + noise_term);
                try {
                    const auto rep = est_ensemble(ens, ds, static_cast<std::size_t>(M));
                    out.est.push_back(rep.est);
                    out.guarantee.push_back(rep.guarantee);
                    out.est_status.push_back("ok");
                } catch (...) {
                    out.est.push_back(kNaN);
                    out.guarantee.push_back(Guarantee::Empirical);
                    out.est_status.push_back(status_tag(std::current_exception()));
                }
            }
        } catch (...) {
            out.status = status_tag(std::current_exception());
        }
    });

    // Theory at the realized ratio k / n, so both columns describe the same estimator.
    std::vector<TheoryPoint> theory(cells.size());
    std::vector<std::string> theory_status(cells.size(), "ok");
    std::vector<std::vector<double>> theory_RM(cells.size());
    if (mode == Mode::Compare) {
        const double delta = static_cast<double>(n) / static_cast<double>(p);
        parallel_for(cells.size(), opts.workers, [&](std::size_t g) {
            try {
                if (cfg.components.empty()) {
                    const auto& s = cells[g].specs.front();
                    const double c = static_cast<double>(cells[g].k) / static_cast<double>(n);
                    theory[g] = homogeneous_theory(s.loss, s.reg, c, delta, signal, noise, cfg.quadrature);
                    for (const auto& M : cfg.grid_M) theory_RM[g].push_back(theory[g].RM(M));
                } else {
                    for (long M : sizes) {
                        EnsembleConfig ens{delta, {}};
                        for (long m = 0; m < M; ++m) {
                            const auto& s = cells[g].specs[static_cast<std::size_t>(m)];
                            ens.components.push_back({s.loss, s.reg, static_cast<double>(s.k) / static_cast<double>(n)});
                        }
                        theory_RM[g].push_back(ensemble_risk(ens, signal, noise, cfg.quadrature));
                    }
                }
            } catch (...) {
                theory_status[g] = status_tag(std::current_exception());
                theory_RM[g].assign(sizes.size(), kNaN);
            }
        });
    }

    CsvWriter w(csv, csv_columns(mode));
    for (std::size_t g = 0; g < cells.size(); ++g) {
        const auto& cell = cells[g];
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            Moments risk, est, target, gap;
            long nfail = 0;
            std::string status = "ok";
            bool proved = true;
            for (std::size_t r = 0; r < R; ++r) {
                const auto& rep = reps[g * R + r];
                if (rep.status != "ok") {
                    ++nfail;
                    if (status == "ok") status = rep.status;
                    continue;
                }
                risk.add(rep.risk[j]);
                if (!want_est) continue;
                if (rep.est_status[j] != "ok") {
                    if (status == "ok") status = rep.est_status[j];
                    continue;
                }
                proved = proved && rep.guarantee[j] == Guarantee::Proved;
                est.add(rep.est[j]);
                target.add(rep.target[j]);
                gap.add(rep.est[j] - rep.target[j]);
            }
            if (mode == Mode::Compare && theory_status[g] != "ok" && status == "ok") status = theory_status[g];
            if (status != "ok") ++failed;

            std::vector<std::string> row{std::to_string(g),
                                         std::to_string(n),
                                         std::to_string(p),
                                         cfg.components.empty() ? std::to_string(cell.k) : "mixed",
                                         num(cell.c),
                                         num(cell.lambda),
                                         num(cell.rho),
                                         cfg.grid_M[j].str(),
                                         std::to_string(R),
                                         std::to_string(nfail),
                                         num(risk.mean()),
                                         num(risk.se()),
                                         status};
            if (mode == Mode::Estimate) {
                for (const auto* m : {&est, &target, &gap}) {
                    row.push_back(num(m->mean()));
                    row.push_back(num(m->se()));
                }
                row.push_back(est.count ? to_string(proved ? Guarantee::Proved : Guarantee::Empirical) : "none");
            } else if (mode == Mode::Compare) {
                const double th = theory_RM[g][j];
                const double z = (risk.mean() - th) / risk.se();
                row.push_back(num(th));
                row.push_back(num(z));
                row.push_back(std::isfinite(z) ? (std::abs(z) <= 3.0 ? "1" : "0") : "nan");
            }
            w.row(row);
        }
    }
    return w.data_rows();
}

void add(std::vector<Diagnostic>& d, Diagnostic::Severity s, std::string field, std::string msg) {
    d.push_back({s, std::move(field), std::move(msg)});
}

ojson diagnostics_json(const std::vector<Diagnostic>& diags) {
    ojson a = ojson::array();
    for (const auto& d : diags)
        a.push_back({{"severity", d.severity == Diagnostic::Severity::Error ? "error" : "warning"},
                     {"field", d.field},
                     {"message", d.message}});
    return a;
}

}  // namespace

std::vector<std::string> csv_columns(Mode mode) {
    switch (mode) {
        case Mode::Sweep:
            return {"delta", "c",  "lambda", "M",      "alpha2",    "eta_g",  "eta_h",  "R1",         "Rinf",
                    "RM",    "tau", "a",     "xi",     "status",    "huber_rho", "c_star", "lambda_star"};
        case Mode::Theory:
            return {"grid_index", "delta", "c",  "lambda", "huber_rho", "M",     "alpha", "beta", "kappa", "nu",
                    "R1",         "Rinf",  "RM", "eta_g",  "eta_h",     "tau",   "a",     "xi",   "route", "status"};
        default: break;
    }
    std::vector<std::string> cols{"grid_index", "n", "p", "k", "c", "lambda", "huber_rho", "M", "replications",
                                  "failed", "risk_mean", "risk_se", "status"};
    if (mode == Mode::Estimate)
        cols.insert(cols.end(), {"est_mean", "est_se", "target_mean", "target_se", "gap_mean", "gap_se", "guarantee"});
    if (mode == Mode::Compare) cols.insert(cols.end(), {"theory_RM", "z", "within_3se"});
    return cols;
}

std::vector<Diagnostic> validate(const ExperimentConfig& cfg, Mode mode) {
    using S = Diagnostic::Severity;
    std::vector<Diagnostic> d;
    const bool sim = simulation_mode(mode);
    const bool hetero = !cfg.components.empty();

    if (cfg.mode && *cfg.mode != mode)
        add(d, S::Warning, "mode",
            std::string("config mode '") + to_string(*cfg.mode) + "' overridden by command-line mode '" +
                to_string(mode) + "'");

    try {
        make_signal(cfg.signal);
    } catch (const Error& e) {
        add(d, S::Error, "model.signal", e.what());
    }
    bool noise_ok = true;
    try {
        make_noise(cfg.noise);
    } catch (const Error& e) {
        add(d, S::Error, "model.noise", e.what());
        noise_ok = false;
    }

    if (cfg.grid_M.empty()) add(d, S::Error, "grids.M", "must not be empty");
    long max_m = 0;
    bool any_ensemble = false;
    for (std::size_t i = 0; i < cfg.grid_M.size(); ++i) {
        const auto& M = cfg.grid_M[i];
        if (M.is_infinite()) {
            any_ensemble = true;
            if (sim || hetero)
                add(d, S::Error, "grids.M[" + std::to_string(i) + "]",
                    "M = inf is only available for homogeneous theory and sweep runs");
        } else {
            max_m = std::max(max_m, *M.m);
            any_ensemble = any_ensemble || *M.m >= 2;
        }
    }

    auto check_loss = [&](const LossConfig& l, const std::string& field) {
        if (l.kind == "huber" && !(l.rho > 0.0 && std::isfinite(l.rho)))
            add(d, S::Error, field + ".rho", "Huber threshold must be positive");
    };
    auto check_reg = [&](const RegConfig& r, const std::string& field) {
        if (!(r.lambda >= 0.0 && std::isfinite(r.lambda))) add(d, S::Error, field + ".lambda", "must be >= 0");
        if (r.kind == "elastic_net" && !(r.ratio >= 0.0 && r.ratio <= 1.0))
            add(d, S::Error, field + ".ratio", "must lie in [0, 1]");
    };

    if (hetero) {
        if (mode == Mode::Sweep)
            add(d, S::Error, "ensemble.components", "sweep runs take a homogeneous ensemble");
        if (max_m > static_cast<long>(cfg.components.size()))
            add(d, S::Error, "grids.M", "M exceeds the number of listed components");
        bool some_vanish = false, some_not = false;
        int full = 0;
        for (std::size_t i = 0; i < cfg.components.size(); ++i) {
            const auto& cc = cfg.components[i];
            const std::string f = "ensemble.components[" + std::to_string(i) + "]";
            if (!(cc.c > 0.0 && cc.c <= 1.0)) add(d, S::Error, f + ".c", "must lie in (0, 1]");
            if (cc.c == 1.0) ++full;
            check_loss(cc.loss, f + ".loss");
            check_reg(cc.reg, f + ".reg");
            const bool vanish = cc.reg.kind == "none" || cc.reg.lambda == 0.0;
            (vanish ? some_vanish : some_not) = true;
        }
        if (sim && some_vanish && some_not)
            add(d, S::Error, "ensemble.components",
                "simulation cannot mix unpenalized (interpolating) and penalized components");
        if (full >= 2 && max_m >= 2)
            add(d, S::Warning, "ensemble.components",
                "contraction hypothesis min{c,c~}<1 violated for pairs with c = 1; System 1b does not apply");
    } else {
        if (cfg.grid_c.empty()) add(d, S::Error, "grids.c", "must not be empty");
        for (std::size_t i = 0; i < cfg.grid_c.size(); ++i)
            if (!(cfg.grid_c[i] > 0.0 && cfg.grid_c[i] <= 1.0))
                add(d, S::Error, "grids.c[" + std::to_string(i) + "]", "must lie in (0, 1]");
        check_loss(cfg.loss, "ensemble.loss");
        check_reg(cfg.reg, "ensemble.reg");
        for (std::size_t i = 0; i < cfg.grid_lambda.size(); ++i)
            if (!(cfg.grid_lambda[i] >= 0.0 && std::isfinite(cfg.grid_lambda[i])))
                add(d, S::Error, "grids.lambda[" + std::to_string(i) + "]", "must be >= 0");
        for (std::size_t i = 0; i < cfg.grid_huber_rho.size(); ++i)
            if (!(cfg.grid_huber_rho[i] > 0.0 && std::isfinite(cfg.grid_huber_rho[i])))
                add(d, S::Error, "grids.huber_rho[" + std::to_string(i) + "]", "must be positive");
        if (!cfg.grid_huber_rho.empty() && cfg.loss.kind != "huber")
            add(d, S::Error, "grids.huber_rho", "requires ensemble.loss.kind = huber");
        if (any_ensemble && std::find(cfg.grid_c.begin(), cfg.grid_c.end(), 1.0) != cfg.grid_c.end())
            add(d, S::Warning, "grids.c",
                "contraction hypothesis min{c,c~}<1 violated at c = 1; System 1b does not apply and the components "
                "coincide");
    }

    const bool has_np = cfg.n.has_value() || cfg.p.has_value();
    if (has_np) {
        if (!cfg.n || *cfg.n < 1) add(d, S::Error, "model.n", "must be a positive integer");
        if (!cfg.p || *cfg.p < 1) add(d, S::Error, "model.p", "must be a positive integer");
        if (!cfg.grid_delta.empty()) add(d, S::Error, "grids.delta", "conflicts with model.n and model.p");
    }
    if (sim) {
        if (!cfg.n || !cfg.p) add(d, S::Error, cfg.n ? "model.p" : "model.n", "required in simulation modes");
        if (cfg.replications < 1) add(d, S::Error, "replications", "must be at least 1");
        if (cfg.replications < 2) add(d, S::Warning, "replications", "standard errors need two replications");
        if (!(cfg.fit.tol > 0.0)) add(d, S::Error, "fit.tol", "must be positive");
        if (cfg.fit.max_iter < 1) add(d, S::Error, "fit.max_iter", "must be positive");
    } else if (cfg.deltas().empty()) {
        add(d, S::Error, "grids.delta", "theory runs need grids.delta or model.n and model.p");
    }
    for (std::size_t i = 0; i < cfg.grid_delta.size(); ++i)
        if (!(cfg.grid_delta[i] > 0.0 && std::isfinite(cfg.grid_delta[i])))
            add(d, S::Error, "grids.delta[" + std::to_string(i) + "]", "must be positive");
    if (has_errors(d)) return d;

    // Points the theory does not cover.
    if (mode == Mode::Estimate) {
        bool weak = false;
        if (hetero) {
            for (const auto& cc : cfg.components) weak = weak || !make_reg(cc.reg, cc.reg.lambda).strongly_convex();
        } else {
            for (double lam : cfg.lambdas()) weak = weak || !make_reg(cfg.reg, lam).strongly_convex();
        }
        if (weak)
            add(d, S::Warning, "ensemble.reg",
                "penalty is not strongly convex (lasso or unpenalized): the EST consistency guarantee does not apply "
                "and results are tagged empirical");
    }
    if (!hetero) {
        const bool vanishing = [&] {
            for (double lam : cfg.lambdas())
                if (make_reg(cfg.reg, lam).vanishes()) return true;
            return false;
        }();
        if (vanishing) {
            for (double delta : cfg.deltas()) {
                for (double c : cfg.grid_c) {
                    double cd = c * delta;
                    if (sim) cd = std::llround(c * static_cast<double>(*cfg.n)) / static_cast<double>(*cfg.p);
                    if (std::abs(cd - 1.0) < kThresholdTol)
                        add(d, S::Warning, "grids.c",
                            "c = " + num(c) + " with delta = " + num(delta) +
                                " sits on the interpolation threshold c*delta = 1; the point will be skipped");
                }
            }
        }
        if (noise_ok && cfg.rhos().empty() && !std::isfinite(make_noise(cfg.noise).second_moment()) && mode != Mode::Simulate &&
            mode != Mode::Estimate)
            add(d, S::Warning, "model.noise", "square loss with infinite-variance noise has no finite theory");
    }
    return d;
}

RunSummary run(const ExperimentConfig& cfg, Mode mode, const RunOptions& opts) {
    RunSummary s;
    s.diagnostics = validate(cfg, mode);
    if (has_errors(s.diagnostics)) {
        for (const auto& d : s.diagnostics)
            if (d.severity == Diagnostic::Severity::Error) throw ConfigError(d.field, d.message);
    }
    const auto out_dir = opts.out_dir.empty() ? std::filesystem::path(cfg.output_path) : opts.out_dir;
    std::filesystem::create_directories(out_dir);
    if (opts.dump_datasets) std::filesystem::create_directories(out_dir / "datasets");
    RunOptions ro = opts;
    ro.out_dir = out_dir;
    s.csv = out_dir / "results.csv";
    s.manifest = out_dir / "manifest.json";

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t failed = 0;
    switch (mode) {
        case Mode::Sweep: s.rows = run_sweep(cfg, ro, s.csv, failed); break;
        case Mode::Theory: s.rows = run_theory(cfg, ro, s.csv, failed); break;
        default: s.rows = run_simulation(cfg, mode, ro, s.csv, failed); break;
    }
    s.failed_cells = failed;
    s.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ExperimentConfig echo = cfg;
    echo.mode = mode;
    ojson m;
    m["manifest_version"] = 1;
    m["tool"] = "subag";
    m["version"] = SUBAG_VERSION;
    m["mode"] = to_string(mode);
    if (cfg.preset) m["preset"] = *cfg.preset;
    m["config"] = ojson::parse(config_to_json(echo));
    m["seeds"] = {{"base_seed", cfg.base_seed},
                  {"scheme", "replication r of grid cell g uses derive_seed(base_seed, {g, r}); the dataset and the "
                             "subsample draws use sub-streams {0} and {1} of that seed"}};
    m["diagnostics"] = diagnostics_json(s.diagnostics);
    m["columns"] = csv_columns(mode);
    m["outputs"] = {{"results", "results.csv"}, {"rows", s.rows}, {"failed_rows", s.failed_cells}};
    if (opts.dump_datasets) m["outputs"]["datasets"] = "datasets/";
    m["workers"] = opts.workers;
    m["wall_time_seconds"] = s.wall_time;
    m["versions"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000)},
                     {"yaml-cpp", SUBAG_YAML_CPP_VERSION},
                     {"compiler", __VERSION__}};
    std::ofstream mf(s.manifest);
    if (!mf) throw Error("cannot write " + s.manifest.string());
    mf << m.dump(2) << '\n';
    return s;
}

}  // namespace subag
