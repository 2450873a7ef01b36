#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "subag/error.hpp"
#include "subag/experiment.hpp"
#include "subag/fixedpoint.hpp"

using namespace subag;
namespace fs = std::filesystem;

namespace {

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t col(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw std::runtime_error("no column " + name);
    }
    double num(std::size_t r, const std::string& name) const { return std::stod(rows[r][col(name)]); }
    const std::string& str(std::size_t r, const std::string& name) const { return rows[r][col(name)]; }
};

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

Csv read_csv(const fs::path& path) {
    std::ifstream in(path);
    Csv csv;
    std::string line;
    std::getline(in, line);
    csv.header = split(line);
    while (std::getline(in, line)) csv.rows.push_back(split(line));
    return csv;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("subag_test_experiment_" + name);
    fs::remove_all(dir);
    return dir;
}

bool has_warning(const std::vector<Diagnostic>& d, const std::string& needle) {
    for (const auto& x : d)
        if (x.severity == Diagnostic::Severity::Warning && x.message.find(needle) != std::string::npos) return true;
    return false;
}

const char* kRidge = R"(
model:
  signal: {kind: point_mass, value: 1}
  noise: {kind: gaussian, sigma: 1}
  n: 400
  p: 40
ensemble:
  loss: {kind: square}
  reg: {kind: ridge, lambda: 0.5}
grids:
  c: [0.3, 0.6]
  M: [1, 2, 4]
replications: 12
base_seed: 7
)";

}  // namespace

TEST_CASE("config parsing and schema errors") {
    const auto cfg = parse_config(kRidge);
    CHECK(*cfg.n == 400);
    CHECK(cfg.grid_M.size() == 3);
    CHECK(cfg.reg.kind == "ridge");
    CHECK(cfg.deltas() == std::vector<double>{10.0});

    auto field_of = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("<none>");
    };
    CHECK(field_of("grids: {cc: [1]}") == "grids.cc");
    CHECK(field_of("model: {signal: {kind: two_point, strength: 1}}") == "model.signal.support");
    CHECK(field_of("model: {noise: {kind: cauchy}}") == "model.noise.kind");
    CHECK(field_of("grids: {M: [1, 0]}") == "grids.M[1]");
    CHECK(field_of("grids: {c: [0.5, abc]}") == "grids.c[1]");
    CHECK(field_of("replications: 2.5") == "replications");
    CHECK(field_of("preset: nope") == "preset");
    CHECK(field_of("ensemble: {reg: {kind: bridge}}") == "ensemble.reg.kind");
    CHECK(field_of("quadrature: {gauss_nodes: 2}") == "quadrature");
    CHECK(field_of("grids: {c: [0.5]}\ngrids: {M: [2]}") == "grids");
}

TEST_CASE("resolved config round-trips through JSON") {
    for (const auto& text : {std::string(kRidge), std::string("preset: huber-threshold-heatmap"),
                             std::string("preset: effect-of-M\nreplications: 3")}) {
        const auto cfg = parse_config(text);
        const auto j = config_to_json(cfg);
        CHECK(config_to_json(parse_config(j)) == j);
    }
    // Preset values are overridden key by key.
    const auto cfg = parse_config("preset: effect-of-M\nreplications: 3\nmodel: {n: 500}");
    CHECK(cfg.replications == 3);
    CHECK(*cfg.n == 500);
    CHECK(*cfg.p == 200);
    CHECK(cfg.reg.kind == "lasso");
}

TEST_CASE("validation diagnostics") {
    const auto ridge = parse_config(kRidge);
    CHECK(validate(ridge, Mode::Compare).empty());

    auto c1 = parse_config("grids: {delta: [2], c: [1.0], M: [2]}");
    CHECK(has_warning(validate(c1, Mode::Theory), "min{c,c~}<1"));

    auto thr = parse_config("grids: {delta: [2], c: [0.25, 0.5]}\nensemble: {reg: {kind: none}}");
    CHECK(has_warning(validate(thr, Mode::Theory), "interpolation threshold"));
    // A penalized point at c * delta = 1 is well defined.
    auto thr_ridge = parse_config("grids: {delta: [2], c: [0.5]}");
    CHECK(validate(thr_ridge, Mode::Theory).empty());

    auto lasso = ridge;
    lasso.reg = RegConfig{"lasso", 0.1, 0.5};
    CHECK(has_warning(validate(lasso, Mode::Estimate), "strongly convex"));
    CHECK(!has_warning(validate(lasso, Mode::Simulate), "strongly convex"));

    auto no_np = parse_config("grids: {c: [0.5]}");
    CHECK(has_errors(validate(no_np, Mode::Simulate)));
    CHECK(has_errors(validate(no_np, Mode::Theory)));
    auto inf_sim = ridge;
    inf_sim.grid_M = {EnsembleSize::infinite()};
    CHECK(has_errors(validate(inf_sim, Mode::Simulate)));
    CHECK_THROWS_AS(run(inf_sim, Mode::Simulate, {scratch("invalid"), 1}), ConfigError);

    for (const auto& name : preset_names()) {
        auto cfg = parse_config("preset: " + name);
        CHECK_MESSAGE(!has_errors(validate(cfg, *cfg.mode)), name);
    }
}

TEST_CASE("theory mode passes solver output through") {
    const auto dir = scratch("theory");
    auto cfg = parse_config(R"(
model: {signal: {kind: point_mass, value: 1}, noise: {kind: gaussian, sigma: 1}}
ensemble: {reg: {kind: none}}
grids: {delta: [2], c: [0.25, 0.375, 0.625, 0.75, 1.0], M: [1, inf]}
)");
    const auto s = run(cfg, Mode::Theory, {dir, 2});
    const auto csv = read_csv(s.csv);
    REQUIRE(csv.rows.size() == 10);
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const double c = csv.num(r, "c");
        const auto sol = solve_sys4(Interpolator::Ridgeless, c, 2.0, 1.0, SignalDist::point_mass(1.0), {}, true);
        CHECK(csv.str(r, "status") == "ok");
        CHECK(csv.num(r, "R1") == doctest::Approx(sol.R1()).epsilon(1e-9));
        CHECK(csv.num(r, "Rinf") == doctest::Approx(sol.Rinf()).epsilon(1e-9));
        const double want = csv.str(r, "M") == "inf" ? sol.Rinf() : sol.R1();
        CHECK(csv.num(r, "RM") == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("heterogeneous theory with identical components matches the homogeneous formula") {
    auto cfg = parse_config(R"(
grids: {delta: [4], M: [1, 2]}
ensemble:
  components:
    - {loss: {kind: huber, rho: 1}, reg: {kind: ridge, lambda: 0.5}, c: 0.5}
    - {loss: {kind: huber, rho: 1}, reg: {kind: ridge, lambda: 0.5}, c: 0.5}
)");
    const auto csv = read_csv(run(cfg, Mode::Theory, {scratch("hetero"), 1}).csv);
    const auto tp = homogeneous_theory(LossSpec::huber(1.0), RegSpec::ridge(0.5), 0.5, 4.0, SignalDist::point_mass(1.0),
                                       NoiseDist::gaussian(1.0));
    REQUIRE(csv.rows.size() == 2);
    CHECK(csv.num(0, "RM") == doctest::Approx(tp.R1).epsilon(1e-7));
    CHECK(csv.num(1, "RM") == doctest::Approx(tp.RM(EnsembleSize::finite(2))).epsilon(1e-7));
}

TEST_CASE("simulation output is deterministic and cell seeds are stable") {
    const auto cfg = parse_config(kRidge);
    const auto a = run(cfg, Mode::Estimate, {scratch("det_a"), 1});
    const auto b = run(cfg, Mode::Estimate, {scratch("det_b"), 3});
    CHECK(slurp(a.csv) == slurp(b.csv));

    // Extending the grid leaves existing cells untouched.
    auto wider = cfg;
    wider.grid_c.push_back(0.9);
    const auto w = read_csv(run(wider, Mode::Simulate, {scratch("wider"), 2}).csv);
    const auto base = read_csv(run(cfg, Mode::Simulate, {scratch("base"), 2}).csv);
    for (std::size_t r = 0; r < base.rows.size(); ++r) CHECK(base.rows[r] == w.rows[r]);

    // A different seed changes the draws.
    auto other = cfg;
    other.base_seed = 8;
    CHECK(slurp(run(other, Mode::Simulate, {scratch("other"), 1}).csv) != slurp(scratch("base") / "results.csv"));

    CHECK(cell_seed(1, 0, 0) != cell_seed(1, 0, 1));
    CHECK(cell_seed(1, 0, 1) != cell_seed(1, 1, 0));
}

TEST_CASE("manifest reproduces the run") {
    const auto cfg = parse_config(kRidge);
    const auto s = run(cfg, Mode::Compare, {scratch("manifest_a"), 2});
    const auto again = load_config(s.manifest);
    CHECK(again.mode == Mode::Compare);
    const auto s2 = run(again, *again.mode, {scratch("manifest_b"), 1});
    CHECK(slurp(s.csv) == slurp(s2.csv));
    const auto m = slurp(s.manifest);
    for (const char* key : {"\"seeds\"", "\"wall_time_seconds\"", "\"versions\"", "\"base_seed\": 7"})
        CHECK_MESSAGE(m.find(key) != std::string::npos, key);
}

TEST_CASE("compare and estimate on a ridge ensemble") {
    auto cfg = parse_config(R"(
model: {signal: {kind: point_mass, value: 1}, noise: {kind: gaussian, sigma: 1}, n: 2000, p: 200}
ensemble: {loss: {kind: square}, reg: {kind: ridge, lambda: 0.5}}
grids: {c: [0.2, 0.4, 0.7], M: [1, 2, 4]}
replications: 50
base_seed: 11
)");
    const auto cmp = read_csv(run(cfg, Mode::Compare, {scratch("cmp"), 2}).csv);
    int inside = 0;
    for (std::size_t r = 0; r < cmp.rows.size(); ++r) inside += cmp.str(r, "within_3se") == "1";
    CHECK(inside >= static_cast<int>(std::ceil(0.95 * static_cast<double>(cmp.rows.size()))));

    const auto est = read_csv(run(cfg, Mode::Estimate, {scratch("est"), 2}).csv);
    int tracked = 0;
    for (std::size_t r = 0; r < est.rows.size(); ++r) {
        tracked += std::abs(est.num(r, "gap_mean")) <= 3.0 * est.num(r, "gap_se");
        CHECK(est.str(r, "guarantee") == "proved");
    }
    CHECK(tracked >= static_cast<int>(std::ceil(0.95 * static_cast<double>(est.rows.size()))));
}

TEST_CASE("interpolating cells record a degenerate estimate and keep going") {
    auto cfg = parse_config(R"(
model: {signal: {kind: point_mass, value: 1}, noise: {kind: gaussian, sigma: 1}, n: 100, p: 60}
ensemble: {reg: {kind: none}}
grids: {c: [0.4, 0.9], M: [1, 2]}
replications: 3
)");
    const auto csv = read_csv(run(cfg, Mode::Estimate, {scratch("interp"), 1}).csv);
    REQUIRE(csv.rows.size() == 4);
    CHECK(csv.str(0, "status") == "degenerate_correction");
    CHECK(std::isfinite(csv.num(0, "risk_mean")));
    CHECK(csv.str(2, "status") == "ok");
}

TEST_CASE("presets emit schema-valid tables") {
    // Reduced grids keep the check fast; the code path is the preset's.
    const std::map<std::string, std::string> overrides = {
        {"optimal-subsample", "grids: {delta: [10, 2], c: [0.03, 0.05, 0.08, 0.2, 0.6, 1.0]}"},
        {"lambda-vs-c-heatmap", "grids: {c: [0.05, 0.3, 1.0], lambda: [0, 0.1, 1]}"},
        {"huber-threshold-heatmap", "grids: {c: [0.3, 1.0], huber_rho: [1, 10]}"},
        {"effect-of-M", "model: {n: 400, p: 40}\nreplications: 4\ngrids: {c: [0.25, 0.6]}"},
    };
    for (const auto& [name, extra] : overrides) {
        const auto cfg = parse_config("preset: " + name + "\n" + extra);
        const auto s = run(cfg, *cfg.mode, {scratch("preset_" + name), 2});
        const auto csv = read_csv(s.csv);
        INFO(name);
        CHECK(csv.header == csv_columns(*cfg.mode));
        CHECK(!csv.rows.empty());
        const std::vector<std::string> required =
            *cfg.mode == Mode::Sweep ? std::vector<std::string>{"delta", "c", "M", "R1", "Rinf", "RM", "status"}
                                     : std::vector<std::string>{"n", "p", "k", "c", "M", "risk_mean", "status"};
        for (const auto& row : csv.rows) {
            REQUIRE(row.size() == csv.header.size());
            for (const auto& f : row) CHECK(!f.empty());
            if (row[csv.col("status")] != "ok") continue;
            for (const auto& col : required) CHECK(row[csv.col(col)] != "nan");
        }
    }
}
