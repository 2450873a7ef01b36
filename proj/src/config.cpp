#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "subag/error.hpp"
#include "subag/experiment.hpp"
#include "subag/rng.hpp"

namespace subag {

namespace {

using ojson = nlohmann::ordered_json;

// Figure-protocol presets. User keys are merged over these, map by map.
const std::map<std::string, std::string>& presets() {
    static const std::map<std::string, std::string> p = {
        {"effect-of-M", R"(
mode: compare
model:
  signal: {kind: two_point, strength: 2, support: 0.1}
  noise: {kind: gaussian, sigma: 1}
  n: 2000
  p: 200
ensemble:
  loss: {kind: square}
  reg: {kind: lasso, lambda: 0.001}
grids:
  c: [0.05, 0.15, 0.25, 0.4, 0.6, 1.0]
  M: [1, 2, 5]
replications: 50
base_seed: 1
)"},
        {"optimal-subsample", R"(
mode: sweep
model:
  signal: {kind: two_point, strength: 2, support: 0.01}
  noise: {kind: gaussian, sigma: 1}
ensemble:
  loss: {kind: square}
  reg: {kind: lasso, lambda: 0}
grids:
  delta: [10, 5, 2, 0.5, 0.2, 0.1]
  c: [0.0121, 0.0143, 0.0168, 0.0198, 0.0234, 0.0276, 0.0325, 0.0383, 0.0452, 0.0532, 0.0628, 0.0740,
      0.0872, 0.1028, 0.1212, 0.1429, 0.1684, 0.1985, 0.2340, 0.2758, 0.3251, 0.3833, 0.4518, 0.5326,
      0.6278, 0.7400, 0.8723, 1.0]
  M: [inf]
)"},
        {"lambda-vs-c-heatmap", R"(
mode: sweep
model:
  signal: {kind: two_point, strength: 0.5, support: 0.2}
  noise: {kind: gaussian, sigma: 1}
ensemble:
  loss: {kind: square}
  reg: {kind: lasso}
grids:
  delta: [10]
  c: [0.03, 0.05, 0.07, 0.09, 0.12, 0.16, 0.22, 0.3, 0.4, 0.55, 0.75, 1.0]
  lambda: [0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1, 3]
  M: [inf]
)"},
        {"huber-threshold-heatmap", R"(
mode: sweep
model:
  signal: {kind: gauss_point_mass, eps: 0.1, variance: 1}
  noise: {kind: student_t, dof: 10}
ensemble:
  loss: {kind: huber}
  reg: {kind: lasso, lambda: 0.5}
grids:
  delta: [10]
  c: [0.2, 0.3, 0.45, 0.6, 0.8, 1.0]
  huber_rho: [0.1, 0.3, 1, 3, 10, 30]
  M: [inf]
)"},
    };
    return p;
}

YAML::Node merge(const YAML::Node& base, const YAML::Node& over) {
    if (!base.IsMap() || !over.IsMap()) return YAML::Clone(over);
    YAML::Node out = YAML::Clone(base);
    for (const auto& kv : over) {
        const auto key = kv.first.as<std::string>();
        out[key] = out[key] ? merge(out[key], kv.second) : YAML::Clone(kv.second);
    }
    return out;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const YAML::Node& n, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!n.IsMap()) throw ConfigError(path, "expected a mapping");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    std::set<std::string> seen;
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        if (!ok.count(key)) throw ConfigError(join(path, key), "unknown key");
        if (!seen.insert(key).second) throw ConfigError(join(path, key), "duplicate key");
    }
}

double as_number(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) throw ConfigError(field, "expected a number");
    const auto s = n.Scalar();
    if (s == "inf" || s == ".inf") return std::numeric_limits<double>::infinity();
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected a number, got '" + s + "'");
    }
}

long as_integer(const YAML::Node& n, const std::string& field) {
    const double v = as_number(n, field);
    if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 9e15) throw ConfigError(field, "expected an integer");
    return static_cast<long>(v);
}

std::uint64_t as_seed(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) throw ConfigError(field, "expected a non-negative integer");
    try {
        std::size_t pos = 0;
        const auto& s = n.Scalar();
        if (!s.empty() && s[0] == '-') throw std::invalid_argument(s);
        const auto v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(field, "expected a non-negative integer");
    }
}

std::string as_string(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) throw ConfigError(field, "expected a string");
    return n.Scalar();
}

std::vector<double> as_list(const YAML::Node& n, const std::string& field) {
    if (!n.IsSequence()) throw ConfigError(field, "expected a list");
    std::vector<double> v;
    for (std::size_t i = 0; i < n.size(); ++i) v.push_back(as_number(n[i], field + "[" + std::to_string(i) + "]"));
    return v;
}

EnsembleSize as_size(const YAML::Node& n, const std::string& field) {
    if (n.IsScalar() && (n.Scalar() == "inf" || n.Scalar() == ".inf" || n.Scalar() == "infinity"))
        return EnsembleSize::infinite();
    const long m = as_integer(n, field);
    if (m < 1) throw ConfigError(field, "ensemble size must be a positive integer or inf");
    return EnsembleSize::finite(m);
}

DistConfig parse_dist(const YAML::Node& n, const std::string& path,
                      const std::map<std::string, std::map<std::string, std::optional<double>>>& families) {
    if (!n.IsMap()) throw ConfigError(path, "expected a mapping with a 'kind' key");
    if (!n["kind"]) throw ConfigError(join(path, "kind"), "missing");
    DistConfig d;
    d.kind = as_string(n["kind"], join(path, "kind"));
    const auto fam = families.find(d.kind);
    if (fam == families.end()) throw ConfigError(join(path, "kind"), "unknown family '" + d.kind + "'");
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        if (key == "kind") continue;
        if (!fam->second.count(key)) throw ConfigError(join(path, key), "unknown parameter for " + d.kind);
        d.params[key] = as_number(kv.second, join(path, key));
    }
    for (const auto& [key, def] : fam->second) {
        if (d.params.count(key)) continue;
        if (!def) throw ConfigError(join(path, key), "missing");
        d.params[key] = *def;
    }
    return d;
}

const std::map<std::string, std::map<std::string, std::optional<double>>> kSignals = {
    {"point_mass", {{"value", std::nullopt}}},
    {"two_point", {{"strength", std::nullopt}, {"support", std::nullopt}}},
    {"gauss_point_mass", {{"eps", std::nullopt}, {"variance", 1.0}}},
};

const std::map<std::string, std::map<std::string, std::optional<double>>> kNoises = {
    {"gaussian", {{"sigma", std::nullopt}}},
    {"student_t", {{"dof", std::nullopt}, {"scale", 1.0}}},
};

LossConfig parse_loss(const YAML::Node& n, const std::string& path) {
    check_keys(n, path, {"kind", "rho"});
    LossConfig l;
    if (n["kind"]) l.kind = as_string(n["kind"], join(path, "kind"));
    if (l.kind != "square" && l.kind != "huber") throw ConfigError(join(path, "kind"), "expected square or huber");
    if (n["rho"]) l.rho = as_number(n["rho"], join(path, "rho"));
    return l;
}

RegConfig parse_reg(const YAML::Node& n, const std::string& path) {
    check_keys(n, path, {"kind", "lambda", "ratio"});
    RegConfig r;
    if (n["kind"]) r.kind = as_string(n["kind"], join(path, "kind"));
    if (r.kind != "none" && r.kind != "ridge" && r.kind != "lasso" && r.kind != "elastic_net")
        throw ConfigError(join(path, "kind"), "expected none, ridge, lasso or elastic_net");
    if (n["lambda"]) r.lambda = as_number(n["lambda"], join(path, "lambda"));
    if (n["ratio"]) r.ratio = as_number(n["ratio"], join(path, "ratio"));
    return r;
}

QuadratureConfig parse_quadrature(const YAML::Node& n) {
    const std::string path = "quadrature";
    check_keys(n, path,
               {"gauss_nodes", "panel_nodes", "panel_width", "truncation", "noise_nodes", "tail_truncation",
                "monte_carlo"});
    QuadratureConfig q;
    auto integer = [&](const char* key, int& dst) {
        if (n[key]) dst = static_cast<int>(as_integer(n[key], join(path, key)));
    };
    auto number = [&](const char* key, double& dst) {
        if (n[key]) dst = as_number(n[key], join(path, key));
    };
    integer("gauss_nodes", q.gauss_nodes);
    integer("panel_nodes", q.panel_nodes);
    number("panel_width", q.panel_width);
    number("truncation", q.truncation);
    integer("noise_nodes", q.noise_nodes);
    number("tail_truncation", q.tail_truncation);
    if (n["monte_carlo"]) {
        const auto mc = n["monte_carlo"];
        const std::string mp = join(path, "monte_carlo");
        check_keys(mc, mp, {"samples", "seed"});
        MonteCarloNoise m;
        if (mc["samples"]) {
            const long s = as_integer(mc["samples"], join(mp, "samples"));
            if (s < 1) throw ConfigError(join(mp, "samples"), "must be positive");
            m.samples = static_cast<std::size_t>(s);
        }
        if (mc["seed"]) m.seed = as_seed(mc["seed"], join(mp, "seed"));
        q.monte_carlo = m;
    }
    try {
        q.validate();
    } catch (const Error& e) {
        throw ConfigError(path, e.what());
    }
    return q;
}

ExperimentConfig parse_root(const YAML::Node& root) {
    check_keys(root, "",
               {"preset", "mode", "model", "ensemble", "grids", "replications", "base_seed", "output_path",
                "quadrature", "fit"});
    ExperimentConfig cfg;
    if (root["preset"]) cfg.preset = as_string(root["preset"], "preset");
    if (root["mode"]) {
        try {
            cfg.mode = parse_mode(as_string(root["mode"], "mode"));
        } catch (const DomainError& e) {
            throw ConfigError("mode", e.what());
        }
    }
    if (const auto m = root["model"]) {
        check_keys(m, "model", {"signal", "noise", "n", "p"});
        if (m["signal"]) cfg.signal = parse_dist(m["signal"], "model.signal", kSignals);
        if (m["noise"]) cfg.noise = parse_dist(m["noise"], "model.noise", kNoises);
        if (m["n"]) cfg.n = as_integer(m["n"], "model.n");
        if (m["p"]) cfg.p = as_integer(m["p"], "model.p");
    }
    if (const auto e = root["ensemble"]) {
        check_keys(e, "ensemble", {"loss", "reg", "components"});
        if (e["loss"]) cfg.loss = parse_loss(e["loss"], "ensemble.loss");
        if (e["reg"]) cfg.reg = parse_reg(e["reg"], "ensemble.reg");
        if (const auto cs = e["components"]) {
            if (!cs.IsSequence()) throw ConfigError("ensemble.components", "expected a list");
            for (std::size_t i = 0; i < cs.size(); ++i) {
                const std::string path = "ensemble.components[" + std::to_string(i) + "]";
                check_keys(cs[i], path, {"loss", "reg", "c"});
                ComponentConfig cc;
                if (cs[i]["loss"]) cc.loss = parse_loss(cs[i]["loss"], join(path, "loss"));
                if (cs[i]["reg"]) cc.reg = parse_reg(cs[i]["reg"], join(path, "reg"));
                if (!cs[i]["c"]) throw ConfigError(join(path, "c"), "missing");
                cc.c = as_number(cs[i]["c"], join(path, "c"));
                cfg.components.push_back(cc);
            }
        }
    }
    if (const auto g = root["grids"]) {
        check_keys(g, "grids", {"delta", "c", "lambda", "M", "huber_rho"});
        if (g["delta"]) cfg.grid_delta = as_list(g["delta"], "grids.delta");
        if (g["c"]) cfg.grid_c = as_list(g["c"], "grids.c");
        if (g["lambda"]) cfg.grid_lambda = as_list(g["lambda"], "grids.lambda");
        if (g["huber_rho"]) cfg.grid_huber_rho = as_list(g["huber_rho"], "grids.huber_rho");
        if (g["M"]) {
            if (!g["M"].IsSequence()) throw ConfigError("grids.M", "expected a list");
            cfg.grid_M.clear();
            for (std::size_t i = 0; i < g["M"].size(); ++i)
                cfg.grid_M.push_back(as_size(g["M"][i], "grids.M[" + std::to_string(i) + "]"));
        }
    }
    if (root["replications"]) cfg.replications = as_integer(root["replications"], "replications");
    if (root["base_seed"]) cfg.base_seed = as_seed(root["base_seed"], "base_seed");
    if (root["output_path"]) cfg.output_path = as_string(root["output_path"], "output_path");
    if (root["quadrature"]) cfg.quadrature = parse_quadrature(root["quadrature"]);
    if (const auto f = root["fit"]) {
        check_keys(f, "fit", {"tol", "max_iter"});
        if (f["tol"]) cfg.fit.tol = as_number(f["tol"], "fit.tol");
        if (f["max_iter"]) cfg.fit.max_iter = static_cast<int>(as_integer(f["max_iter"], "fit.max_iter"));
    }
    return cfg;
}

ojson dist_json(const DistConfig& d) {
    ojson j;
    j["kind"] = d.kind;
    for (const auto& [k, v] : d.params) j[k] = v;
    return j;
}

ojson loss_json(const LossConfig& l) {
    ojson j{{"kind", l.kind}};
    if (l.kind == "huber") j["rho"] = l.rho;
    return j;
}

ojson reg_json(const RegConfig& r) {
    ojson j{{"kind", r.kind}, {"lambda", r.lambda}};
    if (r.kind == "elastic_net") j["ratio"] = r.ratio;
    return j;
}

}  // namespace

Mode parse_mode(const std::string& s) {
    if (s == "theory") return Mode::Theory;
    if (s == "simulate") return Mode::Simulate;
    if (s == "estimate") return Mode::Estimate;
    if (s == "compare") return Mode::Compare;
    if (s == "sweep") return Mode::Sweep;
    throw DomainError("unknown mode '" + s + "' (theory, simulate, estimate, compare, sweep)");
}

const char* to_string(Mode m) noexcept {
    switch (m) {
        case Mode::Theory: return "theory";
        case Mode::Simulate: return "simulate";
        case Mode::Estimate: return "estimate";
        case Mode::Compare: return "compare";
        case Mode::Sweep: return "sweep";
    }
    return "?";
}

SignalDist make_signal(const DistConfig& d) {
    const auto& p = d.params;
    if (d.kind == "point_mass") return SignalDist::point_mass(p.at("value"));
    if (d.kind == "two_point") return SignalDist::two_point(p.at("strength"), p.at("support"));
    if (d.kind == "gauss_point_mass") return SignalDist::gauss_point_mass(p.at("eps"), p.at("variance"));
    throw ConfigError("model.signal.kind", "unknown family '" + d.kind + "'");
}

NoiseDist make_noise(const DistConfig& d) {
    const auto& p = d.params;
    if (d.kind == "gaussian") return NoiseDist::gaussian(p.at("sigma"));
    if (d.kind == "student_t") return NoiseDist::student_t(p.at("dof"), p.at("scale"));
    throw ConfigError("model.noise.kind", "unknown family '" + d.kind + "'");
}

std::vector<double> ExperimentConfig::deltas() const {
    if (n && p && *p > 0) return {static_cast<double>(*n) / static_cast<double>(*p)};
    return grid_delta;
}

std::vector<double> ExperimentConfig::lambdas() const {
    if (reg.kind == "none") return {0.0};
    return grid_lambda.empty() ? std::vector<double>{reg.lambda} : grid_lambda;
}

std::vector<double> ExperimentConfig::rhos() const {
    if (!grid_huber_rho.empty()) return grid_huber_rho;
    if (loss.kind == "huber") return {loss.rho};
    return {};
}

ExperimentConfig parse_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("<document>", std::string("unparsable: ") + e.what());
    }
    if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError("<document>", "top level must be a mapping");
    if (root["manifest_version"] && root["config"]) root = root["config"];
    if (root["preset"]) {
        const auto name = as_string(root["preset"], "preset");
        const auto it = presets().find(name);
        if (it == presets().end()) throw ConfigError("preset", "unknown preset '" + name + "'");
        root = merge(YAML::Load(it->second), root);
    }
    return parse_root(root);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
    // The preset is already folded in, so it is not echoed.
    ojson j;
    if (cfg.mode) j["mode"] = to_string(*cfg.mode);
    ojson model{{"signal", dist_json(cfg.signal)}, {"noise", dist_json(cfg.noise)}};
    if (cfg.n) model["n"] = *cfg.n;
    if (cfg.p) model["p"] = *cfg.p;
    j["model"] = model;
    ojson ens{{"loss", loss_json(cfg.loss)}, {"reg", reg_json(cfg.reg)}};
    if (!cfg.components.empty()) {
        ojson cs = ojson::array();
        for (const auto& c : cfg.components)
            cs.push_back({{"loss", loss_json(c.loss)}, {"reg", reg_json(c.reg)}, {"c", c.c}});
        ens["components"] = cs;
    }
    j["ensemble"] = ens;
    ojson grids{{"c", cfg.grid_c}};
    if (!cfg.grid_delta.empty()) grids["delta"] = cfg.grid_delta;
    if (!cfg.grid_lambda.empty()) grids["lambda"] = cfg.grid_lambda;
    if (!cfg.grid_huber_rho.empty()) grids["huber_rho"] = cfg.grid_huber_rho;
    ojson ms = ojson::array();
    for (const auto& m : cfg.grid_M) {
        if (m.is_infinite())
            ms.push_back("inf");
        else
            ms.push_back(*m.m);
    }
    grids["M"] = ms;
    j["grids"] = grids;
    j["replications"] = cfg.replications;
    j["base_seed"] = cfg.base_seed;
    j["output_path"] = cfg.output_path;
    const auto& q = cfg.quadrature;
    ojson quad{{"gauss_nodes", q.gauss_nodes},     {"panel_nodes", q.panel_nodes}, {"panel_width", q.panel_width},
               {"truncation", q.truncation},       {"noise_nodes", q.noise_nodes},
               {"tail_truncation", q.tail_truncation}};
    if (q.monte_carlo) quad["monte_carlo"] = {{"samples", q.monte_carlo->samples}, {"seed", q.monte_carlo->seed}};
    j["quadrature"] = quad;
    j["fit"] = {{"tol", cfg.fit.tol}, {"max_iter", cfg.fit.max_iter}};
    return j.dump(2);
}

std::vector<std::string> preset_names() {
    std::vector<std::string> v;
    for (const auto& [k, _] : presets()) v.push_back(k);
    return v;
}

bool has_errors(const std::vector<Diagnostic>& diags) {
    for (const auto& d : diags)
        if (d.severity == Diagnostic::Severity::Error) return true;
    return false;
}

std::uint64_t cell_seed(std::uint64_t base_seed, std::uint64_t grid_index, std::uint64_t r) {
    return derive_seed(base_seed, {grid_index, r});
}

}  // namespace subag
