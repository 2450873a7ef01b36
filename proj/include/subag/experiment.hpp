#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "subag/distributions.hpp"
#include "subag/fixedpoint.hpp"
#include "subag/mestim.hpp"
#include "subag/quadrature.hpp"

namespace subag {

enum class Mode { Theory, Simulate, Estimate, Compare, Sweep };

Mode parse_mode(const std::string& s);
const char* to_string(Mode m) noexcept;

/// Distribution family plus its named parameters, kept in config form so it can be echoed back.
struct DistConfig {
    std::string kind;
    std::map<std::string, double> params;
};

SignalDist make_signal(const DistConfig& d);
NoiseDist make_noise(const DistConfig& d);

struct LossConfig {
    std::string kind = "square";  ///< square | huber
    double rho = 1.0;
};

struct RegConfig {
    std::string kind = "ridge";  ///< none | ridge | lasso | elastic_net
    double lambda = 1.0;
    /// Elastic net only: lambda1 = ratio * lambda, lambda2 = (1 - ratio) * lambda.
    double ratio = 0.5;
};

/// One member of a heterogeneous ensemble.
struct ComponentConfig {
    LossConfig loss;
    RegConfig reg;
    double c = 0.5;
};

struct ExperimentConfig {
    std::optional<std::string> preset;
    std::optional<Mode> mode;

    DistConfig signal{"point_mass", {{"value", 1.0}}};
    DistConfig noise{"gaussian", {{"sigma", 1.0}}};
    std::optional<long> n, p;

    LossConfig loss;
    RegConfig reg;
    /// Non-empty for a heterogeneous ensemble; M then counts leading components.
    std::vector<ComponentConfig> components;

    std::vector<double> grid_delta;
    std::vector<double> grid_c{0.5};
    std::vector<double> grid_lambda;
    std::vector<EnsembleSize> grid_M{EnsembleSize::finite(1)};
    std::vector<double> grid_huber_rho;

    long replications = 1;
    std::uint64_t base_seed = 0;
    std::string output_path = "subag_out";
    QuadratureConfig quadrature;
    FitOptions fit;

    /// n / p when both are set, otherwise the delta grid.
    std::vector<double> deltas() const;
    /// The lambda grid, or {reg.lambda} when none was given; {0} for no penalty.
    std::vector<double> lambdas() const;
    /// The Huber threshold grid, or {loss.rho} for Huber loss, or empty for square loss.
    std::vector<double> rhos() const;
};

/// Parses a YAML (or JSON) document. A manifest written by `run` is accepted and its config is used.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved configuration as JSON text; parse_config(config_to_json(c)) reproduces c.
std::string config_to_json(const ExperimentConfig& cfg);

std::vector<std::string> preset_names();

struct Diagnostic {
    enum class Severity { Warning, Error };
    Severity severity;
    std::string field;
    std::string message;
};

/// Errors make the config unrunnable; warnings flag points the theory does not cover.
std::vector<Diagnostic> validate(const ExperimentConfig& cfg, Mode mode);

bool has_errors(const std::vector<Diagnostic>& diags);

/// Seed of replication r in grid cell g; adding cells or replications leaves existing seeds alone.
std::uint64_t cell_seed(std::uint64_t base_seed, std::uint64_t grid_index, std::uint64_t r);

struct RunOptions {
    std::filesystem::path out_dir;
    int workers = 1;
    /// Also write every simulated dataset under <out_dir>/datasets.
    bool dump_datasets = false;
};

struct RunSummary {
    std::size_t rows = 0;
    std::size_t failed_cells = 0;
    double wall_time = 0.0;
    std::vector<Diagnostic> diagnostics;
    std::filesystem::path csv, manifest;
};

/// Validates, runs, and writes results.csv and manifest.json. Throws ConfigError on an invalid config.
RunSummary run(const ExperimentConfig& cfg, Mode mode, const RunOptions& opts);

/// Column order of results.csv for each mode.
std::vector<std::string> csv_columns(Mode mode);

}  // namespace subag
