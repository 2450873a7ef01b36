// subag <mode> --config <path> [--out <dir>] [--workers N] [--seed S]
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "subag/error.hpp"
#include "subag/experiment.hpp"

namespace {

using nlohmann::ordered_json;

ordered_json diag_json(const std::vector<subag::Diagnostic>& diags) {
    ordered_json a = ordered_json::array();
    for (const auto& d : diags)
        a.push_back({{"severity", d.severity == subag::Diagnostic::Severity::Error ? "error" : "warning"},
                     {"field", d.field},
                     {"message", d.message}});
    return a;
}

void print_warnings(const std::vector<subag::Diagnostic>& diags) {
    for (const auto& d : diags)
        if (d.severity == subag::Diagnostic::Severity::Warning)
            std::cerr << "warning: " << d.field << ": " << d.message << '\n';
}

/// Error report on stderr, and in <out>/error.json when the directory is known.
std::string bare(const subag::ConfigError& e) {
    const std::string w = e.what(), prefix = e.field() + ": ";
    return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

int fail(int code, const std::string& kind, const std::string& field, const std::string& message,
         const std::vector<subag::Diagnostic>& diags, const std::string& out_dir) {
    ordered_json j{{"status", "error"}, {"kind", kind}, {"field", field}, {"message", message}};
    if (!diags.empty()) j["diagnostics"] = diag_json(diags);
    std::cerr << j.dump() << '\n';
    if (!out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        std::ofstream(std::filesystem::path(out_dir) / "error.json") << j.dump(2) << '\n';
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Subagging risk theory, simulation and risk estimation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SUBAG_VERSION_STRING);

    std::string config_path, out_dir;
    int workers = 1;
    std::optional<std::uint64_t> seed;
    bool dump = false;
    std::string validate_mode;

    std::vector<CLI::App*> runs;
    for (const char* m : {"theory", "simulate", "estimate", "compare", "sweep"}) {
        auto* sub = app.add_subcommand(m, std::string("run in ") + m + " mode");
        sub->add_option("--config", config_path, "YAML or JSON config, or a manifest.json from an earlier run")
            ->required();
        sub->add_option("--out", out_dir, "output directory (default: output_path from the config)");
        sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "override base_seed");
        sub->add_flag("--dump-datasets", dump, "write every simulated dataset under <out>/datasets");
        runs.push_back(sub);
    }
    auto* val = app.add_subcommand("validate", "check a config and print diagnostics as JSON");
    val->add_option("--config", config_path, "config file")->required();
    val->add_option("--mode", validate_mode, "mode to validate for (default: the config's mode)");
    auto* pre = app.add_subcommand("presets", "list the figure-protocol presets");

    CLI11_PARSE(app, argc, argv);

    if (pre->parsed()) {
        for (const auto& p : subag::preset_names()) std::cout << p << '\n';
        return 0;
    }

    subag::ExperimentConfig cfg;
    try {
        cfg = subag::load_config(config_path);
    } catch (const subag::ConfigError& e) {
        return fail(2, "config_error", e.field(), bare(e), {}, out_dir);
    }
    if (seed) cfg.base_seed = *seed;

    if (val->parsed()) {
        subag::Mode mode = subag::Mode::Theory;
        try {
            mode = !validate_mode.empty() ? subag::parse_mode(validate_mode) : cfg.mode.value_or(subag::Mode::Theory);
        } catch (const subag::Error& e) {
            return fail(2, "config_error", "--mode", e.what(), {}, "");
        }
        const auto diags = subag::validate(cfg, mode);
        std::cout << diag_json(diags).dump(2) << '\n';
        return subag::has_errors(diags) ? 2 : 0;
    }

    subag::Mode mode{};
    for (auto* sub : runs)
        if (sub->parsed()) mode = subag::parse_mode(sub->get_name());
    const std::string dir = out_dir.empty() ? cfg.output_path : out_dir;

    const auto diags = subag::validate(cfg, mode);
    print_warnings(diags);
    if (subag::has_errors(diags)) {
        for (const auto& d : diags)
            if (d.severity == subag::Diagnostic::Severity::Error)
                return fail(2, "config_error", d.field, d.message, diags, dir);
    }
    try {
        const auto s = subag::run(cfg, mode, {dir, workers, dump});
        std::cout << "wrote " << s.rows << " rows to " << s.csv.string() << " (" << s.failed_cells
                  << " with a non-ok status) in " << s.wall_time << " s\n";
    } catch (const subag::ConfigError& e) {
        return fail(2, "config_error", e.field(), bare(e), diags, dir);
    } catch (const std::exception& e) {
        return fail(1, subag::status_tag(std::current_exception()), "", e.what(), diags, dir);
    }
    return 0;
}
