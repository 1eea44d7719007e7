#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "extravar/commands.hpp"
#include "extravar/errors.hpp"

namespace {

using extravar::ConfigError;

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos)
        return "";
    size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// One subcommand's config pipeline: defaults, then --config, then --set
// overrides, then dedicated flags (most specific wins).
struct SubArgs {
    CLI::App* app = nullptr;
    std::string config_path;
    std::vector<std::string> sets;
    std::string out;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void add_common(CLI::App* a) {
        app = a;
        a->add_option("--config", config_path, "config file (section.key = value lines)");
        a->add_option("--set", sets, "override one key, e.g. --set model.steps=13")
            ->type_name("KEY=VALUE");
        a->add_option("--out", out, "output directory (default: $EXTRAVAR_OUT, then .)");
    }

    void add_key_flag(const std::string& flag, const std::string& key, const std::string& desc) {
        options[key] = app->add_option(flag, values[key], desc);
    }

    extravar::cli::RunConfig config() const {
        extravar::cli::RunConfig cfg;
        if (!config_path.empty())
            cfg = extravar::cli::load_config_file(config_path);
        for (const auto& s : sets) {
            size_t eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
            cfg.apply(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
        }
        for (const auto& [key, opt] : options)
            if (opt->count() > 0)
                cfg.apply(key, values.at(key));
        return cfg;
    }

    std::filesystem::path out_dir() const {
        if (!out.empty())
            return out;
        if (const char* env = std::getenv("EXTRAVAR_OUT"); env && *env)
            return env;
        return ".";
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"scale-wise rotary remapping and attention calibration toolkit"};
    app.require_subcommand(1);

    SubArgs ft, cap, gen, prb;
    std::string axis;

    CLI::App* ft_app = app.add_subcommand("freq-table", "write the banded frequency table CSV");
    ft.add_common(ft_app);
    ft_app->add_option("--axis", axis, "keep one axis: one_d, height or width");

    CLI::App* cap_app =
        app.add_subcommand("capture-ref", "capture reference entropies at the training side");
    cap.add_common(cap_app);
    cap.add_key_flag("--seed", "run.seed", "model seed");
    cap.add_key_flag("--samples", "run.samples", "positional-noise samples to average");
    cap.add_key_flag("--ref", "plan.ref", "destination store path");

    CLI::App* gen_app =
        app.add_subcommand("generate", "run scale-wise generation and write its artifacts");
    gen.add_common(gen_app);
    gen.add_key_flag("--seed", "run.seed", "model seed");
    gen.add_key_flag("--target-side", "plan.target_side", "generation grid side");
    gen.add_key_flag("--remap", "plan.remap", "none|nope|pi|ntk|yarn|stage-aware");
    gen.add_key_flag("--calibrate", "plan.calibrate", "on|off");
    gen.add_key_flag("--ref", "plan.ref", "reference entropy store to calibrate against");

    CLI::App* prb_app =
        app.add_subcommand("probe", "run a band intervention next to its baseline");
    prb.add_common(prb_app);
    prb.add_key_flag("--seed", "run.seed", "model seed");
    prb.add_key_flag("--target-side", "plan.target_side", "generation grid side");
    prb.add_key_flag("--remap", "plan.remap", "none|nope|pi|ntk|yarn|stage-aware");
    prb.add_key_flag("--calibrate", "plan.calibrate", "on|off");
    prb.add_key_flag("--ref", "plan.ref", "reference entropy store to calibrate against");
    prb.add_key_flag("--intervention", "probe.intervention", "kind:band:lo-hi[:T=...]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        std::vector<std::filesystem::path> written;
        if (ft_app->parsed())
            written = extravar::cli::cmd_freq_table(ft.config(), ft.out_dir(), axis);
        else if (cap_app->parsed())
            written = extravar::cli::cmd_capture_ref(cap.config(), cap.out_dir());
        else if (gen_app->parsed())
            written = extravar::cli::cmd_generate(gen.config(), gen.out_dir());
        else
            written = extravar::cli::cmd_probe(prb.config(), prb.out_dir());
        for (const auto& p : written)
            std::cout << p.string() << '\n';
        return 0;
    } catch (const std::exception& e) {
        return extravar::cli::exit_code_for(e);
    }
}
