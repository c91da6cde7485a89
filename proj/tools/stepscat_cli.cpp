#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "stepscat/errors.hpp"
#include "stepscat/io.hpp"
#include "stepscat/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kSelftestFailed = 1;
constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

struct Overrides {
    std::optional<double> mu_max;
    std::optional<double> tol;
    std::optional<std::string> out_dir;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--mu-max", o.mu_max, "Upper end of the sampled spectrum");
    cmd->add_option("--tol", o.tol, "Relative tolerance of the Jost integrations");
    cmd->add_option("--out-dir", o.out_dir, "Directory for output files");
}

stepscat::RunConfig load_config(const std::string& path, const Overrides& o) {
    stepscat::RunConfig cfg = stepscat::run_config_from_json(stepscat::read_text_file(path));
    if (o.mu_max) cfg.mu_max = *o.mu_max;
    if (o.tol) cfg.tol = *o.tol;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    cfg.validate();
    return cfg;
}

void report(const std::exception& e) { fmt::print(stderr, "stepscat: {}\n", e.what()); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scattering data and potential reconstruction for step-like potentials"};
    app.require_subcommand(1);

    Overrides o;
    std::string config_path, data_path, inject = "none";

    auto* forward = app.add_subcommand("forward", "Compute scattering data for a potential");
    forward->add_option("config", config_path, "Run configuration (JSON)")->required();
    add_overrides(forward, o);

    auto* invert = app.add_subcommand("invert", "Recover the potential from scattering data");
    invert->add_option("data", data_path, "Scattering data (JSON)")->required();
    invert->add_option("config", config_path, "Run configuration (JSON)")->required();
    add_overrides(invert, o);

    auto* roundtrip = app.add_subcommand("roundtrip", "Forward, invert and compare");
    roundtrip->add_option("config", config_path, "Run configuration (JSON)")->required();
    add_overrides(roundtrip, o);

    auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");
    selftest->add_option("--inject", inject, "Fault to inject")
        ->check(CLI::IsMember({"none", "s_plus_symmetry", "f_symmetry"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (selftest->parsed()) {
        stepscat::Injection inj = stepscat::Injection::none;
        if (inject == "s_plus_symmetry") inj = stepscat::Injection::s_plus_symmetry;
        if (inject == "f_symmetry") inj = stepscat::Injection::f_symmetry;
        try {
            const stepscat::SelftestReport rep = stepscat::run_selftest(inj);
            for (const auto& c : rep.checks)
                fmt::print("{} {} value={:.3g} limit={:.3g}\n", c.passed ? "PASS" : "FAIL", c.name,
                           c.value, c.limit);
            if (rep.passed()) return kOk;
            for (const auto& name : rep.failures()) fmt::print(stderr, "failed: {}\n", name);
            return kSelftestFailed;
        } catch (const std::exception& e) {
            report(e);
            return kNumericalError;
        }
    }

    stepscat::RunConfig cfg;
    std::optional<stepscat::ScatteringData> data;
    try {
        cfg = load_config(config_path, o);
        if (invert->parsed()) data = stepscat::scattering_data_from_json(stepscat::read_text_file(data_path));
    } catch (const std::exception& e) {
        report(e);
        return kConfigError;
    }

    try {
        if (forward->parsed()) {
            const auto d = stepscat::run_forward(cfg);
            fmt::print("bound states: {}; samples: {} + {}\n", d.bound_states.size(),
                       d.bands[0].samples.size(), d.bands[1].samples.size());
        } else if (invert->parsed()) {
            const auto r = stepscat::run_invert(*data, cfg);
            fmt::print("a_plus estimate: {:.10g}; t_max: {:g}; condition: {:.3g}\n", r.a_plus_estimate,
                       r.t_max, r.max_condition);
        } else if (roundtrip->parsed()) {
            const auto r = stepscat::run_roundtrip(cfg);
            fmt::print("sup error: {:.3g}; L1 error: {:.3g}; a_plus error: {:.3g}\n", r.sup_error,
                       r.l1_error, r.a_plus_error);
            for (const auto& c : r.invariants)
                fmt::print("{} {} value={:.3g} limit={:.3g}\n", c.passed ? "PASS" : "FAIL", c.name,
                           c.value, c.limit);
        }
    } catch (const std::exception& e) {
        report(e);
        return kNumericalError;
    }
    return kOk;
}
