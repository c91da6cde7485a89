#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stepscat/marchenko.hpp"
#include "stepscat/potential.hpp"
#include "stepscat/spectral.hpp"

namespace stepscat {

struct RunConfig {
    Potential potential = Potential::free();
    /// Upper end of the sampled spectrum; <= 0 means mu2 + 1e4.
    double mu_max = 0.0;
    int band_samples = 200;
    double x_min = -4.0;
    double x_max = 4.0;
    double x_step = 0.05;
    /// Relative tolerance of the Jost integrations.
    double tol = 1e-11;
    /// Largest accepted truncation error of the spectral integral (F units).
    double tail_tol = 2e-2;
    bool method_b_enabled = false;
    /// Richardson levels for K(x, x).
    int richardson_levels = 3;
    std::filesystem::path out_dir = ".";

    /// Throws InvalidInput when an invariant is violated.
    void validate() const;
    double effective_mu_max() const;
};

/// Keys: potential, mu_max, band_samples, x_min, x_max, x_step, tol, tail_tol, method_b,
/// richardson_levels, out_dir. Missing keys keep their defaults.
RunConfig run_config_from_json(std::string_view text);

ScatteringData compute_forward(const RunConfig& cfg);

/// Writes scattering_data.json and s_table.csv into cfg.out_dir.
ScatteringData run_forward(const RunConfig& cfg);

struct RecoveryReport {
    double a_plus_estimate = 0.0;
    double marchenko_residual = 0.0;
    double max_condition = 0.0;
    double t_max = 0.0;
    double tail_estimate = 0.0;
    double f_symmetry = 0.0;
    std::vector<double> x;
    std::vector<double> q;
    std::vector<double> k_diagonal;
};

RecoveryReport compute_invert(const ScatteringData& d, const RunConfig& cfg);

/// Writes recovered_q.csv and recovery_report.json into cfg.out_dir.
RecoveryReport run_invert(const ScatteringData& d, const RunConfig& cfg);

struct InvariantResult {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool passed = false;
};

struct RoundtripReport {
    double sup_error = 0.0;
    double l1_error = 0.0;
    double a_plus_error = 0.0;
    RecoveryReport recovery;
    std::vector<InvariantResult> invariants;
};

/// Potential whose deviation is the recovered q minus its asymptote, linear between nodes.
/// Nodes with |x| <= jump_halfwidth are replaced by quadratic extrapolation of the deviation
/// from their own side of the jump.
Potential recovered_potential(const RecoveryReport& r, double a_minus, double a_plus,
                              double jump_halfwidth = 0.0);

RoundtripReport compute_roundtrip(const RunConfig& cfg, bool check_idempotence = true);

/// Writes roundtrip_report.json and recovered_q.csv into cfg.out_dir.
RoundtripReport run_roundtrip(const RunConfig& cfg);

enum class Injection { none, s_plus_symmetry, f_symmetry };

struct SelftestReport {
    std::vector<InvariantResult> checks;
    bool passed() const;
    std::vector<std::string> failures() const;
};

SelftestReport run_selftest(Injection injection = Injection::none);

std::string recovered_q_csv(const RecoveryReport& r);
std::string recovery_report_json(const RecoveryReport& r);
std::string roundtrip_report_json(const RoundtripReport& r);

}  // namespace stepscat
