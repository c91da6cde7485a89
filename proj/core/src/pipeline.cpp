#include "stepscat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "stepscat/errors.hpp"
#include "stepscat/io.hpp"
#include "stepscat/jost.hpp"

namespace stepscat {

namespace {

using nlohmann::json;

// Horizon of the t_max search: the cap beyond x_max and the length of the decay scan.
constexpr double kTMaxCap = 40.0;
constexpr double kTMaxScan = 60.0;

std::string num(double v) { return fmt::format("{:.17g}", v); }

double number(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw InvalidInput(fmt::format("config field \"{}\" must be a number", key));
    return j.at(key).get<double>();
}

InvariantResult at_most(std::string name, double value, double limit) {
    return {std::move(name), value, limit, value <= limit};
}

InvariantResult at_least(std::string name, double value, double limit) {
    return {std::move(name), value, limit, value >= limit};
}

std::string invariant_json(const InvariantResult& c) {
    return fmt::format(R"({{"name": "{}", "value": {}, "limit": {}, "passed": {}}})", c.name,
                       num(c.value), num(c.limit), c.passed ? "true" : "false");
}

}  // namespace

void RunConfig::validate() const {
    if (!(x_step > 0.0)) throw InvalidInput("x_step must be positive");
    if (band_samples < 16) throw InvalidInput("band_samples must be at least 16");
    if (!(tol > 0.0)) throw InvalidInput("tol must be positive");
    if (!(tail_tol > 0.0)) throw InvalidInput("tail_tol must be positive");
    if (!(x_max > x_min)) throw InvalidInput("x_max must exceed x_min");
    if (richardson_levels < 1) throw InvalidInput("richardson_levels must be at least 1");
    const double cells = (x_max - x_min) / x_step;
    if (std::abs(cells - std::round(cells)) > 1e-6)
        throw InvalidInput("x_max - x_min must be a multiple of x_step");
}

double RunConfig::effective_mu_max() const {
    return mu_max > 0.0 ? mu_max : potential.mu2() + 1e4;
}

RunConfig run_config_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const json::exception& e) {
        throw InvalidInput(fmt::format("malformed JSON: {}", e.what()));
    }
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    RunConfig c;
    if (j.contains("potential")) c.potential = potential_from_json(j.at("potential").dump());
    c.mu_max = number(j, "mu_max", c.mu_max);
    if (j.contains("band_samples")) {
        if (!j.at("band_samples").is_number_integer())
            throw InvalidInput("config field \"band_samples\" must be an integer");
        c.band_samples = j.at("band_samples").get<int>();
    }
    c.x_min = number(j, "x_min", c.x_min);
    c.x_max = number(j, "x_max", c.x_max);
    c.x_step = number(j, "x_step", c.x_step);
    c.tol = number(j, "tol", c.tol);
    c.tail_tol = number(j, "tail_tol", c.tail_tol);
    if (j.contains("method_b")) {
        if (!j.at("method_b").is_boolean()) throw InvalidInput("config field \"method_b\" must be a boolean");
        c.method_b_enabled = j.at("method_b").get<bool>();
    }
    if (j.contains("richardson_levels")) {
        if (!j.at("richardson_levels").is_number_integer())
            throw InvalidInput("config field \"richardson_levels\" must be an integer");
        c.richardson_levels = j.at("richardson_levels").get<int>();
    }
    if (j.contains("out_dir")) {
        if (!j.at("out_dir").is_string()) throw InvalidInput("config field \"out_dir\" must be a string");
        c.out_dir = j.at("out_dir").get<std::string>();
    }
    c.validate();
    return c;
}

ScatteringData compute_forward(const RunConfig& cfg) {
    cfg.validate();
    BandGridOptions g;
    g.samples_per_band = cfg.band_samples;
    g.mu_max = cfg.effective_mu_max();
    ForwardOptions f;
    f.spectral.jost.rel_tol = cfg.tol;
    return forward_scatter(cfg.potential, make_band_grids(cfg.potential, g), f);
}

ScatteringData run_forward(const RunConfig& cfg) {
    ScatteringData d = compute_forward(cfg);
    write_text_file(cfg.out_dir / "scattering_data.json", scattering_data_to_json(d));
    write_text_file(cfg.out_dir / "s_table.csv", s_table_csv(d));
    return d;
}

RecoveryReport compute_invert(const ScatteringData& d, const RunConfig& cfg) {
    cfg.validate();
    RecoveryReport r;
    r.a_plus_estimate = estimate_a_plus(d);
    const double h = cfg.x_step;
    const double t_cap = cfg.x_max + kTMaxCap;
    KernelOptions ko;
    ko.tail_tol = cfg.tail_tol;
    ko.method_b = cfg.method_b_enabled;
    ko.s_max = std::max({2.0 * t_cap, std::abs(cfg.x_min + cfg.x_max) + kTMaxScan, t_cap - cfg.x_min,
                         2.0 * std::abs(cfg.x_min)}) +
               2.0 * h;
    const SpectralKernel src(d, ko);
    r.tail_estimate = src.tail().estimate;
    // One node beyond each end so that every reported q uses the central difference.
    const double lo = cfg.x_min - h;
    r.t_max = choose_t_max(src, lo, cfg.x_max + h, h, 1e-8, kTMaxCap, kTMaxScan).t_max;
    const std::vector<double> grid = uniform_grid(lo, r.t_max, h);
    const KernelGrid F = build_F(src, grid, grid, ko.method_b, ko.method_tol);
    r.f_symmetry = (F.values - F.values.transpose()).cwiseAbs().maxCoeff();
    const DiagonalEstimate diag =
        extrapolated_diagonal(F, r.t_max, cfg.x_max + 1.5 * h, cfg.richardson_levels);
    r.marchenko_residual = diag.max_residual;
    r.max_condition = diag.max_condition;
    const std::vector<double> q = recover_q(diag.extrapolated, h, r.a_plus_estimate);
    for (std::size_t i = 1; i + 1 < diag.x.size(); ++i) {
        r.x.push_back(diag.x[i]);
        r.k_diagonal.push_back(diag.extrapolated[i]);
        r.q.push_back(q[i]);
    }
    return r;
}

RecoveryReport run_invert(const ScatteringData& d, const RunConfig& cfg) {
    RecoveryReport r = compute_invert(d, cfg);
    write_text_file(cfg.out_dir / "recovered_q.csv", recovered_q_csv(r));
    write_text_file(cfg.out_dir / "recovery_report.json", recovery_report_json(r));
    return r;
}

Potential recovered_potential(const RecoveryReport& r, double a_minus, double a_plus,
                              double jump_halfwidth) {
    const std::size_t n = r.x.size();
    deviation::Tabulated tab;
    tab.x = r.x;
    for (std::size_t i = 0; i < n; ++i) tab.values.push_back(r.q[i] - (r.x[i] < 0.0 ? a_minus : a_plus));
    // Inside the jump neighbourhood extrapolate each side's deviation quadratically from the
    // three nearest nodes outside it.
    std::vector<std::size_t> left, right;
    for (std::size_t i = 0; i < n; ++i) {
        if (r.x[i] < -jump_halfwidth) left.push_back(i);
        if (r.x[i] > jump_halfwidth && right.size() < 3) right.push_back(i);
    }
    if (left.size() > 3) left.erase(left.begin(), left.end() - 3);
    std::vector<double> ext(tab.values);
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(r.x[i]) > jump_halfwidth) continue;
        const auto& side = r.x[i] < 0.0 ? left : right;
        if (side.size() < 3) continue;
        double v = 0.0;
        for (std::size_t a : side) {
            double w = 1.0;
            for (std::size_t b : side)
                if (b != a) w *= (r.x[i] - r.x[b]) / (r.x[a] - r.x[b]);
            v += w * tab.values[a];
        }
        ext[i] = v;
    }
    tab.values = std::move(ext);
    return Potential(a_minus, a_plus, std::move(tab));
}

RoundtripReport compute_roundtrip(const RunConfig& cfg, bool check_idempotence) {
    const ScatteringData d = compute_forward(cfg);
    RoundtripReport rt;
    rt.recovery = compute_invert(d, cfg);
    const RecoveryReport& r = rt.recovery;
    const double h = cfg.x_step;
    for (std::size_t i = 0; i < r.x.size(); ++i) {
        if (std::abs(r.x[i]) <= 2.0 * h + 1e-9 * h) continue;
        const double e = std::abs(r.q[i] - cfg.potential.eval(r.x[i]));
        rt.sup_error = std::max(rt.sup_error, e);
        rt.l1_error += h * e;
    }
    rt.a_plus_error = std::abs(r.a_plus_estimate - cfg.potential.a_plus());

    double herm = 0.0, min_eig = std::numeric_limits<double>::infinity();
    int rank_excess = 0;
    for (std::size_t b = 0; b < d.bands.size(); ++b)
        for (const SSample& s : d.bands[b].samples) {
            const SStructure st = s_structure(s.S);
            herm = std::max(herm, st.hermitian_defect);
            min_eig = std::min(min_eig, st.min_eigenvalue);
            rank_excess = std::max(rank_excess, st.rank - static_cast<int>(s.S.rows()));
        }
    rt.invariants.push_back(at_most("s_hermitian_defect", herm, 1e-12));
    rt.invariants.push_back(at_least("s_min_eigenvalue", min_eig, -1e-12));
    rt.invariants.push_back(at_most("s_rank_excess", rank_excess, 0));
    rt.invariants.push_back(at_most("f_symmetry", r.f_symmetry, 1e-6));
    rt.invariants.push_back(at_most("marchenko_condition", r.max_condition, 1e8));
    if (check_idempotence) {
        const Potential rec = recovered_potential(r, d.a_minus, d.a_plus, 2.0 * h + 1e-9 * h);
        SpectralOptions so;
        so.jost.rel_tol = cfg.tol;
        // S11 reaches O(100) inside the lower band, so the error is measured against the
        // column's sup norm.
        double worst = 0.0, scale = 0.0;
        for (std::size_t b = 0; b < d.bands.size(); ++b)
            for (const SSample& s : d.bands[b].samples) {
                worst = std::max(worst, std::abs(scattering_matrix(rec, s.mu, so)(0, 0).real() -
                                                 s.S(0, 0).real()));
                scale = std::max(scale, std::abs(s.S(0, 0).real()));
            }
        rt.invariants.push_back(
            at_most("forward_idempotence_s11", scale > 0.0 ? worst / scale : worst, 5e-3));
    }
    return rt;
}

RoundtripReport run_roundtrip(const RunConfig& cfg) {
    RoundtripReport rt = compute_roundtrip(cfg);
    write_text_file(cfg.out_dir / "recovered_q.csv", recovered_q_csv(rt.recovery));
    write_text_file(cfg.out_dir / "roundtrip_report.json", roundtrip_report_json(rt));
    return rt;
}

bool SelftestReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const InvariantResult& c) { return c.passed; });
}

std::vector<std::string> SelftestReport::failures() const {
    std::vector<std::string> out;
    for (const InvariantResult& c : checks)
        if (!c.passed) out.push_back(c.name);
    return out;
}

SelftestReport run_selftest(Injection injection) {
    SelftestReport rep;
    auto& checks = rep.checks;
    BandGridOptions g;
    g.samples_per_band = 24;
    g.mu_max = 102.0;

    // Scattering matrices of a step and of a step with a well.
    const Potential step = Potential::step(0.0, 3.0);
    const Potential well(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0});
    double herm = 0.0, min_eig = std::numeric_limits<double>::infinity(), unit = 0.0;
    int rank_excess = 0;
    ScatteringData well_data;
    for (const Potential* p : {&step, &well}) {
        ScatteringData d = forward_scatter(*p, make_band_grids(*p, g));
        if (injection == Injection::s_plus_symmetry && p == &step)
            d.bands[1].samples.front().S(0, 1) += 1e-3;
        for (std::size_t b = 0; b < 2; ++b)
            for (const SSample& s : d.bands[b].samples) {
                const SStructure st = s_structure(s.S);
                herm = std::max(herm, st.hermitian_defect);
                min_eig = std::min(min_eig, st.min_eigenvalue);
                rank_excess = std::max(rank_excess, st.rank - static_cast<int>(s.S.rows()));
                if (s.mu > d.a_plus && b == 1)
                    unit = std::max(unit, std::abs(2.0 * std::sqrt(s.mu - d.a_plus) * s.S(0, 0).real() - 1.0));
            }
        if (p == &well) well_data = std::move(d);
    }
    checks.push_back(at_most("s_hermitian_defect", herm, 1e-12));
    checks.push_back(at_least("s_min_eigenvalue", min_eig, -1e-12));
    checks.push_back(at_most("s_rank_excess", rank_excess, 0));
    checks.push_back(at_most("s11_unitarity_identity", unit, 1e-6));

    // Invariance under unitary mixing of the eigenfunction basis.
    {
        std::mt19937 rng(7);
        std::normal_distribution<double> n01;
        double worst = 0.0;
        for (double mu : {1.0, 5.0, 40.0}) {
            const ConnectionMatrices c = connection_matrices(well, mu);
            const Eigen::MatrixXcd S0 = scattering_matrix(c);
            for (int trial = 0; trial < 5; ++trial) {
                Eigen::MatrixXcd Z(c.k, c.k);
                for (Eigen::Index i = 0; i < Z.size(); ++i) Z(i) = {n01(rng), n01(rng)};
                const Eigen::MatrixXcd U = Eigen::HouseholderQR<Eigen::MatrixXcd>(Z).householderQ();
                worst = std::max(worst, (scattering_matrix(unitary_mix(c, U)) - S0).cwiseAbs().maxCoeff());
            }
        }
        checks.push_back(at_most("unitary_mix_invariance", worst, 1e-10));
    }

    // Jost solutions satisfy the equation.
    {
        std::vector<double> xs;
        for (int i = 0; i <= 400; ++i) xs.push_back(-2.0 + 0.01 * i);
        const JostSample s = solve_jost(well, 5.0, Side::plus, 1, xs);
        checks.push_back(at_most("jost_ode_residual", ode_residual(well, s, 5.0), 1e-6));
    }

    // Free data: F vanishes and the literal spectral integral equals omega.
    {
        const Potential free = Potential::free();
        const ScatteringData d = forward_scatter(free, make_band_grids(free, g));
        const std::vector<double> grid = uniform_grid(-2.0, 2.0, 0.1);
        const KernelGrid F = build_F(d, grid, grid);
        checks.push_back(at_most("free_kernel_zero", F.values.cwiseAbs().maxCoeff(), 1e-6));
        double worst = 0.0;
        for (auto [x, t] : {std::pair{1.0, 2.0}, {-1.0, -3.0}, {0.5, 0.5}, {-1.0, 2.0}})
            worst = std::max(worst, std::abs(literal_spectral_integral(d, x, t) - omega(x, t)));
        checks.push_back(at_most("free_integral_omega", worst, 1e-6));
    }

    // Kernel symmetry and the discrete inverse pair on the well data.
    {
        KernelOptions ko;
        ko.tail_tol = 1.0;
        const std::vector<double> grid = uniform_grid(-1.0, 6.0, 0.1);
        KernelGrid F = build_F(well_data, grid, grid, ko);
        if (injection == Injection::f_symmetry) F.values(0, 1) += 1e-3;
        checks.push_back(at_most("f_symmetry", (F.values - F.values.transpose()).cwiseAbs().maxCoeff(), 1e-6));
        const MarchenkoSolution sol = solve_marchenko(F, grid.back());
        checks.push_back(at_most("marchenko_condition", sol.max_condition, 1e8));
        const KernelGrid H = kernel_inverse_pair(sol.K);
        const Eigen::MatrixXd A = operator_matrix(sol.K), B = operator_matrix(H);
        const auto n = A.rows();
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
        checks.push_back(at_most("inverse_pair_composition", ((I + A) * (I + B) - I).cwiseAbs().maxCoeff(), 1e-8));
    }

    // Step data: K(x, x) vanishes to the right of the jump.
    {
        BandGridOptions gs = g;
        gs.samples_per_band = 64;
        gs.mu_max = 3.0 + 900.0;
        const ScatteringData d = forward_scatter(step, make_band_grids(step, gs));
        const std::vector<double> grid = uniform_grid(-1.0, 8.0, 0.05);
        const KernelGrid F = build_F(d, grid, grid);
        const DiagonalEstimate diag = extrapolated_diagonal(F, grid.back(), 3.0);
        double worst = 0.0;
        for (std::size_t i = 0; i < diag.x.size(); ++i)
            if (diag.x[i] >= 0.5) worst = std::max(worst, std::abs(diag.extrapolated[i]));
        checks.push_back(at_most("step_kernel_right", worst, 1e-4));
    }
    return rep;
}

std::string recovered_q_csv(const RecoveryReport& r) {
    std::string out = "x,q\n";
    for (std::size_t i = 0; i < r.x.size(); ++i) out += fmt::format("{:.15g},{:.15g}\n", r.x[i], r.q[i]);
    return out;
}

std::string recovery_report_json(const RecoveryReport& r) {
    return fmt::format(
        "{{\n  \"a_plus_estimate\": {},\n  \"marchenko_residual\": {},\n  \"max_condition\": {},\n"
        "  \"t_max\": {},\n  \"tail_estimate\": {},\n  \"f_symmetry\": {}\n}}\n",
        num(r.a_plus_estimate), num(r.marchenko_residual), num(r.max_condition), num(r.t_max),
        num(r.tail_estimate), num(r.f_symmetry));
}

std::string roundtrip_report_json(const RoundtripReport& r) {
    std::string inv;
    for (std::size_t i = 0; i < r.invariants.size(); ++i)
        inv += fmt::format("{}\n    {}", i ? "," : "", invariant_json(r.invariants[i]));
    return fmt::format(
        "{{\n  \"sup_error\": {},\n  \"l1_error\": {},\n  \"a_plus_error\": {},\n"
        "  \"a_plus_estimate\": {},\n  \"marchenko_residual\": {},\n  \"max_condition\": {},\n"
        "  \"t_max\": {},\n  \"invariants\": [{}\n  ]\n}}\n",
        num(r.sup_error), num(r.l1_error), num(r.a_plus_error), num(r.recovery.a_plus_estimate),
        num(r.recovery.marchenko_residual), num(r.recovery.max_condition), num(r.recovery.t_max), inv);
}

}  // namespace stepscat
