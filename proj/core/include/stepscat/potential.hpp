#pragma once

#include <span>
#include <utility>
#include <variant>
#include <vector>

namespace stepscat {

namespace deviation {

struct None {};

/// `height` on [x0, x0 + width).
struct Square {
    double x0 = 0.0;
    double width = 1.0;
    double height = 0.0;
};

/// amplitude * exp(-(x - center)^2 / (2 width^2)).
struct Gaussian {
    double amplitude = 0.0;
    double center = 0.0;
    double width = 1.0;
};

/// amplitude * exp(-rate |x|). A non-positive rate is representable but
/// inadmissible; moment_report rejects it.
struct ExpTail {
    double amplitude = 0.0;
    double rate = 1.0;
};

/// Piecewise-linear profile through (x[i], values[i]), zero outside [x.front(), x.back()].
struct Tabulated {
    std::vector<double> x;
    std::vector<double> values;
};

}  // namespace deviation

using Deviation = std::variant<deviation::None, deviation::Square, deviation::Gaussian,
                               deviation::ExpTail, deviation::Tabulated>;

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Step-like potential q(x) = a^- + d(x) for x < 0 and a^+ + d(x) for x >= 0.
/// Immutable after construction.
class Potential {
public:
    Potential(double a_minus, double a_plus, Deviation dev = deviation::None{});

    static Potential free(double level = 0.0) { return {level, level}; }
    static Potential step(double a_minus, double a_plus) { return {a_minus, a_plus}; }

    double a_minus() const noexcept { return a_minus_; }
    double a_plus() const noexcept { return a_plus_; }
    double mu1() const noexcept;
    double mu2() const noexcept;
    const Deviation& deviation() const noexcept { return dev_; }

    double asymptote(double x) const noexcept { return x < 0.0 ? a_minus_ : a_plus_; }
    double deviation_at(double x) const;
    double eval(double x) const { return asymptote(x) + deviation_at(x); }

    bool has_deviation() const noexcept;

    /// Points where q or q' may jump: always 0, plus profile edges and nodes. Sorted, unique.
    std::vector<double> breakpoints() const;

    /// Region outside which |d(x)| is below 1e-18 (exactly zero for compact profiles).
    /// Infinite bounds for a non-decaying exp_tail.
    Interval support() const;

    /// Like support() but throws NonIntegrableDeviation when unbounded.
    Interval finite_support() const;

    /// True when d vanishes identically outside support().
    bool compact() const noexcept;

    /// Lower bound for q over the real line (used to seed bound-state scans).
    double lower_bound() const;

private:
    double a_minus_;
    double a_plus_;
    Deviation dev_;
};

double eval_q(const Potential& p, double x);

/// Pure step with the same asymptotes.
Potential step_reference(const Potential& p);

struct MomentOptions {
    double abs_tol = 1e-10;
    /// Half-length beyond which an unbounded tail is declared divergent.
    double tail_bound = 1e4;
};

struct MomentReport {
    double m1 = 0.0;
    double m2 = 0.0;
    std::vector<std::pair<double, double>> h_plus_at;
    std::vector<std::pair<double, double>> h1_plus_at;
};

MomentReport moment_report(const Potential& p, std::span<const double> probe_points,
                           const MomentOptions& opts = {});

/// h+(x) = int_x^inf |q - a+|.
double h_plus(const Potential& p, double x, double abs_tol = 1e-10);
/// h1+(x) = int_x^inf h+(t) dt = int_x^inf (s - x)|q(s) - a+| ds.
double h1_plus(const Potential& p, double x, double abs_tol = 1e-10);

}  // namespace stepscat
