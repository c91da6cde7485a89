#include "stepscat/potential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "stepscat/errors.hpp"

namespace stepscat {

namespace {

constexpr double kSupportCutoff = 1e-18;
constexpr double kInf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double integrate(const auto& f, double a, double b, double abs_tol) {
    if (!(b > a)) return 0.0;
    double err = 0.0;
    const double v =
        boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 12, 1e-12, &err);
    if (err > abs_tol && err > 1e-12 * std::abs(v)) {
        // Refine by halving: gauss_kronrod's own bisection stops on relative error.
        const double m = 0.5 * (a + b);
        if (b - a < 1e-9) return v;
        return integrate(f, a, m, 0.5 * abs_tol) + integrate(f, m, b, 0.5 * abs_tol);
    }
    return v;
}

// Integrates f over [a, b] splitting at the potential's breakpoints.
double integrate_split(const Potential& p, const auto& f, double a, double b, double abs_tol) {
    if (!(b > a)) return 0.0;
    std::vector<double> cuts{a};
    for (double bp : p.breakpoints())
        if (bp > a && bp < b) cuts.push_back(bp);
    cuts.push_back(b);
    double sum = 0.0;
    const double tol = abs_tol / static_cast<double>(cuts.size());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double lo = cuts[i];
        const double hi = cuts[i + 1];
        // Evaluate strictly inside the piece so one-sided values are used at jumps.
        const double eta = 1e-15 * (1.0 + std::abs(lo) + std::abs(hi));
        auto inner = [&](double x) { return f(std::clamp(x, lo + eta, hi - eta)); };
        sum += integrate(inner, lo, hi, tol);
    }
    return sum;
}

// Integral of g over [from, +inf) (or (-inf, from] when dir < 0) for a tail with no
// finite cutoff, doubling the window until the increment is negligible.
double unbounded_tail(const auto& g, double from, int dir, const MomentOptions& opts) {
    double total = 0.0;
    double len = 1.0;
    double start = from;
    while (true) {
        const double end = start + dir * len;
        const double piece = dir > 0 ? integrate(g, start, end, opts.abs_tol)
                                     : integrate(g, end, start, opts.abs_tol);
        total += piece;
        if (std::abs(piece) < opts.abs_tol) return total;
        if (std::abs(end - from) > opts.tail_bound)
            throw NonIntegrableDeviation("tail integral does not settle within |x| <= " +
                                         std::to_string(opts.tail_bound));
        start = end;
        len *= 2.0;
    }
}

}  // namespace

Potential::Potential(double a_minus, double a_plus, Deviation dev)
    : a_minus_(a_minus), a_plus_(a_plus), dev_(std::move(dev)) {
    if (!std::isfinite(a_minus_) || !std::isfinite(a_plus_))
        throw InvalidInput("asymptotes must be finite");
    std::visit(Overloaded{
                   [](const deviation::None&) {},
                   [](const deviation::Square& s) {
                       if (!(s.width > 0.0)) throw InvalidInput("square width must be positive");
                   },
                   [](const deviation::Gaussian& g) {
                       if (!(g.width > 0.0)) throw InvalidInput("gaussian width must be positive");
                   },
                   [](const deviation::ExpTail&) {},
                   [](const deviation::Tabulated& t) {
                       if (t.x.size() < 2 || t.x.size() != t.values.size())
                           throw InvalidInput("tabulated profile needs >= 2 matching nodes");
                       for (std::size_t i = 1; i < t.x.size(); ++i)
                           if (!(t.x[i] > t.x[i - 1]))
                               throw InvalidInput("tabulated abscissae must increase strictly");
                   },
               },
               dev_);
}

double Potential::mu1() const noexcept { return std::min(a_minus_, a_plus_); }
double Potential::mu2() const noexcept { return std::max(a_minus_, a_plus_); }

bool Potential::has_deviation() const noexcept {
    return !std::holds_alternative<deviation::None>(dev_);
}

double Potential::deviation_at(double x) const {
    return std::visit(
        Overloaded{
            [](const deviation::None&) { return 0.0; },
            [x](const deviation::Square& s) {
                return (x >= s.x0 && x < s.x0 + s.width) ? s.height : 0.0;
            },
            [x](const deviation::Gaussian& g) {
                const double z = (x - g.center) / g.width;
                return g.amplitude * std::exp(-0.5 * z * z);
            },
            [x](const deviation::ExpTail& e) {
                return e.amplitude * std::exp(-e.rate * std::abs(x));
            },
            [x](const deviation::Tabulated& t) {
                if (x < t.x.front() || x > t.x.back()) return 0.0;
                auto it = std::upper_bound(t.x.begin(), t.x.end(), x);
                if (it == t.x.end()) return t.values.back();
                const auto i = static_cast<std::size_t>(it - t.x.begin());
                const double w = (x - t.x[i - 1]) / (t.x[i] - t.x[i - 1]);
                return (1.0 - w) * t.values[i - 1] + w * t.values[i];
            },
        },
        dev_);
}

std::vector<double> Potential::breakpoints() const {
    std::vector<double> bp{0.0};
    std::visit(Overloaded{
                   [](const deviation::None&) {},
                   [&](const deviation::Square& s) {
                       bp.push_back(s.x0);
                       bp.push_back(s.x0 + s.width);
                   },
                   [](const deviation::Gaussian&) {},
                   [](const deviation::ExpTail&) {},
                   [&](const deviation::Tabulated& t) { bp.insert(bp.end(), t.x.begin(), t.x.end()); },
               },
               dev_);
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
}

Interval Potential::support() const {
    return std::visit(
        Overloaded{
            [](const deviation::None&) { return Interval{0.0, 0.0}; },
            [](const deviation::Square& s) {
                if (s.height == 0.0) return Interval{0.0, 0.0};
                return Interval{s.x0, s.x0 + s.width};
            },
            [](const deviation::Gaussian& g) {
                const double a = std::abs(g.amplitude);
                if (a <= kSupportCutoff) return Interval{0.0, 0.0};
                const double r = g.width * std::sqrt(2.0 * std::log(a / kSupportCutoff));
                return Interval{g.center - r, g.center + r};
            },
            [](const deviation::ExpTail& e) {
                const double a = std::abs(e.amplitude);
                if (a <= kSupportCutoff) return Interval{0.0, 0.0};
                if (!(e.rate > 0.0)) return Interval{-kInf, kInf};
                const double r = std::log(a / kSupportCutoff) / e.rate;
                return Interval{-r, r};
            },
            [](const deviation::Tabulated& t) { return Interval{t.x.front(), t.x.back()}; },
        },
        dev_);
}

Interval Potential::finite_support() const {
    const Interval s = support();
    if (!std::isfinite(s.lo) || !std::isfinite(s.hi))
        throw NonIntegrableDeviation("deviation profile has no finite support");
    return s;
}

bool Potential::compact() const noexcept {
    return std::holds_alternative<deviation::None>(dev_) ||
           std::holds_alternative<deviation::Square>(dev_) ||
           std::holds_alternative<deviation::Tabulated>(dev_);
}

double Potential::lower_bound() const {
    double lo = std::min(a_minus_, a_plus_);
    const Interval s = support();
    if (!std::isfinite(s.lo) || !std::isfinite(s.hi)) {
        // Non-decaying exp tail: sup |d| is the amplitude.
        const auto& e = std::get<deviation::ExpTail>(dev_);
        return lo - std::abs(e.amplitude);
    }
    std::vector<double> probes = breakpoints();
    constexpr int kSamples = 4000;
    for (int i = 0; i <= kSamples; ++i) probes.push_back(s.lo + (s.hi - s.lo) * i / kSamples);
    for (double x : probes) {
        lo = std::min(lo, eval(x));
        lo = std::min(lo, eval(std::nextafter(x, -kInf)));
    }
    return lo;
}

double eval_q(const Potential& p, double x) { return p.eval(x); }

Potential step_reference(const Potential& p) { return Potential::step(p.a_minus(), p.a_plus()); }

double h_plus(const Potential& p, double x, double abs_tol) {
    const Interval s = p.finite_support();
    const double end = std::max(s.hi, 0.0);
    if (x >= end) return 0.0;
    auto g = [&](double t) { return std::abs(p.eval(t) - p.a_plus()); };
    return integrate_split(p, g, x, end, abs_tol);
}

double h1_plus(const Potential& p, double x, double abs_tol) {
    const Interval s = p.finite_support();
    const double end = std::max(s.hi, 0.0);
    if (x >= end) return 0.0;
    auto g = [&](double t) { return (t - x) * std::abs(p.eval(t) - p.a_plus()); };
    return integrate_split(p, g, x, end, abs_tol);
}

MomentReport moment_report(const Potential& p, std::span<const double> probe_points,
                           const MomentOptions& opts) {
    MomentReport r;
    const Interval s = p.support();
    auto dev = [&](double x) { return std::abs(p.deviation_at(x)); };
    auto weighted = [&](double x) { return (1.0 + std::abs(x)) * std::abs(p.deviation_at(x)); };

    if (std::isfinite(s.lo) && std::isfinite(s.hi)) {
        r.m1 = integrate_split(p, dev, s.lo, s.hi, opts.abs_tol);
        r.m2 = integrate_split(p, weighted, s.lo, s.hi, opts.abs_tol);
    } else {
        r.m1 = unbounded_tail(dev, 0.0, +1, opts) + unbounded_tail(dev, 0.0, -1, opts);
        r.m2 = unbounded_tail(weighted, 0.0, +1, opts) + unbounded_tail(weighted, 0.0, -1, opts);
    }

    for (double x : probe_points) {
        r.h_plus_at.emplace_back(x, h_plus(p, x, opts.abs_tol));
        r.h1_plus_at.emplace_back(x, h1_plus(p, x, opts.abs_tol));
    }
    return r;
}

}  // namespace stepscat
