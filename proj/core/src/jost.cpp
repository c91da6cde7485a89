#include "stepscat/jost.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <boost/numeric/odeint.hpp>

#include "stepscat/errors.hpp"

namespace stepscat {

namespace {

namespace odeint = boost::numeric::odeint;

// y, y', running int |y|^2 dx, and the reduction-of-order multiplier v.
using State = std::array<cplx, 4>;

constexpr cplx kI{0.0, 1.0};

double start_point(const Potential& p, Side side, const JostOptions& opts) {
    if (opts.x_far) return side == Side::plus ? std::abs(*opts.x_far) : -std::abs(*opts.x_far);
    const Interval s = p.finite_support();
    return side == Side::plus ? std::max(s.hi, 0.0) + opts.margin
                              : std::min(s.lo, 0.0) - opts.margin;
}

double wrap_angle(double d) {
    constexpr double pi = std::numbers::pi;
    while (d > pi) d -= 2.0 * pi;
    while (d <= -pi) d += 2.0 * pi;
    return d;
}

// Integrates the scaled state from x0 to x1, splitting at jumps of q so that each
// piece sees one-sided values of the potential.
class Integrator {
public:
    Integrator(const Potential& p, double mu, const JostOptions& opts)
        : p_(p), mu_(mu), opts_(opts), breaks_(p.breakpoints()) {}

    bool track_angle = false;
    double angle = 0.0;
    // Wronskian-like constant for the reduction-of-order multiplier; zero disables it.
    cplx reduction_w{0.0, 0.0};

    void run(State& s, double x0, double x1) {
        if (x0 == x1) return;
        const double dir = x1 > x0 ? 1.0 : -1.0;
        std::vector<double> cuts{x0};
        for (double b : breaks_)
            if ((b - x0) * dir > 0.0 && (x1 - b) * dir > 0.0) cuts.push_back(b);
        if (dir < 0.0) std::sort(cuts.begin() + 1, cuts.end(), std::greater<>());
        else std::sort(cuts.begin() + 1, cuts.end());
        cuts.push_back(x1);
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) segment(s, cuts[i], cuts[i + 1]);
    }

private:
    void segment(State& s, double a, double b) {
        const double lo = std::min(a, b);
        const double hi = std::max(a, b);
        const double eta = 1e-14 * (1.0 + std::abs(lo) + std::abs(hi));
        auto q_in = [&](double x) { return p_.eval(std::clamp(x, lo + eta, hi - eta)); };
        const cplx w = reduction_w;
        auto rhs = [&](const State& st, State& ds, double x) {
            ds[0] = st[1];
            ds[1] = (q_in(x) - mu_) * st[0];
            ds[2] = std::norm(st[0]);
            ds[3] = w == cplx{} ? cplx{} : w / (st[0] * st[0]);
        };
        auto stepper = odeint::make_controlled(opts_.abs_tol, opts_.rel_tol,
                                               odeint::runge_kutta_dopri5<State>());
        double chunk = b - a;
        if (track_angle) {
            double rate = 1.0;
            for (int k = 0; k <= 64; ++k)
                rate = std::max(rate, std::abs(mu_ - q_in(lo + (hi - lo) * k / 64.0)));
            chunk = std::copysign(0.5 / (1.25 * rate), b - a);
        }
        const int pieces = static_cast<int>(std::ceil((b - a) / chunk - 1e-12));
        for (int k = 0; k < std::max(pieces, 1); ++k) {
            const double c0 = a + (b - a) * k / std::max(pieces, 1);
            const double c1 = k + 1 == std::max(pieces, 1) ? b : a + (b - a) * (k + 1) / pieces;
            const double dt0 = std::copysign(std::min(1e-2, std::abs(c1 - c0)), c1 - c0);
            if (track_angle) {
                double prev = std::atan2(s[0].real(), s[1].real());
                auto observer = [&](const State& st, double) {
                    const double cur = std::atan2(st[0].real(), st[1].real());
                    angle += wrap_angle(cur - prev);
                    prev = cur;
                };
                odeint::integrate_adaptive(stepper, rhs, s, c0, c1, dt0, observer);
            } else {
                odeint::integrate_adaptive(stepper, rhs, s, c0, c1, dt0);
            }
        }
    }

    const Potential& p_;
    double mu_;
    JostOptions opts_;
    std::vector<double> breaks_;
};

void require_increasing(std::span<const double> x) {
    for (std::size_t i = 1; i < x.size(); ++i)
        if (!(x[i] > x[i - 1])) throw InvalidInput("x_grid must be strictly increasing");
}

}  // namespace

cplx lambda_channel(cplx mu, double a, int j, double edge_eps) {
    if (j != 1 && j != 2) throw InvalidInput("channel index j must be 1 or 2");
    if (std::abs(mu - a) < edge_eps) throw BandEdge("spectral parameter at a band edge");
    cplx root = std::sqrt(mu - a);
    // std::sqrt maps the negative real axis with a -0 imaginary part to -i; the principal
    // value used throughout has a nonnegative imaginary part there.
    if (root.imag() < 0.0 && root.real() == 0.0) root = -root;
    return j == 1 ? root : -root;
}

int half_root_count(double mu, double a, double edge_eps) {
    if (std::abs(mu - a) < edge_eps) throw BandEdge("spectral parameter at a band edge");
    return mu > a ? 1 : 0;
}

cplx bracket(cplx y, cplx y_prime, cplx z, cplx z_prime) {
    return kI * (y * std::conj(z_prime) - y_prime * std::conj(z));
}

Channel make_channel(const Potential& p, double mu, Side side, int j) {
    const double a = side == Side::plus ? p.a_plus() : p.a_minus();
    return {mu, side, j, lambda_channel(cplx{mu, 0.0}, a, j)};
}

bool is_bounded_channel(const Channel& c) {
    if (c.lambda.imag() == 0.0) return true;
    return c.side == Side::plus ? c.lambda.imag() > 0.0 : c.lambda.imag() < 0.0;
}

JostSample solve_jost(const Potential& p, double mu, Side side, int j,
                      std::span<const double> x_grid, const JostOptions& opts) {
    require_increasing(x_grid);
    JostSample out;
    out.channel = make_channel(p, mu, side, j);
    if (!is_bounded_channel(out.channel))
        throw GrowingChannel("Jost solution grows towards its own infinity; use growing_jost");
    const cplx lam = out.channel.lambda;
    const double x_start = start_point(p, side, opts);
    const cplx scale = std::exp(kI * lam * x_start);

    out.x_grid.assign(x_grid.begin(), x_grid.end());
    out.y.resize(x_grid.size());
    out.y_prime.resize(x_grid.size());

    std::vector<std::size_t> order(x_grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (side == Side::plus) std::reverse(order.begin(), order.end());

    Integrator integ(p, mu, opts);
    State s{cplx{1.0, 0.0}, kI * lam, cplx{}, cplx{}};
    double x_cur = x_start;
    for (std::size_t idx : order) {
        const double x = x_grid[idx];
        const bool beyond = side == Side::plus ? x >= x_start : x <= x_start;
        if (beyond) {
            out.y[idx] = std::exp(kI * lam * x);
            out.y_prime[idx] = kI * lam * out.y[idx];
            continue;
        }
        integ.run(s, x_cur, x);
        x_cur = x;
        out.y[idx] = scale * s[0];
        out.y_prime[idx] = scale * s[1];
    }
    if (x_grid.size() >= 5) out.residual = ode_residual(p, out, mu);
    return out;
}

OriginValue jost_at_origin(const Potential& p, double mu, Side side, int j,
                           const JostOptions& opts, bool track_angle) {
    const Channel ch = make_channel(p, mu, side, j);
    if (!is_bounded_channel(ch))
        throw GrowingChannel("Jost solution grows towards its own infinity");
    const cplx lam = ch.lambda;
    const double x_start = start_point(p, side, opts);
    const cplx scale = std::exp(kI * lam * x_start);

    Integrator integ(p, mu, opts);
    integ.track_angle = track_angle && lam.real() == 0.0;
    State s{cplx{1.0, 0.0}, kI * lam, cplx{}, cplx{}};
    if (integ.track_angle) integ.angle = std::atan2(1.0, (kI * lam).real());
    integ.run(s, x_start, 0.0);

    OriginValue out;
    out.value = {scale * s[0], scale * s[1]};
    out.pruefer_angle = integ.angle;
    if (lam.real() == 0.0) {
        const double kappa = std::abs(lam.imag());
        out.half_line_norm_sq = std::norm(scale) * (std::abs(s[2].real()) + 0.5 / kappa);
    }
    return out;
}

JostSample solve_jost_volterra(const Potential& p, double mu, Side side, int j,
                               std::span<const double> x_grid, const VolterraOptions& opts) {
    require_increasing(x_grid);
    JostSample out;
    out.channel = make_channel(p, mu, side, j);
    if (!is_bounded_channel(out.channel))
        throw GrowingChannel("successive approximations need a bounded channel");

    // The left-side problem is the right-side one for q(-x) with wavenumber -lambda.
    const double sgn = side == Side::plus ? 1.0 : -1.0;
    const cplx lam = sgn * out.channel.lambda;
    const double a = side == Side::plus ? p.a_plus() : p.a_minus();
    auto V = [&](double s) { return p.eval(sgn * s) - a; };
    const double X = sgn * start_point(p, side, JostOptions{});

    // Mirrored request points, sorted descending.
    std::vector<double> req;
    for (double x : x_grid) req.push_back(sgn * x);
    std::sort(req.begin(), req.end(), std::greater<>());
    const double s_low = std::min(req.empty() ? X : req.back(), X);

    std::vector<double> must{X};
    for (double b : p.breakpoints())
        if (sgn * b < X && sgn * b > s_low) must.push_back(sgn * b);
    for (double r : req)
        if (r < X) must.push_back(r);
    std::sort(must.begin(), must.end(), std::greater<>());
    must.erase(std::unique(must.begin(), must.end()), must.end());

    std::vector<double> t{must.front()};
    for (std::size_t i = 1; i < must.size(); ++i) {
        const double gap = must[i - 1] - must[i];
        const int n = std::max(1, static_cast<int>(std::ceil(gap / opts.step)));
        for (int k = 1; k <= n; ++k) t.push_back(k == n ? must[i] : must[i - 1] - gap * k / n);
    }
    const std::size_t n = t.size();

    // One-sided deviation values at both ends of every interval [t[k+1], t[k]].
    std::vector<double> v_top(n, 0.0), v_bot(n, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double eta = 1e-14 * (1.0 + std::abs(t[k]));
        v_top[k] = V(t[k] - eta);
        v_bot[k + 1] = V(t[k + 1] + eta);
    }

    std::vector<cplx> m(n, cplx{1.0, 0.0}), dm(n, cplx{}), next(n);
    const cplx two_il = 2.0 * kI * lam;
    int it = 0;
    for (;; ++it) {
        if (it >= opts.max_iterations)
            throw NoConvergence("successive approximations did not contract");
        cplx s0{}, s1{};
        next[0] = 1.0;
        dm[0] = 0.0;
        double change = 0.0, size = 1.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double d = t[i] - t[i + 1];
            const cplx e = std::exp(two_il * d);
            s1 = e * s1 + 0.5 * d * (e * v_top[i] * m[i] + v_bot[i + 1] * m[i + 1]);
            s0 = s0 + 0.5 * d * (v_top[i] * m[i] + v_bot[i + 1] * m[i + 1]);
            next[i + 1] = 1.0 + (s1 - s0) / two_il;
            dm[i + 1] = -s1;
            change = std::max(change, std::abs(next[i + 1] - m[i + 1]));
            size = std::max(size, std::abs(next[i + 1]));
        }
        m.swap(next);
        if (change <= opts.tol * size) break;
    }

    out.x_grid.assign(x_grid.begin(), x_grid.end());
    out.y.resize(x_grid.size());
    out.y_prime.resize(x_grid.size());
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        const double s = sgn * x_grid[i];
        cplx mv{1.0, 0.0}, dv{};
        if (s < X) {
            // Nodes are unique and contain every request point; the lookup is exact.
            auto pos = std::lower_bound(t.begin(), t.end(), s, std::greater<>());
            const auto k = static_cast<std::size_t>(pos - t.begin());
            mv = m[k];
            dv = dm[k];
        }
        const cplx ex = std::exp(kI * lam * s);
        out.y[i] = ex * mv;
        out.y_prime[i] = sgn * ex * (kI * lam * mv + dv);
    }
    if (x_grid.size() >= 5) out.residual = ode_residual(p, out, mu);
    return out;
}

double ode_residual(const Potential& p, const JostSample& s, double mu) {
    const auto& x = s.x_grid;
    const std::size_t n = x.size();
    if (n < 3) throw InvalidInput("ode_residual needs at least three grid points");
    double ymax = 0.0;
    for (const cplx& v : s.y) ymax = std::max(ymax, std::abs(v));
    if (ymax == 0.0) return 0.0;
    const auto breaks = p.breakpoints();
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        cplx ypp;
        double lo, hi;
        const double h = x[i] - x[i - 1];
        const bool uniform5 = i >= 2 && i + 2 < n &&
                              std::abs(x[i + 1] - x[i] - h) < 1e-9 * h &&
                              std::abs(x[i + 2] - x[i + 1] - h) < 1e-9 * h &&
                              std::abs(x[i - 1] - x[i - 2] - h) < 1e-9 * h;
        if (!uniform5 && n >= 5 && (i < 2 || i + 2 >= n)) continue;
        if (uniform5) {
            lo = x[i - 2];
            hi = x[i + 2];
            ypp = (-s.y[i - 2] + 16.0 * s.y[i - 1] - 30.0 * s.y[i] + 16.0 * s.y[i + 1] -
                   s.y[i + 2]) / (12.0 * h * h);
        } else {
            lo = x[i - 1];
            hi = x[i + 1];
            const double hl = x[i] - x[i - 1];
            const double hr = x[i + 1] - x[i];
            ypp = 2.0 * (hl * s.y[i + 1] - (hl + hr) * s.y[i] + hr * s.y[i - 1]) /
                  (hl * hr * (hl + hr));
        }
        bool jump = false;
        for (double b : breaks)
            if (b > lo && b < hi) jump = true;
        if (jump) continue;
        worst = std::max(worst, std::abs(-ypp + (p.eval(x[i]) - mu) * s.y[i]));
    }
    return worst / ymax;
}

JostSample growing_jost(const Potential& p, double mu, Side side,
                        std::span<const double> x_grid, const JostOptions& opts) {
    require_increasing(x_grid);
    const int j_decay = side == Side::plus ? 1 : 2;
    const int j_grow = 3 - j_decay;
    const Channel decay = make_channel(p, mu, side, j_decay);
    JostSample out;
    out.channel = make_channel(p, mu, side, j_grow);
    if (is_bounded_channel(out.channel))
        throw InvalidInput("growing_jost called for a bounded channel");
    const cplx ld = decay.lambda;
    const cplx lg = out.channel.lambda;
    const cplx w = kI * (lg - ld);
    const double x_start = start_point(p, side, opts);
    const cplx scale = std::exp(kI * lg * x_start);

    out.x_grid.assign(x_grid.begin(), x_grid.end());
    out.y.resize(x_grid.size());
    out.y_prime.resize(x_grid.size());
    std::vector<std::size_t> order(x_grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (side == Side::plus) std::reverse(order.begin(), order.end());

    Integrator integ(p, mu, opts);
    integ.reduction_w = w;
    State s{cplx{1.0, 0.0}, kI * ld, cplx{}, cplx{1.0, 0.0}};
    double x_cur = x_start;
    for (std::size_t idx : order) {
        const double x = x_grid[idx];
        const bool beyond = side == Side::plus ? x >= x_start : x <= x_start;
        if (beyond) {
            out.y[idx] = std::exp(kI * lg * x);
            out.y_prime[idx] = kI * lg * out.y[idx];
            continue;
        }
        integ.run(s, x_cur, x);
        x_cur = x;
        if (!std::isfinite(std::abs(s[3])) || std::abs(s[0]) < 1e-300)
            throw NoConvergence("decaying solution vanishes; reduction of order breaks down");
        out.y[idx] = scale * s[0] * s[3];
        out.y_prime[idx] = scale * (s[1] * s[3] + w / s[0]);
    }
    if (x_grid.size() >= 5) out.residual = ode_residual(p, out, mu);
    return out;
}

}  // namespace stepscat
