#pragma once

// Closed-form and brute-force references used by the tests. Nothing here calls into the
// library; every value is rebuilt from plane waves or a plain ODE integration.

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

namespace oracle {

using cplx = std::complex<double>;

/// S+ of the pure step (a_minus, a_plus) at mu > min(a_minus, a_plus), by matching plane
/// waves at x = 0. Amplitudes carry the sqrt|lambda'| = (2 sqrt|mu - a|)^{-1/2} weights,
/// so S = M^* M with M holding the right-hand amplitudes of each bounded solution.
inline Eigen::MatrixXcd step_s_matrix(double a_minus, double a_plus, double mu) {
    const cplx I(0.0, 1.0);
    auto weight = [](double d) { return std::sqrt(1.0 / (2.0 * std::sqrt(std::abs(d)))); };
    const double top = std::max(a_minus, a_plus);
    if (mu > top) {
        const double km = std::sqrt(mu - a_minus), kp = std::sqrt(mu - a_plus);
        const double vm = weight(mu - a_minus), vp = weight(mu - a_plus);
        // Wave incident from the left, transmitted amplitude 2 km / (km + kp).
        const cplx t1 = 2.0 * km / (km + kp) * vm;
        // Wave incident from the right, reflected amplitude (kp - km) / (kp + km).
        const cplx r2 = (kp - km) / (kp + km) * vp;
        Eigen::MatrixXcd M(2, 2);
        M << t1, 0.0, r2, vp;
        return M.adjoint() * M;
    }
    if (a_plus > a_minus) {
        // Only the left side oscillates; the right amplitude multiplies exp(-kappa x).
        const double km = std::sqrt(mu - a_minus), kappa = std::sqrt(a_plus - mu);
        const cplx t = 2.0 * km / (km + I * kappa) * weight(mu - a_minus);
        Eigen::MatrixXcd M(1, 1);
        M << t;
        return M.adjoint() * M;
    }
    const double kp = std::sqrt(mu - a_plus), kappa = std::sqrt(a_minus - mu);
    const double vp = weight(mu - a_plus);
    const cplx r = (kp - I * kappa) / (kp + I * kappa) * vp;
    Eigen::MatrixXcd M(1, 2);
    M << r, vp;
    return M.adjoint() * M;
}

/// q = 0 on x < 0, a_plus + depth on [0, 1), a_plus on x >= 1 (depth < 0).
struct WellOnStep {
    double a_plus = 2.0;
    double depth = -8.0;

    double inner() const { return a_plus + depth; }

    /// y'(1) + kappa_plus y(1) for the solution equal to exp(kappa_minus x) on x < 0.
    double mismatch(double mu) const {
        const double km = std::sqrt(-mu), kp = std::sqrt(a_plus - mu);
        const double d = mu - inner();
        if (d > 0.0) {
            const double k = std::sqrt(d);
            const double y = std::cos(k) + km / k * std::sin(k);
            const double yp = -k * std::sin(k) + km * std::cos(k);
            return yp + kp * y;
        }
        const double k = std::sqrt(-d);
        const double y = std::cosh(k) + km / k * std::sinh(k);
        const double yp = k * std::sinh(k) + km * std::cosh(k);
        return yp + kp * y;
    }

    std::vector<double> eigenvalues(double scan_step = 1e-3) const {
        std::vector<double> out;
        const double lo = inner() + 1e-9, hi = -1e-9;
        double a = lo, fa = mismatch(a);
        for (double b = lo + scan_step; a < hi; b = std::min(b + scan_step, hi)) {
            const double fb = mismatch(b);
            if (fa == 0.0) out.push_back(a);
            else if (fa * fb < 0.0) {
                boost::uintmax_t iters = 200;
                auto r = boost::math::tools::toms748_solve(
                    [this](double m) { return mismatch(m); }, a, b, fa, fb,
                    boost::math::tools::eps_tolerance<double>(52), iters);
                out.push_back(0.5 * (r.first + r.second));
            }
            a = b;
            fa = fb;
            if (b >= hi) break;
        }
        return out;
    }

    /// 1 / int |y|^2 with y = exp(-kappa_plus x) on x >= 1. The inner piece is integrated
    /// with adaptive Gauss-Kronrod.
    double norming(double mu) const {
        const double km = std::sqrt(-mu), kp = std::sqrt(a_plus - mu);
        const double y1 = std::exp(-kp);
        const double d = mu - inner();
        // On [0, 1): y = y1 (c(u) - kp s(u)), u = x - 1, with c, s the cos/sin pair of d.
        auto y = [&](double x) {
            const double u = x - 1.0;
            if (d > 0.0) {
                const double k = std::sqrt(d);
                return y1 * (std::cos(k * u) - kp / k * std::sin(k * u));
            }
            const double k = std::sqrt(-d);
            return y1 * (std::cosh(k * u) - kp / k * std::sinh(k * u));
        };
        const double inner_sq = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double x) { return y(x) * y(x); }, 0.0, 1.0, 15, 1e-14);
        const double y0 = y(0.0);
        const double total = y1 * y1 / (2.0 * kp) + inner_sq + y0 * y0 / (2.0 * km);
        return 1.0 / total;
    }
};

/// Classical RK4 for -y'' + (q - mu) y = 0 from (x0, y0, yp0) to x1 in n steps.
inline std::pair<cplx, cplx> rk4(const std::function<double(double)>& q, double mu, double x0,
                                 cplx y0, cplx yp0, double x1, int n) {
    const double h = (x1 - x0) / n;
    cplx y = y0, yp = yp0;
    double x = x0;
    for (int i = 0; i < n; ++i) {
        auto f = [&](double s, cplx a, cplx b) { return std::pair<cplx, cplx>{b, (q(s) - mu) * a}; };
        auto [k1y, k1p] = f(x, y, yp);
        auto [k2y, k2p] = f(x + h / 2, y + h / 2 * k1y, yp + h / 2 * k1p);
        auto [k3y, k3p] = f(x + h / 2, y + h / 2 * k2y, yp + h / 2 * k2p);
        auto [k4y, k4p] = f(x + h, y + h * k3y, yp + h * k3p);
        y += h / 6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        yp += h / 6 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        x += h;
    }
    return {y, yp};
}

/// Haar-distributed unitary matrix from the QR factorisation of a complex Gaussian matrix.
inline Eigen::MatrixXcd random_unitary(int n, std::mt19937& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXcd Z(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Z(i, j) = {g(rng), g(rng)};
    Eigen::HouseholderQR<Eigen::MatrixXcd> qr(Z);
    Eigen::MatrixXcd Q = qr.householderQ();
    const Eigen::MatrixXcd R = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j) Q.col(j) *= std::polar(1.0, std::arg(R(j, j)));
    return Q;
}

/// Composite Simpson of f on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

}  // namespace oracle
