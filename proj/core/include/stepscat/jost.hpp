#pragma once

#include <complex>
#include <optional>
#include <span>
#include <vector>

#include "stepscat/potential.hpp"

namespace stepscat {

using cplx = std::complex<double>;

enum class Side { plus, minus };

/// Spectral points closer than this to a^+ or a^- are rejected as band edges.
inline constexpr double kBandEdgeEps = 1e-12;

/// (-1)^(j-1) sqrt(mu - a) on the principal branch.
cplx lambda_channel(cplx mu, double a, int j, double edge_eps = kBandEdgeEps);

/// Half the number of real roots of lambda^2 + a = mu: 1 above a, 0 below.
int half_root_count(double mu, double a, double edge_eps = kBandEdgeEps);

/// [y, z] = i (y conj(z') - y' conj(z)).
cplx bracket(cplx y, cplx y_prime, cplx z, cplx z_prime);

struct Channel {
    double mu = 0.0;
    Side side = Side::plus;
    int j = 1;
    cplx lambda;
};

Channel make_channel(const Potential& p, double mu, Side side, int j);

/// True when the channel's Jost solution decays or oscillates towards its own infinity.
bool is_bounded_channel(const Channel& c);

struct JostOptions {
    double rel_tol = 1e-11;
    double abs_tol = 1e-13;
    /// Distance added beyond the deviation support before integration starts.
    /// Beyond the support q equals its asymptote and the plane wave is exact.
    double margin = 0.0;
    /// Overrides the starting point |x_far| when set.
    std::optional<double> x_far;
};

struct JostSample {
    Channel channel;
    std::vector<double> x_grid;
    std::vector<cplx> y;
    std::vector<cplx> y_prime;
    double residual = 0.0;
};

/// Jost solution y_j^side(x, mu) on `x_grid` by integrating -y'' + (q - mu) y = 0 inwards
/// from the plane-wave data at x_far. Growing channels throw GrowingChannel.
JostSample solve_jost(const Potential& p, double mu, Side side, int j,
                      std::span<const double> x_grid, const JostOptions& opts = {});

struct VolterraOptions {
    double step = 2e-3;
    double tol = 1e-12;
    int max_iterations = 500;
};

/// Same solution from the Volterra equation of the existence proof, solved by
/// successive approximations with the trapezoid rule. Only bounded channels.
JostSample solve_jost_volterra(const Potential& p, double mu, Side side, int j,
                               std::span<const double> x_grid, const VolterraOptions& opts = {});

/// max |-y'' + (q - mu) y| / max|y| over interior nodes, y'' by a five-point centred
/// difference (three-point on nonuniform spacing). End nodes and nodes whose stencil
/// crosses a jump of q are skipped.
double ode_residual(const Potential& p, const JostSample& s, double mu);

/// Growing channel (Im lambda < 0) built from the decaying one of the same side by
/// variation of constants. Throws NoConvergence if the decaying solution vanishes on
/// the requested range.
JostSample growing_jost(const Potential& p, double mu, Side side,
                        std::span<const double> x_grid, const JostOptions& opts = {});

struct JostValue {
    cplx y;
    cplx y_prime;
};

/// Value at x = 0 reached from the channel's own side, plus bookkeeping used by the
/// bound-state machinery: the Pruefer angle of a real solution and int |y|^2 over the
/// traversed half-line (including the analytic tail).
struct OriginValue {
    JostValue value;
    double pruefer_angle = 0.0;
    double half_line_norm_sq = 0.0;
};

OriginValue jost_at_origin(const Potential& p, double mu, Side side, int j,
                           const JostOptions& opts = {}, bool track_angle = false);

}  // namespace stepscat
