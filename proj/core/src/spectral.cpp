#include "stepscat/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include <boost/math/special_functions/legendre.hpp>

#include "stepscat/errors.hpp"

namespace stepscat {

namespace {

constexpr double kPi = std::numbers::pi;

double speed(double mu, double a) { return 0.5 / std::sqrt(std::abs(mu - a)); }

// Values (y, y') at 0 of the two channels of one side; only bounded ones are filled.
struct SideValues {
    JostValue y1, y2;
};

}  // namespace

const GaussRule& gauss_legendre(int n) {
    static std::mutex mtx;
    static std::map<int, GaussRule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    if (n < 1) throw InvalidInput("Gauss rule needs at least one node");
    GaussRule r;
    const auto zeros = boost::math::legendre_p_zeros<double>(n);
    for (double z : zeros) {
        const double dp = boost::math::legendre_p_prime(n, z);
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x.push_back(z);
        r.w.push_back(w);
        if (z != 0.0) {
            r.x.push_back(-z);
            r.w.push_back(w);
        }
    }
    std::vector<std::size_t> idx(r.x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return r.x[a] < r.x[b]; });
    GaussRule sorted;
    for (auto i : idx) {
        sorted.x.push_back(r.x[i]);
        sorted.w.push_back(r.w[i]);
    }
    return cache.emplace(n, std::move(sorted)).first->second;
}

double band_edge_epsilon(const Potential& p) { return 1e-4 * (1.0 + (p.mu2() - p.mu1())); }

int band_of(const Potential& p, double mu) {
    if (mu > p.mu2()) return 2;
    if (mu > p.mu1()) return 1;
    return 0;
}

double ScatteringData::mu_max() const {
    double m = mu2();
    for (const auto& b : bands)
        for (const auto& s : b.samples) m = std::max(m, s.mu);
    return m;
}

ConnectionMatrices connection_matrices(const Potential& p, double mu, const SpectralOptions& opts) {
    ConnectionMatrices c;
    c.mu = mu;
    c.k = band_of(p, mu);
    if (c.k == 0) throw BandEdge("no bounded solutions below mu1");
    c.r_plus = half_root_count(mu, p.a_plus());
    c.r_minus = half_root_count(mu, p.a_minus());
    const int k = c.k;

    // Channel order on each side: (y1, y2); the minus side never needs y1 when r- = 0.
    const JostValue y1p = jost_at_origin(p, mu, Side::plus, 1, opts.jost).value;
    const JostValue y2m = jost_at_origin(p, mu, Side::minus, 2, opts.jost).value;
    JostValue y2p{}, y1m{};
    if (c.r_plus) y2p = jost_at_origin(p, mu, Side::plus, 2, opts.jost).value;
    if (c.r_minus) y1m = jost_at_origin(p, mu, Side::minus, 1, opts.jost).value;

    const double s1p = speed(mu, p.a_plus());
    const double s1m = speed(mu, p.a_minus());

    // Unknowns: coefficients of y2^- and y1^+ (outgoing); knowns: y1^- and y2^+ (incoming).
    Eigen::Matrix2cd M;
    M << std::sqrt(s1m) * y2m.y, -std::sqrt(s1p) * y1p.y,
         std::sqrt(s1m) * y2m.y_prime, -std::sqrt(s1p) * y1p.y_prime;
    const double scale = M.cwiseAbs().maxCoeff();
    const cplx det = M.determinant();
    if (!(std::abs(det) > opts.degeneracy_tol * scale * scale))
        throw DegenerateConnection("matching system at x = 0 is singular");

    // Incoming coefficients: C_raw = identity.
    std::vector<std::pair<cplx, cplx>> incoming;  // (A^-_{j1}, A^+_{j2})
    if (k == 2) {
        incoming = {{1.0, 0.0}, {0.0, 1.0}};
    } else if (c.r_minus) {
        incoming = {{1.0, 0.0}};
    } else {
        incoming = {{0.0, 1.0}};
    }

    Eigen::MatrixXcd Ap(k, 1 + c.r_plus), Am(k, 1 + c.r_minus);
    const Eigen::PartialPivLU<Eigen::Matrix2cd> lu(M);
    for (int j = 0; j < k; ++j) {
        const auto [am1, ap2] = incoming[j];
        Eigen::Vector2cd rhs = Eigen::Vector2cd::Zero();
        if (c.r_plus) {
            rhs(0) += std::sqrt(s1p) * ap2 * y2p.y;
            rhs(1) += std::sqrt(s1p) * ap2 * y2p.y_prime;
        }
        if (c.r_minus) {
            rhs(0) -= std::sqrt(s1m) * am1 * y1m.y;
            rhs(1) -= std::sqrt(s1m) * am1 * y1m.y_prime;
        }
        const Eigen::Vector2cd sol = lu.solve(rhs);
        // sol(0) = A^-_{j2}, sol(1) = A^+_{j1}
        Ap(j, 0) = sol(1);
        if (c.r_plus) Ap(j, 1) = ap2;
        if (c.r_minus) {
            Am(j, 0) = am1;
            Am(j, 1) = sol(0);
        } else {
            Am(j, 0) = sol(0);
        }
    }

    auto pack = [&](const Eigen::MatrixXcd& ap, const Eigen::MatrixXcd& am, Eigen::MatrixXcd& B,
                    Eigen::MatrixXcd& C) {
        B.resize(k, k);
        C.resize(k, k);
        // Column of A^- holding channel nu is nu - (2 - r^-) in zero-based storage.
        auto am_col = [&](int nu) { return nu - (2 - c.r_minus); };
        for (int nu = 1; nu <= k; ++nu) {
            B.col(nu - 1) = nu <= c.r_plus ? ap.col(nu - 1)
                                           : am.col(am_col(nu - c.r_plus + c.r_minus));
            C.col(nu - 1) = nu <= c.r_minus ? am.col(am_col(nu))
                                            : ap.col(nu + c.r_plus - c.r_minus - 1);
        }
    };
    Eigen::MatrixXcd B, C;
    pack(Ap, Am, B, C);

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(B * B.adjoint());
    if (!(es.eigenvalues().minCoeff() > opts.degeneracy_tol * es.eigenvalues().maxCoeff()))
        throw DegenerateConnection("connection matrix B is singular");
    const Eigen::MatrixXcd U = es.operatorInverseSqrt();
    c.A_plus = U * Ap;
    c.A_minus = U * Am;
    pack(c.A_plus, c.A_minus, c.B, c.C);

    const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(k, k);
    if ((c.C * c.C.adjoint() - I).cwiseAbs().maxCoeff() > opts.unitarity_tol)
        throw DegenerateConnection("normalized C is not unitary; Jost data inconsistent");

    c.speed_plus.resize(1 + c.r_plus);
    c.speed_plus.setConstant(s1p);
    return c;
}

Eigen::MatrixXcd scattering_matrix(const ConnectionMatrices& c) {
    Eigen::MatrixXcd M = c.A_plus;
    for (int nu = 0; nu < M.cols(); ++nu) M.col(nu) *= std::sqrt(c.speed_plus(nu));
    Eigen::MatrixXcd S = M.adjoint() * M;
    const Eigen::MatrixXcd Sh = S.adjoint();
    S = 0.5 * (S + Sh);
    return S;
}

Eigen::MatrixXcd scattering_matrix(const Potential& p, double mu, const SpectralOptions& opts) {
    return scattering_matrix(connection_matrices(p, mu, opts));
}

ConnectionMatrices unitary_mix(const ConnectionMatrices& c, const Eigen::MatrixXcd& U, double tol) {
    if (U.rows() != c.k || U.cols() != c.k) throw InvalidInput("mixing matrix has wrong order");
    const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(c.k, c.k);
    if ((U * U.adjoint() - I).cwiseAbs().maxCoeff() > tol)
        throw NotUnitary("mixing matrix is not unitary");
    ConnectionMatrices out = c;
    out.A_plus = U * c.A_plus;
    out.A_minus = U * c.A_minus;
    out.B = U * c.B;
    out.C = U * c.C;
    return out;
}

namespace {

struct DecayPair {
    OriginValue plus;
    OriginValue minus;
    double wronskian() const {
        return (plus.value.y * minus.value.y_prime - plus.value.y_prime * minus.value.y).real();
    }
    double normalized_wronskian() const {
        const double s = std::abs(plus.value.y * minus.value.y_prime) +
                         std::abs(plus.value.y_prime * minus.value.y);
        return s > 0.0 ? std::abs(wronskian()) / s : 0.0;
    }
    int count() const {
        return static_cast<int>(std::floor((minus.pruefer_angle - plus.pruefer_angle) / kPi)) + 1;
    }
};

DecayPair decay_pair(const Potential& p, double mu, const JostOptions& opts, bool angles) {
    if (!(mu < p.mu1())) throw InvalidInput("decaying pair needs mu below mu1");
    return {jost_at_origin(p, mu, Side::plus, 1, opts, angles),
            jost_at_origin(p, mu, Side::minus, 2, opts, angles)};
}

}  // namespace

double bound_state_wronskian(const Potential& p, double mu, const JostOptions& opts) {
    return decay_pair(p, mu, opts, false).wronskian();
}

int eigenvalue_count_below(const Potential& p, double mu, const JostOptions& opts) {
    return decay_pair(p, mu, opts, true).count();
}

std::vector<double> find_bound_states(const Potential& p, double mu_floor, double scan_step,
                                      const BoundStateOptions& opts) {
    const double top = p.mu1() - (opts.top_gap < 0.0 ? band_edge_epsilon(p) : opts.top_gap);
    if (!(mu_floor < top)) throw InvalidInput("mu_floor must lie below mu1");
    if (!(scan_step > 0.0)) throw InvalidInput("scan_step must be positive");

    std::vector<double> found;
    const int steps = std::max(1, static_cast<int>(std::ceil((top - mu_floor) / scan_step)));
    double lo = mu_floor;
    DecayPair plo = decay_pair(p, lo, opts.jost, true);
    for (int s = 1; s <= steps; ++s) {
        const double hi = s == steps ? top : mu_floor + (top - mu_floor) * s / steps;
        const DecayPair phi = decay_pair(p, hi, opts.jost, true);
        const int inside = phi.count() - plo.count();
        if (inside >= 2)
            throw ScanTooCoarse("several eigenvalues between " + std::to_string(lo) + " and " +
                                std::to_string(hi));
        double wl = plo.wronskian();
        const double wh = phi.wronskian();
        if (inside == 1 || (wl < 0.0) != (wh < 0.0)) {
            if ((wl < 0.0) == (wh < 0.0))
                throw ScanTooCoarse("eigenvalue count changed without a Wronskian sign change");
            double a = lo, b = hi;
            while (b - a > opts.bisect_tol * (1.0 + std::abs(a))) {
                const double m = 0.5 * (a + b);
                const double wm = bound_state_wronskian(p, m, opts.jost);
                if (wm == 0.0) {
                    a = b = m;
                    break;
                }
                if ((wm < 0.0) == (wl < 0.0)) {
                    a = m;
                    wl = wm;
                } else {
                    b = m;
                }
            }
            found.push_back(0.5 * (a + b));
        }
        lo = hi;
        plo = phi;
    }
    return found;
}

double norming_constant(const Potential& p, double mu, const JostOptions& opts, double tol) {
    if (!(mu < p.mu1())) throw NotABoundState("mu is not below mu1");
    const DecayPair d = decay_pair(p, mu, opts, false);
    if (d.normalized_wronskian() > tol) throw NotABoundState("Wronskian does not vanish at mu");
    const JostValue& yp = d.plus.value;
    const JostValue& ym = d.minus.value;
    const cplx c = std::abs(ym.y) >= std::abs(ym.y_prime) ? yp.y / ym.y : yp.y_prime / ym.y_prime;
    const double norm_sq = d.plus.half_line_norm_sq + std::norm(c) * d.minus.half_line_norm_sq;
    return 1.0 / norm_sq;
}

std::vector<double> bound_eigenfunction(const Potential& p, double mu, double norming,
                                        std::span<const double> x_grid, const JostOptions& opts) {
    std::vector<double> right, left;
    std::vector<std::size_t> ir, il;
    for (std::size_t i = 0; i < x_grid.size(); ++i) {
        if (x_grid[i] >= 0.0) {
            right.push_back(x_grid[i]);
            ir.push_back(i);
        } else {
            left.push_back(x_grid[i]);
            il.push_back(i);
        }
    }
    const DecayPair d = decay_pair(p, mu, opts, false);
    const JostValue& yp = d.plus.value;
    const JostValue& ym = d.minus.value;
    const cplx c = std::abs(ym.y) >= std::abs(ym.y_prime) ? yp.y / ym.y : yp.y_prime / ym.y_prime;
    const double amp = std::sqrt(norming);
    std::vector<double> out(x_grid.size(), 0.0);
    if (!right.empty()) {
        const JostSample s = solve_jost(p, mu, Side::plus, 1, right, opts);
        for (std::size_t i = 0; i < ir.size(); ++i) out[ir[i]] = amp * s.y[i].real();
    }
    if (!left.empty()) {
        const JostSample s = solve_jost(p, mu, Side::minus, 2, left, opts);
        for (std::size_t i = 0; i < il.size(); ++i) out[il[i]] = amp * (c * s.y[i]).real();
    }
    return out;
}

BandGrids make_band_grids(const Potential& p, const BandGridOptions& opts) {
    if (opts.samples_per_band < 2) throw InvalidInput("need at least two samples per band");
    const double eps = opts.edge_eps < 0.0 ? band_edge_epsilon(p) : opts.edge_eps;
    const double mu1 = p.mu1(), mu2 = p.mu2();
    const double mu_max = opts.mu_max > 0.0 ? opts.mu_max : mu2 + 100.0;
    if (!(mu_max > mu2 + eps)) throw InvalidInput("mu_max must exceed mu2");
    const int n = opts.samples_per_band;
    BandGrids g;
    if (mu2 - mu1 > 2.0 * eps) {
        for (int i = 0; i < n; ++i) {
            const double th = (i + 0.5) * kPi / (2.0 * n);
            const double s = std::sin(th);
            const double mu = mu1 + (mu2 - mu1) * s * s;
            if (mu > mu1 + eps && mu < mu2 - eps) g.band1.push_back(mu);
        }
    }
    const double kmax = std::sqrt(mu_max - mu2);
    const double span = std::asinh(kmax / opts.knee);
    for (int i = 1; i <= n; ++i) {
        const double k = i == n ? kmax : opts.knee * std::sinh(span * i / n);
        if (k * k > eps) g.band2.push_back(mu2 + k * k);
    }
    if (g.band2.back() != mu_max) g.band2.back() = mu_max;
    return g;
}

ScatteringData forward_scatter(const Potential& p, const BandGrids& grids, const ForwardOptions& opts) {
    ScatteringData d;
    d.a_minus = p.a_minus();
    d.a_plus = p.a_plus();
    const double mu_floor = opts.mu_floor_set ? opts.mu_floor : p.lower_bound() - 1.0;
    if (mu_floor < p.mu1() - band_edge_epsilon(p)) {
        BoundStateOptions bo;
        bo.jost = opts.spectral.jost;
        for (double mu : find_bound_states(p, mu_floor, opts.scan_step, bo))
            d.bound_states.push_back({mu, norming_constant(p, mu, opts.spectral.jost)});
    }
    d.bands[0].interval = {p.mu1(), p.mu2()};
    for (double mu : grids.band1) {
        if (!(mu > p.mu1() && mu < p.mu2())) throw InvalidInput("band-1 sample outside (mu1, mu2)");
        d.bands[0].samples.push_back({mu, scattering_matrix(p, mu, opts.spectral)});
    }
    double top = p.mu2();
    for (double mu : grids.band2) {
        if (!(mu > p.mu2())) throw InvalidInput("band-2 sample not above mu2");
        d.bands[1].samples.push_back({mu, scattering_matrix(p, mu, opts.spectral)});
        top = std::max(top, mu);
    }
    d.bands[1].interval = {p.mu2(), top};
    return d;
}

SStructure s_structure(const Eigen::MatrixXcd& S, double rank_tol) {
    SStructure r;
    r.hermitian_defect = (S - S.adjoint()).cwiseAbs().maxCoeff();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(S, Eigen::EigenvaluesOnly);
    r.min_eigenvalue = es.eigenvalues().minCoeff();
    const double top = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        if (es.eigenvalues()(i) > rank_tol * top) ++r.rank;
    return r;
}

namespace {

// Trapezoid weights on an arbitrary increasing grid.
std::vector<double> trapezoid_weights(std::span<const double> x) {
    std::vector<double> w(x.size(), 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        const double h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    return w;
}

// Sum over the bounded system at mu of |int f conj(phi_j)|^2.
double spectral_density(const Potential& p, double mu, std::span<const double> x,
                        std::span<const double> f, std::span<const double> w,
                        const JostOptions& jopts) {
    SpectralOptions so;
    so.jost = jopts;
    const ConnectionMatrices c = connection_matrices(p, mu, so);
    std::vector<double> xr, xl;
    std::vector<std::size_t> ir, il;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] >= 0.0) {
            xr.push_back(x[i]);
            ir.push_back(i);
        } else {
            xl.push_back(x[i]);
            il.push_back(i);
        }
    }
    const double s1p = speed(mu, p.a_plus());
    const double s1m = speed(mu, p.a_minus());
    // Projections of f on each Jost solution: I_nu = int f conj(y_nu) over its half-line.
    auto project = [&](Side side, int j, const std::vector<double>& xs,
                       const std::vector<std::size_t>& idx) {
        if (xs.empty()) return cplx{};
        const JostSample s = solve_jost(p, mu, side, j, xs, jopts);
        cplx acc{};
        for (std::size_t i = 0; i < xs.size(); ++i) acc += w[idx[i]] * f[idx[i]] * std::conj(s.y[i]);
        return acc;
    };
    // phi_j is one function; on x >= 0 it is written with plus-side Jost solutions.
    const cplx p1 = project(Side::plus, 1, xr, ir);
    const cplx p2 = c.r_plus ? project(Side::plus, 2, xr, ir) : cplx{};
    const cplx m2 = project(Side::minus, 2, xl, il);
    const cplx m1 = c.r_minus ? project(Side::minus, 1, xl, il) : cplx{};
    double total = 0.0;
    for (int j = 0; j < c.k; ++j) {
        cplx F = std::sqrt(s1p) * std::conj(c.A_plus(j, 0)) * p1;
        if (c.r_plus) F += std::sqrt(s1p) * std::conj(c.A_plus(j, 1)) * p2;
        if (c.r_minus) {
            F += std::sqrt(s1m) * std::conj(c.A_minus(j, 0)) * m1;
            F += std::sqrt(s1m) * std::conj(c.A_minus(j, 1)) * m2;
        } else {
            F += std::sqrt(s1m) * std::conj(c.A_minus(j, 0)) * m2;
        }
        total += std::norm(F) / (2.0 * kPi);
    }
    return total;
}

}  // namespace

ParsevalReport parseval_report(const Potential& p, const ScatteringData& d,
                               std::span<const double> x_grid, std::span<const double> f,
                               const ParsevalOptions& opts) {
    if (x_grid.size() != f.size()) throw InvalidInput("f and x_grid differ in length");
    ParsevalReport r;
    const std::vector<double> w = trapezoid_weights(x_grid);
    for (std::size_t i = 0; i < f.size(); ++i) r.norm_sq += w[i] * f[i] * f[i];
    if (r.norm_sq == 0.0) return r;

    for (const BoundState& b : d.bound_states) {
        const auto psi = bound_eigenfunction(p, b.mu, b.norming, x_grid, opts.jost);
        double ip = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) ip += w[i] * f[i] * psi[i];
        r.discrete += ip * ip;
    }

    const GaussRule& g = gauss_legendre(opts.nodes);
    const double mu1 = p.mu1(), mu2 = p.mu2();
    const double eps = 1e-9 * (1.0 + std::abs(mu2));
    // Band 1 in theta: mu = mu1 + D sin^2 theta, d mu = D sin(2 theta) d theta.
    if (mu2 - mu1 > 2.0 * eps) {
        const double D = mu2 - mu1;
        for (int pnl = 0; pnl < opts.panels; ++pnl) {
            const double a = 0.5 * kPi * pnl / opts.panels, b = 0.5 * kPi * (pnl + 1) / opts.panels;
            for (std::size_t i = 0; i < g.x.size(); ++i) {
                const double th = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
                const double mu = mu1 + D * std::sin(th) * std::sin(th);
                const double jac = D * std::sin(2.0 * th) * 0.5 * (b - a) * g.w[i];
                r.continuous += jac * spectral_density(p, mu, x_grid, f, w, opts.jost);
            }
        }
    }
    // Band 2 in k: mu = mu2 + k^2.
    const double kmax = std::sqrt(std::max(d.mu_max() - mu2, 0.0));
    for (int pnl = 0; pnl < opts.panels; ++pnl) {
        const double a = kmax * pnl / opts.panels, b = kmax * (pnl + 1) / opts.panels;
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            const double k = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
            const double jac = 2.0 * k * 0.5 * (b - a) * g.w[i];
            r.continuous += jac * spectral_density(p, mu2 + k * k, x_grid, f, w, opts.jost);
        }
    }
    r.residual = std::abs(r.norm_sq - r.discrete - r.continuous) / r.norm_sq;
    return r;
}

double parseval_residual(const Potential& p, const ScatteringData& d,
                         std::span<const double> x_grid, std::span<const double> f,
                         const ParsevalOptions& opts) {
    return parseval_report(p, d, x_grid, f, opts).residual;
}

}  // namespace stepscat
