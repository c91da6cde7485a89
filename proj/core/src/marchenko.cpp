#include "stepscat/marchenko.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <unordered_map>

#include <fmt/format.h>

#include "stepscat/errors.hpp"

namespace stepscat {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

// phi2(z) = (e^z - 1 - z)/z^2 for small |z|.
template <class T>
T phi2_series(T z) {
    T term = T(0.5);
    T sum = term;
    for (int n = 1; n < 20; ++n) {
        term *= z / T(n + 2);
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
    }
    return sum;
}

// (e^{iks} - 1 - iks) / k^2
cplx reg_osc(double k, double s) {
    const double z = k * s;
    if (std::abs(z) < 0.5) return -s * s * phi2_series(cplx{0.0, z});
    return cplx{std::cos(z) - 1.0, std::sin(z) - z} / (k * k);
}

// (e^{-kappa s} - 1 + kappa s) / kappa^2
double reg_exp(double kappa, double s) {
    const double z = -kappa * s;
    if (std::abs(z) < 0.5) return s * s * phi2_series(z);
    return (std::expm1(z) - z) / (kappa * kappa);
}

// e^{iz} - 1 without cancellation for small z.
cplx expm1_i(double z) {
    const double h = std::sin(0.5 * z);
    return {-2.0 * h * h, std::sin(z)};
}

// int_K^inf k^{-n} e^{iks} dk for n >= 2, K > 0.
cplx tail_integral(int n, double K, double s) {
    if (s == 0.0) return std::pow(K, 1 - n) / (n - 1);
    const double as = std::abs(s);
    const double K2 = std::max(K, 60.0 / as);
    cplx sum{};
    if (K2 > K) {
        const GaussRule& g = gauss_legendre(12);
        double a = K;
        while (a < K2) {
            const double b = std::min({a + 1.5 / as, 2.0 * a, K2});
            for (std::size_t i = 0; i < g.x.size(); ++i) {
                const double k = 0.5 * (a + b) + 0.5 * (b - a) * g.x[i];
                sum += 0.5 * (b - a) * g.w[i] * std::pow(k, -n) * std::polar(1.0, k * s);
            }
            a = b;
        }
    }
    // Integration by parts from K2: -(e^{iK2 s}/(is)) K2^{-n} sum_j (n)_j / (i s K2)^j.
    const cplx isk = cplx{0.0, s * K2};
    cplx term = 1.0, series = 0.0;
    for (int j = 0; j < 40; ++j) {
        series += term;
        term *= static_cast<double>(n + j) / isk;
        if (std::abs(term) < 1e-17 * std::abs(series)) break;
    }
    sum += -std::polar(1.0, K2 * s) / cplx{0.0, s} * std::pow(K2, -n) * series;
    return sum;
}

// Local cubic Lagrange interpolation on an increasing abscissa.
template <class V>
V lagrange(const std::vector<double>& u, const std::vector<V>& v, double x) {
    const int n = static_cast<int>(u.size());
    if (n == 1) return v[0];
    const int m = std::min(n, 4);
    int i = static_cast<int>(std::upper_bound(u.begin(), u.end(), x) - u.begin()) - 1;
    int lo = std::clamp(i - (m / 2 - 1), 0, n - m);
    V out{};
    for (int a = lo; a < lo + m; ++a) {
        double w = 1.0;
        for (int b = lo; b < lo + m; ++b)
            if (b != a) w *= (x - u[b]) / (u[a] - u[b]);
        out += w * v[a];
    }
    return out;
}

enum class SeriesKind { oscillatory, evanescent };

// Reduced data M = S / |lambda_1'^+| along one band, in that band's variable:
// theta for (mu1, mu2) with mu = mu1 + D sin^2 theta, k for mu = mu2 + k^2.
struct BandSeries {
    SeriesKind kind = SeriesKind::oscillatory;
    int band = 1;
    double u_lo = 0.0, u_hi = 0.0;
    std::vector<double> u;
    std::vector<cplx> m21;
    std::vector<double> m11, m22;
};

struct Geometry {
    double a_minus, a_plus, mu1, mu2, delta;

    double mu_of(int band, double u) const {
        if (band == 1) {
            const double s = std::sin(u);
            return mu1 + delta * s * s;
        }
        return mu2 + u * u;
    }
    double dmu_du(int band, double u) const {
        return band == 1 ? delta * std::sin(2.0 * u) : 2.0 * u;
    }
    double u_of(int band, double mu) const {
        if (band == 1) return std::asin(std::sqrt(std::clamp((mu - mu1) / delta, 0.0, 1.0)));
        return std::sqrt(std::max(mu - mu2, 0.0));
    }
    // k^+ = sqrt(mu - a^+) on oscillatory bands and its derivative in u.
    double kplus(int band, double u) const {
        if (band == 1) return std::sqrt(delta) * std::sin(u);
        return std::sqrt(u * u + (mu2 - a_plus));
    }
    double dkplus(int band, double u) const {
        if (band == 1) return std::sqrt(delta) * std::cos(u);
        const double kp = kplus(band, u);
        return kp > 0.0 ? u / kp : 1.0;
    }
    double u_of_kplus(int band, double kp) const {
        if (band == 1) return std::asin(std::clamp(kp / std::sqrt(delta), 0.0, 1.0));
        return std::sqrt(std::max(kp * kp - (mu2 - a_plus), 0.0));
    }
    // kappa = sqrt(a^+ - mu) on the evanescent band (theta variable).
    double kappa(double u) const { return std::sqrt(delta) * std::cos(u); }
};

std::vector<BandSeries> reduce(const ScatteringData& d, double mu_cap, Geometry& geo) {
    geo = {d.a_minus, d.a_plus, d.mu1(), d.mu2(), d.mu2() - d.mu1()};
    std::vector<BandSeries> out;
    for (int b = 0; b < 2; ++b) {
        const int band = b + 1;
        if (band == 1 && !(geo.delta > 0.0)) continue;
        BandSeries s;
        s.band = band;
        s.kind = (band == 1 && d.a_plus > d.a_minus) ? SeriesKind::evanescent
                                                     : SeriesKind::oscillatory;
        std::vector<SSample> samples = d.bands[b].samples;
        std::sort(samples.begin(), samples.end(),
                  [](const SSample& p, const SSample& q) { return p.mu < q.mu; });
        for (const SSample& smp : samples) {
            if (mu_cap > 0.0 && smp.mu > mu_cap) continue;
            const double speed = 0.5 / std::sqrt(std::abs(smp.mu - d.a_plus));
            const int order = s.kind == SeriesKind::evanescent ? 1 : 2;
            if (smp.S.rows() != order || smp.S.cols() != order)
                throw InvalidInput(fmt::format("S sample at mu={} has order {}, expected {}",
                                               smp.mu, smp.S.rows(), order));
            s.u.push_back(geo.u_of(band, smp.mu));
            s.m11.push_back(smp.S(0, 0).real() / speed);
            if (order == 2) {
                s.m22.push_back(smp.S(1, 1).real() / speed);
                s.m21.push_back(smp.S(1, 0) / speed);
            }
        }
        if (s.u.empty()) {
            if (band == 2) throw InvalidInput("scattering data has no samples above mu2");
            throw InvalidInput("scattering data has no samples in (mu1, mu2)");
        }
        for (std::size_t i = 1; i < s.u.size(); ++i)
            if (!(s.u[i] > s.u[i - 1])) throw InvalidInput("duplicate mu samples in a band");
        s.u_lo = 0.0;
        s.u_hi = band == 1 ? 0.5 * kPi : s.u.back();
        out.push_back(std::move(s));
    }
    return out;
}

// Gauss nodes over [u_lo, u_hi] with panels at the sample abscissae, split so that the
// phase variation `rate * du` stays moderate on each panel.
template <class Fn>
void for_each_node(const BandSeries& s, const std::function<double(double)>& phase_of, Fn&& fn) {
    std::vector<double> cuts{s.u_lo};
    for (double u : s.u)
        if (u > s.u_lo && u < s.u_hi) cuts.push_back(u);
    cuts.push_back(s.u_hi);
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const double a = cuts[p], b = cuts[p + 1];
        if (!(b > a)) continue;
        const double phase = std::abs(phase_of(b) - phase_of(a));
        const int sub = std::max(1, static_cast<int>(std::ceil(phase / 40.0)));
        const int n = 8 + static_cast<int>(std::ceil(0.7 * phase / sub));
        const GaussRule& g = gauss_legendre(n);
        for (int q = 0; q < sub; ++q) {
            const double lo = a + (b - a) * q / sub, hi = a + (b - a) * (q + 1) / sub;
            for (std::size_t i = 0; i < g.x.size(); ++i)
                fn(0.5 * (lo + hi) + 0.5 * (hi - lo) * g.x[i], 0.5 * (hi - lo) * g.w[i]);
        }
    }
}

cplx filon_sum(const std::vector<cplx>& f, double a, double h, double s) {
    const std::size_t n2 = f.size() - 1;  // even
    const double th = s * h;
    double al, be, ga;
    if (std::abs(th) < 0.1) {
        const double t2 = th * th;
        al = th * t2 * (2.0 / 45.0 - t2 * (2.0 / 315.0 - t2 * 2.0 / 4725.0));
        be = 2.0 / 3.0 + t2 * (2.0 / 15.0 - t2 * (4.0 / 105.0 - t2 * 2.0 / 567.0));
        ga = 4.0 / 3.0 - t2 * (2.0 / 15.0 - t2 * (1.0 / 210.0 - t2 / 11340.0));
    } else {
        const double sn = std::sin(th), cs = std::cos(th), t3 = th * th * th;
        al = (th * th + th * sn * cs - 2.0 * sn * sn) / t3;
        be = 2.0 * (th * (1.0 + cs * cs) - 2.0 * sn * cs) / t3;
        ga = 4.0 * (sn - th * cs) / t3;
    }
    const double b = a + h * static_cast<double>(n2);
    const cplx ea = std::polar(1.0, s * a), eb = std::polar(1.0, s * b);
    // e^{i s k_j} by recurrence in blocks to limit drift.
    cplx even{}, odd{};
    const cplx step = std::polar(1.0, s * h);
    cplx e = ea;
    for (std::size_t j = 0; j <= n2; ++j) {
        if (j % 256 == 0) e = std::polar(1.0, s * (a + h * static_cast<double>(j)));
        if (j % 2 == 0) even += f[j] * e;
        else odd += f[j] * e;
        e *= step;
    }
    even -= 0.5 * (f[0] * ea + f[n2] * eb);
    return h * (cplx{0.0, -al} * (f[n2] * eb - f[0] * ea) + be * even + ga * odd);
}

}  // namespace

double KernelGrid::step() const { return x.size() >= 2 ? x[1] - x[0] : 0.0; }

double omega(double x, double t) {
    if (x * t < 0.0) return 0.0;
    return std::min(std::abs(x), std::abs(t));
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo)) throw InvalidInput("invalid uniform grid");
    const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step)) + 1;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<double>(i);
    return g;
}

struct SpectralKernel::Impl {
    struct OscNode {
        double k;
        cplx a;    // P weight
        double d;  // Q weight
    };
    struct ExpNode {
        double kappa;
        double c;
    };
    struct FilonSegment {
        double a, h;
        std::vector<cplx> m21;
        std::vector<cplx> dd;
    };

    Geometry geo{};
    double s_max = 0.0;
    std::vector<OscNode> osc;
    std::vector<ExpNode> exps;
    std::vector<FilonSegment> filon;
    TailInfo tail;

    double P(double s) const {
        double v = 0.0;
        for (const OscNode& n : osc) {
            const cplx r = reg_osc(n.k, s);
            v += n.a.real() * r.real() - n.a.imag() * r.imag();
        }
        for (const ExpNode& n : exps) v += n.c * reg_exp(n.kappa, s);
        if (tail.model_applied) {
            const double K = tail.k_end;
            cplx t{};
            for (int m = 2; m <= 4; ++m) {
                const cplx Tm = tail_integral(m + 2, K, s) - std::pow(K, -m - 1) / (m + 1) -
                                cplx{0.0, s} * std::pow(K, -m) / static_cast<double>(m);
                t += tail.coeffs[m - 2] * Tm;
            }
            v += -t.real() / kPi;
        }
        return v;
    }

    double Q(double s) const {
        double v = 0.0;
        for (const OscNode& n : osc)
            if (n.d != 0.0) v += n.d * reg_osc(n.k, s).real();
        return v;
    }

    double P2(double s) const {
        double v = 0.0;
        for (const FilonSegment& f : filon) v += filon_eval(f.m21, f.a, f.h, s).real() / kPi;
        for (const ExpNode& n : exps) v += n.c * std::exp(-n.kappa * s);
        if (tail.model_applied) {
            cplx t{};
            for (int m = 2; m <= 4; ++m) t += tail.coeffs[m - 2] * tail_integral(m, tail.k_end, s);
            v += t.real() / kPi;
        }
        return v;
    }

    double Q2(double s) const {
        double v = 0.0;
        for (const FilonSegment& f : filon) v -= filon_eval(f.dd, f.a, f.h, s).real() / kPi;
        return v;
    }

    static cplx filon_eval(const std::vector<cplx>& f, double a, double h, double s) {
        return f.size() >= 3 ? filon_sum(f, a, h, s) : cplx{};
    }
};

SpectralKernel::SpectralKernel(const ScatteringData& d, const KernelOptions& opts)
    : impl_(std::make_unique<Impl>()) {
    Impl& im = *impl_;
    const auto series = reduce(d, opts.mu_max, im.geo);
    const Geometry& geo = im.geo;
    im.s_max = std::max(opts.s_max, 1.0);

    for (const BoundState& b : d.bound_states) {
        if (!(b.mu < d.mu1())) throw InvalidInput("bound state not below mu1");
        im.exps.push_back({std::sqrt(d.a_plus - b.mu), b.norming});
    }

    for (const BandSeries& s : series) {
        if (s.kind == SeriesKind::evanescent) {
            auto phase = [&](double u) { return geo.kappa(u) * im.s_max; };
            for_each_node(s, phase, [&](double u, double w) {
                const double m = lagrange(s.u, s.m11, u);
                im.exps.push_back(
                    {geo.kappa(u), w * m * std::sqrt(geo.delta) * std::sin(u) / (2.0 * kPi)});
            });
            continue;
        }
        std::vector<double> dd(s.u.size());
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] = 0.5 * (s.m11[i] + s.m22[i]) - 1.0;
        auto phase = [&](double u) { return geo.kplus(s.band, u) * im.s_max; };
        for_each_node(s, phase, [&](double u, double w) {
            const double kp = geo.kplus(s.band, u);
            const double jw = w * geo.dkplus(s.band, u);
            const cplx m21 = lagrange(s.u, s.m21, u);
            const double dv = lagrange(s.u, dd, u);
            im.osc.push_back({kp, -jw * m21 / kPi, jw * dv / kPi});
        });
        if (opts.method_b) {
            Impl::FilonSegment seg;
            const double k0 = geo.kplus(s.band, s.u_lo), k1 = geo.kplus(s.band, s.u_hi);
            int n = static_cast<int>(std::ceil((k1 - k0) / opts.filon_step));
            n += n % 2;
            n = std::max(n, 2);
            seg.a = k0;
            seg.h = (k1 - k0) / n;
            for (int j = 0; j <= n; ++j) {
                const double u = geo.u_of_kplus(s.band, k0 + seg.h * j);
                seg.m21.push_back(lagrange(s.u, s.m21, u));
                seg.dd.push_back(lagrange(s.u, dd, u));
            }
            im.filon.push_back(std::move(seg));
        }
    }

    // Truncation tail of the reflection entry above the last band-2 sample.
    const BandSeries& top = series.back();
    TailInfo& tl = im.tail;
    tl.k_end = geo.kplus(2, top.u.back());
    const std::size_t n = top.u.size();
    const double m_end = std::abs(top.m21.back());
    std::vector<std::size_t> fit;
    for (std::size_t i = 0; i < n; ++i)
        if (geo.kplus(2, top.u[i]) >= 0.5 * tl.k_end) fit.push_back(i);
    if (fit.size() >= 3) {
        const double k_a = geo.kplus(2, top.u[fit.front()]);
        const double m_a = std::abs(top.m21[fit.front()]);
        if (m_a > 0.0 && m_end > 0.0 && tl.k_end > k_a)
            tl.decay_power = std::clamp(std::log(m_a / m_end) / std::log(tl.k_end / k_a), 1.5, 4.0);
    }
    tl.estimate = m_end * tl.k_end / (kPi * (tl.decay_power - 1.0));
    if (opts.tail_model && fit.size() >= 8 && tl.k_end >= 20.0 && m_end > 0.0) {
        Eigen::MatrixXcd A(fit.size(), 3);
        Eigen::VectorXcd b(fit.size());
        for (std::size_t r = 0; r < fit.size(); ++r) {
            const double v = tl.k_end / geo.kplus(2, top.u[fit[r]]);
            for (int m = 0; m < 3; ++m) A(r, m) = std::pow(v, m + 2);
            b(r) = top.m21[fit[r]];
        }
        const Eigen::VectorXcd c = A.colPivHouseholderQr().solve(b);
        const double resid = (A * c - b).cwiseAbs().maxCoeff();
        if (resid <= 1e-3 * b.cwiseAbs().maxCoeff()) {
            tl.model_applied = true;
            for (int m = 0; m < 3; ++m) tl.coeffs[m] = c(m) * std::pow(tl.k_end, m + 2);
            tl.estimate = resid * tl.k_end / kPi;
        }
    }
    if (tl.estimate > opts.tail_tol)
        throw TailTooShort(fmt::format(
            "estimated truncation error {:.3g} exceeds {:.3g}; extend the data beyond mu = {:.6g}",
            tl.estimate, opts.tail_tol, d.mu_max()));
}

SpectralKernel::~SpectralKernel() = default;
SpectralKernel::SpectralKernel(SpectralKernel&&) noexcept = default;
SpectralKernel& SpectralKernel::operator=(SpectralKernel&&) noexcept = default;

double SpectralKernel::P(double s) const { return impl_->P(s); }
double SpectralKernel::Q(double s) const { return impl_->Q(s); }
double SpectralKernel::P2(double s) const {
    if (impl_->filon.empty() && !impl_->osc.empty())
        throw InvalidInput("method B tables were not built (KernelOptions::method_b)");
    return impl_->P2(s);
}
double SpectralKernel::Q2(double s) const {
    if (impl_->filon.empty() && !impl_->osc.empty())
        throw InvalidInput("method B tables were not built (KernelOptions::method_b)");
    return impl_->Q2(s);
}

double SpectralKernel::f_tilde(double x, double t) const {
    return P(x + t) - P(x) - P(t) + Q(x - t) - Q(x) - Q(-t);
}

double SpectralKernel::f_mixed(double x, double t, double delta) const {
    return (f_tilde(x + delta, t + delta) - f_tilde(x + delta, t - delta) -
            f_tilde(x - delta, t + delta) + f_tilde(x - delta, t - delta)) /
           (4.0 * delta * delta);
}

double SpectralKernel::f_direct(double x, double t) const { return P2(x + t) - Q2(x - t); }

const TailInfo& SpectralKernel::tail() const { return impl_->tail; }
double SpectralKernel::s_max() const { return impl_->s_max; }
double SpectralKernel::a_plus() const { return impl_->geo.a_plus; }

double build_F_tilde(const ScatteringData& d, double x, double t, const KernelOptions& opts) {
    KernelOptions o = opts;
    o.s_max = std::max(o.s_max, std::abs(x) + std::abs(t) + 1.0);
    return SpectralKernel(d, o).f_tilde(x, t);
}

double literal_spectral_integral(const ScatteringData& d, double x, double t) {
    Geometry geo{};
    const auto series = reduce(d, 0.0, geo);
    const double rate = std::abs(x) + std::abs(t) + 1.0;
    double total = 0.0;
    for (const BandSeries& s : series) {
        if (s.kind == SeriesKind::evanescent) {
            auto phase = [&](double u) { return geo.kappa(u) * rate; };
            for_each_node(s, phase, [&](double u, double w) {
                const double mu = geo.mu_of(s.band, u);
                const double kappa = geo.kappa(u);
                const double S11 = lagrange(s.u, s.m11, u) * 0.5 / kappa;
                // lambda = i kappa: S / (lambda conj(lambda)) (e^{-kappa x} - 1)(e^{-kappa t} - 1)
                const double v = S11 / (kappa * kappa) * std::expm1(-kappa * x) *
                                 std::expm1(-kappa * t);
                total += w * geo.dmu_du(s.band, u) * v / (2.0 * kPi);
                (void)mu;
            });
            continue;
        }
        auto phase = [&](double u) { return geo.kplus(s.band, u) * rate; };
        for_each_node(s, phase, [&](double u, double w) {
            const double k = geo.kplus(s.band, u);
            const double speed = 0.5 / k;
            const cplx S21 = speed * lagrange(s.u, s.m21, u);
            Eigen::Matrix2cd S;
            S << speed * lagrange(s.u, s.m11, u), std::conj(S21), S21,
                speed * lagrange(s.u, s.m22, u);
            const double lam[2] = {k, -k};
            cplx sum{};
            for (int nu = 0; nu < 2; ++nu)
                for (int j = 0; j < 2; ++j)
                    sum += S(j, nu) / (lam[nu] * lam[j]) * expm1_i(x * lam[nu]) *
                           expm1_i(-t * lam[j]);
            total += w * geo.dmu_du(s.band, u) * sum.real() / (2.0 * kPi);
        });
    }
    // Free diagonal beyond the last sample: (1/pi) int_K^inf [(1-cos kx) + (1-cos kt)
    // - (1-cos k(x-t))] / k^2 dk.
    const double K = geo.kplus(2, series.back().u.back());
    auto C = [K](double a) { return 1.0 / K - tail_integral(2, K, a).real(); };
    total += (C(x) + C(t) - C(x - t)) / kPi;
    return total;
}

namespace {

void require_uniform(std::span<const double> g, const char* what) {
    if (g.size() < 2) throw InvalidInput(fmt::format("{} needs at least two nodes", what));
    const double h = g[1] - g[0];
    for (std::size_t i = 1; i < g.size(); ++i)
        if (std::abs(g[i] - g[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h)))
            throw InvalidInput(fmt::format("{} must be uniform", what));
}

double grid_step(std::span<const double> xg, std::span<const double> tg) {
    require_uniform(xg, "x grid");
    require_uniform(tg, "t grid");
    const double h = xg[1] - xg[0];
    if (std::abs((tg[1] - tg[0]) - h) > 1e-9 * h) throw InvalidInput("x and t steps differ");
    return h;
}

// Memoized one-dimensional evaluation.
class Memo {
public:
    explicit Memo(std::function<double(double)> f) : f_(std::move(f)) {}
    double operator()(double s) {
        auto it = cache_.find(s);
        if (it != cache_.end()) return it->second;
        const double v = f_(s);
        cache_.emplace(s, v);
        return v;
    }

private:
    std::function<double(double)> f_;
    std::unordered_map<double, double> cache_;
};

}  // namespace

KernelGrid build_F(const SpectralKernel& src, std::span<const double> x_grid,
                   std::span<const double> t_grid, bool method_b, double method_tol) {
    const double h = grid_step(x_grid, t_grid);
    const double delta = 0.5 * h;
    KernelGrid F;
    F.role = KernelRole::F;
    F.x.assign(x_grid.begin(), x_grid.end());
    F.t.assign(t_grid.begin(), t_grid.end());
    F.values.resize(static_cast<Eigen::Index>(F.x.size()), static_cast<Eigen::Index>(F.t.size()));

    Memo P([&](double s) { return src.P(s); });
    Memo Q([&](double s) { return src.Q(s); });
    auto ft = [&](double x, double t) { return P(x + t) - P(x) - P(t) + Q(x - t) - Q(x) - Q(-t); };
    for (std::size_t i = 0; i < F.x.size(); ++i) {
        const double xp = F.x[i] + delta, xm = F.x[i] - delta;
        for (std::size_t j = 0; j < F.t.size(); ++j) {
            const double tp = F.t[j] + delta, tm = F.t[j] - delta;
            F.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                (ft(xp, tp) - ft(xp, tm) - ft(xm, tp) + ft(xm, tm)) / (4.0 * delta * delta);
        }
    }
    if (method_b) {
        KernelGrid B = build_F_direct(src, x_grid, t_grid);
        // F grows like e^{kappa |x + t|} to the left, so the gap is measured against max(1, |F|).
        Eigen::Index i = 0, j = 0;
        const double gap = (F.values - B.values)
                               .cwiseAbs()
                               .cwiseQuotient(B.values.cwiseAbs().cwiseMax(1.0))
                               .maxCoeff(&i, &j);
        if (gap > method_tol)
            throw MethodMismatch(fmt::format(
                "F methods A and B differ by {:.3g} at x = {:g}, t = {:g} (tolerance {:.3g})", gap,
                F.x[static_cast<std::size_t>(i)], F.t[static_cast<std::size_t>(j)], method_tol));
        return B;
    }
    return F;
}

KernelGrid build_F_direct(const SpectralKernel& src, std::span<const double> x_grid,
                          std::span<const double> t_grid) {
    grid_step(x_grid, t_grid);
    KernelGrid F;
    F.role = KernelRole::F;
    F.x.assign(x_grid.begin(), x_grid.end());
    F.t.assign(t_grid.begin(), t_grid.end());
    F.values.resize(static_cast<Eigen::Index>(F.x.size()), static_cast<Eigen::Index>(F.t.size()));
    Memo P2([&](double s) { return src.P2(s); });
    Memo Q2([&](double s) { return src.Q2(s); });
    for (std::size_t i = 0; i < F.x.size(); ++i)
        for (std::size_t j = 0; j < F.t.size(); ++j)
            F.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                P2(F.x[i] + F.t[j]) - Q2(F.x[i] - F.t[j]);
    return F;
}

KernelGrid build_F(const ScatteringData& d, std::span<const double> x_grid,
                   std::span<const double> t_grid, const KernelOptions& opts) {
    KernelOptions o = opts;
    double reach = 0.0;
    for (double v : x_grid) reach = std::max(reach, std::abs(v));
    double reach_t = 0.0;
    for (double v : t_grid) reach_t = std::max(reach_t, std::abs(v));
    o.s_max = std::max(o.s_max, reach + reach_t + 1.0);
    const SpectralKernel src(d, o);
    return build_F(src, x_grid, t_grid, o.method_b, o.method_tol);
}

namespace {

std::size_t node_index(const std::vector<double>& g, double x) {
    const double h = g.size() >= 2 ? g[1] - g[0] : 1.0;
    const double r = (x - g.front()) / h;
    const long long i = std::llround(r);
    if (i < 0 || i >= static_cast<long long>(g.size()) || std::abs(r - static_cast<double>(i)) > 1e-6)
        throw InvalidInput(fmt::format("x = {} is not a node of the kernel grid", x));
    return static_cast<std::size_t>(i);
}

void require_square(const KernelGrid& F) {
    if (F.x.size() != F.t.size()) throw InvalidInput("F must be sampled on a square grid");
    for (std::size_t i = 0; i < F.x.size(); ++i)
        if (std::abs(F.x[i] - F.t[i]) > 1e-9 * (1.0 + std::abs(F.x[i])))
            throw InvalidInput("F must use the same nodes in x and t");
}

// Trapezoid weight of node j on [x_i, x_last] (zero for a zero-length interval).
double trap_weight(std::size_t i, std::size_t j, std::size_t last, double h) {
    if (i == last) return 0.0;
    return (j == i || j == last) ? 0.5 * h : h;
}

}  // namespace

MarchenkoRow solve_marchenko_row(const KernelGrid& F, double x, double t_max,
                                 const MarchenkoOptions& opts) {
    require_square(F);
    const double h = F.step();
    const std::size_t i = node_index(F.x, x);
    std::size_t last = i;
    while (last + 1 < F.x.size() && F.x[last + 1] <= t_max + 1e-9 * h) ++last;
    const auto m = static_cast<Eigen::Index>(last - i + 1);
    const auto i0 = static_cast<Eigen::Index>(i);

    Eigen::VectorXd w(m);
    for (Eigen::Index b = 0; b < m; ++b)
        w(b) = trap_weight(i, i + static_cast<std::size_t>(b), last, h);
    Eigen::MatrixXd A = F.values.block(i0, i0, m, m).transpose() * w.asDiagonal();
    A.diagonal().array() += 1.0;
    const Eigen::VectorXd rhs = -F.values.block(i0, i0, 1, m).transpose();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const double rc = lu.rcond();
    MarchenkoRow row;
    row.x = F.x[i];
    row.condition = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    if (!(row.condition < opts.max_condition))
        throw IllConditioned(fmt::format("Marchenko system at x = {} has condition estimate {:.3g}",
                                         row.x, row.condition));
    const Eigen::VectorXd K = lu.solve(rhs);
    row.residual = (A * K - rhs).cwiseAbs().maxCoeff();
    row.t.assign(F.x.begin() + static_cast<std::ptrdiff_t>(i),
                 F.x.begin() + static_cast<std::ptrdiff_t>(last) + 1);
    row.K.assign(K.data(), K.data() + K.size());
    return row;
}

MarchenkoSolution solve_marchenko(const KernelGrid& F, double t_max, std::optional<double> x_last,
                                  const MarchenkoOptions& opts) {
    require_square(F);
    const double h = F.step();
    std::size_t last = 0;
    while (last + 1 < F.x.size() && F.x[last + 1] <= t_max + 1e-9 * h) ++last;
    const double xl = x_last.value_or(t_max);
    MarchenkoSolution sol;
    sol.K.role = KernelRole::K;
    sol.K.t.assign(F.x.begin(), F.x.begin() + static_cast<std::ptrdiff_t>(last) + 1);
    for (std::size_t i = 0; i <= last && F.x[i] <= xl + 1e-9 * h; ++i) sol.K.x.push_back(F.x[i]);
    sol.K.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sol.K.x.size()),
                                         static_cast<Eigen::Index>(sol.K.t.size()));
    for (std::size_t i = 0; i < sol.K.x.size(); ++i) {
        const MarchenkoRow row = solve_marchenko_row(F, F.x[i], t_max, opts);
        for (std::size_t j = 0; j < row.K.size(); ++j)
            sol.K.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i + j)) = row.K[j];
        sol.max_residual = std::max(sol.max_residual, row.residual);
        sol.max_condition = std::max(sol.max_condition, row.condition);
    }
    return sol;
}

DiagonalEstimate extrapolated_diagonal(const KernelGrid& F, double t_max, double x_last,
                                       int levels, const MarchenkoOptions& opts) {
    require_square(F);
    if (levels < 1) throw InvalidInput("levels must be at least 1");
    const double h = F.step();
    std::size_t n_x = 0;
    while (n_x < F.x.size() && F.x[n_x] <= x_last + 1e-9 * h) ++n_x;
    if (n_x == 0) throw InvalidInput("x_last lies below the grid");
    DiagonalEstimate est;
    est.x.assign(F.x.begin(), F.x.begin() + static_cast<std::ptrdiff_t>(n_x));
    // table[l][i]: level-l diagonal at fine node i.
    std::vector<std::vector<double>> table(static_cast<std::size_t>(levels),
                                           std::vector<double>(n_x, 0.0));
    for (int l = 0; l < levels; ++l) {
        const std::size_t stride = std::size_t{1} << l;
        for (std::size_t off = 0; off < stride && off < F.x.size(); ++off) {
            KernelGrid sub;
            sub.role = KernelRole::F;
            std::vector<Eigen::Index> idx;
            for (std::size_t i = off; i < F.x.size(); i += stride) idx.push_back(static_cast<Eigen::Index>(i));
            if (idx.size() < 2) throw InvalidInput("grid too short for the requested levels");
            for (auto i : idx) sub.x.push_back(F.x[static_cast<std::size_t>(i)]);
            sub.t = sub.x;
            sub.values = F.values(idx, idx);
            for (std::size_t c = 0; c < sub.x.size(); ++c) {
                const std::size_t i = off + c * stride;
                if (i >= n_x) break;
                const MarchenkoRow row = solve_marchenko_row(sub, sub.x[c], t_max, opts);
                table[static_cast<std::size_t>(l)][i] = row.K.front();
                est.max_residual = std::max(est.max_residual, row.residual);
                est.max_condition = std::max(est.max_condition, row.condition);
            }
        }
    }
    est.plain = table[0];
    // Romberg in h^2: R(l, m) = R(l, m-1) + (R(l, m-1) - R(l+1, m-1)) / (4^m - 1).
    for (int m = 1; m < levels; ++m) {
        const double f = std::pow(4.0, m) - 1.0;
        for (int l = 0; l + m < levels; ++l)
            for (std::size_t i = 0; i < n_x; ++i)
                table[static_cast<std::size_t>(l)][i] +=
                    (table[static_cast<std::size_t>(l)][i] - table[static_cast<std::size_t>(l + 1)][i]) / f;
    }
    est.extrapolated = table[0];
    return est;
}

Eigen::MatrixXd operator_matrix(const KernelGrid& k) {
    if (k.x.size() != k.t.size()) throw InvalidInput("operator matrix needs a complete triangle");
    const std::size_t n = k.x.size();
    const std::size_t last = n - 1;
    const double h = k.step();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        M(ii, ii) = std::expm1(trap_weight(i, i, last, h) * k.values(ii, ii));
        for (std::size_t j = i + 1; j < n; ++j)
            M(ii, static_cast<Eigen::Index>(j)) =
                trap_weight(i, j, last, h) * k.values(ii, static_cast<Eigen::Index>(j));
    }
    return M;
}

KernelGrid kernel_inverse_pair(const KernelGrid& src) {
    if (src.role == KernelRole::F) throw InvalidInput("kernel_inverse_pair expects role K or H");
    const std::size_t n = src.x.size();
    if (n != src.t.size() || n < 2) throw InvalidInput("kernel_inverse_pair needs a complete triangle");
    const std::size_t last = n - 1;
    const double h = src.step();
    const Eigen::MatrixXd Kt = operator_matrix(src);
    const auto N = static_cast<Eigen::Index>(n);
    // Back substitution from the diagonal outwards: (I + K~)^{-1} is upper triangular.
    Eigen::MatrixXd U = Kt;
    U.diagonal().array() += 1.0;
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(N, N);
    for (Eigen::Index i = N - 1; i >= 0; --i) {
        V(i, i) = 1.0 / U(i, i);
        for (Eigen::Index j = i + 1; j < N; ++j) {
            const double acc = U.row(i).segment(i + 1, j - i).dot(V.col(j).segment(i + 1, j - i));
            V(i, j) = -acc / U(i, i);
        }
    }
    KernelGrid out;
    out.role = src.role == KernelRole::K ? KernelRole::H : KernelRole::K;
    out.x = src.x;
    out.t = src.t;
    out.values = Eigen::MatrixXd::Zero(N, N);
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        out.values(ii, ii) = -src.values(ii, ii);
        for (std::size_t j = i + 1; j < n; ++j)
            out.values(ii, static_cast<Eigen::Index>(j)) =
                V(ii, static_cast<Eigen::Index>(j)) / trap_weight(i, j, last, h);
    }
    return out;
}

namespace {

// Signed defects on the H grid: upper(i, j) for i <= j and lower(i, j) for j <= i; entries
// outside [lo, hi] are left at zero.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> factorization_defects(const KernelGrid& F,
                                                                  const KernelGrid& H, double lo,
                                                                  double hi) {
    const std::size_t n = H.x.size();
    if (n != H.t.size()) throw InvalidInput("factorization check needs a complete H triangle");
    if (F.x.size() < n || F.t.size() < n) throw InvalidInput("F grid smaller than H grid");
    const std::size_t last = n - 1;
    const double h = H.step();
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(N, N), low = Eigen::MatrixXd::Zero(N, N);
    for (std::size_t i = 0; i < n; ++i) {
        if (H.x[i] < lo || H.x[i] > hi) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (H.t[j] < lo || H.t[j] > hi) continue;
            const std::size_t from = std::max(i, j);
            double integral = 0.0;
            for (std::size_t l = from; l < n; ++l)
                integral += trap_weight(from, l, last, h) *
                            H.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) *
                            H.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            if (i <= j) up(ii, jj) = F.values(ii, jj) - H.values(ii, jj) - integral;
            if (j <= i) low(ii, jj) = F.values(ii, jj) - H.values(jj, ii) - integral;
        }
    }
    return {up, low};
}

KernelGrid subsample(const KernelGrid& F, std::size_t stride) {
    KernelGrid sub;
    sub.role = F.role;
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < F.x.size(); i += stride) {
        idx.push_back(static_cast<Eigen::Index>(i));
        sub.x.push_back(F.x[i]);
    }
    sub.t = sub.x;
    sub.values = F.values(idx, idx);
    return sub;
}

}  // namespace

FactorizationReport factorization_residual(const KernelGrid& F, const KernelGrid& H, double lo,
                                           double hi) {
    const auto [up, low] = factorization_defects(F, H, lo, hi);
    return {up.cwiseAbs().maxCoeff(), low.cwiseAbs().maxCoeff()};
}

FactorizationReport extrapolated_factorization_residual(const KernelGrid& F, double t_max,
                                                        int levels, double lo, double hi,
                                                        const MarchenkoOptions& opts) {
    require_square(F);
    if (levels < 1) throw InvalidInput("levels must be at least 1");
    const std::size_t coarse = std::size_t{1} << (levels - 1);
    std::vector<Eigen::MatrixXd> up, low;
    for (int l = 0; l < levels; ++l) {
        const std::size_t stride = std::size_t{1} << l;
        const KernelGrid sub = subsample(F, stride);
        const MarchenkoSolution sol = solve_marchenko(sub, t_max, std::nullopt, opts);
        const KernelGrid H = kernel_inverse_pair(sol.K);
        auto [u, w] = factorization_defects(sub, H, lo, hi);
        // Restrict to the coarsest nodes.
        const std::size_t step = coarse / stride;
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i * step < static_cast<std::size_t>(u.rows()); ++i)
            idx.push_back(static_cast<Eigen::Index>(i * step));
        up.push_back(u(idx, idx));
        low.push_back(w(idx, idx));
    }
    const std::size_t m = static_cast<std::size_t>(up.back().rows());
    for (auto* v : {&up, &low})
        for (auto& mat : *v) mat.conservativeResize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    // The exact-inverse diagonal weight e^{a} - 1 brings odd powers, so eliminate h^2, h^3, ...
    for (int k = 1; k < levels; ++k) {
        const double f = std::pow(2.0, k + 1) - 1.0;
        for (int l = 0; l + k < levels; ++l) {
            up[static_cast<std::size_t>(l)] += (up[static_cast<std::size_t>(l)] - up[static_cast<std::size_t>(l + 1)]) / f;
            low[static_cast<std::size_t>(l)] += (low[static_cast<std::size_t>(l)] - low[static_cast<std::size_t>(l + 1)]) / f;
        }
    }
    return {up.front().cwiseAbs().maxCoeff(), low.front().cwiseAbs().maxCoeff()};
}

std::vector<double> recover_q(std::span<const double> k_diag, double step, double a_plus) {
    const std::size_t n = k_diag.size();
    if (n < 3) throw InvalidInput("recover_q needs at least three diagonal samples");
    std::vector<double> q(n);
    for (std::size_t i = 1; i + 1 < n; ++i)
        q[i] = a_plus - (k_diag[i + 1] - k_diag[i - 1]) / step;
    q[0] = a_plus - (-3.0 * k_diag[0] + 4.0 * k_diag[1] - k_diag[2]) / step;
    q[n - 1] = a_plus - (3.0 * k_diag[n - 1] - 4.0 * k_diag[n - 2] + k_diag[n - 3]) / step;
    return q;
}

double estimate_a_plus(const ScatteringData& d) {
    const auto& s = d.bands[1].samples;
    if (s.empty()) throw InvalidInput("estimate_a_plus needs band-2 samples");
    const double mu2 = d.mu2();
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const SSample& smp : s) {
        const double S11 = smp.S(0, 0).real();
        if (!(S11 > 0.0)) continue;
        const double y = smp.mu - 1.0 / (4.0 * S11 * S11);
        const double z = smp.mu - mu2 + 1.0;
        const double w = 1.0 / (z * z * z);
        const double x = 1.0 / z;
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    if (!(sw > 0.0)) throw InvalidInput("no positive S11 samples above mu2");
    const double det = sw * sxx - sx * sx;
    if (std::abs(det) < 1e-14 * sw * sxx) return sy / sw;
    return (sxx * sy - sx * sxy) / det;
}

BoundReport kernel_bound_check(const KernelGrid& K, const KernelGrid& H, const Potential& p,
                               const KernelGrid* F, const BoundCheckOptions& opts) {
    BoundReport rep;
    const double h = K.t.size() >= 2 ? K.t[1] - K.t[0] : 1.0;
    const double origin = K.t.front();
    // h+ and h1+ on the half-step lattice origin + k h/2.
    std::unordered_map<long long, std::pair<double, double>> cache;
    auto hh = [&](double u) {
        const long long key = std::llround((u - origin) / (0.5 * h));
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const auto v = std::make_pair(h_plus(p, u), h1_plus(p, u));
        cache.emplace(key, v);
        return v;
    };
    auto check = [&](const KernelGrid& g, bool is_h) {
        for (std::size_t i = 0; i < g.x.size(); ++i) {
            if (g.x[i] > opts.x_max) continue;
            const auto [hx, h1x] = hh(g.x[i]);
            (void)hx;
            for (std::size_t j = 0; j < g.t.size(); ++j) {
                if (g.t[j] < g.x[i] - 1e-12) continue;
                const double u = 0.5 * (g.x[i] + g.t[j]);
                const auto [hu, h1u] = hh(u);
                const double e = h1x - h1u;
                const double bound = is_h ? 0.5 * hu * std::exp(e + std::expm1(e))
                                          : 0.5 * hu * std::exp(e);
                const double v = g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (bound > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, std::abs(v) / bound);
                if (std::abs(v) > (1.0 + opts.slack) * bound + opts.abs_floor)
                    rep.violations.push_back({g.role, g.x[i], g.t[j], v, bound});
            }
        }
    };
    check(K, false);
    check(H, true);
    if (F != nullptr && F->x.size() >= 2) {
        const double hf = F->x[1] - F->x[0];
        const double f0 = F->x.front() + F->t.front();
        const std::size_t nk = F->x.size() + F->t.size() - 1;
        std::vector<double> mx(nk, 0.0);
        for (std::size_t i = 0; i < F->x.size(); ++i)
            for (std::size_t j = 0; j < F->t.size(); ++j) {
                const auto k = static_cast<std::size_t>(
                    std::llround((F->x[i] + F->t[j] - f0) / hf));
                mx[k] = std::max(mx[k], std::abs(F->values(static_cast<Eigen::Index>(i),
                                                           static_cast<Eigen::Index>(j))));
            }
        for (std::size_t k = nk; k-- > 1;) mx[k - 1] = std::max(mx[k - 1], mx[k]);
        for (std::size_t k = 0; k < nk; ++k) {
            rep.sigma_u.push_back(0.5 * (f0 + hf * static_cast<double>(k)));
            rep.sigma.push_back(mx[k]);
        }
        for (std::size_t k = 0; k + 1 < nk; ++k)
            rep.sigma_integral += 0.25 * hf * (mx[k] + mx[k + 1]);
    }
    return rep;
}

TMaxChoice choose_t_max(const SpectralKernel& src, double x_min, double x_max, double step,
                        double strip_tol, double max_extent, double scan_extent) {
    const double s_lo = x_min + x_max;
    if (src.s_max() < std::abs(s_lo) + scan_extent - 1e-9)
        throw InvalidInput(fmt::format("kernel tables reach |s| <= {} but the t_max scan needs {}",
                                       src.s_max(), std::abs(s_lo) + scan_extent));
    const int n = static_cast<int>(std::ceil(scan_extent / step));
    std::vector<double> Pv(static_cast<std::size_t>(n) + 3);
    for (int m = 0; m < n + 3; ++m) Pv[static_cast<std::size_t>(m)] = src.P(s_lo + (m - 1) * step);
    std::vector<double> Fv(static_cast<std::size_t>(n) + 1);
    for (int m = 0; m <= n; ++m) {
        const auto u = static_cast<std::size_t>(m);
        Fv[u] = (Pv[u + 2] - 2.0 * Pv[u + 1] + Pv[u]) / (step * step);
    }
    TMaxChoice c;
    const int far = std::max(1, static_cast<int>(std::ceil(10.0 / step)));
    for (int m = std::max(0, n - far); m <= n; ++m)
        c.noise_floor = std::max(c.noise_floor, std::abs(Fv[static_cast<std::size_t>(m)]));
    c.threshold = std::max(strip_tol, 4.0 * c.noise_floor);
    int cut = -1;
    for (int m = 0; m <= n; ++m)
        if (std::abs(Fv[static_cast<std::size_t>(m)]) > c.threshold) cut = m;
    const double s_cut = s_lo + (cut + 1) * step;
    double t_max = std::clamp(s_cut - x_min, x_max, x_max + max_extent);
    // Snap onto the grid through x_min.
    t_max = x_min + step * std::ceil((t_max - x_min) / step - 1e-9);
    c.t_max = t_max;
    return c;
}

std::string kernel_csv(const KernelGrid& k) {
    std::string out = "x,t,value\n";
    for (std::size_t i = 0; i < k.x.size(); ++i)
        for (std::size_t j = 0; j < k.t.size(); ++j)
            out += fmt::format("{:.15g},{:.15g},{:.15g}\n", k.x[i], k.t[j],
                               k.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    return out;
}

}  // namespace stepscat
