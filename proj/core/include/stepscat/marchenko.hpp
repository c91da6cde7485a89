#pragma once

#include <array>
#include <complex>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stepscat/potential.hpp"
#include "stepscat/spectral.hpp"

namespace stepscat {

enum class KernelRole { F, K, H };

/// A real kernel sampled on an (x, t) grid; values(i, j) belongs to (x[i], t[j]).
/// For roles K and H only entries with t >= x are meaningful (the rest are zero).
struct KernelGrid {
    KernelRole role = KernelRole::F;
    std::vector<double> x;
    std::vector<double> t;
    Eigen::MatrixXd values;

    double step() const;
};

/// min(|x|, |t|) when x t >= 0, else 0.
double omega(double x, double t);

struct KernelOptions {
    /// Samples with mu above this are ignored; <= 0 keeps all of them.
    double mu_max = 0.0;
    /// Largest |argument| of the one-dimensional tables; grows automatically in build_F.
    double s_max = 0.0;
    /// Truncation tail (in F units) above which TailTooShort is raised.
    double tail_tol = 2e-2;
    /// Correct the truncated k-integral with a fitted c2/k^2 + c3/k^3 + c4/k^4 tail when
    /// the top samples follow that law.
    bool tail_model = true;
    bool method_b = false;
    double method_tol = 5e-4;
    /// Filon step in k for method B.
    double filon_step = 5e-3;
};

struct TailInfo {
    double k_end = 0.0;
    double estimate = 0.0;  ///< truncation error estimate in F units after any correction
    double decay_power = 2.0;
    bool model_applied = false;
    std::array<std::complex<double>, 3> coeffs{};  ///< c2, c3, c4
};

/// Quadrature representation of the scattering-data integral. With
/// R(k, s) = (e^{iks} - 1 - iks)/k^2,
///   Ftilde(x, t) = P(x+t) - P(x) - P(t) + Q(x-t) - Q(x) - Q(-t)
/// where P collects bound states, the evanescent band and the reflection entry, and Q the
/// deviation of the diagonal entries from their free value; the free diagonal background
/// integrates to omega exactly and cancels the subtracted omega term.
class SpectralKernel {
public:
    SpectralKernel(const ScatteringData& d, const KernelOptions& opts = {});
    ~SpectralKernel();
    SpectralKernel(SpectralKernel&&) noexcept;
    SpectralKernel& operator=(SpectralKernel&&) noexcept;

    double P(double s) const;
    double Q(double s) const;
    /// Second derivatives evaluated directly (method B).
    double P2(double s) const;
    double Q2(double s) const;

    double f_tilde(double x, double t) const;
    /// Mixed central difference of f_tilde with half-step delta (method A).
    double f_mixed(double x, double t, double delta) const;
    /// Direct evaluation of F (method B).
    double f_direct(double x, double t) const;

    const TailInfo& tail() const;
    double s_max() const;
    double a_plus() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Ftilde(x, t) at one point.
double build_F_tilde(const ScatteringData& d, double x, double t, const KernelOptions& opts = {});

/// Literal evaluation of the continuous integral in Ftilde (all matrix entries, no
/// cancellation against omega) on Gauss nodes, plus the analytic free-diagonal tail beyond
/// the last sample. For free data this reproduces omega(x, t).
double literal_spectral_integral(const ScatteringData& d, double x, double t);

/// F on uniform grids by method A. With opts.method_b the result comes from method B instead,
/// after checking |A - B| <= opts.method_tol max(1, |B|) entrywise (MethodMismatch otherwise).
KernelGrid build_F(const ScatteringData& d, std::span<const double> x_grid,
                   std::span<const double> t_grid, const KernelOptions& opts = {});
KernelGrid build_F(const SpectralKernel& src, std::span<const double> x_grid,
                   std::span<const double> t_grid, bool method_b = false, double method_tol = 5e-4);
/// Method B only.
KernelGrid build_F_direct(const SpectralKernel& src, std::span<const double> x_grid,
                          std::span<const double> t_grid);

struct MarchenkoRow {
    double x = 0.0;
    std::vector<double> t;
    std::vector<double> K;
    double residual = 0.0;
    double condition = 0.0;
};

struct MarchenkoOptions {
    double max_condition = 1e8;
};

/// K^+(x, .) on [x, t_max] from F(x,t) + K(t) + int_x^{t_max} K(xi) F(xi,t) dxi = 0 with
/// trapezoid weights. F must be square on one uniform grid containing x.
MarchenkoRow solve_marchenko_row(const KernelGrid& F, double x, double t_max,
                                 const MarchenkoOptions& opts = {});

struct MarchenkoSolution {
    KernelGrid K;
    double max_residual = 0.0;
    double max_condition = 0.0;
};

/// Rows for every grid node x <= x_last (all nodes when x_last is omitted).
MarchenkoSolution solve_marchenko(const KernelGrid& F, double t_max,
                                  std::optional<double> x_last = std::nullopt,
                                  const MarchenkoOptions& opts = {});

/// K(x, x) with the trapezoid error removed by Richardson extrapolation. Level l solves the
/// system on every 2^l-th node of F (all offsets, so each fine node gets a value per level);
/// `levels` = 1 returns the plain solve.
struct DiagonalEstimate {
    std::vector<double> x;
    std::vector<double> plain;         ///< K(x, x) on the full grid
    std::vector<double> extrapolated;  ///< Romberg combination over the levels
    double max_residual = 0.0;
    double max_condition = 0.0;
};
DiagonalEstimate extrapolated_diagonal(const KernelGrid& F, double t_max, double x_last,
                                       int levels = 3, const MarchenkoOptions& opts = {});

/// Discrete inverse of a triangular kernel: (I + K)(I + H) = I for the trapezoid operator
/// matrices, marched outwards from the diagonal. Diagonal entries use e^{h k/2} - 1 as
/// their matrix weight so that H(x, x) = -K(x, x) holds exactly.
KernelGrid kernel_inverse_pair(const KernelGrid& src);

/// Trapezoid operator matrix of a triangular kernel (the representation used above).
Eigen::MatrixXd operator_matrix(const KernelGrid& k);

struct FactorizationReport {
    double upper = 0.0;  ///< max over x <= t of |F - H(x,t) - int_t H(x,.)H(t,.)|
    double lower = 0.0;  ///< the mirrored identity over t <= x
};

/// Defect of F = H + int H H on the common square grid restricted to x, t in [lo, hi].
FactorizationReport factorization_residual(const KernelGrid& F, const KernelGrid& H,
                                           double lo = -1e300, double hi = 1e300);

/// Factorization defect with the quadrature error extrapolated away: K and H are recomputed on
/// every 2^l-th node for l < levels, the signed defects are extrapolated in h^2, h^3, ... on the
/// common nodes, and the maxima over [lo, hi] are reported.
FactorizationReport extrapolated_factorization_residual(const KernelGrid& F, double t_max,
                                                        int levels, double lo, double hi,
                                                        const MarchenkoOptions& opts = {});

/// q = a_plus - 2 d/dx K(x, x) by central differences; second-order one-sided at the ends.
std::vector<double> recover_q(std::span<const double> k_diag, double step, double a_plus);

/// Weighted least-squares fit of mu - 1/(4 S11^2) = a + b/(mu - mu2 + 1) over band-2 samples,
/// weights (mu - mu2 + 1)^{-3}; returns a.
double estimate_a_plus(const ScatteringData& d);

struct BoundViolation {
    KernelRole role;
    double x = 0.0;
    double t = 0.0;
    double value = 0.0;
    double bound = 0.0;
};

struct BoundReport {
    std::vector<BoundViolation> violations;
    double worst_ratio = 0.0;  ///< max |kernel| / bound over entries with a nonzero bound
    /// Decreasing majorant of |F| as a function of (x + t)/2 on the F grid, if given.
    std::vector<double> sigma_u;
    std::vector<double> sigma;
    double sigma_integral = 0.0;
};

struct BoundCheckOptions {
    double slack = 0.05;
    double abs_floor = 1e-6;
    double x_max = 1e300;  ///< only rows with x <= x_max are checked
};

BoundReport kernel_bound_check(const KernelGrid& K, const KernelGrid& H, const Potential& p,
                               const KernelGrid* F = nullptr, const BoundCheckOptions& opts = {});

/// Smallest t_max (on the grid step) such that |F(x, t)| stays below `strip_tol`, or below
/// four times the noise floor measured at the far end of the scan, for x >= x_min and
/// t >= t_max. Capped at x_max + max_extent. `src` must cover |s| up to |x_min + x_max| +
/// scan_extent.
struct TMaxChoice {
    double t_max = 0.0;
    double threshold = 0.0;
    double noise_floor = 0.0;
};
TMaxChoice choose_t_max(const SpectralKernel& src, double x_min, double x_max, double step,
                        double strip_tol = 1e-8, double max_extent = 40.0,
                        double scan_extent = 60.0);

/// Rows "x,t,value" with 15 significant digits.
std::string kernel_csv(const KernelGrid& k);

std::vector<double> uniform_grid(double lo, double hi, double step);

}  // namespace stepscat
