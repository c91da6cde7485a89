#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "stepscat/jost.hpp"
#include "stepscat/potential.hpp"

namespace stepscat {

/// Coefficients of a bounded system phi_j = (2 pi)^(-1/2) sum_nu sqrt|lambda_nu'| A_{j nu} y_nu
/// on each side. Column 0 of A_minus is channel nu = 2 - r_minus.
struct ConnectionMatrices {
    double mu = 0.0;
    int k = 0;
    int r_plus = 0;
    int r_minus = 0;
    Eigen::MatrixXcd A_plus;
    Eigen::MatrixXcd A_minus;
    Eigen::MatrixXcd B;
    Eigen::MatrixXcd C;
    /// |lambda_nu'^+(mu)| for nu = 1 .. 1 + r_plus.
    Eigen::VectorXd speed_plus;
};

struct SpectralOptions {
    JostOptions jost;
    /// Relative singularity threshold for the matching system.
    double degeneracy_tol = 1e-12;
    double unitarity_tol = 1e-8;
};

/// Default distance kept from mu1 and mu2: 1e-4 (1 + |mu2 - mu1|).
double band_edge_epsilon(const Potential& p);

/// Number of bounded solutions at mu: 0 below mu1, 1 in (mu1, mu2), 2 above mu2.
int band_of(const Potential& p, double mu);

ConnectionMatrices connection_matrices(const Potential& p, double mu,
                                       const SpectralOptions& opts = {});

/// S^+ = M^* M with M_{l nu} = sqrt|lambda_nu'^+| A^+_{l nu}; Hermitian by construction.
Eigen::MatrixXcd scattering_matrix(const ConnectionMatrices& c);
Eigen::MatrixXcd scattering_matrix(const Potential& p, double mu, const SpectralOptions& opts = {});

/// A -> U A, B -> U B, C -> U C. Throws NotUnitary when U is not unitary to `tol`.
ConnectionMatrices unitary_mix(const ConnectionMatrices& c, const Eigen::MatrixXcd& U,
                               double tol = 1e-10);

struct BoundStateOptions {
    JostOptions jost;
    double bisect_tol = 1e-13;
    /// Scan stops this far below mu1; defaults to band_edge_epsilon when negative.
    double top_gap = -1.0;
};

/// W(mu) = y1^+ (y2^-)' - (y1^+)' y2^- at x = 0.
double bound_state_wronskian(const Potential& p, double mu, const JostOptions& opts = {});

/// Number of eigenvalues below mu (< mu1), from the Pruefer angles of the decaying solutions.
int eigenvalue_count_below(const Potential& p, double mu, const JostOptions& opts = {});

std::vector<double> find_bound_states(const Potential& p, double mu_floor, double scan_step,
                                      const BoundStateOptions& opts = {});

/// N^+ = 1 / ||y1^+(., mu)||^2. Throws NotABoundState when the normalized Wronskian at mu
/// exceeds `tol`.
double norming_constant(const Potential& p, double mu, const JostOptions& opts = {},
                        double tol = 1e-7);

/// Normalized eigenfunction sqrt(N) y1^+ on the grid; the left half comes from y2^-.
std::vector<double> bound_eigenfunction(const Potential& p, double mu, double norming,
                                        std::span<const double> x_grid,
                                        const JostOptions& opts = {});

struct BoundState {
    double mu = 0.0;
    double norming = 0.0;
};

struct SSample {
    double mu = 0.0;
    Eigen::MatrixXcd S;
};

struct Band {
    Interval interval;
    std::vector<SSample> samples;
};

/// Right scattering data: bound states with norming constants and S^+ samples on both bands.
/// Band 0 is (mu1, mu2) (empty when a^- = a^+), band 1 is (mu2, mu_max].
struct ScatteringData {
    double a_minus = 0.0;
    double a_plus = 0.0;
    std::vector<BoundState> bound_states;
    std::array<Band, 2> bands;

    double mu1() const { return std::min(a_minus, a_plus); }
    double mu2() const { return std::max(a_minus, a_plus); }
    double mu_max() const;
};

struct BandGridOptions {
    int samples_per_band = 200;
    /// Default mu2 + 100.
    double mu_max = 0.0;
    /// Wavenumber where band-2 spacing switches from uniform to geometric growth.
    double knee = 2.0;
    /// Defaults to band_edge_epsilon.
    double edge_eps = -1.0;
};

struct BandGrids {
    std::vector<double> band1;
    std::vector<double> band2;
};

/// Band 1: midpoints of a uniform grid in theta with mu = mu1 + (mu2 - mu1) sin^2(theta),
/// clustered at both edges. Band 2: mu = mu2 + k^2 with k = knee sinh(s asinh(k_max/knee)),
/// s uniform in (0, 1], ending at mu_max.
BandGrids make_band_grids(const Potential& p, const BandGridOptions& opts = {});

struct ForwardOptions {
    SpectralOptions spectral;
    /// Defaults to lower_bound(p) - 1.
    double mu_floor = 0.0;
    bool mu_floor_set = false;
    double scan_step = 0.05;
};

ScatteringData forward_scatter(const Potential& p, const BandGrids& grids,
                               const ForwardOptions& opts = {});

struct ParsevalReport {
    double norm_sq = 0.0;
    double discrete = 0.0;
    double continuous = 0.0;
    double residual = 0.0;
};

struct ParsevalOptions {
    JostOptions jost;
    /// Gauss-Legendre panels per band (in the band variable) and nodes per panel.
    int panels = 48;
    int nodes = 8;
};

/// Generalized Parseval check for a real f sampled on a uniform x-grid (compact support).
/// Bound-state terms use the norming constants of `d`; the continuous part is integrated
/// over (mu1, d.mu_max()) on Gauss nodes in the band variables, with a fresh bounded
/// system at each node.
ParsevalReport parseval_report(const Potential& p, const ScatteringData& d,
                               std::span<const double> x_grid, std::span<const double> f,
                               const ParsevalOptions& opts = {});

double parseval_residual(const Potential& p, const ScatteringData& d,
                         std::span<const double> x_grid, std::span<const double> f,
                         const ParsevalOptions& opts = {});

/// Hermitian defect, smallest eigenvalue and numerical rank of one S^+ sample.
struct SStructure {
    double hermitian_defect = 0.0;
    double min_eigenvalue = 0.0;
    int rank = 0;
};

SStructure s_structure(const Eigen::MatrixXcd& S, double rank_tol = 1e-8);

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
};
const GaussRule& gauss_legendre(int n);

}  // namespace stepscat
