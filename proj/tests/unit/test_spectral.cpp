#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "stepscat/errors.hpp"
#include "stepscat/marchenko.hpp"
#include "stepscat/spectral.hpp"

using namespace stepscat;

namespace {

const Potential kWell(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0});
const Potential kGauss(0.0, 2.0, deviation::Gaussian{-3.0, 0.5, 1.0});

ScatteringData small_data(const Potential& p, int n = 32) {
    BandGridOptions g;
    g.samples_per_band = n;
    g.mu_max = p.mu2() + 400.0;
    return forward_scatter(p, make_band_grids(p, g));
}

}  // namespace

TEST(Spectral, BandOf) {
    EXPECT_EQ(band_of(kWell, -1.0), 0);
    EXPECT_EQ(band_of(kWell, 1.0), 1);
    EXPECT_EQ(band_of(kWell, 3.0), 2);
}

TEST(Spectral, StepMatchesPlaneWaveOracleBothOrientations) {
    for (auto [am, ap] : {std::pair{0.0, 3.0}, {3.0, 0.0}, {-1.0, 2.5}})
        for (double mu : {0.3, 1.1, 2.9, 3.5, 10.0, 250.0}) {
            if (mu <= std::min(am, ap) + 1e-3) continue;
            const Eigen::MatrixXcd S = scattering_matrix(Potential::step(am, ap), mu);
            const Eigen::MatrixXcd R = oracle::step_s_matrix(am, ap, mu);
            ASSERT_EQ(S.rows(), R.rows()) << am << " " << ap << " " << mu;
            EXPECT_LT((S - R).cwiseAbs().maxCoeff(), 1e-9) << am << " " << ap << " " << mu;
        }
}

TEST(Spectral, ConnectionMatricesAreUnitary) {
    for (double mu : {0.4, 1.7, 3.0, 60.0}) {
        const ConnectionMatrices c = connection_matrices(kGauss, mu);
        const auto n = c.k;
        const Eigen::MatrixXcd Id = Eigen::MatrixXcd::Identity(n, n);
        EXPECT_LT((c.B * c.B.adjoint() - Id).cwiseAbs().maxCoeff(), 1e-9) << mu;
        EXPECT_LT((c.C * c.C.adjoint() - Id).cwiseAbs().maxCoeff(), 1e-9) << mu;
        EXPECT_EQ(c.r_plus, mu > 2.0 ? 1 : 0);
        EXPECT_EQ(c.r_minus, 1);
    }
}

TEST(Spectral, UnitaryMixRejectsNonUnitary) {
    const ConnectionMatrices c = connection_matrices(kWell, 5.0);
    Eigen::MatrixXcd U = Eigen::MatrixXcd::Identity(2, 2);
    U(0, 1) = 0.1;
    EXPECT_THROW(unitary_mix(c, U), NotUnitary);
}

TEST(Spectral, TransmissionIdentityInUpperBand) {
    const ScatteringData d = small_data(kGauss);
    for (const SSample& s : d.bands[1].samples)
        EXPECT_NEAR((2.0 * std::sqrt(s.mu - 2.0) * s.S(0, 0)).real(), 1.0, 1e-7) << s.mu;
}

TEST(Spectral, StructureOfEverySample) {
    for (const Potential* p : {&kWell, &kGauss}) {
        const ScatteringData d = small_data(*p);
        for (std::size_t b = 0; b < 2; ++b)
            for (const SSample& s : d.bands[b].samples) {
                const SStructure st = s_structure(s.S);
                EXPECT_LE(st.hermitian_defect, 1e-12);
                EXPECT_GE(st.min_eigenvalue, -1e-12);
                EXPECT_LE(st.rank, static_cast<int>(b + 1));
            }
    }
}

TEST(Spectral, StructureFlagsBrokenSymmetry) {
    Eigen::MatrixXcd S(2, 2);
    S << 1.0, 0.5, 0.2, 1.0;
    EXPECT_NEAR(s_structure(S).hermitian_defect, 0.3, 1e-15);
}

TEST(BandGrids, OrderedInsideAndEndingAtMuMax) {
    BandGridOptions g;
    g.samples_per_band = 50;
    g.mu_max = 2.0 + 900.0;
    const BandGrids grids = make_band_grids(kWell, g);
    ASSERT_FALSE(grids.band1.empty());
    ASSERT_FALSE(grids.band2.empty());
    EXPECT_TRUE(std::is_sorted(grids.band1.begin(), grids.band1.end()));
    EXPECT_TRUE(std::is_sorted(grids.band2.begin(), grids.band2.end()));
    EXPECT_GT(grids.band1.front(), 0.0);
    EXPECT_LT(grids.band1.back(), 2.0);
    EXPECT_GT(grids.band2.front(), 2.0);
    EXPECT_NEAR(grids.band2.back(), g.mu_max, 1e-9);
    EXPECT_LE(static_cast<int>(grids.band1.size()), g.samples_per_band);
}

TEST(BandGrids, EqualAsymptotesHaveNoLowerBand) {
    const BandGrids grids = make_band_grids(Potential::free(1.0));
    EXPECT_TRUE(grids.band1.empty());
    EXPECT_FALSE(grids.band2.empty());
}

TEST(BoundStates, WellOnStepMatchesTranscendentalRoots) {
    const oracle::WellOnStep w;
    const std::vector<double> ref = w.eigenvalues();
    const std::vector<double> got = find_bound_states(kWell, -7.0, 0.05);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_NEAR(got[i], ref[i], 1e-9);
        EXPECT_NEAR(norming_constant(kWell, got[i]), w.norming(ref[i]), 1e-7);
    }
}

TEST(BoundStates, DeeperWellHasMoreLevels) {
    const Potential deep(0.0, 2.0, deviation::Square{0.0, 1.0, -40.0});
    const oracle::WellOnStep w{2.0, -40.0};
    const std::vector<double> ref = w.eigenvalues();
    ASSERT_GE(ref.size(), 2u);
    const std::vector<double> got = find_bound_states(deep, -39.0, 0.05);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-9);
    EXPECT_EQ(eigenvalue_count_below(deep, -1e-3), static_cast<int>(ref.size()));
    EXPECT_EQ(eigenvalue_count_below(deep, ref[0] - 0.1), 0);
}

TEST(BoundStates, WronskianChangesSignAtEigenvalue) {
    const double mu = oracle::WellOnStep{}.eigenvalues().front();
    EXPECT_LT(bound_state_wronskian(kWell, mu - 0.05) * bound_state_wronskian(kWell, mu + 0.05), 0.0);
    EXPECT_THROW(norming_constant(kWell, mu + 0.3), NotABoundState);
}

TEST(BoundStates, EigenfunctionIsNormalised) {
    const double mu = oracle::WellOnStep{}.eigenvalues().front();
    const double N = norming_constant(kWell, mu);
    const std::vector<double> xs = uniform_grid(-12.0, 12.0, 0.005);
    const std::vector<double> psi = bound_eigenfunction(kWell, mu, N, xs);
    double norm = 0.0;
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) norm += 0.5 * 0.005 * (psi[i] * psi[i] + psi[i + 1] * psi[i + 1]);
    EXPECT_NEAR(norm, 1.0, 1e-4);
}

TEST(BoundStates, BarrierAndFreeHaveNone) {
    EXPECT_TRUE(small_data(Potential(0.0, 2.0, deviation::Gaussian{3.0, 0.0, 1.0})).bound_states.empty());
    EXPECT_TRUE(small_data(Potential::free()).bound_states.empty());
}

TEST(Parseval, FreeGaussianProbe) {
    const Potential p = Potential::free();
    const ScatteringData d = small_data(p, 64);
    const std::vector<double> xs = uniform_grid(-6.0, 6.0, 0.01);
    std::vector<double> f;
    for (double x : xs) f.push_back(std::exp(-x * x));
    const ParsevalReport r = parseval_report(p, d, xs, f);
    EXPECT_NEAR(r.norm_sq, std::sqrt(M_PI / 2.0), 1e-6);
    EXPECT_LT(r.residual, 1e-3);
}

TEST(Quadrature, GaussLegendreIntegratesPolynomials) {
    const GaussRule& g = gauss_legendre(8);
    double s = 0.0;
    for (std::size_t i = 0; i < g.x.size(); ++i) s += g.w[i] * std::pow(g.x[i], 14);
    EXPECT_NEAR(s, 2.0 / 15.0, 1e-14);
}
