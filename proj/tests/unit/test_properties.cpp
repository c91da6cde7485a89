// Randomised invariants. Every generator is a seeded std::mt19937 so failures replay.
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "stepscat/io.hpp"
#include "stepscat/marchenko.hpp"
#include "stepscat/spectral.hpp"

using namespace stepscat;

namespace {

double uniform(std::mt19937& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Potential random_gaussian(std::mt19937& rng) {
    const double am = uniform(rng, -1.0, 1.0);
    double ap = uniform(rng, -1.0, 3.0);
    if (std::abs(ap - am) < 0.2) ap = am + 0.5;
    return Potential(am, ap, deviation::Gaussian{uniform(rng, -3.0, 2.0), uniform(rng, -1.0, 1.0),
                                                 uniform(rng, 0.4, 1.2)});
}

ScatteringData sampled(const Potential& p, int n) {
    BandGridOptions g;
    g.samples_per_band = n;
    g.mu_max = p.mu2() + 400.0;
    return forward_scatter(p, make_band_grids(p, g));
}

}  // namespace

TEST(Property, RandomStepsMatchPlaneWaves) {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const double am = uniform(rng, -3.0, 3.0), ap = uniform(rng, -3.0, 3.0);
        const double mu = std::min(am, ap) + uniform(rng, 0.05, 20.0);
        if (std::abs(mu - std::max(am, ap)) < 1e-2) continue;
        const Eigen::MatrixXcd S = scattering_matrix(Potential::step(am, ap), mu);
        const Eigen::MatrixXcd R = oracle::step_s_matrix(am, ap, mu);
        ASSERT_EQ(S.rows(), R.rows());
        EXPECT_LT((S - R).cwiseAbs().maxCoeff(), 1e-9) << am << " " << ap << " " << mu;
    }
}

TEST(Property, RandomGaussiansHavePositiveLowRankS) {
    std::mt19937 rng(12);
    for (int trial = 0; trial < 6; ++trial) {
        const Potential p = random_gaussian(rng);
        const ScatteringData d = sampled(p, 16);
        for (std::size_t b = 0; b < 2; ++b)
            for (const SSample& s : d.bands[b].samples) {
                const SStructure st = s_structure(s.S);
                EXPECT_LE(st.hermitian_defect, 1e-12);
                EXPECT_GE(st.min_eigenvalue, -1e-12);
                EXPECT_LE(st.rank, static_cast<int>(b + 1)) << s.mu;
            }
        for (const SSample& s : d.bands[1].samples) {
            const double k = std::sqrt(s.mu - d.mu2());
            EXPECT_NEAR((2.0 * k * s.S(0, 0)).real(), 1.0, 1e-7) << s.mu;
        }
    }
}

TEST(Property, SIsInvariantUnderUnitaryMixing) {
    std::mt19937 rng(13);
    const Potential p(0.0, 2.0, deviation::Gaussian{-3.0, 0.5, 1.0});
    for (int trial = 0; trial < 20; ++trial) {
        const double mu = uniform(rng, 2.1, 80.0);
        const ConnectionMatrices c = connection_matrices(p, mu);
        const Eigen::MatrixXcd base = scattering_matrix(c);
        const Eigen::MatrixXcd U = oracle::random_unitary(c.k, rng);
        const Eigen::MatrixXcd mixed = scattering_matrix(unitary_mix(c, U));
        EXPECT_LT((mixed - base).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, base.cwiseAbs().maxCoeff()));
    }
}

TEST(Property, FIsSymmetricOnRandomData) {
    std::mt19937 rng(14);
    KernelOptions o;
    o.tail_tol = 1.0;
    for (int trial = 0; trial < 3; ++trial) {
        const Potential p = random_gaussian(rng);
        const ScatteringData d = sampled(p, 24);
        const std::vector<double> grid = uniform_grid(-1.0, 3.0, 0.1);
        const KernelGrid F = build_F(d, grid, grid, o);
        const double scale = std::max(1.0, F.values.cwiseAbs().maxCoeff());
        EXPECT_LT((F.values - F.values.transpose()).cwiseAbs().maxCoeff(), 1e-9 * scale);
    }
}

TEST(Property, InversePairOfRandomTriangularKernels) {
    std::mt19937 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 20 + rng() % 30;
        KernelGrid K;
        K.role = KernelRole::K;
        K.x = uniform_grid(0.0, 0.1 * static_cast<double>(n - 1), 0.1);
        K.t = K.x;
        K.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < K.values.rows(); ++i)
            for (Eigen::Index j = i; j < K.values.cols(); ++j) K.values(i, j) = uniform(rng, -1.0, 1.0);
        const KernelGrid H = kernel_inverse_pair(K);
        const Eigen::MatrixXd A = operator_matrix(K), B = operator_matrix(H);
        const Eigen::MatrixXd Id = Eigen::MatrixXd::Identity(A.rows(), A.cols());
        const Eigen::MatrixXd P = (Id + A) * (Id + B);
        EXPECT_LT((P - Id).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, B.cwiseAbs().maxCoeff()));
    }
}

TEST(Property, ScatteringDataJsonRoundTrip) {
    std::mt19937 rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        ScatteringData d;
        d.a_minus = uniform(rng, -2.0, 0.0);
        d.a_plus = uniform(rng, 0.5, 3.0);
        const int nb = static_cast<int>(rng() % 3);
        for (int i = 0; i < nb; ++i) d.bound_states.push_back({d.a_minus - uniform(rng, 0.1, 5.0), uniform(rng, 1e-3, 10.0)});
        d.bands[0].interval = {d.mu1(), d.mu2()};
        d.bands[1].interval = {d.mu2(), d.mu2() + 100.0};
        for (std::size_t b = 0; b < 2; ++b) {
            const Eigen::Index k = b == 0 ? 1 : 2;
            for (int i = 0; i < 5; ++i) {
                Eigen::MatrixXcd S(k, k);
                for (Eigen::Index r = 0; r < k; ++r)
                    for (Eigen::Index c = 0; c < k; ++c) S(r, c) = {uniform(rng, -1e3, 1e3), uniform(rng, -1e-9, 1e-9)};
                d.bands[b].samples.push_back({d.bands[b].interval.lo + 0.1 * (i + 1), S});
            }
        }
        const ScatteringData back = scattering_data_from_json(scattering_data_to_json(d));
        ASSERT_EQ(back.bound_states.size(), d.bound_states.size());
        for (std::size_t i = 0; i < d.bound_states.size(); ++i) {
            EXPECT_EQ(back.bound_states[i].mu, d.bound_states[i].mu);
            EXPECT_EQ(back.bound_states[i].norming, d.bound_states[i].norming);
        }
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t i = 0; i < d.bands[b].samples.size(); ++i) {
                EXPECT_EQ(back.bands[b].samples[i].mu, d.bands[b].samples[i].mu);
                EXPECT_TRUE(back.bands[b].samples[i].S == d.bands[b].samples[i].S);
            }
    }
}

TEST(Property, PotentialJsonRoundTrip) {
    std::mt19937 rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const Potential p = random_gaussian(rng);
        const Potential back = potential_from_json(potential_to_json(p));
        for (int i = 0; i < 10; ++i) {
            const double x = uniform(rng, -5.0, 5.0);
            EXPECT_EQ(back.eval(x), p.eval(x));
        }
    }
}
