#include "sfr/sparse_recon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace {

using sfr::cplx;
using sfr::Vec3;
using Eigen::VectorXcd;

sfr::PlaneWaveDictionary random_dictionary(std::mt19937_64& gen, Eigen::Index m, Eigen::Index n) {
    std::uniform_real_distribution<double> u(0.2, 2.0);
    sfr::PlaneWaveDictionary d;
    d.phi = oracle::random_matrix(gen, m, n);
    d.phi_h = d.phi.adjoint();
    d.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) d.weights[i] = u(gen);
    d.positions.assign(static_cast<std::size_t>(m), Vec3::Zero());
    d.wavenumbers.assign(static_cast<std::size_t>(n), Vec3::Zero());
    return d;
}

TEST(Dictionary, WavenumberGridAndWeights) {
    const auto k = sfr::cubic_wavenumber_grid(2.0, 3);
    ASSERT_EQ(k.size(), 27u);
    EXPECT_EQ(k.front(), Vec3(-2, -2, -2));
    EXPECT_EQ(k[13], Vec3(0, 0, 0));
    const double w = 343.0;  // k0 = 1
    const auto L = sfr::shell_weights(k, w, 343.0);
    EXPECT_DOUBLE_EQ(L[13], 1.0);
    EXPECT_DOUBLE_EQ(L[0], 11.0);
    EXPECT_THROW(sfr::cubic_wavenumber_grid(1.0, 1), std::invalid_argument);
}

TEST(Dictionary, PlaneWaveEntries) {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 2, 3}};
    const std::vector<Vec3> ks{{0.5, 0, 0}, {0, 1, 1}};
    const auto m = sfr::plane_wave_matrix(pts, ks);
    EXPECT_EQ(m(0, 0), cplx(1, 0));
    EXPECT_NEAR(std::abs(m(1, 1) - std::polar(1.0, 5.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(m(1, 0) - std::polar(1.0, 0.5)), 0.0, 1e-15);
}

TEST(Lasso, MatchesCoordinateDescentOptimum) {
    std::mt19937_64 gen(21);
    for (int trial = 0; trial < 8; ++trial) {
        const auto d = random_dictionary(gen, 10, 30);
        const VectorXcd s = oracle::random_matrix(gen, 10, 1).col(0);
        const double lam = sfr::lambda_threshold(d, s) * (trial % 2 ? 0.05 : 0.3);
        sfr::LassoOptions opt;
        opt.tol = 1e-12;
        opt.max_iter = 20000;
        const auto sol = sfr::solve_weighted_lasso(d, s, lam, opt);
        const VectorXcd ref = oracle::lasso_cd(d.phi, d.weights, s, lam, 20000);
        const double fo = oracle::lasso_objective(d.phi, d.weights, s, ref, lam);
        const double fs = oracle::lasso_objective(d.phi, d.weights, s, sol.coefficients, lam);
        EXPECT_NEAR(sol.objective, fs, 1e-12 * fs);
        EXPECT_LE(fs, fo * (1 + 1e-8));
        EXPECT_LE((sol.coefficients - ref).norm(), 1e-4 * std::max(1.0, ref.norm()));
        EXPECT_LT(oracle::kkt_residual(d, s, sol.coefficients, lam), 1e-6);
        EXPECT_TRUE(sol.converged);
    }
}

TEST(Lasso, FullDictionarySolverAgrees) {
    std::mt19937_64 gen(22);
    const auto d = random_dictionary(gen, 8, 20);
    const VectorXcd s = oracle::random_matrix(gen, 8, 1).col(0);
    const double lam = 0.1 * sfr::lambda_threshold(d, s);
    sfr::LassoOptions a, b;
    a.tol = b.tol = 1e-12;
    a.max_iter = b.max_iter = 50000;
    b.working_set = false;
    const auto x = sfr::solve_weighted_lasso(d, s, lam, a), y = sfr::solve_weighted_lasso(d, s, lam, b);
    EXPECT_NEAR(x.objective, y.objective, 1e-9 * y.objective);
}

TEST(Lasso, ObjectiveNeverIncreasesAtFixedLambda) {
    std::mt19937_64 gen(23);
    const auto d = random_dictionary(gen, 12, 40);
    const VectorXcd s = oracle::random_matrix(gen, 12, 1).col(0);
    sfr::LassoOptions opt;
    opt.continuation = false;
    opt.working_set = false;
    opt.record_objective = true;
    opt.tol = 1e-10;
    const auto sol = sfr::solve_weighted_lasso(d, s, 0.01 * sfr::lambda_threshold(d, s), opt);
    ASSERT_GT(sol.objective_trace.size(), 5u);
    for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
        EXPECT_LE(sol.objective_trace[i], sol.objective_trace[i - 1]);
}

TEST(Lasso, AtomOrderDoesNotMatter) {
    std::mt19937_64 gen(24);
    const auto d = random_dictionary(gen, 10, 25);
    const VectorXcd s = oracle::random_matrix(gen, 10, 1).col(0);
    const double lam = 0.05 * sfr::lambda_threshold(d, s);
    std::vector<Eigen::Index> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    auto p = d;
    for (Eigen::Index i = 0; i < 25; ++i) {
        p.phi.col(i) = d.phi.col(perm[i]);
        p.weights[i] = d.weights[perm[i]];
    }
    p.phi_h = p.phi.adjoint();
    sfr::LassoOptions opt;
    opt.tol = 1e-12;
    const auto a = sfr::solve_weighted_lasso(d, s, lam, opt), b = sfr::solve_weighted_lasso(p, s, lam, opt);
    EXPECT_NEAR(a.objective, b.objective, 1e-9 * a.objective);
    for (Eigen::Index i = 0; i < 25; ++i)
        EXPECT_NEAR(std::abs(b.coefficients[i] - a.coefficients[perm[i]]), 0.0, 1e-5);
}

TEST(Lasso, ZeroAboveThreshold) {
    std::mt19937_64 gen(25);
    const auto d = random_dictionary(gen, 6, 12);
    const VectorXcd s = oracle::random_matrix(gen, 6, 1).col(0);
    const auto sol = sfr::solve_weighted_lasso(d, s, 1.01 * sfr::lambda_threshold(d, s));
    EXPECT_EQ(sol.coefficients.norm(), 0.0);
    EXPECT_TRUE(sol.converged);
    const auto zero = sfr::solve_weighted_lasso(d, VectorXcd::Zero(6), 0.1);
    EXPECT_EQ(zero.coefficients.norm(), 0.0);
}

TEST(Lasso, NonConvergenceIsReported) {
    std::mt19937_64 gen(26);
    const auto d = random_dictionary(gen, 10, 40);
    const VectorXcd s = oracle::random_matrix(gen, 10, 1).col(0);
    sfr::LassoOptions opt;
    opt.max_iter = 3;
    opt.tol = 1e-14;
    const auto sol = sfr::solve_weighted_lasso(d, s, 1e-6 * sfr::lambda_threshold(d, s), opt);
    EXPECT_FALSE(sol.converged);
    EXPECT_LE(sol.iterations, 3);
}

TEST(Lasso, RejectsBadArguments) {
    std::mt19937_64 gen(27);
    const auto d = random_dictionary(gen, 4, 6);
    EXPECT_THROW(sfr::solve_weighted_lasso(d, VectorXcd::Ones(3), 0.1), std::invalid_argument);
    EXPECT_THROW(sfr::solve_weighted_lasso(d, VectorXcd::Ones(4), -1.0), std::invalid_argument);
}

TEST(SparseRecovery, OnGridPlaneWave) {
    std::mt19937_64 gen(28);
    std::uniform_real_distribution<double> ux(0, 5), uy(0, 4), uz(0, 3);
    const auto grid = sfr::cubic_wavenumber_grid(6.0, 12);
    const Vec3 kt = grid[1500];
    ASSERT_GE(kt.norm(), 1.0);
    const double c = 343.0, w = c * kt.norm() * (1 + 1e-3);
    std::vector<Vec3> obs, held;
    for (int m = 0; m < 15; ++m) obs.emplace_back(ux(gen), uy(gen), uz(gen));
    for (int m = 0; m < 100; ++m) held.emplace_back(ux(gen), uy(gen), uz(gen));
    const auto d = sfr::make_dictionary(obs, grid, w, c);
    VectorXcd s(15);
    for (int m = 0; m < 15; ++m) s[m] = std::polar(1.0, kt.dot(obs[m]));
    const auto sol = sfr::solve_weighted_lasso(d, s, 1e-8);
    const VectorXcd est = sfr::extrapolate(grid, sol.coefficients, held);
    double num = 0, den = 0;
    for (int m = 0; m < 100; ++m) {
        const cplx t = std::polar(1.0, kt.dot(held[m]));
        num += std::norm(est[m] - t);
        den += std::norm(t);
    }
    EXPECT_LT(10 * std::log10(num / den), -40.0);
    EXPECT_LT(oracle::kkt_residual(d, s, sol.coefficients, 1e-8), 1e-6);
}

TEST(Reconstructor, FixedLambdaAndSweepAreDeterministic) {
    std::mt19937_64 gen(29);
    std::uniform_real_distribution<double> u(0, 3);
    std::vector<Vec3> obs, tgt;
    for (int m = 0; m < 10; ++m) obs.emplace_back(u(gen), u(gen), 1.0);
    for (int m = 0; m < 6; ++m) tgt.emplace_back(u(gen), u(gen), 1.0);
    const Vec3 k(1.0, 0.5, 0.0);
    VectorXcd s(10);
    for (int m = 0; m < 10; ++m) s[m] = std::polar(1.0, k.dot(obs[m]));
    sfr::SparseConfig cfg;
    cfg.n_per_axis = 6;
    const double w = 343.0 * k.norm();
    const sfr::SparseReconstructor a(obs, tgt, w, 343.0, cfg), b(obs, tgt, w, 343.0, cfg);
    const double lam = a.choose_lambda(s);
    EXPECT_GT(lam, 0.0);
    EXPECT_EQ(lam, b.choose_lambda(s));
    EXPECT_EQ(a.reconstruct(s), b.reconstruct(s));
    cfg.lambda = 0.123;
    EXPECT_EQ(sfr::SparseReconstructor(obs, tgt, w, 343.0, cfg).choose_lambda(s), 0.123);
}

TEST(Reconstructor, FieldKeepsShapeAndMetadata) {
    std::mt19937_64 gen(30);
    const auto t = oracle::random_tensor(gen, 2, 2, 2, 2);
    const auto mask = sfr::draw_mask(t.grid(), 6, 3);
    sfr::SparseConfig cfg;
    cfg.n_per_axis = 5;
    const auto out = sfr::reconstruct_field(sfr::apply_mask(t, mask), mask, cfg, 2);
    EXPECT_EQ(out.meta(), t.meta());
    EXPECT_EQ(out.values().size(), t.values().size());
    const auto again = sfr::reconstruct_field(sfr::apply_mask(t, mask), mask, cfg, 1);
    EXPECT_EQ(out.values(), again.values());
}

}  // namespace
