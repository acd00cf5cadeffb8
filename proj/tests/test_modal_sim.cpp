#include "sfr/modal_sim.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace {

using sfr::Room;
using sfr::Vec3;

Vec3 random_point(std::mt19937_64& gen, const Room& r) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return {u(gen) * r.lx(), u(gen) * r.ly(), u(gen) * r.lz()};
}

TEST(ModalSim, TimeConstantForSixtyDbDecay) {
    EXPECT_NEAR(sfr::time_constant(0.6), 0.08686, 1e-5);
    EXPECT_NEAR(sfr::time_constant(1.0), 1.0 / (3.0 * std::log(10.0)), 1e-15);
    EXPECT_THROW(sfr::time_constant(0.0), std::invalid_argument);
}

TEST(ModalSim, AxialResonance) {
    const Room r(5.0, 4.0, 3.0, 0.5);
    EXPECT_DOUBLE_EQ(sfr::resonance_hz(r, {1, 0, 0}), 343.0 / 10.0);
    EXPECT_DOUBLE_EQ(sfr::resonance_hz(r, {0, 0, 2}), 343.0 / 3.0);
}

TEST(ModalSim, EnumerationMatchesBruteForce) {
    const auto cfg = sfr::RoomSamplerConfig::extended(5);
    for (std::uint64_t i = 0; i < 10; ++i) {
        const Room room = sfr::sample_room(cfg, i).room;
        const auto modes = sfr::enumerate_modes(room, 400.0);
        const auto ref = oracle::modes_below(room, 400.0);
        ASSERT_EQ(modes.size(), ref.size());
        for (std::size_t m = 0; m < ref.size(); ++m) {
            EXPECT_EQ(modes[m].index, (sfr::ModeIndex{ref[m].nx, ref[m].ny, ref[m].nz}));
            EXPECT_NEAR(modes[m].omega_n, 2 * std::numbers::pi * ref[m].f, 1e-9);
        }
    }
}

TEST(ModalSim, ConstantModeAlwaysPresent) {
    const auto modes = sfr::enumerate_modes(Room(1, 1, 1, 0.3), 1.0);
    ASSERT_EQ(modes.size(), 1u);
    EXPECT_EQ(modes[0].index, (sfr::ModeIndex{0, 0, 0}));
    EXPECT_EQ(modes[0].lambda_n, 1.0);
}

TEST(ModalSim, NoVerticalModesWhenDisabled) {
    const auto modes = sfr::enumerate_modes(sfr::rooms::listening_room(), 300.0, false);
    for (const auto& m : modes) EXPECT_EQ(m.index.nz, 0);
    EXPECT_EQ(modes.size(), oracle::modes_below(sfr::rooms::listening_room(), 300.0, false).size());
}

TEST(ModalSim, NormalizationAndShape) {
    const Room room(4, 5, 3, 0.5);
    const auto modes = sfr::enumerate_modes(room, 200.0);
    for (const auto& m : modes) {
        const int nonzero = (m.index.nx > 0) + (m.index.ny > 0) + (m.index.nz > 0);
        EXPECT_NEAR(m.lambda_n, std::sqrt(std::pow(2.0, nonzero)), 1e-15);
        // Corners are antinodes of every rigid-wall mode.
        EXPECT_NEAR(sfr::mode_shape(m, room, Vec3::Zero()), m.lambda_n, 1e-15);
    }
    EXPECT_THROW(sfr::mode_shape(modes[0], room, Vec3(4.5, 0, 0)), std::invalid_argument);
}

TEST(ModalSim, GreensFunctionMatchesTermwiseSum) {
    std::mt19937_64 gen(9);
    const Room room = sfr::rooms::room_b();
    const auto modes = sfr::enumerate_modes(room, 300.0);
    for (int t = 0; t < 20; ++t) {
        const Vec3 r = random_point(gen, room), r0 = random_point(gen, room);
        const double w = 2 * std::numbers::pi * (30.0 + 10.0 * t);
        const auto g = sfr::greens_function(room, modes, r, r0, w);
        const auto ref = oracle::greens(room, 300.0, r, r0, w);
        EXPECT_LE(std::abs(g - ref), 1e-11 * std::abs(ref));
    }
}

TEST(ModalSim, Reciprocity) {
    std::mt19937_64 gen(10);
    const auto cfg = sfr::RoomSamplerConfig::extended(3);
    for (std::uint64_t i = 0; i < 50; ++i) {
        const Room room = sfr::sample_room(cfg, i).room;
        const auto modes = sfr::enumerate_modes(room, 250.0);
        const Vec3 r = random_point(gen, room), r0 = random_point(gen, room);
        const double w = 2 * std::numbers::pi * (20.0 + i * 5.0);
        const auto a = sfr::greens_function(room, modes, r, r0, w), b = sfr::greens_function(room, modes, r0, r, w);
        EXPECT_LE(std::abs(a - b), 1e-12 * std::max(1.0, std::abs(a)));
    }
}

TEST(ModalSim, ResonancePeakAtModeFrequency) {
    // Near a well isolated axial mode the response magnitude peaks at its resonance.
    const Room room(10.0, 1.0, 1.0, 1.5);
    const auto modes = sfr::enumerate_modes(room, 60.0);
    const Vec3 r(0.1, 0.5, 0.5), r0(9.9, 0.5, 0.5);
    const double f1 = 343.0 / 20.0;
    const auto mag = [&](double f) { return std::abs(sfr::greens_function(room, modes, r, r0, 2 * std::numbers::pi * f)); };
    EXPECT_GT(mag(f1), mag(f1 * 0.97));
    EXPECT_GT(mag(f1), mag(f1 * 1.03));
}

TEST(ModalSim, SimulatedFieldEqualsPointwiseGreens) {
    const Room room = sfr::rooms::listening_room();
    const auto modes = sfr::enumerate_modes(room, 300.0);
    const sfr::GridSpec grid(4, 4, 2, 2, 1.1);
    const auto freqs = sfr::build_frequency_set(30, 300, 3);
    const Vec3 src(1.0, 2.0, 0.0);
    const auto field = sfr::simulate_field(room, modes, src, grid, freqs);
    for (std::size_t k = 0; k < freqs.size(); ++k)
        for (int i = 0; i < grid.nx(); ++i)
            for (int j = 0; j < grid.ny(); ++j)
                EXPECT_EQ(field(k, i, j), sfr::greens_function(room, modes, grid.fine_point(room, i, j), src,
                                                               freqs.omega(k)));
    EXPECT_EQ(field.source(), src);
    EXPECT_THROW(sfr::simulate_field(room, modes, Vec3(5, 0, 0), grid, freqs), std::invalid_argument);
}

TEST(RoomSampler, ExtendedVolumeDistribution) {
    const auto cfg = sfr::RoomSamplerConfig::extended(77);
    const int n = 4000;
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        const Room r = sfr::sample_room(cfg, i).room;
        ASSERT_GE(r.volume(), 50.0 - 1e-9);
        ASSERT_LE(r.volume(), 300.0 + 1e-9);
        ASSERT_GE(r.t60(), 0.2);
        ASSERT_LE(r.t60(), 1.0);
        sum += r.volume();
    }
    // U(50, 300): mean 175, standard error 72.2/sqrt(n).
    EXPECT_NEAR(sum / n, 175.0, 4 * 72.2 / std::sqrt(double(n)));
}

TEST(RoomSampler, OriginalFamilyRanges) {
    const auto cfg = sfr::RoomSamplerConfig::original(1);
    EXPECT_FALSE(cfg.include_z_modes);
    for (int i = 0; i < 500; ++i) {
        const Room r = sfr::sample_room(cfg, i).room;
        EXPECT_EQ(r.t60(), 0.6);
        EXPECT_GE(r.ly(), 3.0);
        EXPECT_LE(r.ly(), 12.0);
        EXPECT_GE(r.lz(), 2.1);
        EXPECT_LE(r.lz(), 3.0);
    }
}

TEST(RoomSampler, PerturbationKeepsAspectRatio) {
    const Room r = sfr::perturb_room(sfr::rooms::listening_room(), 1.0);
    EXPECT_NEAR(r.lx(), 5.14, 1e-12);
    EXPECT_NEAR(r.ly(), 9.684, 1e-3);
    EXPECT_EQ(r.lz(), 2.78);

    const auto cfg = sfr::RoomSamplerConfig::perturbed(sfr::rooms::listening_room(), 0.0, 4);
    EXPECT_EQ(sfr::sample_room(cfg, 17).room, sfr::rooms::listening_room());

    const auto wide = sfr::RoomSamplerConfig::perturbed(sfr::rooms::listening_room(), 0.5, 4);
    for (int i = 0; i < 200; ++i) {
        const Room p = sfr::sample_room(wide, i).room;
        EXPECT_LE(std::abs(p.lx() - 4.14), 0.5);
        EXPECT_NEAR(p.lx() / p.ly(), 4.14 / 7.80, 1e-12);
    }
}

TEST(RoomSampler, DrawsDependOnlyOnSeedAndIndex) {
    const auto cfg = sfr::RoomSamplerConfig::extended(123);
    const auto a = sfr::sample_room(cfg, 40);
    sfr::sample_room(cfg, 3);
    const auto b = sfr::sample_room(cfg, 40);
    EXPECT_EQ(a.room, b.room);
    EXPECT_EQ(a.source, b.source);
    EXPECT_NE(a.room, sfr::sample_room(cfg, 41).room);
}

TEST(RoomSampler, SourcePlacement) {
    auto cfg = sfr::RoomSamplerConfig::extended(8);
    for (int i = 0; i < 100; ++i) {
        const auto d = sfr::sample_room(cfg, i);
        EXPECT_EQ(d.source.z(), 0.0);
        EXPECT_TRUE(d.room.contains(d.source));
    }
    cfg.source = sfr::SourcePlacement::corner;
    EXPECT_EQ(sfr::sample_room(cfg, 0).source, Vec3::Zero());
}

TEST(RoomSampler, ImpossibleRangesAreReported) {
    auto cfg = sfr::RoomSamplerConfig::extended(1);
    cfg.ly_bounds = {100.0, 200.0};
    cfg.max_retries = 20;
    EXPECT_THROW(sfr::sample_room(cfg, 0), std::invalid_argument);
    cfg = sfr::RoomSamplerConfig::perturbed(sfr::rooms::room_b(), 10.0, 0);
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace
