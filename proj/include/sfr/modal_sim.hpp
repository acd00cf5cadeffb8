#pragma once

// Modal (Green's function) simulation of lightly damped rectangular rooms and
// the random room samplers used to build training and evaluation sets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sfr/core_model.hpp"
#include "sfr/rng.hpp"

namespace sfr {

struct ModeIndex {
    int nx = 0, ny = 0, nz = 0;
    bool operator==(const ModeIndex&) const = default;
    auto operator<=>(const ModeIndex&) const = default;
};

struct Mode {
    ModeIndex index;
    double omega_n = 0.0;   // rad/s
    double lambda_n = 1.0;  // sqrt(eps_x eps_y eps_z)
    double tau_n = 1.0;     // amplitude decay time constant, s
};

using ModeSet = std::vector<Mode>;

/// Amplitude time constant for a 60 dB energy decay in t60 seconds.
inline double time_constant(double t60) {
    detail::require(t60 > 0, "time_constant: t60 must be positive");
    return t60 / (3.0 * std::numbers::ln10);
}

/// Rigid-wall resonance frequency in Hz.
inline double resonance_hz(const Room& room, const ModeIndex& n) {
    const double a = n.nx / room.lx(), b = n.ny / room.ly(), c = n.nz / room.lz();
    return 0.5 * room.c() * std::sqrt(a * a + b * b + c * c);
}

inline double normalization(const ModeIndex& n) {
    const auto eps = [](int v) { return v == 0 ? 1.0 : 2.0; };
    return std::sqrt(eps(n.nx) * eps(n.ny) * eps(n.nz));
}

/// Uniform time constants for every mode, from the room's t60.
inline std::vector<double> time_constants(const Room& room, const ModeSet& modes) {
    return std::vector<double>(modes.size(), time_constant(room.t60()));
}

/// Every mode with resonance frequency strictly below f_max, ordered by
/// (n_x, n_y, n_z). The (0,0,0) mode is always present.
inline ModeSet enumerate_modes(const Room& room, double f_max, bool include_z_modes = true) {
    detail::require(f_max > 0, "enumerate_modes: f_max must be positive");
    const double tau = time_constant(room.t60());
    // Axis bounds from (c/2)(n/l) < f_max; +1 guards rounding, membership is decided below.
    const auto bound = [&](double l) { return static_cast<int>(std::floor(2.0 * f_max * l / room.c())) + 1; };
    const int mx = bound(room.lx()), my = bound(room.ly()), mz = include_z_modes ? bound(room.lz()) : 0;

    ModeSet modes;
    for (int nx = 0; nx <= mx; ++nx)
        for (int ny = 0; ny <= my; ++ny)
            for (int nz = 0; nz <= mz; ++nz) {
                const ModeIndex n{nx, ny, nz};
                const double f = resonance_hz(room, n);
                if (f < f_max || (nx == 0 && ny == 0 && nz == 0))
                    modes.push_back({n, 2.0 * std::numbers::pi * f, normalization(n), tau});
            }
    return modes;
}

namespace detail {

inline double shape_unchecked(const Mode& m, const Room& room, const Vec3& p) {
    constexpr double pi = std::numbers::pi;
    return m.lambda_n * std::cos(m.index.nx * pi * p.x() / room.lx()) * std::cos(m.index.ny * pi * p.y() / room.ly()) *
           std::cos(m.index.nz * pi * p.z() / room.lz());
}

// Modal denominator (w/c)^2 - (w_N/c)^2 - j 2w/(tau_N c^2). The damping term
// carries 1/c^2 so that it has the units of a squared wavenumber; with tau the
// amplitude time constant it is the transform of e^{-t/tau} sin(w_d t).
inline cplx inverse_denominator(double omega, const Mode& m, double c) {
    const double k = omega / c, kn = m.omega_n / c;
    return 1.0 / cplx(k * k - kn * kn, -2.0 * omega / (m.tau_n * c * c));
}

inline cplx finish_sum(const cplx& sum, double volume) { return -sum / volume; }

inline void require_inside(const Room& room, const Vec3& p, const char* what) {
    detail::require(room.contains(p), detail::concat(what, ": position (", p.x(), ", ", p.y(), ", ", p.z(),
                                                     ") is outside the room"));
}

}  // namespace detail

/// Rigid-wall mode shape Lambda_N cos(n_x pi x/l_x) cos(n_y pi y/l_y) cos(n_z pi z/l_z).
inline double mode_shape(const Mode& mode, const Room& room, const Vec3& position) {
    detail::require_inside(room, position, "mode_shape");
    return detail::shape_unchecked(mode, room, position);
}

/// Truncated modal sum for the pressure at r due to a point source at r0.
inline cplx greens_function(const Room& room, const ModeSet& modes, const Vec3& r, const Vec3& r0, double omega) {
    detail::require_inside(room, r, "greens_function");
    detail::require_inside(room, r0, "greens_function");
    detail::require(omega > 0, "greens_function: omega must be positive");
    cplx sum(0.0, 0.0);
    for (const auto& m : modes) {
        const double psi = detail::shape_unchecked(m, room, r) * detail::shape_unchecked(m, room, r0);
        sum += psi * detail::inverse_denominator(omega, m, room.c());
    }
    return detail::finish_sum(sum, room.volume());
}

/// Green's function on every fine-grid point at every frequency. Produces the
/// same values, bit for bit, as calling greens_function point by point.
inline FieldTensor simulate_field(const Room& room, const ModeSet& modes, const Vec3& source, const GridSpec& spec,
                                  const FrequencySet& freqs) {
    spec.check_room(room);
    detail::require_inside(room, source, "simulate_field");
    detail::require(!freqs.empty(), "simulate_field: empty frequency set");
    constexpr double pi = std::numbers::pi;

    const int nx = spec.nx(), ny = spec.ny();
    const std::size_t K = freqs.size(), P = spec.cells();
    int max_x = 0, max_y = 0;
    for (const auto& m : modes) {
        max_x = std::max(max_x, m.index.nx);
        max_y = std::max(max_y, m.index.ny);
    }
    // cos tables with the exact argument expressions of shape_unchecked.
    std::vector<double> cos_x(static_cast<std::size_t>(max_x + 1) * nx), cos_y(static_cast<std::size_t>(max_y + 1) * ny);
    for (int n = 0; n <= max_x; ++n)
        for (int i = 0; i < nx; ++i)
            cos_x[static_cast<std::size_t>(n) * nx + i] = std::cos(n * pi * spec.fine_point(room, i, 0).x() / room.lx());
    for (int n = 0; n <= max_y; ++n)
        for (int j = 0; j < ny; ++j)
            cos_y[static_cast<std::size_t>(n) * ny + j] = std::cos(n * pi * spec.fine_point(room, 0, j).y() / room.ly());

    const std::vector<double> omegas = freqs.omegas();
    std::vector<cplx> acc(P * K, cplx(0.0, 0.0));  // [point][k]
    std::vector<cplx> inv(K);
    for (const auto& m : modes) {
        for (std::size_t k = 0; k < K; ++k) inv[k] = detail::inverse_denominator(omegas[k], m, room.c());
        const double psi0 = detail::shape_unchecked(m, room, source);
        const double cz = std::cos(m.index.nz * pi * spec.z_o() / room.lz());
        const double* cx = cos_x.data() + static_cast<std::size_t>(m.index.nx) * nx;
        const double* cy = cos_y.data() + static_cast<std::size_t>(m.index.ny) * ny;
        for (int i = 0; i < nx; ++i) {
            const double a = m.lambda_n * cx[i];
            for (int j = 0; j < ny; ++j) {
                const double psi = (a * cy[j] * cz) * psi0;
                cplx* out = acc.data() + (static_cast<std::size_t>(i) * ny + j) * K;
                for (std::size_t k = 0; k < K; ++k) out[k] += psi * inv[k];
            }
        }
    }

    FieldTensor field(TensorMeta{room, spec, freqs, source});
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t k = 0; k < K; ++k) field.slice(k)[p] = detail::finish_sum(acc[p * K + k], room.volume());
    return field;
}

// ---------------------------------------------------------------------------
// Room samplers

enum class RoomFamily { extended, original, perturbed };
enum class SourcePlacement { floor_uniform, corner };

inline std::string to_string(RoomFamily f) {
    switch (f) {
        case RoomFamily::extended: return "extended";
        case RoomFamily::original: return "original";
        case RoomFamily::perturbed: return "perturbed";
    }
    return "?";
}

inline RoomFamily parse_family(const std::string& s) {
    if (s == "extended") return RoomFamily::extended;
    if (s == "original") return RoomFamily::original;
    if (s == "perturbed") return RoomFamily::perturbed;
    throw std::invalid_argument("unknown room family '" + s + "' (expected extended, original or perturbed)");
}

struct Range {
    double lo = 0, hi = 0;
    double draw(CounterRng& rng) const { return rng.uniform(lo, hi); }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

struct RoomSamplerConfig {
    RoomFamily family = RoomFamily::extended;
    std::uint64_t seed = 0;

    // extended / original: V, l_x, l_z drawn, l_y = V / (l_x l_z)
    Range volume{50.0, 300.0};
    Range lx{3.5, 10.0};
    Range lz{1.5, 3.5};
    Range ly_bounds{1.0, 60.0};  // draws with l_y outside are redrawn
    Range t60{0.2, 1.0};
    std::optional<double> fixed_t60;  // original family: 0.6 s

    // perturbed: e ~ U(-delta, delta) added to the base length, width rescaled
    Room base = rooms::listening_room();
    double delta = 0.0;

    bool include_z_modes = true;
    SourcePlacement source = SourcePlacement::floor_uniform;
    double c = kSpeedOfSound;
    int max_retries = 1000;

    static RoomSamplerConfig extended(std::uint64_t seed) {
        RoomSamplerConfig cfg;
        cfg.seed = seed;
        return cfg;
    }

    static RoomSamplerConfig original(std::uint64_t seed) {
        RoomSamplerConfig cfg;
        cfg.family = RoomFamily::original;
        cfg.seed = seed;
        cfg.volume = {50.0, 150.0};
        cfg.lx = {3.5, 8.0};
        cfg.lz = {2.1, 3.0};
        cfg.ly_bounds = {3.0, 12.0};
        cfg.fixed_t60 = 0.6;
        cfg.include_z_modes = false;
        return cfg;
    }

    static RoomSamplerConfig perturbed(const Room& base, double delta, std::uint64_t seed) {
        RoomSamplerConfig cfg;
        cfg.family = RoomFamily::perturbed;
        cfg.seed = seed;
        cfg.base = base;
        cfg.delta = delta;
        return cfg;
    }

    void validate() const {
        const auto positive = [](const Range& r, const char* name) {
            detail::require(r.lo > 0 && r.hi >= r.lo,
                            detail::concat("RoomSamplerConfig: range ", name, " must satisfy 0 < lo <= hi"));
        };
        positive(volume, "volume");
        positive(lx, "lx");
        positive(lz, "lz");
        positive(ly_bounds, "ly_bounds");
        positive(t60, "t60");
        detail::require(!fixed_t60 || *fixed_t60 > 0, "RoomSamplerConfig: fixed_t60 must be positive");
        detail::require(delta >= 0, "RoomSamplerConfig: delta must be >= 0");
        detail::require(family != RoomFamily::perturbed || delta < base.lx(),
                        "RoomSamplerConfig: delta must be smaller than the base length");
        detail::require(c > 0, "RoomSamplerConfig: c must be positive");
        detail::require(max_retries >= 1, "RoomSamplerConfig: max_retries must be >= 1");
    }
};

struct RoomDraw {
    Room room;
    Vec3 source;
};

/// Adds `error` to the base length and rescales the width so l_x/l_y is kept.
inline Room perturb_room(const Room& base, double error) {
    const double lx = base.lx() + error;
    return Room(lx, lx * (base.ly() / base.lx()), base.lz(), base.t60(), base.c());
}

/// Room and source for realization `index`. Each index has its own counter
/// stream derived from the master seed, so draws do not depend on order.
/// Draw order: room parameters (with redraws), then source x, y.
inline RoomDraw sample_room(const RoomSamplerConfig& cfg, std::uint64_t index) {
    cfg.validate();
    CounterRng rng(CounterRng::derive(cfg.seed, index));

    std::optional<Room> room;
    if (cfg.family == RoomFamily::perturbed) {
        const double e = cfg.delta > 0 ? rng.uniform(-cfg.delta, cfg.delta) : 0.0;
        room = perturb_room(Room(cfg.base.lx(), cfg.base.ly(), cfg.base.lz(), cfg.base.t60(), cfg.c), e);
    } else {
        for (int attempt = 0; attempt < cfg.max_retries && !room; ++attempt) {
            const double v = cfg.volume.draw(rng), lx = cfg.lx.draw(rng), lz = cfg.lz.draw(rng);
            const double t60 = cfg.fixed_t60 ? *cfg.fixed_t60 : cfg.t60.draw(rng);
            const double ly = v / (lx * lz);
            if (cfg.ly_bounds.contains(ly)) room = Room(lx, ly, lz, t60, cfg.c);
        }
        if (!room)
            throw std::invalid_argument(detail::concat("sample_room: no admissible l_y after ", cfg.max_retries,
                                                       " draws; check volume/lx/lz/ly_bounds ranges"));
    }

    Vec3 source = Vec3::Zero();
    if (cfg.source == SourcePlacement::floor_uniform) {
        source.x() = rng.uniform(0.0, room->lx());
        source.y() = rng.uniform(0.0, room->ly());
    }
    return {*room, source};
}

}  // namespace sfr
