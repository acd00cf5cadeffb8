#pragma once

// Rooms, observation grids, frequency ladders, sampling masks and the complex
// field tensor shared by every other module.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sfr/rng.hpp"

namespace sfr {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfSound = 343.0;

namespace detail {

template <typename... Parts>
std::string concat(const Parts&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

inline void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

/// Rectangular room [0,lx]x[0,ly]x[0,lz] with its reverberation time.
class Room {
public:
    Room(double lx, double ly, double lz, double t60, double c = kSpeedOfSound)
        : lx_(lx), ly_(ly), lz_(lz), t60_(t60), c_(c) {
        detail::require(lx > 0 && ly > 0 && lz > 0 && std::isfinite(lx * ly * lz),
                        detail::concat("Room: dimensions must be positive, got ", lx, " x ", ly, " x ", lz));
        detail::require(t60 > 0 && std::isfinite(t60), detail::concat("Room: t60 must be positive, got ", t60));
        detail::require(c > 0 && std::isfinite(c), detail::concat("Room: speed of sound must be positive, got ", c));
    }

    double lx() const noexcept { return lx_; }
    double ly() const noexcept { return ly_; }
    double lz() const noexcept { return lz_; }
    double t60() const noexcept { return t60_; }
    double c() const noexcept { return c_; }
    double volume() const noexcept { return lx_ * ly_ * lz_; }

    bool contains(const Vec3& p, double slack = 1e-12) const noexcept {
        return p.x() >= -slack && p.x() <= lx_ + slack && p.y() >= -slack && p.y() <= ly_ + slack &&
               p.z() >= -slack && p.z() <= lz_ + slack;
    }

    bool operator==(const Room&) const = default;

private:
    double lx_, ly_, lz_, t60_, c_;
};

/// The four rooms of the ISOBEL measurement set (dimensions and T20 as t60).
namespace rooms {
inline Room room_b() { return Room(4.16, 6.46, 2.30, 0.39); }
inline Room vr_lab() { return Room(6.98, 8.12, 3.03, 0.37); }
inline Room listening_room() { return Room(4.14, 7.80, 2.78, 0.80); }
inline Room product_room() { return Room(9.13, 12.03, 2.60, 0.77); }
}  // namespace rooms

/// Coarse I x J grid on the plane z = z_o, upsampled by (up_x, up_y).
class GridSpec {
public:
    GridSpec(int i_count, int j_count, double up_x, double up_y, double z_o)
        : i_count_(i_count), j_count_(j_count), up_x_(up_x), up_y_(up_y), z_o_(z_o) {
        detail::require(i_count >= 2 && j_count >= 2,
                        detail::concat("GridSpec: I and J must be >= 2, got I=", i_count, " J=", j_count));
        detail::require(up_x > 0 && up_y > 0, "GridSpec: upsampling factors must be positive");
        nx_ = integral_product(i_count, up_x, "I*up_x");
        ny_ = integral_product(j_count, up_y, "J*up_y");
        detail::require(std::isfinite(z_o), "GridSpec: z_o must be finite");
    }

    /// 8x8 grid upsampled by 4: the 32x32 layout used throughout.
    static GridSpec standard(double z_o = 1.0) { return GridSpec(8, 8, 4, 4, z_o); }

    int i_count() const noexcept { return i_count_; }
    int j_count() const noexcept { return j_count_; }
    double up_x() const noexcept { return up_x_; }
    double up_y() const noexcept { return up_y_; }
    double z_o() const noexcept { return z_o_; }

    /// Fine-grid extents I*up_x and J*up_y.
    int nx() const noexcept { return nx_; }
    int ny() const noexcept { return ny_; }
    std::size_t cells() const noexcept { return static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_); }

    void check_room(const Room& room) const {
        detail::require(z_o_ >= 0.0 && z_o_ <= room.lz(),
                        detail::concat("GridSpec: z_o=", z_o_, " outside [0, ", room.lz(), "]"));
    }

    /// Fine-grid coordinate of cell (i, j).
    Vec3 fine_point(const Room& room, int i, int j) const {
        return {i * (room.lx() / (nx_ - 1)), j * (room.ly() / (ny_ - 1)), z_o_};
    }

    Vec3 coarse_point(const Room& room, int i, int j) const {
        return {i * (room.lx() / (i_count_ - 1)), j * (room.ly() / (j_count_ - 1)), z_o_};
    }

    bool operator==(const GridSpec&) const = default;

private:
    static int integral_product(int count, double factor, const char* name) {
        const double prod = count * factor;
        const double rounded = std::round(prod);
        detail::require(std::abs(prod - rounded) <= 1e-9 * std::max(1.0, prod),
                        detail::concat("GridSpec: ", name, "=", prod, " is not an integer"));
        detail::require(rounded >= 2, detail::concat("GridSpec: ", name, " must be >= 2"));
        return static_cast<int>(rounded);
    }

    int i_count_, j_count_;
    double up_x_, up_y_, z_o_;
    int nx_ = 0, ny_ = 0;
};

struct Grids {
    std::vector<Vec3> coarse;  // I*J points, x index outer
    std::vector<Vec3> fine;    // (I*up_x)*(J*up_y) points, x index outer
};

inline Grids build_grids(const Room& room, const GridSpec& spec) {
    spec.check_room(room);
    Grids g;
    g.coarse.reserve(static_cast<std::size_t>(spec.i_count()) * spec.j_count());
    for (int i = 0; i < spec.i_count(); ++i)
        for (int j = 0; j < spec.j_count(); ++j) g.coarse.push_back(spec.coarse_point(room, i, j));
    g.fine.reserve(spec.cells());
    for (int i = 0; i < spec.nx(); ++i)
        for (int j = 0; j < spec.ny(); ++j) g.fine.push_back(spec.fine_point(room, i, j));
    return g;
}

/// Ordered set of analysis frequencies, stored in Hz.
class FrequencySet {
public:
    FrequencySet() = default;
    explicit FrequencySet(std::vector<double> hz) : hz_(std::move(hz)) {
        for (std::size_t k = 0; k < hz_.size(); ++k) {
            detail::require(std::isfinite(hz_[k]) && hz_[k] > 0, "FrequencySet: frequencies must be positive");
            detail::require(k == 0 || hz_[k] > hz_[k - 1], "FrequencySet: frequencies must be strictly increasing");
        }
    }

    std::size_t size() const noexcept { return hz_.size(); }
    bool empty() const noexcept { return hz_.empty(); }
    double hz(std::size_t k) const { return hz_.at(k); }
    double omega(std::size_t k) const { return 2.0 * std::numbers::pi * hz_.at(k); }
    const std::vector<double>& hz() const noexcept { return hz_; }
    std::vector<double> omegas() const {
        std::vector<double> w(hz_.size());
        for (std::size_t k = 0; k < hz_.size(); ++k) w[k] = omega(k);
        return w;
    }

    bool operator==(const FrequencySet&) const = default;

private:
    std::vector<double> hz_;
};

/// Fractional-octave ladder f_k = f_lo * 2^(k/fraction) for all f_k <= f_hi.
inline FrequencySet build_frequency_set(double f_lo, double f_hi, int fraction) {
    detail::require(f_lo > 0 && std::isfinite(f_lo) && std::isfinite(f_hi),
                    "build_frequency_set: f_lo must be positive and finite");
    detail::require(fraction >= 1, "build_frequency_set: fraction must be >= 1");
    std::vector<double> hz;
    // Relative slack keeps f_hi itself in the set when it lies on the ladder.
    const double limit = f_hi * (1.0 + 1e-12);
    for (int k = 0;; ++k) {
        const double f = f_lo * std::pow(2.0, static_cast<double>(k) / fraction);
        if (f > limit) break;
        hz.push_back(f);
    }
    return FrequencySet(std::move(hz));
}

/// Boolean observation pattern over the fine grid, row-major [x][y].
class SamplingMask {
public:
    SamplingMask(int nx, int ny, std::vector<std::uint8_t> cells) : nx_(nx), ny_(ny), cells_(std::move(cells)) {
        detail::require(nx > 0 && ny > 0, "SamplingMask: extents must be positive");
        detail::require(cells_.size() == static_cast<std::size_t>(nx) * ny,
                        detail::concat("SamplingMask: expected ", static_cast<std::size_t>(nx) * ny,
                                       " cells, got ", cells_.size()));
        for (auto& c : cells_) {
            detail::require(c <= 1, "SamplingMask: cell values must be 0 or 1");
            n_mic_ += c;
        }
        detail::require(n_mic_ >= 1, "SamplingMask: at least one cell must be observed");
    }

    static SamplingMask full(int nx, int ny) {
        return SamplingMask(nx, ny, std::vector<std::uint8_t>(static_cast<std::size_t>(nx) * ny, 1));
    }

    int nx() const noexcept { return nx_; }
    int ny() const noexcept { return ny_; }
    std::size_t size() const noexcept { return cells_.size(); }
    std::size_t n_mic() const noexcept { return n_mic_; }
    bool operator()(int i, int j) const { return cells_.at(static_cast<std::size_t>(i) * ny_ + j) != 0; }
    bool at(std::size_t flat) const { return cells_.at(flat) != 0; }
    const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }

    /// Flat indices of observed cells in ascending order.
    std::vector<std::size_t> observed() const {
        std::vector<std::size_t> idx;
        idx.reserve(n_mic_);
        for (std::size_t f = 0; f < cells_.size(); ++f)
            if (cells_[f]) idx.push_back(f);
        return idx;
    }

    bool operator==(const SamplingMask&) const = default;

private:
    int nx_, ny_;
    std::vector<std::uint8_t> cells_;
    std::size_t n_mic_ = 0;
};

/// Draws n_mic distinct cells uniformly without replacement among `candidates`
/// (flat indices) with a partial Fisher-Yates shuffle driven by CounterRng(seed).
inline SamplingMask draw_mask_from(int nx, int ny, std::vector<std::size_t> candidates, std::size_t n_mic,
                                   std::uint64_t seed) {
    detail::require(n_mic >= 1 && n_mic <= candidates.size(),
                    detail::concat("draw_mask: n_mic=", n_mic, " outside [1, ", candidates.size(), "]"));
    CounterRng rng(seed);
    std::vector<std::uint8_t> cells(static_cast<std::size_t>(nx) * ny, 0);
    for (std::size_t i = 0; i < n_mic; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
        cells.at(candidates[i]) = 1;
    }
    return SamplingMask(nx, ny, std::move(cells));
}

inline SamplingMask draw_mask(const GridSpec& spec, std::size_t n_mic, std::uint64_t seed) {
    std::vector<std::size_t> all(spec.cells());
    for (std::size_t f = 0; f < all.size(); ++f) all[f] = f;
    return draw_mask_from(spec.nx(), spec.ny(), std::move(all), n_mic, seed);
}

/// Draw restricted to the cells marked available (measured rooms with gaps).
inline SamplingMask draw_mask(const SamplingMask& available, std::size_t n_mic, std::uint64_t seed) {
    return draw_mask_from(available.nx(), available.ny(), available.observed(), n_mic, seed);
}

/// Everything a field tensor knows about where it came from.
struct TensorMeta {
    Room room;
    GridSpec grid;
    FrequencySet freqs;
    Vec3 source = Vec3::Zero();

    bool operator==(const TensorMeta& o) const {
        return room == o.room && grid == o.grid && freqs == o.freqs && source == o.source;
    }
};

/// Complex field of shape [K, X, Y] (frequency, x index, y index), row-major.
class FieldTensor {
public:
    explicit FieldTensor(TensorMeta meta)
        : meta_(std::move(meta)), values_(meta_.freqs.size() * meta_.grid.cells(), cplx(0.0, 0.0)) {}

    FieldTensor(TensorMeta meta, std::vector<cplx> values) : meta_(std::move(meta)), values_(std::move(values)) {
        detail::require(values_.size() == meta_.freqs.size() * meta_.grid.cells(),
                        detail::concat("FieldTensor: expected ", meta_.freqs.size() * meta_.grid.cells(),
                                       " values, got ", values_.size()));
        for (const auto& v : values_)
            detail::require(std::isfinite(v.real()) && std::isfinite(v.imag()), "FieldTensor: non-finite value");
    }

    const TensorMeta& meta() const noexcept { return meta_; }
    const Room& room() const noexcept { return meta_.room; }
    const GridSpec& grid() const noexcept { return meta_.grid; }
    const FrequencySet& freqs() const noexcept { return meta_.freqs; }
    const Vec3& source() const noexcept { return meta_.source; }

    std::size_t k_count() const noexcept { return meta_.freqs.size(); }
    int nx() const noexcept { return meta_.grid.nx(); }
    int ny() const noexcept { return meta_.grid.ny(); }
    std::size_t slice_size() const noexcept { return meta_.grid.cells(); }

    cplx& operator()(std::size_t k, int i, int j) { return values_[index(k, i, j)]; }
    const cplx& operator()(std::size_t k, int i, int j) const { return values_[index(k, i, j)]; }

    /// Frequency slice k as a flat [X*Y] range.
    cplx* slice(std::size_t k) { return values_.data() + k * slice_size(); }
    const cplx* slice(std::size_t k) const { return values_.data() + k * slice_size(); }

    std::vector<cplx>& values() noexcept { return values_; }
    const std::vector<cplx>& values() const noexcept { return values_; }

    /// |s| view with zero imaginary parts.
    FieldTensor magnitude() const {
        FieldTensor out(meta_);
        for (std::size_t n = 0; n < values_.size(); ++n) out.values_[n] = std::abs(values_[n]);
        return out;
    }

private:
    std::size_t index(std::size_t k, int i, int j) const {
        return (k * static_cast<std::size_t>(nx()) + static_cast<std::size_t>(i)) * ny() + j;
    }

    TensorMeta meta_;
    std::vector<cplx> values_;
};

/// Copy of `field` with every unobserved cell set to zero (the masked input
/// handed to reconstruction methods).
inline FieldTensor apply_mask(const FieldTensor& field, const SamplingMask& mask) {
    detail::require(mask.nx() == field.nx() && mask.ny() == field.ny(), "apply_mask: mask shape mismatch");
    FieldTensor out = field;
    for (std::size_t k = 0; k < field.k_count(); ++k)
        for (std::size_t c = 0; c < field.slice_size(); ++c)
            if (!mask.at(c)) out.slice(k)[c] = cplx(0.0, 0.0);
    return out;
}

/// Real-valued [2K, X, Y] stack: real parts in channels 0..K-1, imaginary in K..2K-1.
struct RealStack {
    std::size_t channels = 0;
    int nx = 0, ny = 0;
    std::vector<double> data;

    double& operator()(std::size_t ch, int i, int j) {
        return data[(ch * static_cast<std::size_t>(nx) + i) * ny + j];
    }
    double operator()(std::size_t ch, int i, int j) const {
        return data[(ch * static_cast<std::size_t>(nx) + i) * ny + j];
    }
};

inline RealStack concat_real_imag(const FieldTensor& field) {
    const std::size_t K = field.k_count(), cells = field.slice_size();
    RealStack out{2 * K, field.nx(), field.ny(), std::vector<double>(2 * K * cells)};
    for (std::size_t k = 0; k < K; ++k) {
        const cplx* s = field.slice(k);
        for (std::size_t c = 0; c < cells; ++c) {
            out.data[k * cells + c] = s[c].real();
            out.data[(K + k) * cells + c] = s[c].imag();
        }
    }
    return out;
}

inline FieldTensor split_real_imag(const RealStack& stack, TensorMeta meta) {
    const std::size_t K = meta.freqs.size(), cells = meta.grid.cells();
    detail::require(stack.channels == 2 * K && stack.nx == meta.grid.nx() && stack.ny == meta.grid.ny() &&
                        stack.data.size() == 2 * K * cells,
                    "split_real_imag: stack shape does not match metadata");
    std::vector<cplx> values(K * cells);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < cells; ++c)
            values[k * cells + c] = cplx(stack.data[k * cells + c], stack.data[(K + k) * cells + c]);
    return FieldTensor(std::move(meta), std::move(values));
}

}  // namespace sfr
