#pragma once

// Acoustic contrast control between a bright and a dark zone.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sfr/core_model.hpp"
#include "sfr/error.hpp"
#include "sfr/metrics.hpp"
#include "sfr/parallel.hpp"
#include "sfr/rng.hpp"
#include "sfr/sparse_recon.hpp"

namespace sfr {

/// Bright/dark RTF matrices [points x loudspeakers] at one frequency.
struct ZoneRtfs {
    MatrixXc bright;
    MatrixXc dark;

    Eigen::Index loudspeakers() const { return bright.cols(); }
    void validate() const {
        detail::require(bright.cols() == dark.cols() && bright.cols() >= 1,
                        "ZoneRtfs: bright and dark matrices need the same loudspeaker count");
        detail::require(bright.allFinite() && dark.allFinite(), "ZoneRtfs: non-finite RTF");
    }
};

struct Contrast {
    double linear = 0.0;
    bool infinite = false;  // dark-zone response is exactly zero
    double db() const { return infinite ? std::numeric_limits<double>::infinity() : to_db(linear); }
};

/// ||H_B q||^2 / ||H_D q||^2.
inline Contrast acoustic_contrast(const ZoneRtfs& z, const VectorXc& q) {
    z.validate();
    detail::require(q.size() == z.loudspeakers(), "acoustic_contrast: weight vector length mismatch");
    const double bright = (z.bright * q).squaredNorm();
    const double dark = (z.dark * q).squaredNorm();
    if (dark == 0.0) return {std::numeric_limits<double>::infinity(), true};
    return {bright / dark, false};
}

/// 0.01 times the spectral norm of H_D^H H_D.
inline double dark_regularization(const MatrixXc& dark) {
    const MatrixXc gram = dark.adjoint() * dark;
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(gram, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("dark_regularization: eigenvalue solver failed");
    return 0.01 * std::max(0.0, es.eigenvalues().maxCoeff());
}

/// Rotates q so that its first non-negligible entry is real and positive.
inline void fix_phase(VectorXc& q) {
    const double scale = q.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < q.size(); ++i)
        if (std::abs(q[i]) > 1e-10 * scale) {
            q *= std::conj(q[i]) / std::abs(q[i]);
            q[i] = std::abs(q[i]);
            return;
        }
}

/// Maximizer of q^H A q / q^H B q with A = H_B^H H_B, B = H_D^H H_D + lambda_D I,
/// from the Cholesky-reduced Hermitian problem L^-1 A L^-H y = mu y, q = L^-H y.
/// Returned with unit norm and the fix_phase convention.
inline VectorXc optimal_weights(const ZoneRtfs& z, double* lambda_d = nullptr) {
    z.validate();
    const Eigen::Index n = z.loudspeakers();
    const MatrixXc a = z.bright.adjoint() * z.bright;
    const double reg = dark_regularization(z.dark);
    if (lambda_d) *lambda_d = reg;
    if (n == 1) return VectorXc::Ones(1);

    MatrixXc b = z.dark.adjoint() * z.dark;
    b.diagonal().array() += reg;
    Eigen::LLT<MatrixXc> llt(b);
    if (llt.info() != Eigen::Success)
        throw NumericalError("optimal_weights: dark-zone matrix is not positive definite (all-zero dark RTFs?)");
    const auto l = llt.matrixL();
    const MatrixXc y = l.solve(a);                  // L^-1 A
    MatrixXc c = l.solve(MatrixXc(y.adjoint()));    // L^-1 A L^-H
    c = 0.5 * (c + c.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXc> es(c);
    if (es.info() != Eigen::Success) throw NumericalError("optimal_weights: eigenvalue solver failed");
    VectorXc q = llt.matrixU().solve(es.eigenvectors().col(n - 1));  // L^-H y
    const double nrm = q.norm();
    if (!(nrm > 0) || !std::isfinite(nrm)) throw NumericalError("optimal_weights: degenerate eigenvector");
    q /= nrm;
    fix_phase(q);
    return q;
}

/// q^H A q / q^H (H_D^H H_D + lambda_D I) q, the quantity optimal_weights maximizes.
inline double regularized_quotient(const ZoneRtfs& z, const VectorXc& q, double lambda_d) {
    const double num = (z.bright * q).squaredNorm();
    const double den = (z.dark * q).squaredNorm() + lambda_d * q.squaredNorm();
    return num / den;
}

// ---------------------------------------------------------------------------
// Zone experiment

struct GridCell {
    int i = 0, j = 0;
    auto operator<=>(const GridCell&) const = default;
};

/// Square point sets centred in the room, offset along y by +-separation/2.
struct ZoneLayout {
    double size = 1.0;        // side length in metres
    int points = 5;           // points per side
    double separation = 2.0;  // centre-to-centre distance along y
};

struct ZoneGeometry {
    std::vector<Vec3> loudspeakers;
    std::vector<GridCell> bright, dark;

    void validate(const GridSpec& grid) const {
        detail::require(!loudspeakers.empty(), "ZoneGeometry: no loudspeakers");
        detail::require(!bright.empty() && !dark.empty(), "ZoneGeometry: empty zone");
        std::set<GridCell> seen;
        for (const auto* zone : {&bright, &dark})
            for (const auto& c : *zone) {
                detail::require(c.i >= 0 && c.i < grid.nx() && c.j >= 0 && c.j < grid.ny(),
                                "ZoneGeometry: zone cell outside the grid");
                detail::require(seen.insert(c).second, "ZoneGeometry: zones overlap or repeat a cell");
            }
    }
};

/// Eight floor loudspeakers: the four corners and the four wall midpoints.
inline std::vector<Vec3> default_loudspeakers(const Room& room) {
    const double x = room.lx(), y = room.ly();
    return {{0, 0, 0},         {x / 2, 0, 0}, {x, 0, 0},         {x, y / 2, 0},
            {x, y, 0},         {x / 2, y, 0}, {0, y, 0},         {0, y / 2, 0}};
}

/// points x points grid cells around (cx, cy), with strides chosen so the
/// set spans about `size` metres on each axis.
inline std::vector<GridCell> zone_cells(const Room& room, const GridSpec& grid, double cx, double cy,
                                        const ZoneLayout& layout) {
    detail::require(layout.points >= 1 && layout.size >= 0, "zone_cells: invalid layout");
    const double dx = room.lx() / (grid.nx() - 1), dy = room.ly() / (grid.ny() - 1);
    const double pitch = layout.points > 1 ? layout.size / (layout.points - 1) : 0.0;
    const int sx = std::max(1, static_cast<int>(std::lround(pitch / dx)));
    const int sy = std::max(1, static_cast<int>(std::lround(pitch / dy)));
    const int half = layout.points - 1;
    const int i0 = static_cast<int>(std::lround(cx / dx - 0.5 * half * sx));
    const int j0 = static_cast<int>(std::lround(cy / dy - 0.5 * half * sy));
    std::vector<GridCell> cells;
    for (int a = 0; a < layout.points; ++a)
        for (int b = 0; b < layout.points; ++b) {
            const GridCell c{i0 + a * sx, j0 + b * sy};
            detail::require(c.i >= 0 && c.i < grid.nx() && c.j >= 0 && c.j < grid.ny(),
                            "zone_cells: zone does not fit inside the grid");
            cells.push_back(c);
        }
    return cells;
}

inline ZoneGeometry default_zone_geometry(const Room& room, const GridSpec& grid, const ZoneLayout& layout = {}) {
    ZoneGeometry g;
    g.loudspeakers = default_loudspeakers(room);
    g.bright = zone_cells(room, grid, room.lx() / 2, room.ly() / 2 - layout.separation / 2, layout);
    g.dark = zone_cells(room, grid, room.lx() / 2, room.ly() / 2 + layout.separation / 2, layout);
    g.validate(grid);
    return g;
}

enum class RtfSource { truth, sparse, tensor_file };

inline std::string to_string(RtfSource s) {
    switch (s) {
        case RtfSource::truth: return "true";
        case RtfSource::sparse: return "sparse";
        case RtfSource::tensor_file: return "tensor-file";
    }
    return "?";
}

inline RtfSource parse_rtf_source(const std::string& s) {
    if (s == "true" || s == "truth") return RtfSource::truth;
    if (s == "sparse") return RtfSource::sparse;
    if (s == "tensor-file" || s == "tensor_file") return RtfSource::tensor_file;
    throw std::invalid_argument("unknown rtf source '" + s + "' (expected true, sparse or tensor-file)");
}

struct ZoneExperimentConfig {
    RtfSource source = RtfSource::truth;
    std::size_t n_mic = 5;
    std::size_t trials = 50;
    std::uint64_t seed = 0;
    SparseConfig sparse;
    unsigned threads = 0;
};

/// Mask of trial t: CounterRng stream derive(seed, t), drawn from the available cells.
inline SamplingMask trial_mask(const ZoneExperimentConfig& cfg, const SamplingMask& available, std::size_t trial) {
    return draw_mask(available, cfg.n_mic, CounterRng::derive(cfg.seed, trial));
}

/// Estimated field of loudspeaker `ls` in trial `trial` (tensor-file source).
using EstimateLoader = std::function<FieldTensor(std::size_t trial, std::size_t ls)>;

struct ContrastTable {
    std::vector<double> freqs_hz;
    std::vector<double> mean_db, std_db;
    std::vector<std::vector<double>> trial_db;  // [trial][k]
    RtfSource source = RtfSource::truth;
    std::size_t n_mic = 0;
};

namespace detail {

inline ZoneRtfs rtfs_from_fields(const std::vector<const FieldTensor*>& fields, const ZoneGeometry& g,
                                 std::size_t k) {
    const auto n_ls = static_cast<Eigen::Index>(fields.size());
    ZoneRtfs z{MatrixXc(static_cast<Eigen::Index>(g.bright.size()), n_ls),
               MatrixXc(static_cast<Eigen::Index>(g.dark.size()), n_ls)};
    for (Eigen::Index l = 0; l < n_ls; ++l) {
        for (std::size_t p = 0; p < g.bright.size(); ++p) z.bright(p, l) = (*fields[l])(k, g.bright[p].i, g.bright[p].j);
        for (std::size_t p = 0; p < g.dark.size(); ++p) z.dark(p, l) = (*fields[l])(k, g.dark[p].i, g.dark[p].j);
    }
    return z;
}

}  // namespace detail

/// Contrast (evaluated on true RTFs) of weights designed from true, sparse
/// or externally estimated RTFs, for `trials` random observation masks.
/// `truth` holds one grid field per loudspeaker.
inline ContrastTable zone_experiment(const std::vector<FieldTensor>& truth, const ZoneGeometry& geom,
                                     const ZoneExperimentConfig& cfg, const EstimateLoader& loader = {},
                                     const SamplingMask* available = nullptr) {
    detail::require(!truth.empty() && truth.size() == geom.loudspeakers.size(),
                    "zone_experiment: need one truth field per loudspeaker");
    detail::require(cfg.trials >= 1, "zone_experiment: trials must be >= 1");
    const TensorMeta& meta = truth.front().meta();
    for (const auto& t : truth)
        detail::require(t.grid() == meta.grid && t.freqs() == meta.freqs && t.room() == meta.room,
                        "zone_experiment: truth fields disagree on room, grid or frequencies");
    geom.validate(meta.grid);
    detail::require(cfg.source != RtfSource::tensor_file || static_cast<bool>(loader),
                    "zone_experiment: tensor-file source needs an estimate loader");
    const SamplingMask all = SamplingMask::full(meta.grid.nx(), meta.grid.ny());
    const SamplingMask& avail = available ? *available : all;

    const std::size_t K = meta.freqs.size();
    std::vector<const FieldTensor*> true_ptrs;
    for (const auto& t : truth) true_ptrs.push_back(&t);
    std::vector<ZoneRtfs> true_rtfs(K);
    for (std::size_t k = 0; k < K; ++k) true_rtfs[k] = detail::rtfs_from_fields(true_ptrs, geom, k);

    std::vector<Vec3> targets;
    for (const auto* zone : {&geom.bright, &geom.dark})
        for (const auto& c : *zone) targets.push_back(meta.grid.fine_point(meta.room, c.i, c.j));
    const std::size_t nb = geom.bright.size(), nd = geom.dark.size();
    const auto n_ls = static_cast<Eigen::Index>(truth.size());

    ContrastTable table;
    table.freqs_hz = meta.freqs.hz();
    table.source = cfg.source;
    table.n_mic = cfg.source == RtfSource::truth ? 0 : cfg.n_mic;
    table.trial_db.assign(cfg.trials, std::vector<double>(K));

    parallel_for(cfg.trials, cfg.threads, [&](std::size_t trial) {
        std::vector<double>& out = table.trial_db[trial];
        if (cfg.source == RtfSource::truth) {
            for (std::size_t k = 0; k < K; ++k)
                out[k] = acoustic_contrast(true_rtfs[k], optimal_weights(true_rtfs[k])).db();
            return;
        }
        const SamplingMask mask = trial_mask(cfg, avail, trial);
        if (cfg.source == RtfSource::tensor_file) {
            std::vector<FieldTensor> est;
            for (std::size_t l = 0; l < truth.size(); ++l) {
                est.push_back(loader(trial, l));
                detail::require(est.back().grid() == meta.grid && est.back().freqs() == meta.freqs,
                                detail::concat("zone_experiment: estimate for trial ", trial, " loudspeaker ", l,
                                               " has a different grid or frequency set"));
            }
            std::vector<const FieldTensor*> ptrs;
            for (const auto& e : est) ptrs.push_back(&e);
            for (std::size_t k = 0; k < K; ++k) {
                const ZoneRtfs z = detail::rtfs_from_fields(ptrs, geom, k);
                out[k] = acoustic_contrast(true_rtfs[k], optimal_weights(z)).db();
            }
            return;
        }
        const std::vector<std::size_t> obs = mask.observed();
        std::vector<Vec3> positions;
        for (std::size_t f : obs)
            positions.push_back(meta.grid.fine_point(meta.room, static_cast<int>(f / meta.grid.ny()),
                                                     static_cast<int>(f % meta.grid.ny())));
        for (std::size_t k = 0; k < K; ++k) {
            const SparseReconstructor rec(positions, targets, meta.freqs.omega(k), meta.room.c(), cfg.sparse);
            ZoneRtfs z{MatrixXc(static_cast<Eigen::Index>(nb), n_ls), MatrixXc(static_cast<Eigen::Index>(nd), n_ls)};
            for (Eigen::Index l = 0; l < n_ls; ++l) {
                VectorXc s(static_cast<Eigen::Index>(obs.size()));
                for (std::size_t m = 0; m < obs.size(); ++m) s[m] = truth[l].slice(k)[obs[m]];
                const VectorXc est = rec.reconstruct(s);
                z.bright.col(l) = est.head(static_cast<Eigen::Index>(nb));
                z.dark.col(l) = est.tail(static_cast<Eigen::Index>(nd));
            }
            out[k] = acoustic_contrast(true_rtfs[k], optimal_weights(z)).db();
        }
    });

    table.mean_db.assign(K, 0.0);
    table.std_db.assign(K, 0.0);
    const double T = static_cast<double>(cfg.trials);
    for (std::size_t k = 0; k < K; ++k) {
        // Shifted by the first trial so identical trials give exactly that value and zero spread.
        const double x0 = table.trial_db.front()[k];
        double m = 0.0;
        for (const auto& row : table.trial_db) m += row[k] - x0;
        m = x0 + m / T;
        double var = 0.0;
        for (const auto& row : table.trial_db) var += (row[k] - m) * (row[k] - m);
        table.mean_db[k] = m;
        table.std_db[k] = cfg.trials > 1 ? std::sqrt(var / (T - 1.0)) : 0.0;
    }
    return table;
}

/// `freq_hz,mean_contrast_db,std_contrast_db,source,n_mic`.
inline void write_contrast_csv(std::ostream& os, const ContrastTable& t) {
    os << "freq_hz,mean_contrast_db,std_contrast_db,source,n_mic\n";
    for (std::size_t k = 0; k < t.freqs_hz.size(); ++k)
        os << detail::csv_number(t.freqs_hz[k]) << ',' << detail::csv_number(t.mean_db[k]) << ','
           << detail::csv_number(t.std_db[k]) << ',' << to_string(t.source) << ',' << t.n_mic << '\n';
}

}  // namespace sfr
