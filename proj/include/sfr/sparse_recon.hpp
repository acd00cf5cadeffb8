#pragma once

// Plane-wave expansion of observed pressures with a wavenumber-weighted l1
// penalty:
//
//     min_b  1/2 ||s - Phi b||^2 + lambda ||L b||_1,
//     Phi_mn = exp(j k_n . r_m),  L_nn = | ||k_n||^2 - (omega/c)^2 |
//
// solved with a monotone accelerated proximal gradient method (MFISTA) with
// backtracking, warm-started along a decreasing lambda path.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sfr/core_model.hpp"
#include "sfr/parallel.hpp"

namespace sfr {

using VectorXc = Eigen::VectorXcd;
using MatrixXc = Eigen::MatrixXcd;

struct PlaneWaveDictionary {
    std::vector<Vec3> wavenumbers;  // k_n, rad/m
    std::vector<Vec3> positions;    // r_m, absolute metres
    MatrixXc phi;                   // [M x N]
    MatrixXc phi_h;                 // Phi^H stored explicitly; faster products
    Eigen::VectorXd weights;        // diagonal of L(omega)
    double omega = 0.0;
    double c = kSpeedOfSound;

    std::size_t rows() const noexcept { return positions.size(); }
    std::size_t atoms() const noexcept { return wavenumbers.size(); }
};

/// n_per_axis^3 wavevectors on [-k_max, k_max]^3, x index outermost.
inline std::vector<Vec3> cubic_wavenumber_grid(double k_max, int n_per_axis) {
    detail::require(k_max > 0 && std::isfinite(k_max), "cubic_wavenumber_grid: k_max must be positive");
    detail::require(n_per_axis >= 2, "cubic_wavenumber_grid: n_per_axis must be >= 2");
    std::vector<double> axis(n_per_axis);
    for (int t = 0; t < n_per_axis; ++t) axis[t] = -k_max + 2.0 * k_max * t / (n_per_axis - 1);
    std::vector<Vec3> k;
    k.reserve(static_cast<std::size_t>(n_per_axis) * n_per_axis * n_per_axis);
    for (double kx : axis)
        for (double ky : axis)
            for (double kz : axis) k.emplace_back(kx, ky, kz);
    return k;
}

/// exp(j k_n . r_m) for every point/wavevector pair.
inline MatrixXc plane_wave_matrix(std::span<const Vec3> points, std::span<const Vec3> wavenumbers) {
    MatrixXc m(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(wavenumbers.size()));
    for (Eigen::Index n = 0; n < m.cols(); ++n)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, n) = std::polar(1.0, wavenumbers[n].dot(points[r]));
    return m;
}

inline Eigen::VectorXd shell_weights(std::span<const Vec3> wavenumbers, double omega, double c) {
    const double k0 = omega / c;
    Eigen::VectorXd w(static_cast<Eigen::Index>(wavenumbers.size()));
    for (std::size_t n = 0; n < wavenumbers.size(); ++n) w[n] = std::abs(wavenumbers[n].squaredNorm() - k0 * k0);
    return w;
}

inline PlaneWaveDictionary make_dictionary(std::span<const Vec3> positions, std::vector<Vec3> wavenumbers, double omega,
                                           double c) {
    detail::require(!positions.empty(), "build_dictionary: no observation positions");
    detail::require(omega >= 0 && c > 0, "build_dictionary: omega must be >= 0 and c > 0");
    PlaneWaveDictionary d;
    d.wavenumbers = std::move(wavenumbers);
    d.positions.assign(positions.begin(), positions.end());
    d.phi = plane_wave_matrix(d.positions, d.wavenumbers);
    d.phi_h = d.phi.adjoint();
    d.weights = shell_weights(d.wavenumbers, omega, c);
    d.omega = omega;
    d.c = c;
    return d;
}

inline PlaneWaveDictionary build_dictionary(std::span<const Vec3> positions, double k_max, int n_per_axis,
                                            double omega, double c) {
    return make_dictionary(positions, cubic_wavenumber_grid(k_max, n_per_axis), omega, c);
}

/// Field of the expansion b at arbitrary targets.
inline VectorXc extrapolate(std::span<const Vec3> wavenumbers, const VectorXc& b, std::span<const Vec3> targets) {
    detail::require(static_cast<std::size_t>(b.size()) == wavenumbers.size(),
                    "extrapolate: coefficient count does not match the dictionary");
    return plane_wave_matrix(targets, wavenumbers) * b;
}

struct LassoOptions {
    double tol = 1e-6;           // relative objective decrease that counts as converged
    int max_iter = 5000;         // total over all continuation stages
    bool continuation = true;    // walk lambda down from the all-zero threshold
    double path_factor = 0.1;    // ratio between consecutive path values
    int power_iterations = 20;   // spectral norm estimate for the initial step
    bool working_set = true;     // solve on a growing subset of atoms, checked against full KKT
    bool record_objective = false;
};

struct SparseSolution {
    VectorXc coefficients;
    double lambda = 0.0;
    double objective = 0.0;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    // Objective after every iteration, with the lambda in force at that iteration.
    std::vector<double> objective_trace;
    std::vector<double> trace_lambda;
};

/// Largest eigenvalue of Phi^H Phi by power iteration on the smaller Gram matrix.
inline double spectral_norm_sq(const MatrixXc& phi, int iterations) {
    const MatrixXc gram = phi.rows() <= phi.cols() ? MatrixXc(phi * phi.adjoint()) : MatrixXc(phi.adjoint() * phi);
    VectorXc v = VectorXc::Ones(gram.rows()) / std::sqrt(static_cast<double>(gram.rows()));
    double est = 0.0;
    for (int it = 0; it < iterations; ++it) {
        VectorXc w = gram * v;
        const double nrm = w.norm();
        if (nrm == 0.0) return 0.0;
        est = std::real(v.dot(w));
        v = w / nrm;
    }
    return std::max(est, std::real(v.dot(gram * v)));
}

/// Smallest lambda for which b = 0 satisfies optimality on the penalized atoms.
inline double lambda_threshold(const PlaneWaveDictionary& dict, const VectorXc& s) {
    const VectorXc corr = dict.phi_h * s;
    double best = 0.0;
    for (Eigen::Index n = 0; n < corr.size(); ++n)
        if (dict.weights[n] > 0) best = std::max(best, std::abs(corr[n]) / dict.weights[n]);
    return best;
}

namespace detail {

inline double penalty(const VectorXc& b, const Eigen::VectorXd& w) {
    return (w.array() * b.cwiseAbs2().array().sqrt()).sum();
}

// One stage of MFISTA at fixed lambda. `b` and `phib` are updated in place;
// `lip` carries the step-size constant across stages.
inline int mfista_stage(const MatrixXc& phi_h, const Eigen::VectorXd& weights, const VectorXc& s, double lambda,
                        double tol, int max_iter, double floor, VectorXc& b, VectorXc& phib, double& lip,
                        bool& converged, SparseSolution* trace) {
    constexpr int kMinIter = 5;
    const Eigen::Index N = b.size();
    const auto f_of = [&](const VectorXc& phiv) { return 0.5 * (phiv - s).squaredNorm(); };
    const auto obj_of = [&](const VectorXc& v, const VectorXc& phiv) {
        return f_of(phiv) + lambda * penalty(v, weights);
    };

    VectorXc y = b, phiy = phib, z(N), phiz(phib.size()), grad(N), diff(N), b_old(N), phib_old(phib.size());
    double fx = obj_of(b, phib);
    double t = 1.0;
    converged = false;
    int it = 0;
    const auto record = [&] {
        if (trace) {
            trace->objective_trace.push_back(fx);
            trace->trace_lambda.push_back(lambda);
        }
    };
    for (; it < max_iter; ++it) {
        grad.noalias() = phi_h * (phiy - s);
        const double fy = f_of(phiy);
        double pen_z = 0.0;
        for (int bt = 0;; ++bt) {
            const double step = 1.0 / lip;
            pen_z = 0.0;
            // Gradient step, then complex soft threshold of each modulus by lambda * w_n * step.
            for (Eigen::Index n = 0; n < N; ++n) {
                const cplx v = y[n] - step * grad[n];
                const double m2 = std::norm(v), thr = lambda * step * weights[n];
                if (m2 <= thr * thr) {
                    z[n] = cplx(0.0, 0.0);
                } else {
                    const double m = std::sqrt(m2);
                    z[n] = v * (1.0 - thr / m);
                    pen_z += weights[n] * (m - thr);
                }
            }
            phiz.noalias() = phi_h.adjoint() * z;
            diff = z - y;
            const double bound = fy + std::real(grad.dot(diff)) + 0.5 * lip * diff.squaredNorm();
            if (f_of(phiz) <= bound * (1.0 + 1e-12) + 1e-300 || bt >= 60) break;
            lip *= 2.0;
        }
        const double fz = f_of(phiz) + lambda * pen_z;
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (fz <= fx) {
            const double decrease = fx - fz, f_old = fx;
            b_old.swap(b);
            phib_old.swap(phib);
            b = z;
            phib = phiz;
            fx = fz;
            const double beta = (t - 1.0) / t_next;
            y = b + beta * (b - b_old);
            phiy = phib + beta * (phib - phib_old);
            t = t_next;
            record();
            if (it + 1 >= kMinIter && decrease <= tol * std::max(f_old, floor)) {
                converged = true;
                ++it;
                break;
            }
        } else {
            // Momentum overshoot: keep b and restart the extrapolation.
            y = b;
            phiy = phib;
            t = 1.0;
            record();
        }
    }
    return it;
}


// Working-set wrapper around mfista_stage: atoms are added while any atom
// outside the set violates |Phi_n^H r| <= lambda w_n, so the result solves
// the full problem while iterations only touch the set.
inline int working_set_stage(const PlaneWaveDictionary& d, const VectorXc& s, double lambda, double tol,
                             int max_iter, double floor, int power_iterations, VectorXc& b, VectorXc& phib,
                             bool& converged, SparseSolution* trace) {
    constexpr double kSlack = 1e-6;
    const Eigen::Index N = b.size(), M = s.size();
    std::vector<Eigen::Index> set;
    std::vector<char> in(static_cast<std::size_t>(N), 0);
    for (Eigen::Index n = 0; n < N; ++n)
        if (b[n] != cplx(0.0, 0.0)) {
            set.push_back(n);
            in[n] = 1;
        }
    int used = 0;
    bool inner_converged = true;  // vacuous while the set is empty
    converged = false;
    for (;;) {
        const VectorXc corr = d.phi_h * (s - phib);
        std::vector<std::pair<double, Eigen::Index>> viol;
        for (Eigen::Index n = 0; n < N; ++n) {
            if (in[n]) continue;
            const double a = std::abs(corr[n]), lim = lambda * d.weights[n] * (1.0 + kSlack);
            if (a > lim) viol.emplace_back(lim > 0 ? a / lim : std::numeric_limits<double>::infinity(), n);
        }
        if (viol.empty()) {
            converged = inner_converged;
            return used;
        }
        if (used >= max_iter) {
            converged = false;
            return used;
        }
        const std::size_t add = std::min(viol.size(), std::max<std::size_t>(8, set.size()));
        std::partial_sort(viol.begin(), viol.begin() + static_cast<std::ptrdiff_t>(add), viol.end(),
                          [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
        for (std::size_t i = 0; i < add; ++i) {
            set.push_back(viol[i].second);
            in[viol[i].second] = 1;
        }
        std::sort(set.begin(), set.end());

        const auto W = static_cast<Eigen::Index>(set.size());
        MatrixXc sub_h(W, M);
        Eigen::VectorXd sub_w(W);
        VectorXc sub_b(W);
        for (Eigen::Index i = 0; i < W; ++i) {
            sub_h.row(i) = d.phi_h.row(set[i]);
            sub_w[i] = d.weights[set[i]];
            sub_b[i] = b[set[i]];
        }
        double lip = std::max(spectral_norm_sq(sub_h, power_iterations), 1e-300);
        used += mfista_stage(sub_h, sub_w, s, lambda, tol, max_iter - used, floor, sub_b, phib, lip, inner_converged,
                             trace);
        for (Eigen::Index i = 0; i < W; ++i) b[set[i]] = sub_b[i];
        if (!inner_converged && used >= max_iter) return used;
        if (set.size() == static_cast<std::size_t>(N)) {
            converged = inner_converged;
            return used;
        }
    }
}

}  // namespace detail

/// Weighted lasso by MFISTA. Non-convergence within max_iter is reported via
/// the `converged` flag.
inline SparseSolution solve_weighted_lasso(const PlaneWaveDictionary& dict, const VectorXc& s, double lambda,
                                           const LassoOptions& opt = {}, const VectorXc* warm_start = nullptr) {
    detail::require(static_cast<std::size_t>(s.size()) == dict.rows(),
                    detail::concat("solve_weighted_lasso: ", s.size(), " observations for ", dict.rows(),
                                   " dictionary rows"));
    detail::require(lambda >= 0 && std::isfinite(lambda), "solve_weighted_lasso: lambda must be >= 0");
    detail::require(opt.tol > 0 && opt.max_iter > 0, "solve_weighted_lasso: tol and max_iter must be positive");

    SparseSolution sol;
    sol.lambda = lambda;
    const Eigen::Index N = static_cast<Eigen::Index>(dict.atoms());
    sol.coefficients = warm_start ? *warm_start : VectorXc::Zero(N);
    detail::require(sol.coefficients.size() == N, "solve_weighted_lasso: warm start has the wrong length");

    const double f0 = 0.5 * s.squaredNorm();
    if (f0 == 0.0 && !warm_start) {
        sol.converged = true;
        return sol;
    }

    double lip = opt.working_set ? 0.0 : std::max(spectral_norm_sq(dict.phi, opt.power_iterations), 1e-300);
    // Objective floor: decreases below ~1e-13 of the zero-solution objective are round-off.
    const double floor = std::max(f0, std::numeric_limits<double>::min()) * 1e-13;

    std::vector<double> path;
    if (opt.continuation && !warm_start) {
        const double hi = lambda_threshold(dict, s);
        for (double l = hi * opt.path_factor; l > lambda && std::isfinite(l) && path.size() < 64;
             l *= opt.path_factor)
            path.push_back(l);
    }
    path.push_back(lambda);

    VectorXc phib = dict.phi * sol.coefficients;
    int remaining = opt.max_iter;
    bool converged = false;
    for (std::size_t p = 0; p < path.size() && remaining > 0; ++p) {
        const bool last = p + 1 == path.size();
        const double stage_tol = last ? opt.tol : std::max(opt.tol, 1e-4);
        SparseSolution* trace = opt.record_objective ? &sol : nullptr;
        const int used =
            opt.working_set
                ? detail::working_set_stage(dict, s, path[p], stage_tol, remaining, floor, opt.power_iterations,
                                            sol.coefficients, phib, converged, trace)
                : detail::mfista_stage(dict.phi_h, dict.weights, s, path[p], stage_tol, remaining, floor,
                                       sol.coefficients, phib, lip, converged, trace);
        remaining -= used;
        sol.iterations += used;
        if (last) sol.converged = converged;
    }
    sol.residual_norm = (s - phib).norm();
    sol.objective = 0.5 * sol.residual_norm * sol.residual_norm + lambda * detail::penalty(sol.coefficients, dict.weights);
    return sol;
}

/// Reconstruction settings. The dictionary is rebuilt per frequency with
/// k_max = k_max_factor * omega / c.
struct SparseConfig {
    int n_per_axis = 12;
    double k_max_factor = 1.2;
    std::optional<double> lambda;  // fixed lambda; otherwise chosen by a held-out sweep
    int sweep_count = 8;
    double sweep_hi = 0.5;         // sweep range, relative to lambda_threshold
    double sweep_lo = 1e-4;
    double sweep_tol = 1e-4;       // solver tolerance inside the sweep
    double holdout_fraction = 0.2;
    LassoOptions solver;

    void validate() const {
        detail::require(n_per_axis >= 2, "SparseConfig: n_per_axis must be >= 2");
        detail::require(k_max_factor > 0, "SparseConfig: k_max_factor must be positive");
        detail::require(!lambda || *lambda >= 0, "SparseConfig: lambda must be >= 0");
        detail::require(sweep_count >= 1 && sweep_hi > 0 && sweep_lo > 0 && sweep_lo <= sweep_hi,
                        "SparseConfig: invalid lambda sweep");
        detail::require(sweep_tol > 0, "SparseConfig: sweep_tol must be positive");
        detail::require(holdout_fraction > 0 && holdout_fraction < 1, "SparseConfig: holdout_fraction in (0,1)");
    }
};

/// Observation-to-target RTF extrapolation at one frequency. Dictionary,
/// held-out split and extrapolation matrix are built once and reused for
/// every observation vector (e.g. one per loudspeaker).
class SparseReconstructor {
public:
    SparseReconstructor(std::span<const Vec3> observed, std::span<const Vec3> targets, double omega, double c,
                        const SparseConfig& cfg)
        : cfg_(cfg) {
        cfg_.validate();
        detail::require(omega > 0, "SparseReconstructor: omega must be positive");
        auto k = cubic_wavenumber_grid(cfg_.k_max_factor * omega / c, cfg_.n_per_axis);
        full_ = make_dictionary(observed, k, omega, c);
        extrap_ = plane_wave_matrix(targets, full_.wavenumbers);

        const std::size_t M = observed.size();
        if (!cfg_.lambda && M >= 2) {
            const std::size_t n_hold = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::lround(cfg_.holdout_fraction * M)), 1, M - 1);
            const std::size_t stride = M / n_hold;
            std::vector<Vec3> train_pos;
            for (std::size_t m = 0; m < M; ++m) {
                const bool hold = held_.size() < n_hold && m % stride == stride - 1;
                (hold ? held_ : train_).push_back(m);
                if (!hold) train_pos.push_back(observed[m]);
            }
            train_dict_ = make_dictionary(train_pos, std::move(k), omega, c);
            held_phi_.resize(static_cast<Eigen::Index>(held_.size()), full_.phi.cols());
            for (std::size_t h = 0; h < held_.size(); ++h) held_phi_.row(h) = full_.phi.row(held_[h]);
        }
    }

    const PlaneWaveDictionary& dictionary() const noexcept { return full_; }

    /// Lambda used for `s`: the fixed one, or the sweep value with the smallest
    /// held-out residual (ties go to the larger lambda).
    double choose_lambda(const VectorXc& s) const {
        if (cfg_.lambda) return *cfg_.lambda;
        const double scale = lambda_threshold(full_, s);
        if (!(scale > 0) || !std::isfinite(scale)) return 0.0;
        if (held_.empty()) return scale * std::sqrt(cfg_.sweep_hi * cfg_.sweep_lo);

        VectorXc s_train(static_cast<Eigen::Index>(train_.size())), s_held(static_cast<Eigen::Index>(held_.size()));
        for (std::size_t m = 0; m < train_.size(); ++m) s_train[m] = s[train_[m]];
        for (std::size_t m = 0; m < held_.size(); ++m) s_held[m] = s[held_[m]];

        LassoOptions opt = cfg_.solver;
        opt.record_objective = false;
        opt.tol = std::max(opt.tol, cfg_.sweep_tol);
        double best_lambda = 0.0, best_err = std::numeric_limits<double>::infinity();
        VectorXc warm;
        for (int i = 0; i < cfg_.sweep_count; ++i) {
            const double frac = cfg_.sweep_count == 1 ? 0.0 : static_cast<double>(i) / (cfg_.sweep_count - 1);
            const double lam = scale * cfg_.sweep_hi * std::pow(cfg_.sweep_lo / cfg_.sweep_hi, frac);
            const SparseSolution sol = solve_weighted_lasso(train_dict_, s_train, lam, opt, i == 0 ? nullptr : &warm);
            warm = sol.coefficients;
            const double err = (s_held - held_phi_ * sol.coefficients).squaredNorm();
            if (err < best_err) {
                best_err = err;
                best_lambda = lam;
            }
        }
        return best_lambda;
    }

    SparseSolution solve(const VectorXc& s) const {
        return solve_weighted_lasso(full_, s, choose_lambda(s), cfg_.solver);
    }

    /// Field at the targets.
    VectorXc reconstruct(const VectorXc& s) const { return extrap_ * solve(s).coefficients; }

private:
    SparseConfig cfg_;
    PlaneWaveDictionary full_, train_dict_;
    MatrixXc extrap_, held_phi_;
    std::vector<std::size_t> train_, held_;
};

/// Full-grid field from the cells observed in `mask`, one frequency at a time.
inline FieldTensor reconstruct_field(const FieldTensor& observed, const SamplingMask& mask, const SparseConfig& cfg,
                                     unsigned threads = 1) {
    detail::require(mask.nx() == observed.nx() && mask.ny() == observed.ny(),
                    "reconstruct_field: mask shape mismatch");
    const GridSpec& grid = observed.grid();
    const Room& room = observed.room();
    const std::vector<std::size_t> obs = mask.observed();
    std::vector<Vec3> positions, targets;
    for (std::size_t f : obs)
        positions.push_back(grid.fine_point(room, static_cast<int>(f / grid.ny()), static_cast<int>(f % grid.ny())));
    for (int i = 0; i < grid.nx(); ++i)
        for (int j = 0; j < grid.ny(); ++j) targets.push_back(grid.fine_point(room, i, j));

    FieldTensor out(observed.meta());
    parallel_for(observed.k_count(), threads, [&](std::size_t k) {
        VectorXc s(static_cast<Eigen::Index>(obs.size()));
        for (std::size_t m = 0; m < obs.size(); ++m) s[m] = observed.slice(k)[obs[m]];
        const SparseReconstructor rec(positions, targets, observed.freqs().omega(k), room.c(), cfg);
        const VectorXc est = rec.reconstruct(s);
        for (std::size_t c = 0; c < targets.size(); ++c) out.slice(k)[c] = est[static_cast<Eigen::Index>(c)];
    });
    return out;
}

}  // namespace sfr
