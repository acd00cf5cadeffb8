#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sfr/core_model.hpp"
#include "sfr/error.hpp"

namespace sfr {

inline double to_db(double linear) {
    return linear == 0.0 ? -std::numeric_limits<double>::infinity() : 10.0 * std::log10(linear);
}

/// Linear NMSE per frequency.
struct NmseCurve {
    std::vector<double> freqs_hz;
    std::vector<double> linear;

    std::size_t size() const noexcept { return linear.size(); }
    std::vector<double> db() const {
        std::vector<double> out(linear.size());
        for (std::size_t k = 0; k < linear.size(); ++k) out[k] = to_db(linear[k]);
        return out;
    }
    double mean() const {
        return linear.empty() ? 0.0 : std::accumulate(linear.begin(), linear.end(), 0.0) / linear.size();
    }
};

/// Sum over the fine grid (or over `available` cells only, for measured rooms
/// with unmeasured positions) of |s - s_hat|^2 / |s|^2, per frequency.
inline NmseCurve nmse_per_frequency(const FieldTensor& truth, const FieldTensor& estimate,
                                    const SamplingMask* available = nullptr) {
    detail::require(truth.k_count() == estimate.k_count() && truth.nx() == estimate.nx() &&
                        truth.ny() == estimate.ny(),
                    "nmse_per_frequency: truth and estimate shapes differ");
    detail::require(truth.freqs() == estimate.freqs(), "nmse_per_frequency: frequency sets differ");
    if (available)
        detail::require(available->nx() == truth.nx() && available->ny() == truth.ny(),
                        "nmse_per_frequency: availability mask shape differs");

    NmseCurve curve{truth.freqs().hz(), std::vector<double>(truth.k_count())};
    const std::size_t cells = truth.slice_size();
    for (std::size_t k = 0; k < truth.k_count(); ++k) {
        const cplx* s = truth.slice(k);
        const cplx* e = estimate.slice(k);
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < cells; ++c) {
            if (available && !available->at(c)) continue;
            num += std::norm(s[c] - e[c]);
            den += std::norm(s[c]);
        }
        if (den == 0.0)
            throw DataError(detail::concat("nmse_per_frequency: truth has zero energy at ", truth.freqs().hz(k),
                                           " Hz (k=", k, ")"));
        curve.linear[k] = num / den;
    }
    return curve;
}

/// Mean of all M*K linear NMSE values.
inline double mnmse(std::span<const NmseCurve> curves) {
    detail::require(!curves.empty(), "mnmse: no curves");
    const std::size_t K = curves.front().size();
    double sum = 0.0;
    for (const auto& c : curves) {
        detail::require(c.size() == K, "mnmse: curves have different lengths");
        sum += std::accumulate(c.linear.begin(), c.linear.end(), 0.0);
    }
    return sum / (static_cast<double>(curves.size()) * K);
}

/// Per-frequency aggregate over trials: linear mean and 95% normal intervals
/// computed both on linear values and on dB values.
struct NmseSummary {
    std::vector<double> freqs_hz;
    std::vector<double> mean_linear;
    std::vector<double> ci_linear_lo, ci_linear_hi;
    std::vector<double> mean_db_of_trials;
    std::vector<double> ci_db_lo, ci_db_hi;
    std::size_t trials = 0;
};

inline NmseSummary summarize(std::span<const NmseCurve> curves) {
    detail::require(!curves.empty(), "summarize: no curves");
    const std::size_t K = curves.front().size(), M = curves.size();
    NmseSummary s;
    s.freqs_hz = curves.front().freqs_hz;
    s.trials = M;
    const auto fill = [&](auto value_of, std::vector<double>& mean, std::vector<double>& lo, std::vector<double>& hi) {
        mean.assign(K, 0.0);
        lo.assign(K, 0.0);
        hi.assign(K, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            double m = 0.0;
            for (const auto& c : curves) m += value_of(c, k);
            m /= M;
            double var = 0.0;
            for (const auto& c : curves) var += (value_of(c, k) - m) * (value_of(c, k) - m);
            const double half = M > 1 ? 1.96 * std::sqrt(var / (M - 1)) / std::sqrt(double(M)) : 0.0;
            mean[k] = m;
            lo[k] = m - half;
            hi[k] = m + half;
        }
    };
    for (const auto& c : curves) detail::require(c.size() == K, "summarize: curves have different lengths");
    fill([](const NmseCurve& c, std::size_t k) { return c.linear[k]; }, s.mean_linear, s.ci_linear_lo, s.ci_linear_hi);
    fill([](const NmseCurve& c, std::size_t k) { return to_db(c.linear[k]); }, s.mean_db_of_trials, s.ci_db_lo,
         s.ci_db_hi);
    return s;
}

namespace detail {
inline std::string csv_number(double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}
}  // namespace detail

/// `freq_hz,nmse_linear,nmse_db`, one row per frequency.
inline void write_nmse_csv(std::ostream& os, const std::vector<double>& freqs_hz, const std::vector<double>& linear) {
    os << "freq_hz,nmse_linear,nmse_db\n";
    for (std::size_t k = 0; k < linear.size(); ++k)
        os << detail::csv_number(freqs_hz[k]) << ',' << detail::csv_number(linear[k]) << ','
           << detail::csv_number(to_db(linear[k])) << '\n';
}

inline void write_nmse_ci_csv(std::ostream& os, const NmseSummary& s) {
    os << "freq_hz,trials,mean_linear,ci95_linear_lo,ci95_linear_hi,mean_db,ci95_db_lo,ci95_db_hi\n";
    for (std::size_t k = 0; k < s.freqs_hz.size(); ++k)
        os << detail::csv_number(s.freqs_hz[k]) << ',' << s.trials << ',' << detail::csv_number(s.mean_linear[k])
           << ',' << detail::csv_number(s.ci_linear_lo[k]) << ',' << detail::csv_number(s.ci_linear_hi[k]) << ','
           << detail::csv_number(s.mean_db_of_trials[k]) << ',' << detail::csv_number(s.ci_db_lo[k]) << ','
           << detail::csv_number(s.ci_db_hi[k]) << '\n';
}

struct MnmseRow {
    std::string room, model;
    std::size_t n_mic = 0;
    double mnmse_linear = 0.0;
};

/// `room,model,n_mic,mnmse_db`; an exact reconstruction is written as "exact".
inline void write_mnmse_csv(std::ostream& os, std::span<const MnmseRow> rows) {
    os << "room,model,n_mic,mnmse_db\n";
    for (const auto& r : rows)
        os << r.room << ',' << r.model << ',' << r.n_mic << ','
           << (r.mnmse_linear == 0.0 ? std::string("exact") : detail::csv_number(to_db(r.mnmse_linear))) << '\n';
}

}  // namespace sfr
