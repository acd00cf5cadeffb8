#pragma once

// Ingestion of measured impulse-response grids.
//
// A measurement manifest (JSON) describes one room:
//
//   {
//     "schema_version": 1,
//     "room": {"name": "Room B", "lx": 4.16, "ly": 6.46, "lz": 2.30, "t60": 0.39},
//     "grid": {"I": 8, "J": 8, "up_x": 4, "up_y": 4},
//     "heights": [1.0],
//     "sources": [[0.0, 0.0, 0.0], [1.7, 2.4, 0.0]],
//     "sample_rate": 48000,
//     "records": [{"i": 0, "j": 0, "height": 0, "source": 0, "file": "h0/s0/00_00.f32"}, ...]
//   }
//
// (i, j) index the fine grid, `height` and `source` index the arrays above and
// `file` is relative to the data root. Sample files are mono: *.f32 / *.bin /
// *.raw hold little-endian float32, *.f64 little-endian float64, and *.txt /
// *.csv whitespace- or comma-separated numbers.

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfr/core_model.hpp"
#include "sfr/error.hpp"
#include "sfr/tensor_io.hpp"

namespace sfr {

struct ImpulseResponseRecord {
    int i = 0, j = 0;
    int height = 0;  // index into MeasurementManifest::heights
    int source = 0;  // index into MeasurementManifest::sources
    double sample_rate = 48000.0;
    std::vector<double> samples;  // empty until loaded
    fs::path file;                // absolute or data-root-relative path
};

struct MeasurementManifest {
    std::string room_name;
    Room room;
    GridSpec grid;  // z_o is replaced by the selected height
    std::vector<double> heights;
    std::vector<Vec3> sources;
    double sample_rate = 48000.0;
    std::optional<SamplingMask> available;  // union over heights and sources
};

struct MeasurementSet {
    MeasurementManifest manifest;
    std::vector<ImpulseResponseRecord> records;
};

namespace detail {

inline std::string lowercase_ext(const fs::path& p) {
    std::string e = p.extension().string();
    for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return e;
}

}  // namespace detail

inline std::vector<double> load_samples(const fs::path& file) {
    const std::string ext = detail::lowercase_ext(file);
    std::vector<double> out;
    if (ext == ".txt" || ext == ".csv") {
        std::ifstream in(file);
        if (!in) throw DataError("cannot open " + file.string());
        std::string token;
        std::size_t line_no = 0;
        for (std::string line; std::getline(in, line);) {
            ++line_no;
            for (auto& ch : line)
                if (ch == ',' || ch == ';') ch = ' ';
            std::istringstream ls(line);
            while (ls >> token) {
                try {
                    std::size_t used = 0;
                    const double v = std::stod(token, &used);
                    if (used != token.size()) throw std::invalid_argument(token);
                    out.push_back(v);
                } catch (const std::exception&) {
                    throw DataError(detail::concat(file.string(), ":", line_no, ": not a number: '", token, "'"));
                }
            }
        }
    } else if (ext == ".f32" || ext == ".bin" || ext == ".raw" || ext == ".f64") {
        const bool wide = ext == ".f64";
        const std::size_t width = wide ? 8 : 4;
        const auto bytes = detail::read_bytes(file);
        if (bytes.size() % width != 0)
            throw DataError(detail::concat(file.string(), ": size ", bytes.size(), " is not a multiple of ", width));
        out.reserve(bytes.size() / width);
        for (std::size_t off = 0; off < bytes.size(); off += width) {
            if (wide) {
                std::uint64_t u = 0;
                for (int b = 0; b < 8; ++b)
                    u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
                out.push_back(std::bit_cast<double>(u));
            } else {
                out.push_back(detail::get_f32le(bytes.data() + off));
            }
        }
    } else {
        throw DataError(file.string() + ": unsupported sample file extension '" + ext + "'");
    }
    if (out.empty()) throw DataError(file.string() + ": no samples");
    for (std::size_t n = 0; n < out.size(); ++n)
        if (!std::isfinite(out[n])) throw DataError(detail::concat(file.string(), ": non-finite sample ", n));
    return out;
}

/// Writes samples as little-endian float32 (the .f32 layout).
inline void save_samples_f32(const fs::path& file, std::span<const double> samples) {
    std::vector<unsigned char> buf;
    buf.reserve(samples.size() * 4);
    for (double v : samples) detail::put_f32le(buf, static_cast<float>(v));
    fs::create_directories(file.parent_path());
    detail::write_bytes(file, buf.data(), buf.size());
}

/// Exact-frequency DFT sum_n p[n] exp(-j w_k n / fs) at every analysis frequency.
inline std::vector<cplx> ir_to_rtf(std::span<const double> samples, double sample_rate, const FrequencySet& freqs) {
    detail::require(sample_rate > 0, "ir_to_rtf: sample rate must be positive");
    detail::require(!samples.empty(), "ir_to_rtf: empty impulse response");
    for (double f : freqs.hz())
        detail::require(f < 0.5 * sample_rate,
                        detail::concat("ir_to_rtf: ", f, " Hz is not below Nyquist (", 0.5 * sample_rate, " Hz)"));
    // The phasor is advanced by multiplication and re-anchored every kBlock
    // samples so rounding does not accumulate over long responses.
    constexpr std::size_t kBlock = 256;
    std::vector<cplx> out(freqs.size());
    for (std::size_t k = 0; k < freqs.size(); ++k) {
        const double step_angle = -freqs.omega(k) / sample_rate;
        const cplx step = std::polar(1.0, step_angle);
        cplx acc(0.0, 0.0);
        for (std::size_t start = 0; start < samples.size(); start += kBlock) {
            cplx ph = std::polar(1.0, step_angle * static_cast<double>(start));
            const std::size_t end = std::min(samples.size(), start + kBlock);
            for (std::size_t n = start; n < end; ++n) {
                acc += samples[n] * ph;
                ph *= step;
            }
        }
        out[k] = acc;
    }
    return out;
}

inline std::vector<cplx> ir_to_rtf(const ImpulseResponseRecord& r, const FrequencySet& freqs) {
    detail::require(!r.samples.empty(), "ir_to_rtf: record samples are not loaded");
    return ir_to_rtf(r.samples, r.sample_rate, freqs);
}

/// Parses and validates a manifest, checks every referenced file, and loads
/// samples when `load` is set. Problems are collected and reported together;
/// unmeasured grid positions are not an error and show up in `available`.
inline MeasurementSet import_measurements(const fs::path& manifest_path, const fs::path& data_root,
                                          bool load = true) {
    const auto bytes = detail::read_bytes(manifest_path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(manifest_path.string() + ": malformed JSON at byte " + std::to_string(e.byte));
    }

    std::vector<std::string> problems;
    std::optional<MeasurementSet> set;
    try {
        const auto& r = j.at("room");
        const auto& g = j.at("grid");
        GridSpec grid(g.at("I").get<int>(), g.at("J").get<int>(), g.value("up_x", 1.0), g.value("up_y", 1.0), 0.0);
        Room room(r.at("lx").get<double>(), r.at("ly").get<double>(), r.at("lz").get<double>(),
                  r.at("t60").get<double>(), r.value("c", kSpeedOfSound));
        MeasurementManifest m{r.value("name", std::string()), room, grid, j.at("heights").get<std::vector<double>>(),
                              {}, j.value("sample_rate", 48000.0), std::nullopt};
        for (const auto& s : j.at("sources")) {
            const auto v = s.get<std::vector<double>>();
            if (v.size() != 3) throw DataError("source position must have 3 coordinates");
            m.sources.emplace_back(v[0], v[1], v[2]);
        }
        if (m.heights.empty()) problems.push_back("manifest lists no heights");
        for (double h : m.heights)
            if (h < 0 || h > room.lz()) problems.push_back(detail::concat("height ", h, " m is outside the room"));
        for (std::size_t s = 0; s < m.sources.size(); ++s)
            if (!room.contains(m.sources[s])) problems.push_back(detail::concat("source ", s, " is outside the room"));
        if (!(m.sample_rate > 0)) problems.push_back("sample_rate must be positive");
        set = MeasurementSet{std::move(m), {}};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }

    auto& m = set->manifest;
    std::map<std::tuple<int, int, int, int>, std::string> seen;
    std::vector<std::uint8_t> avail(m.grid.cells(), 0);
    const auto& recs = j.at("records");
    for (std::size_t n = 0; n < recs.size(); ++n) {
        try {
            const auto& e = recs[n];
            ImpulseResponseRecord rec;
            rec.i = e.at("i").get<int>();
            rec.j = e.at("j").get<int>();
            rec.height = e.at("height").get<int>();
            rec.source = e.at("source").get<int>();
            rec.sample_rate = m.sample_rate;
            const std::string file = e.at("file").get<std::string>();
            rec.file = data_root / file;
            if (rec.i < 0 || rec.i >= m.grid.nx() || rec.j < 0 || rec.j >= m.grid.ny()) {
                problems.push_back(detail::concat("record ", n, " (", file, "): grid index (", rec.i, ",", rec.j,
                                                  ") outside ", m.grid.nx(), "x", m.grid.ny()));
                continue;
            }
            if (rec.height < 0 || rec.height >= static_cast<int>(m.heights.size()) || rec.source < 0 ||
                rec.source >= static_cast<int>(m.sources.size())) {
                problems.push_back(detail::concat("record ", n, " (", file, "): unknown height or source index"));
                continue;
            }
            const auto key = std::make_tuple(rec.i, rec.j, rec.height, rec.source);
            if (auto it = seen.find(key); it != seen.end()) {
                problems.push_back(detail::concat("duplicate record for grid (", rec.i, ",", rec.j, ") height ",
                                                  rec.height, " source ", rec.source, ": '", it->second, "' and '",
                                                  file, "'"));
                continue;
            }
            seen.emplace(key, file);
            if (!fs::is_regular_file(rec.file)) {
                problems.push_back("missing file " + rec.file.string());
                continue;
            }
            if (load) rec.samples = load_samples(rec.file);
            avail[static_cast<std::size_t>(rec.i) * m.grid.ny() + rec.j] = 1;
            set->records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            problems.push_back(detail::concat("record ", n, ": ", e.what()));
        } catch (const DataError& e) {
            problems.push_back(e.what());
        }
    }
    if (set->records.empty() && problems.empty()) problems.push_back("manifest lists no records");
    if (!problems.empty()) {
        std::string msg = manifest_path.string() + ": " + std::to_string(problems.size()) + " problem(s)";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }
    m.available = SamplingMask(m.grid.nx(), m.grid.ny(), std::move(avail));
    return std::move(*set);
}

struct AssembledField {
    FieldTensor field;       // zero at unmeasured cells
    SamplingMask available;  // measured cells
};

/// RTF tensor of one (height, source) pair. Records without loaded samples
/// are read from disk on demand.
inline AssembledField assemble_field_tensor(const MeasurementSet& set, const FrequencySet& freqs, int height,
                                            int source) {
    const auto& m = set.manifest;
    detail::require(height >= 0 && height < static_cast<int>(m.heights.size()), "assemble_field_tensor: bad height");
    detail::require(source >= 0 && source < static_cast<int>(m.sources.size()), "assemble_field_tensor: bad source");
    const GridSpec grid(m.grid.i_count(), m.grid.j_count(), m.grid.up_x(), m.grid.up_y(), m.heights[height]);
    FieldTensor field(TensorMeta{m.room, grid, freqs, m.sources[source]});
    std::vector<std::uint8_t> avail(grid.cells(), 0);
    std::size_t used = 0;
    for (const auto& r : set.records) {
        if (r.height != height || r.source != source) continue;
        const std::vector<cplx> rtf = r.samples.empty() ? ir_to_rtf(load_samples(r.file), r.sample_rate, freqs)
                                                        : ir_to_rtf(r.samples, r.sample_rate, freqs);
        for (std::size_t k = 0; k < freqs.size(); ++k) field(k, r.i, r.j) = rtf[k];
        avail[static_cast<std::size_t>(r.i) * grid.ny() + r.j] = 1;
        ++used;
    }
    if (used == 0)
        throw DataError(detail::concat("assemble_field_tensor: no records for height ", height, " source ", source));
    return {std::move(field), SamplingMask(grid.nx(), grid.ny(), std::move(avail))};
}

}  // namespace sfr
