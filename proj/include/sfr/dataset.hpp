#pragma once

// Simulated datasets: one tensor directory per room realization plus an
// index file.
//
//   <out>/dataset.json   sampler config, grid, frequencies, per-entry room and
//                        source, and optional train/val/test splits
//   <out>/000000/        tensor directory (see tensor_io.hpp)
//   <out>/000001/ ...

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfr/core_model.hpp"
#include "sfr/modal_sim.hpp"
#include "sfr/parallel.hpp"
#include "sfr/tensor_io.hpp"

namespace sfr {

inline constexpr int kDatasetSchemaVersion = 1;

inline std::string to_string(SourcePlacement p) { return p == SourcePlacement::corner ? "corner" : "floor"; }

inline SourcePlacement parse_source_placement(const std::string& s) {
    if (s == "floor") return SourcePlacement::floor_uniform;
    if (s == "corner") return SourcePlacement::corner;
    throw std::invalid_argument("unknown source placement '" + s + "' (expected floor or corner)");
}

// ---------------------------------------------------------------------------
// Sampler config <-> JSON
//
// Keys (all optional except family): family, seed, volume, lx, lz, ly_bounds,
// t60 ([lo, hi] pairs), fixed_t60 (number or null), base {lx, ly, lz, t60},
// delta, include_z_modes, source ("floor" | "corner"), c, max_retries.
// Missing keys take the family defaults.

inline nlohmann::json room_to_json(const Room& r) {
    return {{"lx", r.lx()}, {"ly", r.ly()}, {"lz", r.lz()}, {"t60", r.t60()}, {"c", r.c()}};
}

inline Room room_from_json(const nlohmann::json& j) {
    return Room(j.at("lx").get<double>(), j.at("ly").get<double>(), j.at("lz").get<double>(),
                j.at("t60").get<double>(), j.value("c", kSpeedOfSound));
}

inline nlohmann::json sampler_to_json(const RoomSamplerConfig& c) {
    const auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
    nlohmann::json j;
    j["family"] = to_string(c.family);
    j["seed"] = c.seed;
    j["volume"] = range(c.volume);
    j["lx"] = range(c.lx);
    j["lz"] = range(c.lz);
    j["ly_bounds"] = range(c.ly_bounds);
    j["t60"] = range(c.t60);
    j["fixed_t60"] = c.fixed_t60 ? nlohmann::json(*c.fixed_t60) : nlohmann::json(nullptr);
    j["base"] = room_to_json(c.base);
    j["delta"] = c.delta;
    j["include_z_modes"] = c.include_z_modes;
    j["source"] = to_string(c.source);
    j["c"] = c.c;
    j["max_retries"] = c.max_retries;
    return j;
}

inline RoomSamplerConfig sampler_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known{"family", "seed",  "volume", "lx", "lz",     "ly_bounds",  "t60",
                                             "fixed_t60", "base", "delta", "include_z_modes", "source", "c",
                                             "max_retries"};
    detail::require(j.is_object(), "sampler config must be a JSON object");
    for (const auto& [key, _] : j.items())
        detail::require(known.count(key) > 0, "sampler config: unknown key '" + key + "'");
    try {
        const RoomFamily family = parse_family(j.value("family", std::string("extended")));
        const std::uint64_t seed = j.value("seed", std::uint64_t{0});
        RoomSamplerConfig c = family == RoomFamily::original    ? RoomSamplerConfig::original(seed)
                              : family == RoomFamily::perturbed ? RoomSamplerConfig::perturbed(rooms::listening_room(), 0.0, seed)
                                                                : RoomSamplerConfig::extended(seed);
        const auto range = [&](const char* key, Range& r) {
            if (!j.contains(key)) return;
            const auto v = j.at(key).get<std::vector<double>>();
            detail::require(v.size() == 2, detail::concat("sampler config: '", key, "' must be [lo, hi]"));
            r = {v[0], v[1]};
        };
        range("volume", c.volume);
        range("lx", c.lx);
        range("lz", c.lz);
        range("ly_bounds", c.ly_bounds);
        range("t60", c.t60);
        if (j.contains("fixed_t60"))
            c.fixed_t60 = j.at("fixed_t60").is_null() ? std::nullopt : std::optional(j.at("fixed_t60").get<double>());
        if (j.contains("base")) c.base = room_from_json(j.at("base"));
        c.delta = j.value("delta", c.delta);
        c.include_z_modes = j.value("include_z_modes", c.include_z_modes);
        if (j.contains("source")) c.source = parse_source_placement(j.at("source").get<std::string>());
        c.c = j.value("c", c.c);
        c.max_retries = j.value("max_retries", c.max_retries);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("sampler config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

struct SplitFractions {
    double train = 0.824, val = 0.165;  // test takes the remainder
};

struct DatasetOptions {
    double f_max = 400.0;  // modal cutoff
    std::optional<SplitFractions> splits;
    unsigned threads = 0;
};

struct DatasetSplits {
    std::vector<std::size_t> train, val, test;
};

/// Contiguous index ranges with sizes round(count * fraction); test gets the rest.
inline DatasetSplits make_splits(std::size_t count, const SplitFractions& f) {
    detail::require(f.train >= 0 && f.val >= 0 && f.train + f.val <= 1.0 + 1e-12,
                    "make_splits: fractions must be >= 0 and sum to at most 1");
    const auto n_train = std::min<std::size_t>(count, static_cast<std::size_t>(std::llround(f.train * count)));
    const auto n_val = std::min<std::size_t>(count - n_train, static_cast<std::size_t>(std::llround(f.val * count)));
    DatasetSplits s;
    for (std::size_t i = 0; i < count; ++i) (i < n_train ? s.train : i < n_train + n_val ? s.val : s.test).push_back(i);
    return s;
}

inline std::string entry_dir_name(std::size_t index) {
    std::string s = std::to_string(index);
    return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

/// Simulates `count` rooms and writes them below `out`. Each index uses its
/// own RNG stream, so the output does not depend on the thread count.
inline nlohmann::json generate_dataset(const RoomSamplerConfig& cfg, std::size_t count, const GridSpec& grid,
                                       const FrequencySet& freqs, const fs::path& out, const DatasetOptions& opt = {}) {
    cfg.validate();
    detail::require(opt.f_max > 0, "generate_dataset: f_max must be positive");
    detail::require(!freqs.empty(), "generate_dataset: empty frequency set");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create directory " + out.string() + ": " + ec.message());

    std::vector<nlohmann::json> entries(count);
    parallel_for(count, opt.threads, [&](std::size_t i) {
        const RoomDraw draw = sample_room(cfg, i);
        const ModeSet modes = enumerate_modes(draw.room, opt.f_max, cfg.include_z_modes);
        const FieldTensor field = simulate_field(draw.room, modes, draw.source, grid, freqs);
        const std::string name = entry_dir_name(i);
        try {
            write_tensor(out / name, field);
        } catch (const DataError& e) {
            throw DataError(detail::concat("room ", i, ": ", e.what()));
        }
        entries[i] = {{"index", i},
                      {"dir", name},
                      {"room", room_to_json(draw.room)},
                      {"source_xyz", {draw.source.x(), draw.source.y(), draw.source.z()}},
                      {"modes", modes.size()}};
    });

    nlohmann::json index;
    index["schema_version"] = kDatasetSchemaVersion;
    index["sampler"] = sampler_to_json(cfg);
    index["count"] = count;
    index["f_max"] = opt.f_max;
    index["grid"] = {{"I", grid.i_count()}, {"J", grid.j_count()}, {"up_x", grid.up_x()}, {"up_y", grid.up_y()},
                     {"z_o", grid.z_o()}};
    index["freqs_hz"] = freqs.hz();
    index["entries"] = entries;
    if (opt.splits) {
        const DatasetSplits s = make_splits(count, *opt.splits);
        index["splits"] = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
    }
    const std::string text = index.dump(2) + "\n";
    detail::write_bytes(out / "dataset.json", text.data(), text.size());
    return index;
}

inline nlohmann::json read_dataset_index(const fs::path& dir) {
    const fs::path p = dir / "dataset.json";
    const auto bytes = detail::read_bytes(p);
    try {
        auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
        if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
            throw DataError(p.string() + ": unsupported schema_version");
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(p.string() + ": malformed JSON at byte " + std::to_string(e.byte));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

}  // namespace sfr
