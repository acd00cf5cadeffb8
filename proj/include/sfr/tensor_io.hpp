#pragma once

// Tensor directory format:
//
//   <dir>/manifest.json  UTF-8 JSON: schema_version, room {lx,ly,lz,t60,c},
//                        grid {I,J,up_x,up_y,z_o}, freqs_hz, source_xyz,
//                        dtype "c64", byte_order "little", axis_order "k,x,y"
//   <dir>/field.bin      float32 (re, im) pairs, little endian, C order [K][X][Y]
//   <dir>/mask.bin       optional, one byte (0/1) per cell, C order [X][Y]

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfr/core_model.hpp"
#include "sfr/error.hpp"

namespace sfr {

namespace fs = std::filesystem;

inline constexpr int kTensorSchemaVersion = 1;

struct TensorFile {
    FieldTensor field;
    std::optional<SamplingMask> mask;
};

namespace detail {

inline std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot create " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw DataError("write failed for " + path.string());
}

inline void put_f32le(std::vector<unsigned char>& buf, float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) buf.push_back(static_cast<unsigned char>(u >> (8 * b)));
}

inline float get_f32le(const char* p) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
    return std::bit_cast<float>(u);
}

inline nlohmann::json meta_to_json(const TensorMeta& m) {
    nlohmann::json j;
    j["schema_version"] = kTensorSchemaVersion;
    j["room"] = {{"lx", m.room.lx()}, {"ly", m.room.ly()}, {"lz", m.room.lz()}, {"t60", m.room.t60()},
                 {"c", m.room.c()}};
    j["grid"] = {{"I", m.grid.i_count()}, {"J", m.grid.j_count()}, {"up_x", m.grid.up_x()},
                 {"up_y", m.grid.up_y()}, {"z_o", m.grid.z_o()}};
    j["freqs_hz"] = m.freqs.hz();
    j["source_xyz"] = {m.source.x(), m.source.y(), m.source.z()};
    j["dtype"] = "c64";
    j["byte_order"] = "little";
    j["axis_order"] = "k,x,y";
    return j;
}

inline TensorMeta meta_from_json(const nlohmann::json& j, const std::string& where) {
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kTensorSchemaVersion)
            throw DataError(where + ": unsupported schema_version " + std::to_string(version));
        const auto expect = [&](const char* key, const char* value) {
            if (j.at(key).get<std::string>() != value)
                throw DataError(where + ": " + key + " must be \"" + value + "\", got \"" +
                                j.at(key).get<std::string>() + "\"");
        };
        expect("dtype", "c64");
        expect("byte_order", "little");
        expect("axis_order", "k,x,y");
        const auto& r = j.at("room");
        Room room(r.at("lx").get<double>(), r.at("ly").get<double>(), r.at("lz").get<double>(),
                  r.at("t60").get<double>(), r.value("c", kSpeedOfSound));
        const auto& g = j.at("grid");
        GridSpec grid(g.at("I").get<int>(), g.at("J").get<int>(), g.at("up_x").get<double>(),
                      g.at("up_y").get<double>(), g.at("z_o").get<double>());
        const auto src = j.at("source_xyz").get<std::vector<double>>();
        if (src.size() != 3) throw DataError(where + ": source_xyz must have 3 entries");
        return TensorMeta{room, grid, FrequencySet(j.at("freqs_hz").get<std::vector<double>>()),
                          Vec3(src[0], src[1], src[2])};
    } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw DataError(where + ": " + e.what());
    }
}

}  // namespace detail

inline void write_tensor(const fs::path& dir, const FieldTensor& field, const SamplingMask* mask = nullptr) {
    if (mask)
        detail::require(mask->nx() == field.nx() && mask->ny() == field.ny(), "write_tensor: mask shape mismatch");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());

    const std::string manifest = detail::meta_to_json(field.meta()).dump(2) + "\n";
    detail::write_bytes(dir / "manifest.json", manifest.data(), manifest.size());

    std::vector<unsigned char> buf;
    buf.reserve(field.values().size() * 8);
    for (const auto& v : field.values()) {
        detail::put_f32le(buf, static_cast<float>(v.real()));
        detail::put_f32le(buf, static_cast<float>(v.imag()));
    }
    detail::write_bytes(dir / "field.bin", buf.data(), buf.size());

    const fs::path mask_path = dir / "mask.bin";
    if (mask)
        detail::write_bytes(mask_path, mask->cells().data(), mask->cells().size());
    else
        fs::remove(mask_path, ec);
}

inline TensorMeta read_tensor_meta(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    const auto bytes = detail::read_bytes(mpath);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(mpath.string() + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return detail::meta_from_json(j, mpath.string());
}

inline TensorFile read_tensor(const fs::path& dir) {
    TensorMeta meta = read_tensor_meta(dir);
    const std::size_t K = meta.freqs.size(), cells = meta.grid.cells();
    const std::size_t expected = K * cells * 8;

    const fs::path fpath = dir / "field.bin";
    const auto bytes = detail::read_bytes(fpath);
    if (bytes.size() != expected)
        throw DataError(detail::concat(fpath.string(), ": expected ", expected, " bytes for shape [", K, ",",
                                       meta.grid.nx(), ",", meta.grid.ny(), "], got ", bytes.size(),
                                       bytes.size() < expected ? " (payload truncated at byte offset "
                                                               : " (trailing data from byte offset ",
                                       std::min(bytes.size(), expected), ")"));
    std::vector<cplx> values(K * cells);
    for (std::size_t n = 0; n < values.size(); ++n) {
        const float re = detail::get_f32le(bytes.data() + 8 * n);
        const float im = detail::get_f32le(bytes.data() + 8 * n + 4);
        if (!std::isfinite(re) || !std::isfinite(im))
            throw DataError(detail::concat(fpath.string(), ": non-finite value at byte offset ", 8 * n));
        values[n] = cplx(re, im);
    }
    TensorFile out{FieldTensor(std::move(meta), std::move(values)), std::nullopt};

    const fs::path mpath = dir / "mask.bin";
    if (fs::exists(mpath)) {
        const auto mb = detail::read_bytes(mpath);
        if (mb.size() != cells)
            throw DataError(detail::concat(mpath.string(), ": expected ", cells, " bytes, got ", mb.size()));
        std::vector<std::uint8_t> cells_v(cells);
        for (std::size_t c = 0; c < cells; ++c) {
            const auto v = static_cast<std::uint8_t>(mb[c]);
            if (v > 1) throw DataError(detail::concat(mpath.string(), ": byte ", int(v), " at offset ", c, " is not 0/1"));
            cells_v[c] = v;
        }
        try {
            out.mask = SamplingMask(out.field.nx(), out.field.ny(), std::move(cells_v));
        } catch (const std::invalid_argument& e) {
            throw DataError(mpath.string() + ": " + e.what());
        }
    }
    return out;
}

inline bool is_tensor_dir(const fs::path& dir) {
    return fs::is_regular_file(dir / "manifest.json") && fs::is_regular_file(dir / "field.bin");
}

/// FNV-1a 64-bit.
class Digest {
public:
    void update(const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001B3ULL;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::uint64_t value() const noexcept { return h_; }
    std::string hex() const {
        static constexpr char digits[] = "0123456789abcdef";
        std::string s(16, '0');
        for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h_ >> (4 * i)) & 0xF];
        return s;
    }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ULL;
};

/// Digest over the relative paths and contents of every regular file below
/// `root`, in sorted order, skipping files whose name is in `skip`.
inline std::string directory_digest(const fs::path& root, const std::set<std::string>& skip = {}) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && !skip.count(e.path().filename().string())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Digest d;
    for (const auto& f : files) {
        d.update(fs::relative(f, root).generic_string());
        const auto bytes = detail::read_bytes(f);
        d.update(bytes.data(), bytes.size());
    }
    return d.hex();
}

}  // namespace sfr
