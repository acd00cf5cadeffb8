#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "sfr/core_model.hpp"
#include "sfr/dataset.hpp"
#include "sfr/error.hpp"
#include "sfr/measurements.hpp"
#include "sfr/metrics.hpp"
#include "sfr/modal_sim.hpp"
#include "sfr/sound_zones.hpp"
#include "sfr/sparse_recon.hpp"
#include "sfr/tensor_io.hpp"

#ifndef SFR_VERSION
#define SFR_VERSION "0.0.0"
#endif

namespace sfr::cli {
namespace {

using nlohmann::json;

constexpr const char* kPartialMarker = "_PARTIAL";
constexpr const char* kProvenanceFile = "provenance.json";

// Options whose values are filesystem paths; they are made absolute in the
// provenance record so a replay does not depend on the working directory.
const std::set<std::string> kPathOptions{"out",     "truth",     "estimate", "estimates", "in",      "mask",
                                         "manifest", "data-root", "dataset",  "available", "nmse",   "contrast"};
// Options that must not change results; left out of the config hash.
const std::set<std::string> kUnhashedOptions{"out", "threads"};

struct Common {
    std::string out, config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
};

struct GridOpts {
    int i = 8, j = 8;
    double up_x = 4, up_y = 4, z_o = 1.0;
    GridSpec spec() const { return GridSpec(i, j, up_x, up_y, z_o); }
};

struct FreqOpts {
    double lo = 30, hi = 300;
    int fraction = 12;
    FrequencySet set() const { return build_frequency_set(lo, hi, fraction); }
};

struct RoomOpts {
    std::string preset = "listening_room";
    std::vector<double> dims;  // lx ly lz t60
    double c = kSpeedOfSound;

    Room room() const {
        if (!dims.empty()) return Room(dims[0], dims[1], dims[2], dims[3], c);
        Room r = preset == "room_b"         ? rooms::room_b()
                 : preset == "vr_lab"       ? rooms::vr_lab()
                 : preset == "product_room" ? rooms::product_room()
                                            : rooms::listening_room();
        return Room(r.lx(), r.ly(), r.lz(), r.t60(), c);
    }
};

const std::vector<std::string> kRoomPresets{"listening_room", "room_b", "vr_lab", "product_room"};

void add_common(CLI::App* app, Common& c, bool seed_required) {
    app->add_option("--config", c.config,
                    "Read option values from a TOML/INI file (key = value); command line and environment win");
    app->add_option("--out", c.out, "Output directory")->required();
    auto* seed = app->add_option("--seed", c.seed, "Master seed");
    if (seed_required) seed->required();
    app->add_option("--threads", c.threads, "Worker threads (0 = hardware concurrency); results do not depend on it")
        ->capture_default_str();
}

void add_grid(CLI::App* app, GridOpts& g) {
    app->add_option("--grid-i", g.i, "Coarse grid points along x")->capture_default_str();
    app->add_option("--grid-j", g.j, "Coarse grid points along y")->capture_default_str();
    app->add_option("--up-x", g.up_x, "Upsampling factor along x")->capture_default_str();
    app->add_option("--up-y", g.up_y, "Upsampling factor along y")->capture_default_str();
    app->add_option("--z-o", g.z_o, "Height of the observation plane (m)")->capture_default_str();
}

void add_freq(CLI::App* app, FreqOpts& f) {
    app->add_option("--f-lo", f.lo, "Lowest analysis frequency (Hz)")->capture_default_str();
    app->add_option("--f-hi", f.hi, "Highest analysis frequency (Hz)")->capture_default_str();
    app->add_option("--fraction", f.fraction, "Bands per octave")->capture_default_str();
}

void add_room(CLI::App* app, RoomOpts& r) {
    app->add_option("--room", r.preset, "Room preset")->check(CLI::IsMember(kRoomPresets))->capture_default_str();
    app->add_option("--room-dims", r.dims, "Custom room: lx ly lz t60")->expected(4);
    app->add_option("--c", r.c, "Speed of sound (m/s)")->capture_default_str();
}

void add_sparse(CLI::App* app, SparseConfig& s, std::optional<double>& lambda) {
    app->add_option("--lambda", lambda, "Fixed lasso weight (default: held-out sweep)");
    app->add_option("--n-per-axis", s.n_per_axis, "Wavenumber grid points per axis")->capture_default_str();
    app->add_option("--k-max-factor", s.k_max_factor, "Wavenumber grid half-width in units of omega/c")
        ->capture_default_str();
    app->add_option("--sweep-count", s.sweep_count, "Lambda sweep points")->capture_default_str();
    app->add_option("--tol", s.solver.tol, "Relative objective decrease for convergence")->capture_default_str();
    app->add_option("--max-iter", s.solver.max_iter, "Iteration budget per solve")->capture_default_str();
}

std::string env_name(const std::string& option) {
    std::string env = "SFR_";
    for (char ch : option) env += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return env;
}

/// Every long option of `app` can also be set from SFR_<NAME> (dashes become underscores).
void add_env_names(CLI::App* app) {
    for (CLI::Option* o : app->get_options()) {
        if (o->get_lnames().empty()) continue;
        const std::string& name = o->get_lnames().front();
        if (name == "help" || name == "config") continue;
        o->envname(env_name(name));
    }
}

// CLI11 does not read config files attached to subcommands, so the file is
// turned into extra arguments here. Keys may sit at top level or under a
// [subcommand] section; anything already given on the command line or in the
// environment is left alone.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::size_t at = args.size();
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            at = i;
            path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            at = i;
            path = args[i].substr(9);
            break;
        }
    }
    if (at == args.size()) return args;
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config file " + path);

    auto given = [&](const std::string& name) {
        for (const auto& a : args)
            if (a == "--" + name || a.rfind("--" + name + "=", 0) == 0) return true;
        return std::getenv(env_name(name).c_str()) != nullptr;
    };
    std::vector<std::string> extra;
    for (const auto& item : CLI::ConfigTOML().from_config(in)) {
        if (item.name == "++" || item.name == "--" || item.inputs.empty()) continue;
        if (!item.parents.empty() && item.parents != std::vector<std::string>{args[0]}) continue;
        if (item.name == "config" || given(item.name)) continue;
        if (item.inputs.size() == 1) {
            extra.push_back("--" + item.name + "=" + item.inputs[0]);
        } else {
            extra.push_back("--" + item.name);
            extra.insert(extra.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    std::vector<std::string> out(args.begin(), args.begin() + 1);
    out.insert(out.end(), extra.begin(), extra.end());
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

// ---------------------------------------------------------------------------
// Output directory, provenance and partial-output marker

struct Resolved {
    std::vector<std::string> argv;  // subcommand followed by explicit options, paths absolute, no --out
    std::string config_hash;
};

Resolved resolve(const CLI::App* sub) {
    Resolved r;
    r.argv.push_back(sub->get_name());
    std::vector<std::string> hashed{sub->get_name()};
    for (const CLI::Option* o : sub->get_options()) {
        if (o->get_lnames().empty() || o->count() == 0) continue;
        const std::string name = o->get_lnames().front();
        if (name == "help" || name == "config") continue;
        std::vector<std::string> tokens{"--" + name};
        if (o->get_expected_min() == 0 && o->get_type_size() == 0) {
            // flag: presence is the value
        } else {
            for (const auto& v : o->results())
                tokens.push_back(kPathOptions.count(name) ? fs::absolute(v).lexically_normal().string() : v);
        }
        if (name != "out") r.argv.insert(r.argv.end(), tokens.begin(), tokens.end());
        if (!kUnhashedOptions.count(name)) hashed.insert(hashed.end(), tokens.begin(), tokens.end());
    }
    Digest d;
    for (const auto& t : hashed) {
        d.update(t);
        d.update("\n");
    }
    r.config_hash = d.hex();
    return r;
}

json versions() {
    return {{"sfr", SFR_VERSION},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"cli11", CLI11_VERSION}};
}

void write_text(const fs::path& p, const std::string& text) { detail::write_bytes(p, text.data(), text.size()); }

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

class OutputDir {
public:
    OutputDir(const fs::path& dir, const Resolved& r, const Common& c) : dir_(fs::absolute(dir)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw DataError("cannot create output directory " + dir_.string() + ": " + ec.message());
        write_text(dir_ / kPartialMarker, "incomplete: command still running or aborted\n");
        json p;
        p["tool"] = "sfr";
        p["command"] = r.argv.front();
        p["argv"] = r.argv;
        p["out"] = dir_.string();
        p["seed"] = c.seed ? json(*c.seed) : json(nullptr);
        p["threads"] = c.threads;
        p["config_hash"] = r.config_hash;
        p["versions"] = versions();
        write_json(dir_ / kProvenanceFile, p);
    }

    const fs::path& path() const { return dir_; }
    void finish() { fs::remove(dir_ / kPartialMarker); }

private:
    fs::path dir_;
};

void mark_failed(const fs::path& dir, const std::string& what) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return;
    std::ofstream(dir / kPartialMarker) << "failed: " << what << "\n";
}

std::string tensor_name(const char* prefix, std::size_t i, int width) {
    std::ostringstream os;
    os << prefix << std::setw(width) << std::setfill('0') << i;
    return os.str();
}

/// A mask given either as a mask.bin file or as a tensor directory holding one.
SamplingMask load_mask(const fs::path& p, int nx, int ny) {
    const fs::path file = fs::is_directory(p) ? p / "mask.bin" : p;
    const auto bytes = detail::read_bytes(file);
    if (bytes.size() != static_cast<std::size_t>(nx) * ny)
        throw DataError(detail::concat(file.string(), ": expected ", nx * ny, " bytes, got ", bytes.size()));
    std::vector<std::uint8_t> cells(bytes.begin(), bytes.end());
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (cells[c] > 1) throw DataError(detail::concat(file.string(), ": byte at offset ", c, " is not 0/1"));
    try {
        return SamplingMask(nx, ny, std::move(cells));
    } catch (const std::invalid_argument& e) {
        throw DataError(file.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOpts {
    std::string family = "extended";
    std::size_t count = 0;
    double f_max = 400;
    std::vector<double> volume, lx, lz, ly_bounds, t60, base_dims, splits;
    std::optional<double> fixed_t60;
    double delta = 0;
    std::string base = "listening_room";
    std::string z_modes = "auto";
    std::string source = "floor";
    double c = kSpeedOfSound;
    GridOpts grid;
    FreqOpts freq;
};

void setup_simulate(CLI::App* app, SimulateOpts& o) {
    app->add_option("--family", o.family, "Room family")
        ->check(CLI::IsMember({"extended", "original", "perturbed"}))
        ->capture_default_str();
    app->add_option("--count", o.count, "Number of rooms")->required();
    app->add_option("--f-max", o.f_max, "Modal cutoff (Hz)")->capture_default_str();
    app->add_option("--volume", o.volume, "Volume range lo hi (m^3)")->expected(2);
    app->add_option("--lx", o.lx, "Length range lo hi (m)")->expected(2);
    app->add_option("--lz", o.lz, "Height range lo hi (m)")->expected(2);
    app->add_option("--ly-bounds", o.ly_bounds, "Admissible width range lo hi (m)")->expected(2);
    app->add_option("--t60", o.t60, "Reverberation time range lo hi (s)")->expected(2);
    app->add_option("--fixed-t60", o.fixed_t60, "Use this reverberation time for every room");
    app->add_option("--delta", o.delta, "Perturbed family: length error bound (m)")->capture_default_str();
    app->add_option("--base", o.base, "Perturbed family: base room preset")
        ->check(CLI::IsMember(kRoomPresets))
        ->capture_default_str();
    app->add_option("--base-dims", o.base_dims, "Perturbed family: base room lx ly lz t60")->expected(4);
    app->add_option("--z-modes", o.z_modes, "Include vertical modes")
        ->check(CLI::IsMember({"auto", "yes", "no"}))
        ->capture_default_str();
    app->add_option("--source", o.source, "Source placement")
        ->check(CLI::IsMember({"floor", "corner"}))
        ->capture_default_str();
    app->add_option("--c", o.c, "Speed of sound (m/s)")->capture_default_str();
    app->add_option("--splits", o.splits, "Write train/val/test splits with these train and val fractions")
        ->expected(2);
    add_grid(app, o.grid);
    add_freq(app, o.freq);
}

RoomSamplerConfig sampler_from(const SimulateOpts& o, std::uint64_t seed) {
    RoomSamplerConfig cfg;
    const RoomFamily fam = parse_family(o.family);
    if (fam == RoomFamily::original) {
        cfg = RoomSamplerConfig::original(seed);
    } else if (fam == RoomFamily::perturbed) {
        RoomOpts base{o.base, o.base_dims, o.c};
        cfg = RoomSamplerConfig::perturbed(base.room(), o.delta, seed);
    } else {
        cfg = RoomSamplerConfig::extended(seed);
    }
    const auto range = [](const std::vector<double>& v, Range& r) {
        if (!v.empty()) r = {v[0], v[1]};
    };
    range(o.volume, cfg.volume);
    range(o.lx, cfg.lx);
    range(o.lz, cfg.lz);
    range(o.ly_bounds, cfg.ly_bounds);
    range(o.t60, cfg.t60);
    if (o.fixed_t60) cfg.fixed_t60 = o.fixed_t60;
    if (o.z_modes != "auto") cfg.include_z_modes = o.z_modes == "yes";
    cfg.source = parse_source_placement(o.source);
    cfg.c = o.c;
    cfg.validate();
    return cfg;
}

void cmd_simulate(const SimulateOpts& o, const Common& c, OutputDir& out, std::ostream& log) {
    const RoomSamplerConfig cfg = sampler_from(o, *c.seed);
    DatasetOptions opt;
    opt.f_max = o.f_max;
    opt.threads = c.threads;
    if (!o.splits.empty()) opt.splits = SplitFractions{o.splits[0], o.splits[1]};
    generate_dataset(cfg, o.count, o.grid.spec(), o.freq.set(), out.path(), opt);
    log << "simulate: wrote " << o.count << " rooms to " << out.path().string() << "\n";
}

// ---------------------------------------------------------------------------
// mask

struct MaskOpts {
    std::size_t n_mic = 5, count = 1;
    std::string available;
    GridOpts grid;
};

void setup_mask(CLI::App* app, MaskOpts& o) {
    app->add_option("--n-mic", o.n_mic, "Observed cells per mask")->capture_default_str();
    app->add_option("--count", o.count, "Number of masks")->capture_default_str();
    app->add_option("--available", o.available, "Restrict draws to this mask (mask.bin or tensor directory)");
    add_grid(app, o.grid);
}

void cmd_mask(const MaskOpts& o, const Common& c, OutputDir& out, std::ostream& log) {
    const GridSpec grid = o.grid.spec();
    const SamplingMask avail =
        o.available.empty() ? SamplingMask::full(grid.nx(), grid.ny()) : load_mask(o.available, grid.nx(), grid.ny());
    json index;
    index["grid"] = {{"nx", grid.nx()}, {"ny", grid.ny()}};
    index["n_mic"] = o.n_mic;
    index["seed"] = *c.seed;
    index["masks"] = json::array();
    for (std::size_t i = 0; i < o.count; ++i) {
        const SamplingMask m = draw_mask(avail, o.n_mic, CounterRng::derive(*c.seed, i));
        const std::string name = tensor_name("mask_", i, 4) + ".bin";
        detail::write_bytes(out.path() / name, m.cells().data(), m.cells().size());
        index["masks"].push_back({{"file", name}, {"observed", m.observed()}});
    }
    write_json(out.path() / "masks.json", index);
    log << "mask: wrote " << o.count << " masks with " << o.n_mic << " cells each\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
    std::vector<std::string> truth, estimate;
    std::string room = "room", model = "model";
    std::optional<std::size_t> n_mic;
};

void setup_evaluate(CLI::App* app, EvaluateOpts& o) {
    app->add_option("--truth", o.truth, "Ground-truth tensor directories")->required();
    app->add_option("--estimate", o.estimate, "Estimate tensor directories, paired with --truth")->required();
    app->add_option("--room-label", o.room, "Room label for mnmse.csv")->capture_default_str();
    app->add_option("--model", o.model, "Model label for mnmse.csv")->capture_default_str();
    app->add_option("--n-mic", o.n_mic, "Microphone count for mnmse.csv (default: from the estimate mask)");
}

void cmd_evaluate(const EvaluateOpts& o, const Common&, OutputDir& out, std::ostream& log) {
    detail::require(o.truth.size() == o.estimate.size(),
                    detail::concat("evaluate: ", o.truth.size(), " truth and ", o.estimate.size(),
                                   " estimate tensors; they must pair up"));
    std::vector<NmseCurve> curves;
    std::size_t n_mic = 0;
    for (std::size_t p = 0; p < o.truth.size(); ++p) {
        const TensorFile t = read_tensor(o.truth[p]);
        const TensorFile e = read_tensor(o.estimate[p]);
        if (t.field.freqs() != e.field.freqs() || t.field.nx() != e.field.nx() || t.field.ny() != e.field.ny())
            throw DataError("evaluate: " + o.truth[p] + " and " + o.estimate[p] + " differ in shape or frequencies");
        // A truth mask marks the measured cells of an imported room.
        curves.push_back(nmse_per_frequency(t.field, e.field, t.mask ? &*t.mask : nullptr));
        if (e.mask) n_mic = e.mask->n_mic();
    }
    const NmseSummary summary = summarize(curves);
    {
        std::ofstream f(out.path() / "nmse.csv");
        write_nmse_csv(f, summary.freqs_hz, summary.mean_linear);
    }
    {
        std::ofstream f(out.path() / "nmse_ci.csv");
        write_nmse_ci_csv(f, summary);
    }
    const double m = mnmse(curves);
    const MnmseRow row{o.room, o.model, o.n_mic.value_or(n_mic), m};
    {
        std::ofstream f(out.path() / "mnmse.csv");
        write_mnmse_csv(f, std::span<const MnmseRow>(&row, 1));
    }
    log << "MNMSE: " << (m == 0.0 ? std::string("exact") : detail::csv_number(to_db(m)) + " dB") << "\n";
}

// ---------------------------------------------------------------------------
// sparse

struct SparseOpts {
    std::string in, mask;
    SparseConfig cfg;
    std::optional<double> lambda;
};

void setup_sparse(CLI::App* app, SparseOpts& o) {
    app->add_option("--in", o.in, "Tensor directory with observed values")->required();
    app->add_option("--mask", o.mask, "Observation mask (default: the input's mask.bin)");
    add_sparse(app, o.cfg, o.lambda);
}

void cmd_sparse(const SparseOpts& o, const Common& c, OutputDir& out, std::ostream& log) {
    const TensorFile in = read_tensor(o.in);
    std::optional<SamplingMask> mask = in.mask;
    if (!o.mask.empty()) mask = load_mask(o.mask, in.field.nx(), in.field.ny());
    if (!mask) throw DataError("sparse: " + o.in + " has no mask.bin and no --mask was given");
    SparseConfig cfg = o.cfg;
    cfg.lambda = o.lambda;
    const FieldTensor est = reconstruct_field(in.field, *mask, cfg, c.threads);
    write_tensor(out.path(), est, &*mask);
    log << "sparse: reconstructed " << est.k_count() << " frequencies from " << mask->n_mic() << " cells\n";
}

// ---------------------------------------------------------------------------
// zones

struct ZonesOpts {
    std::string rtf_source = "true";
    std::size_t trials = 50, n_mic = 5;
    std::string truth, estimates;
    bool export_inputs = false;
    double f_max = 400;
    ZoneLayout layout;
    RoomOpts room;
    GridOpts grid;
    FreqOpts freq;
    SparseConfig sparse;
    std::optional<double> lambda;
};

void setup_zones(CLI::App* app, ZonesOpts& o) {
    app->add_option("--rtf-source", o.rtf_source, "RTFs used to design the weights")
        ->check(CLI::IsMember({"true", "sparse", "tensor-file"}))
        ->capture_default_str();
    app->add_option("--trials", o.trials, "Number of random masks")->capture_default_str();
    app->add_option("--n-mic", o.n_mic, "Observed cells per mask")->capture_default_str();
    app->add_option("--truth", o.truth, "Directory with ls0, ls1, ... truth tensors (default: simulate)");
    app->add_option("--estimates", o.estimates, "tensor-file source: directory with t000/ls0, ... estimates");
    app->add_flag("--export-inputs", o.export_inputs, "Write truth and per-trial masked inputs under --out");
    app->add_option("--f-max", o.f_max, "Modal cutoff for simulated truth (Hz)")->capture_default_str();
    app->add_option("--zone-size", o.layout.size, "Zone side length (m)")->capture_default_str();
    app->add_option("--zone-points", o.layout.points, "Points per zone side")->capture_default_str();
    app->add_option("--zone-separation", o.layout.separation, "Zone centre distance (m)")->capture_default_str();
    add_room(app, o.room);
    add_grid(app, o.grid);
    add_freq(app, o.freq);
    add_sparse(app, o.sparse, o.lambda);
}

fs::path trial_dir(const fs::path& root, std::size_t trial, std::size_t ls) {
    return root / tensor_name("t", trial, 3) / ("ls" + std::to_string(ls));
}

void cmd_zones(const ZonesOpts& o, const Common& c, OutputDir& out, std::ostream& log) {
    const RtfSource source = parse_rtf_source(o.rtf_source);
    std::vector<FieldTensor> truth;
    std::optional<SamplingMask> available;
    if (!o.truth.empty()) {
        for (std::size_t l = 0; fs::is_directory(fs::path(o.truth) / ("ls" + std::to_string(l))); ++l) {
            TensorFile t = read_tensor(fs::path(o.truth) / ("ls" + std::to_string(l)));
            if (t.mask && !available) available = t.mask;
            truth.push_back(std::move(t.field));
        }
        if (truth.empty()) throw DataError("zones: no ls0 tensor directory in " + o.truth);
    } else {
        const Room room = o.room.room();
        const GridSpec grid = o.grid.spec();
        const FrequencySet freqs = o.freq.set();
        const ModeSet modes = enumerate_modes(room, o.f_max);
        for (const Vec3& ls : default_loudspeakers(room)) truth.push_back(simulate_field(room, modes, ls, grid, freqs));
    }
    const TensorMeta& meta = truth.front().meta();
    ZoneGeometry geom = default_zone_geometry(meta.room, meta.grid, o.layout);
    geom.loudspeakers.clear();
    for (const auto& t : truth) geom.loudspeakers.push_back(t.source());

    ZoneExperimentConfig cfg;
    cfg.source = source;
    cfg.n_mic = o.n_mic;
    cfg.trials = o.trials;
    cfg.seed = *c.seed;
    cfg.sparse = o.sparse;
    cfg.sparse.lambda = o.lambda;
    cfg.threads = c.threads;
    const SamplingMask avail = available ? *available : SamplingMask::full(meta.grid.nx(), meta.grid.ny());

    if (o.export_inputs) {
        for (std::size_t l = 0; l < truth.size(); ++l)
            write_tensor(out.path() / "truth" / ("ls" + std::to_string(l)), truth[l], available ? &*available : nullptr);
        for (std::size_t t = 0; t < o.trials; ++t) {
            const SamplingMask m = trial_mask(cfg, avail, t);
            for (std::size_t l = 0; l < truth.size(); ++l)
                write_tensor(trial_dir(out.path() / "inputs", t, l), apply_mask(truth[l], m), &m);
        }
    }

    EstimateLoader loader;
    if (source == RtfSource::tensor_file) {
        detail::require(!o.estimates.empty(), "zones: --rtf-source tensor-file needs --estimates");
        const fs::path root = o.estimates;
        loader = [root](std::size_t trial, std::size_t ls) { return read_tensor(trial_dir(root, trial, ls)).field; };
    }
    const ContrastTable table = zone_experiment(truth, geom, cfg, loader, available ? &*available : nullptr);
    {
        std::ofstream f(out.path() / "contrast.csv");
        write_contrast_csv(f, table);
    }
    {
        std::ofstream f(out.path() / "contrast_trials.csv");
        f << "trial,freq_hz,contrast_db\n";
        for (std::size_t t = 0; t < table.trial_db.size(); ++t)
            for (std::size_t k = 0; k < table.freqs_hz.size(); ++k)
                f << t << ',' << detail::csv_number(table.freqs_hz[k]) << ','
                  << detail::csv_number(table.trial_db[t][k]) << '\n';
    }
    log << "zones: " << to_string(source) << " RTFs, " << o.trials << " trials, " << table.freqs_hz.size()
        << " frequencies\n";
}

// ---------------------------------------------------------------------------
// import

struct ImportOpts {
    std::string manifest, data_root;
    FreqOpts freq;
};

void setup_import(CLI::App* app, ImportOpts& o) {
    app->add_option("--manifest", o.manifest, "Measurement manifest (JSON)")->required();
    app->add_option("--data-root", o.data_root, "Root for the manifest's file paths (default: its directory)");
    add_freq(app, o.freq);
}

void cmd_import(const ImportOpts& o, const Common&, OutputDir& out, std::ostream& log) {
    const fs::path manifest = o.manifest;
    const fs::path root = o.data_root.empty() ? manifest.parent_path() : fs::path(o.data_root);
    const MeasurementSet set = import_measurements(manifest, root, false);
    const FrequencySet freqs = o.freq.set();
    json index;
    index["room"] = set.manifest.room_name;
    index["entries"] = json::array();
    std::set<std::pair<int, int>> keys;
    for (const auto& r : set.records) keys.emplace(r.height, r.source);
    for (const auto& [h, s] : keys) {
        const AssembledField a = assemble_field_tensor(set, freqs, h, s);
        const std::string name = "h" + std::to_string(h) + "_s" + std::to_string(s);
        write_tensor(out.path() / name, a.field, &a.available);
        index["entries"].push_back({{"dir", name},
                                    {"height", h},
                                    {"height_m", set.manifest.heights[h]},
                                    {"source", s},
                                    {"measured", a.available.n_mic()}});
    }
    write_json(out.path() / "import.json", index);
    log << "import: " << set.records.size() << " impulse responses into " << keys.size() << " tensors\n";
}

// ---------------------------------------------------------------------------
// export-train

struct ExportOpts {
    std::string dataset;
    std::vector<double> splits;
    std::size_t n_mic = 0;
};

void setup_export(CLI::App* app, ExportOpts& o) {
    app->add_option("--dataset", o.dataset, "Dataset directory written by simulate")->required();
    app->add_option("--splits", o.splits, "Train and val fractions (default: the dataset's own splits)")
        ->expected(2);
    app->add_option("--n-mic", o.n_mic, "Also write a random mask.bin with this many cells (needs --seed)")
        ->capture_default_str();
}

void cmd_export(const ExportOpts& o, const Common& c, OutputDir& out, std::ostream& log) {
    const fs::path src = o.dataset;
    const json index = read_dataset_index(src);
    const std::size_t count = index.at("count").get<std::size_t>();
    DatasetSplits splits;
    if (!o.splits.empty()) {
        splits = make_splits(count, {o.splits[0], o.splits[1]});
    } else if (index.contains("splits")) {
        const auto& s = index.at("splits");
        splits = {s.at("train").get<std::vector<std::size_t>>(), s.at("val").get<std::vector<std::size_t>>(),
                  s.at("test").get<std::vector<std::size_t>>()};
    } else {
        throw std::invalid_argument("export-train: dataset has no splits; pass --splits TRAIN VAL");
    }
    if (o.n_mic > 0 && !c.seed) throw std::invalid_argument("export-train: --n-mic needs --seed");

    json listing;
    std::size_t written = 0;
    for (const auto& [name, ids] : {std::pair<const char*, const std::vector<std::size_t>*>{"train", &splits.train},
                                   {"val", &splits.val},
                                   {"test", &splits.test}}) {
        listing[name] = json::array();
        for (std::size_t i : *ids) {
            if (i >= count) throw DataError(detail::concat("export-train: split index ", i, " >= count ", count));
            const std::string entry = entry_dir_name(i);
            const TensorFile t = read_tensor(src / entry);
            const fs::path dst = out.path() / name / entry;
            if (o.n_mic > 0) {
                const SamplingMask m = draw_mask(t.field.grid(), o.n_mic, CounterRng::derive(*c.seed, i));
                write_tensor(dst, t.field, &m);
            } else {
                write_tensor(dst, t.field);
            }
            listing[name].push_back(std::string(name) + "/" + entry);
            ++written;
        }
    }
    write_json(out.path() / "splits.json", listing);
    log << "export-train: " << splits.train.size() << " train, " << splits.val.size() << " val, "
        << splits.test.size() << " test (" << written << " tensors)\n";
}

// ---------------------------------------------------------------------------
// plot-data

struct PlotOpts {
    std::vector<std::string> nmse, contrast;
    bool svg = false;
};

void setup_plot(CLI::App* app, PlotOpts& o) {
    app->add_option("--nmse", o.nmse, "NMSE CSV files (freq_hz,nmse_linear,nmse_db), as LABEL=PATH or PATH");
    app->add_option("--contrast", o.contrast, "Contrast CSV files written by zones, as LABEL=PATH or PATH");
    app->add_flag("--svg", o.svg, "Also write SVG line charts");
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const std::string& file) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(file + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

Table read_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw DataError(p.string() + ": empty file");
    t.header = split_csv_line(line);
    for (std::size_t n = 2; std::getline(in, line); ++n) {
        if (line.empty()) continue;
        t.rows.push_back(split_csv_line(line));
        if (t.rows.back().size() != t.header.size())
            throw DataError(detail::concat(p.string(), ":", n, ": expected ", t.header.size(), " fields"));
    }
    return t;
}

double parse_number(const std::string& s, const std::string& where) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw DataError(where + ": not a number: '" + s + "'");
}

std::pair<std::string, fs::path> labelled(const std::string& arg) {
    const auto eq = arg.find('=');
    if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
    const fs::path p = arg;
    return {p.parent_path().filename().string() + "/" + p.stem().string(), p};
}

struct Series {
    std::string label;
    std::vector<double> x, y;
};

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        if (ch == '<') out += "&lt;";
        else if (ch == '>') out += "&gt;";
        else if (ch == '&') out += "&amp;";
        else out += ch;
    }
    return out;
}

/// Static line chart, log-frequency x axis. Non-finite points are skipped.
std::string line_chart_svg(const std::string& title, const std::string& ylabel, const std::vector<Series>& series) {
    constexpr double W = 720, H = 440, L = 70, R = 180, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.y[i]) && s.x[i] > 0) {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
    if (!std::isfinite(x0)) x0 = 1, x1 = 10, y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 * 2;
    if (y1 <= y0) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    const auto px = [&](double x) { return L + (W - L - R) * (std::log(x / x0) / std::log(x1 / x0)); };
    const auto py = [&](double y) { return T + (H - T - B) * (1.0 - (y - y0) / (y1 - y0)); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title)
       << "</text>\n";
    os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = y0 + (y1 - y0) * t / 4.0;
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << std::setprecision(1)
           << y << std::setprecision(2) << "</text>\n";
    }
    for (double d = std::pow(10.0, std::floor(std::log10(x0))); d <= x1 * 1.0001; d *= 10)
        for (int m : {1, 2, 5})
            if (const double x = d * m; x >= x0 * 0.9999 && x <= x1 * 1.0001)
                os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << x
                   << "</text>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">Frequency (Hz)</text>\n";
    os << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << svg_escape(ylabel) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = colors[s % std::size(colors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size(); ++i)
            if (std::isfinite(series[s].y[i]) && series[s].x[i] > 0)
                os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
        os << "\"/>\n";
        os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 14 + 16 * s << "\" fill=\"" << color << "\">"
           << svg_escape(series[s].label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void cmd_plot(const PlotOpts& o, const Common&, OutputDir& out, std::ostream& log) {
    detail::require(!o.nmse.empty() || !o.contrast.empty(), "plot-data: give at least one --nmse or --contrast");
    if (!o.nmse.empty()) {
        std::vector<Series> series;
        std::ofstream f(out.path() / "nmse_vs_frequency.csv");
        f << "series,freq_hz,nmse_db\n";
        for (const auto& arg : o.nmse) {
            const auto [label, path] = labelled(arg);
            const Table t = read_csv(path);
            const std::size_t cf = t.column("freq_hz", path.string()), cn = t.column("nmse_db", path.string());
            Series s{label, {}, {}};
            for (const auto& row : t.rows) {
                s.x.push_back(parse_number(row[cf], path.string()));
                s.y.push_back(parse_number(row[cn], path.string()));
                f << label << ',' << row[cf] << ',' << row[cn] << '\n';
            }
            series.push_back(std::move(s));
        }
        if (o.svg) write_text(out.path() / "nmse_vs_frequency.svg", line_chart_svg("NMSE", "NMSE (dB)", series));
    }
    if (!o.contrast.empty()) {
        std::vector<Series> series;
        std::ofstream f(out.path() / "contrast_vs_frequency.csv");
        f << "series,freq_hz,mean_contrast_db,std_contrast_db\n";
        for (const auto& arg : o.contrast) {
            const auto [label, path] = labelled(arg);
            const Table t = read_csv(path);
            const std::size_t cf = t.column("freq_hz", path.string()), cm = t.column("mean_contrast_db", path.string()),
                              cs = t.column("std_contrast_db", path.string());
            Series s{label, {}, {}};
            for (const auto& row : t.rows) {
                s.x.push_back(parse_number(row[cf], path.string()));
                s.y.push_back(parse_number(row[cm], path.string()));
                f << label << ',' << row[cf] << ',' << row[cm] << ',' << row[cs] << '\n';
            }
            series.push_back(std::move(s));
        }
        if (o.svg)
            write_text(out.path() / "contrast_vs_frequency.svg",
                       line_chart_svg("Acoustic contrast", "Contrast (dB)", series));
    }
    log << "plot-data: wrote tidy CSV" << (o.svg ? " and SVG" : "") << " to " << out.path().string() << "\n";
}

// ---------------------------------------------------------------------------

int fail(std::ostream& err, int code, const std::string& what) {
    std::string line = what;
    std::replace(line.begin(), line.end(), '\n', ';');
    err << "sfr: error: " << line << "\n";
    return code;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cmd_replay(const std::string& file, const std::string& out_override, std::ostream& out, std::ostream& err) {
    const auto bytes = detail::read_bytes(file);
    json p;
    try {
        p = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw DataError(file + ": malformed JSON at byte " + std::to_string(e.byte));
    }
    std::vector<std::string> args;
    std::string dest;
    try {
        args = p.at("argv").get<std::vector<std::string>>();
        dest = out_override.empty() ? p.at("out").get<std::string>() : out_override;
    } catch (const json::exception& e) {
        throw DataError(file + ": " + e.what());
    }
    if (args.empty() || args.front() == "replay") throw DataError(file + ": argv does not name a command");
    args.push_back("--out");
    args.push_back(dest);
    return dispatch(args, out, err);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sound field reconstruction and sound zone experiments", "sfr"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SFR_VERSION);
    app.footer("Every option NAME can also be set through the environment variable SFR_NAME (upper case, dashes as "
               "underscores).\nExit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.");

    Common common;
    SimulateOpts sim;
    MaskOpts mask;
    EvaluateOpts eval;
    SparseOpts sparse;
    ZonesOpts zones;
    ImportOpts imp;
    ExportOpts exp;
    PlotOpts plot;
    std::string replay_file, replay_out;

    auto* s_sim = app.add_subcommand("simulate", "Simulate a dataset of random rooms");
    add_common(s_sim, common, true);
    setup_simulate(s_sim, sim);
    auto* s_mask = app.add_subcommand("mask", "Draw random observation masks");
    add_common(s_mask, common, true);
    setup_mask(s_mask, mask);
    auto* s_eval = app.add_subcommand("evaluate", "NMSE between truth and estimate tensors");
    add_common(s_eval, common, false);
    setup_evaluate(s_eval, eval);
    auto* s_sparse = app.add_subcommand("sparse", "Sparse plane-wave reconstruction of a masked tensor");
    add_common(s_sparse, common, false);
    setup_sparse(s_sparse, sparse);
    auto* s_zones = app.add_subcommand("zones", "Acoustic contrast experiment");
    add_common(s_zones, common, true);
    setup_zones(s_zones, zones);
    auto* s_import = app.add_subcommand("import", "Measured impulse responses to tensors");
    add_common(s_import, common, false);
    setup_import(s_import, imp);
    auto* s_export = app.add_subcommand("export-train", "Export dataset splits for model training");
    add_common(s_export, common, false);
    setup_export(s_export, exp);
    auto* s_plot = app.add_subcommand("plot-data", "Tidy CSV (and SVG) for frequency plots");
    add_common(s_plot, common, false);
    setup_plot(s_plot, plot);
    auto* s_replay = app.add_subcommand("replay", "Re-run a command from its provenance.json");
    s_replay->add_option("provenance", replay_file, "provenance.json of an earlier run")->required();
    s_replay->add_option("--out", replay_out, "Output directory (default: the recorded one)");

    for (auto* sub : app.get_subcommands({})) add_env_names(sub);

    try {
        const auto expanded = args.empty() ? args : expand_config(args);
        std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    if (s_replay->parsed()) return cmd_replay(replay_file, replay_out, out, err);

    CLI::App* sub = app.get_subcommands().front();
    const Resolved resolved = resolve(sub);
    OutputDir dir(common.out, resolved, common);
    try {
        if (sub == s_sim) cmd_simulate(sim, common, dir, out);
        else if (sub == s_mask) cmd_mask(mask, common, dir, out);
        else if (sub == s_eval) cmd_evaluate(eval, common, dir, out);
        else if (sub == s_sparse) cmd_sparse(sparse, common, dir, out);
        else if (sub == s_zones) cmd_zones(zones, common, dir, out);
        else if (sub == s_import) cmd_import(imp, common, dir, out);
        else if (sub == s_export) cmd_export(exp, common, dir, out);
        else if (sub == s_plot) cmd_plot(plot, common, dir, out);
    } catch (const std::exception& e) {
        mark_failed(dir.path(), e.what());
        throw;
    }
    dir.finish();
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    try {
        return dispatch(args, out, err);
    } catch (const std::invalid_argument& e) {
        return fail(err, kUsage, e.what());
    } catch (const NumericalError& e) {
        return fail(err, kNumericalError, e.what());
    } catch (const DataError& e) {
        return fail(err, kDataError, e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(err, kDataError, e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail(err, kDataError, e.what());
    } catch (const std::exception& e) {
        return fail(err, kDataError, e.what());
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace sfr::cli
