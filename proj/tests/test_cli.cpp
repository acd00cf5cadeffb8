#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "sfr/dataset.hpp"
#include "sfr/tensor_io.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = sfr::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

const std::set<std::string> kSkip{"provenance.json"};

// Small grid and frequency set so each command runs in well under a second.
const std::vector<std::string> kSmall{"--grid-i", "4", "--grid-j", "4", "--up-x", "2", "--up-y", "2",
                                      "--f-lo",   "40", "--f-hi", "80", "--fraction", "3"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

TEST(Cli, UsageErrorsExitWithOne) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"frobnicate"}).code, 1);
    EXPECT_EQ(run({"simulate", "--count", "1", "--out", "x"}).code, 1);  // seed is mandatory
    const auto bad = run({"simulate", "--count", "1", "--seed", "1", "--family", "huge", "--out", "x"});
    EXPECT_EQ(bad.code, 1);
    EXPECT_FALSE(bad.err.empty());
    EXPECT_EQ(run({"--help"}).code, 0);
    EXPECT_EQ(run({"--version"}).code, 0);
}

TEST(Cli, SimulateIsDeterministic) {
    const auto root = oracle::scratch_dir("cli_sim");
    const auto base = with({"simulate", "--family", "extended", "--count", "4", "--f-max", "150"}, kSmall);
    ASSERT_EQ(run(with(base, {"--out", (root / "a").string(), "--seed", "1", "--threads", "1"})).code, 0);
    ASSERT_EQ(run(with(base, {"--out", (root / "b").string(), "--seed", "1", "--threads", "3"})).code, 0);
    EXPECT_EQ(sfr::directory_digest(root / "a", kSkip), sfr::directory_digest(root / "b", kSkip));
    EXPECT_FALSE(fs::exists(root / "a" / "_PARTIAL"));
    ASSERT_EQ(run(with(base, {"--out", (root / "c").string(), "--seed", "2"})).code, 0);
    EXPECT_NE(sfr::directory_digest(root / "a", kSkip), sfr::directory_digest(root / "c", kSkip));

    const auto prov = json::parse(slurp(root / "a" / "provenance.json"));
    const auto prov_b = json::parse(slurp(root / "b" / "provenance.json"));
    EXPECT_EQ(prov["seed"], 1);
    EXPECT_EQ(prov["command"], "simulate");
    EXPECT_EQ(prov["config_hash"], prov_b["config_hash"]);
    EXPECT_TRUE(prov["versions"].contains("eigen"));
}

TEST(Cli, ReplayReproducesOutputs) {
    const auto root = oracle::scratch_dir("cli_replay");
    const auto args = with({"simulate", "--count", "2", "--seed", "9", "--f-max", "120", "--out",
                            (root / "orig").string()},
                           kSmall);
    ASSERT_EQ(run(args).code, 0);
    ASSERT_EQ(run({"replay", (root / "orig" / "provenance.json").string(), "--out", (root / "again").string()}).code, 0);
    EXPECT_EQ(sfr::directory_digest(root / "orig", kSkip), sfr::directory_digest(root / "again", kSkip));
}

TEST(Cli, ConfigFileAndEnvironment) {
    const auto root = oracle::scratch_dir("cli_config");
    std::ofstream(root / "run.toml") << "count = 2\nseed = 5\nf-max = 120\ngrid-i = 4\ngrid-j = 4\nup-x = 1\n"
                                        "up-y = 1\nf-lo = 40\nf-hi = 80\nfraction = 3\n";
    ASSERT_EQ(run({"simulate", "--config", (root / "run.toml").string(), "--out", (root / "cfg").string()}).code, 0);
    EXPECT_EQ(sfr::read_dataset_index(root / "cfg")["count"], 2);
    EXPECT_EQ(sfr::read_tensor(root / "cfg" / "000000").field.nx(), 4);
    // Section form, with the command line overriding the file.
    std::ofstream(root / "sec.toml") << "[simulate]\ncount = 2\nseed = 5\nf-max = 120\ngrid-i = 4\ngrid-j = 4\n"
                                        "f-lo = 40\nf-hi = 80\n";
    ASSERT_EQ(run({"simulate", "--config", (root / "sec.toml").string(), "--count", "1", "--out",
                   (root / "sec").string()})
                  .code,
              0);
    EXPECT_EQ(sfr::read_dataset_index(root / "sec")["count"], 1);

    ::setenv("SFR_COUNT", "3", 1);
    const auto r = run({"simulate", "--seed", "5", "--f-max", "120", "--grid-i", "4", "--grid-j", "4", "--up-x", "1",
                        "--up-y", "1", "--f-lo", "40", "--f-hi", "80", "--out", (root / "env").string()});
    ::unsetenv("SFR_COUNT");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(sfr::read_dataset_index(root / "env")["count"], 3);
    // The resolved value is recorded, so a replay needs no environment.
    const auto prov = json::parse(slurp(root / "env" / "provenance.json"));
    const auto argv = prov["argv"].get<std::vector<std::string>>();
    EXPECT_NE(std::find(argv.begin(), argv.end(), "--count"), argv.end());
}

TEST(Cli, EvaluateReportsExactMatch) {
    const auto root = oracle::scratch_dir("cli_eval");
    ASSERT_EQ(run(with({"simulate", "--count", "2", "--seed", "3", "--f-max", "120", "--out", (root / "d").string()},
                       kSmall))
                  .code,
              0);
    const auto t0 = (root / "d" / "000000").string(), t1 = (root / "d" / "000001").string();
    const auto r = run({"evaluate", "--truth", t0, t1, "--estimate", t0, t1, "--out", (root / "e").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("MNMSE: exact"), std::string::npos);
    const auto rows = lines(slurp(root / "e" / "mnmse.csv"));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].substr(rows[1].rfind(',') + 1), "exact");
    EXPECT_EQ(lines(slurp(root / "e" / "nmse.csv")).size(), 5u);  // header plus 40, 50, 63, 80 Hz

    const auto mismatch = run({"evaluate", "--truth", t0, "--estimate", t0, t1, "--out", (root / "f").string()});
    EXPECT_EQ(mismatch.code, 1);
}

TEST(Cli, MissingInputIsADataError) {
    const auto root = oracle::scratch_dir("cli_missing");
    const auto r = run({"evaluate", "--truth", (root / "nope").string(), "--estimate", (root / "nope").string(),
                        "--out", (root / "o").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
    EXPECT_NE(slurp(root / "o" / "_PARTIAL").find("failed"), std::string::npos);
}

TEST(Cli, ZonesWithTrueRtfs) {
    const auto root = oracle::scratch_dir("cli_zones");
    const auto r = run({"zones", "--rtf-source", "true", "--trials", "50", "--seed", "1", "--f-hi", "60", "--out",
                        (root / "z").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = lines(slurp(root / "z" / "contrast.csv"));
    ASSERT_EQ(rows.size(), 14u);  // header plus 30..60 Hz in twelfth octaves
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::vector<std::string> f;
        std::stringstream ss(rows[i]);
        for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
        EXPECT_EQ(f[2], "0");
        EXPECT_GT(std::stod(f[1]), 0.0);
    }
    EXPECT_EQ(lines(slurp(root / "z" / "contrast_trials.csv")).size(), 1u + 50u * 13u);
}

TEST(Cli, ZonesExportedInputsRoundTripThroughTensorFiles) {
    const auto root = oracle::scratch_dir("cli_zones_export");
    const std::vector<std::string> common{"--trials", "2", "--seed", "4", "--f-lo", "40", "--f-hi", "50"};
    ASSERT_EQ(run(with({"zones", "--rtf-source", "true", "--export-inputs", "--out", (root / "x").string()}, common)).code,
              0);
    const auto in = sfr::read_tensor(root / "x" / "inputs" / "t001" / "ls7");
    ASSERT_TRUE(in.mask);
    EXPECT_EQ(in.mask->n_mic(), 5u);
    const auto truth = sfr::read_tensor(root / "x" / "truth" / "ls7");
    EXPECT_EQ(in.field.values()[in.mask->observed()[0]], truth.field.values()[in.mask->observed()[0]]);

    // Estimates identical to the truth give the true-RTF contrast.
    for (int t = 0; t < 2; ++t)
        for (int l = 0; l < 8; ++l) {
            const auto dst = root / "est" / ("t00" + std::to_string(t)) / ("ls" + std::to_string(l));
            fs::create_directories(dst);
            fs::copy(root / "x" / "truth" / ("ls" + std::to_string(l)), dst, fs::copy_options::recursive);
        }
    const auto r = run(with({"zones", "--rtf-source", "tensor-file", "--estimates", (root / "est").string(), "--truth",
                             (root / "x" / "truth").string(), "--out", (root / "y").string()},
                            common));
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run(with({"zones", "--truth", (root / "x" / "truth").string(), "--out", (root / "z").string()}, common))
                  .code,
              0);
    const auto a = lines(slurp(root / "z" / "contrast.csv")), b = lines(slurp(root / "y" / "contrast.csv"));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 1; i < a.size(); ++i)
        EXPECT_EQ(a[i].substr(0, a[i].find(",true")), b[i].substr(0, b[i].find(",tensor-file")));
}

TEST(Cli, DegenerateEstimatesAreANumericalFailure) {
    const auto root = oracle::scratch_dir("cli_zones_zero");
    const std::vector<std::string> common{"--trials", "1", "--seed", "4", "--f-lo", "40", "--f-hi", "40"};
    ASSERT_EQ(run(with({"zones", "--export-inputs", "--out", (root / "x").string()}, common)).code, 0);
    for (int l = 0; l < 8; ++l) {
        auto t = sfr::read_tensor(root / "x" / "truth" / ("ls" + std::to_string(l))).field;
        for (auto& v : t.values()) v = 0.0;
        sfr::write_tensor(root / "est" / "t000" / ("ls" + std::to_string(l)), t);
    }
    const auto r = run(with({"zones", "--rtf-source", "tensor-file", "--estimates", (root / "est").string(), "--truth",
                             (root / "x" / "truth").string(), "--out", (root / "y").string()},
                            common));
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_TRUE(fs::exists(root / "y" / "_PARTIAL"));
}

TEST(Cli, MaskSparseAndExport) {
    const auto root = oracle::scratch_dir("cli_pipeline");
    ASSERT_EQ(run(with({"simulate", "--count", "5", "--seed", "8", "--f-max", "120", "--splits", "0.6", "0.2", "--out",
                        (root / "d").string()},
                       kSmall))
                  .code,
              0);
    ASSERT_EQ(run({"mask", "--seed", "2", "--count", "3", "--n-mic", "6", "--grid-i", "4", "--grid-j", "4", "--up-x",
                   "2", "--up-y", "2", "--out", (root / "m").string()})
                  .code,
              0);
    EXPECT_EQ(fs::file_size(root / "m" / "mask_0002.bin"), 64u);
    EXPECT_EQ(json::parse(slurp(root / "m" / "masks.json"))["masks"].size(), 3u);

    auto t = sfr::read_tensor(root / "d" / "000000").field;
    const auto mask_bytes = sfr::detail::read_bytes(root / "m" / "mask_0000.bin");
    const sfr::SamplingMask mask(8, 8, std::vector<std::uint8_t>(mask_bytes.begin(), mask_bytes.end()));
    sfr::write_tensor(root / "in", sfr::apply_mask(t, mask), &mask);
    const auto r = run({"sparse", "--in", (root / "in").string(), "--n-per-axis", "6", "--out", (root / "s").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rec = sfr::read_tensor(root / "s");
    EXPECT_EQ(rec.field.meta(), t.meta());

    const auto e = run({"export-train", "--dataset", (root / "d").string(), "--n-mic", "5", "--seed", "1", "--out",
                        (root / "x").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto splits = json::parse(slurp(root / "x" / "splits.json"));
    EXPECT_EQ(splits["train"].size(), 3u);
    EXPECT_EQ(splits["val"].size(), 1u);
    EXPECT_EQ(splits["test"].size(), 1u);
    EXPECT_EQ(sfr::read_tensor(root / "x" / "test" / "000004").mask->n_mic(), 5u);
    EXPECT_EQ(run({"export-train", "--dataset", (root / "d").string(), "--n-mic", "5", "--out", (root / "y").string()})
                  .code,
              1);
}

TEST(Cli, ImportMeasuredRoom) {
    const auto root = oracle::scratch_dir("cli_import");
    json m = {{"room", {{"name", "tiny"}, {"lx", 3}, {"ly", 3}, {"lz", 2.5}, {"t60", 0.4}}},
              {"grid", {{"I", 2}, {"J", 2}}},
              {"heights", {1.0, 1.5}},
              {"sources", {{0, 0, 0}}},
              {"sample_rate", 8000},
              {"records", json::array()}};
    for (int h = 0; h < 2; ++h)
        for (int c = 0; c < 3; ++c) {
            const std::string f = "h" + std::to_string(h) + "_" + std::to_string(c) + ".txt";
            std::ofstream(root / f) << "1 0.5 0.25\n";
            m["records"].push_back({{"i", c / 2}, {"j", c % 2}, {"height", h}, {"source", 0}, {"file", f}});
        }
    std::ofstream(root / "manifest.json") << m.dump();
    const auto r = run({"import", "--manifest", (root / "manifest.json").string(), "--f-lo", "50", "--f-hi", "100",
                        "--fraction", "1", "--out", (root / "out").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = sfr::read_tensor(root / "out" / "h1_s0");
    EXPECT_EQ(t.mask->n_mic(), 3u);
    EXPECT_EQ(t.field.grid().z_o(), 1.5);
    EXPECT_EQ(json::parse(slurp(root / "out" / "import.json"))["entries"].size(), 2u);

    m["records"].push_back(m["records"][0]);
    std::ofstream(root / "manifest.json") << m.dump();
    const auto dup = run({"import", "--manifest", (root / "manifest.json").string(), "--out", (root / "o2").string()});
    EXPECT_EQ(dup.code, 2);
    EXPECT_NE(dup.err.find("duplicate"), std::string::npos);
}

TEST(Cli, PlotDataIsAPureFunctionOfInputs) {
    const auto root = oracle::scratch_dir("cli_plot");
    std::ofstream(root / "a.csv") << "freq_hz,nmse_linear,nmse_db\n30,0.1,-10\n60,0.01,-20\n";
    std::ofstream(root / "c.csv") << "freq_hz,mean_contrast_db,std_contrast_db,source,n_mic\n30,12,0,true,0\n";
    const std::vector<std::string> args{"plot-data", "--nmse", "sparse=" + (root / "a.csv").string(), "--contrast",
                                        (root / "c.csv").string(), "--svg"};
    ASSERT_EQ(run(with(args, {"--out", (root / "p1").string()})).code, 0);
    ASSERT_EQ(run(with(args, {"--out", (root / "p2").string()})).code, 0);
    EXPECT_EQ(sfr::directory_digest(root / "p1", kSkip), sfr::directory_digest(root / "p2", kSkip));
    const auto tidy = lines(slurp(root / "p1" / "nmse_vs_frequency.csv"));
    ASSERT_EQ(tidy.size(), 3u);
    EXPECT_EQ(tidy[1], "sparse,30,-10");
    EXPECT_NE(slurp(root / "p1" / "contrast_vs_frequency.svg").find("<polyline"), std::string::npos);

    std::ofstream(root / "bad.csv") << "freq,nmse_db\n1,2\n";
    EXPECT_EQ(run({"plot-data", "--nmse", (root / "bad.csv").string(), "--out", (root / "p3").string()}).code, 2);
}

}  // namespace
