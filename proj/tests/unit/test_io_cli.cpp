#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "stepscat/errors.hpp"
#include "stepscat/io.hpp"
#include "stepscat/pipeline.hpp"

using namespace stepscat;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("stepscat_io_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ScatteringData small_data(const Potential& p) {
    BandGridOptions g;
    g.samples_per_band = 16;
    g.mu_max = p.mu2() + 100.0;
    return forward_scatter(p, make_band_grids(p, g));
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

}  // namespace

TEST(Json, PotentialRoundTripForEveryKind) {
    const std::vector<Potential> ps{
        Potential::step(0.0, 2.0),
        Potential(0.0, 2.0, deviation::Square{-0.3, 1.1, -8.0}),
        Potential(1.0, -1.0, deviation::Gaussian{0.1, 0.7, 1.0 / 3.0}),
        Potential(0.0, 0.0, deviation::ExpTail{2.0, 0.5}),
        Potential(1.0, 1.0, deviation::Tabulated{{-1.0, 0.0, 2.0}, {0.0, 4.0, 0.0}}),
    };
    for (const Potential& p : ps) {
        const std::string text = potential_to_json(p);
        const Potential back = potential_from_json(text);
        EXPECT_EQ(potential_to_json(back), text);
        for (double x : {-3.0, -0.5, 0.0, 0.2, 1.0, 4.0}) EXPECT_EQ(back.eval(x), p.eval(x)) << text;
    }
}

TEST(Json, PotentialErrors) {
    for (const char* bad : {"", "[]", R"({"a_plus": 1})", R"({"a_minus": "0", "a_plus": 1})",
                            R"({"a_minus": 0, "a_plus": 1, "deviation": {"kind": "cubic"}})",
                            R"({"a_minus": 0, "a_plus": 1, "deviation": {"kind": "square", "x0": 0}})",
                            R"({"a_minus": 0, "a_plus": 1, "deviation": {"kind": "tabulated", "x": [0, 1], "values": [1]}})",
                            R"({"a_minus": 0, "a_plus": 1, "deviation": {"width": 1}})"})
        EXPECT_THROW(potential_from_json(bad), InvalidInput) << bad;
}

TEST(Json, ScatteringDataRoundTripIsBitExact) {
    const ScatteringData d = small_data(Potential(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0}));
    ASSERT_EQ(d.bound_states.size(), 1u);
    const ScatteringData back = scattering_data_from_json(scattering_data_to_json(d));
    ASSERT_EQ(back.bound_states.size(), 1u);
    EXPECT_EQ(back.bound_states[0].mu, d.bound_states[0].mu);
    EXPECT_EQ(back.bound_states[0].norming, d.bound_states[0].norming);
    for (std::size_t b = 0; b < 2; ++b) {
        ASSERT_EQ(back.bands[b].samples.size(), d.bands[b].samples.size());
        EXPECT_EQ(back.bands[b].interval.lo, d.bands[b].interval.lo);
        for (std::size_t i = 0; i < d.bands[b].samples.size(); ++i) {
            EXPECT_EQ(back.bands[b].samples[i].mu, d.bands[b].samples[i].mu);
            EXPECT_TRUE(back.bands[b].samples[i].S == d.bands[b].samples[i].S);
        }
    }
}

TEST(Json, ScatteringDataErrors) {
    const std::string good = scattering_data_to_json(small_data(Potential::step(0.0, 2.0)));
    EXPECT_NO_THROW(scattering_data_from_json(good));
    for (const char* bad : {"{}", R"({"a_minus": 0, "a_plus": 2, "bands": []})",
                            R"({"a_minus": 0, "a_plus": 2, "bands": [{"interval": [0, 2], "samples": [{"mu": 1, "S_re": [[1]]}]}, {"interval": [2, 9], "samples": []}]})",
                            R"({"a_minus": 0, "a_plus": 2, "bands": [{"interval": [0, 2], "samples": [{"mu": 1, "S_re": [[1, 0]], "S_im": [[0, 0]]}]}, {"interval": [2, 9], "samples": []}]})"})
        EXPECT_THROW(scattering_data_from_json(bad), InvalidInput) << bad;
}

TEST(Csv, STableLayout) {
    const ScatteringData d = small_data(Potential::step(0.0, 2.0));
    const std::vector<std::string> ls = lines(s_table_csv(d));
    ASSERT_FALSE(ls.empty());
    EXPECT_EQ(ls[0], "mu,band,S_re_11,S_im_11,S_re_12,S_im_12,S_re_21,S_im_21,S_re_22,S_im_22");
    EXPECT_EQ(ls.size(), 1 + d.bands[0].samples.size() + d.bands[1].samples.size());
    for (std::size_t i = 1; i < ls.size(); ++i) EXPECT_EQ(std::count(ls[i].begin(), ls[i].end(), ','), 9);
    // Lower-band rows are 1x1: everything after S_im_11 stays empty.
    EXPECT_NE(ls[1].find(",1,"), std::string::npos);
    EXPECT_EQ(ls[1].substr(ls[1].size() - 6), ",,,,,,");
    EXPECT_NE(ls.back().find(",2,"), std::string::npos);
    EXPECT_NE(ls.back().back(), ',');
}

TEST(Files, MissingFileIsReported) {
    EXPECT_THROW(read_text_file("/nonexistent/stepscat/file.json"), InvalidInput);
    const fs::path p = scratch("files") / "a.txt";
    write_text_file(p, "hello\n");
    EXPECT_EQ(read_text_file(p), "hello\n");
}

#ifdef STEPSCAT_CLI_PATH

namespace {

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + STEPSCAT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, SelftestExitCodes) {
    const fs::path dir = scratch("cli_selftest");
    EXPECT_EQ(run_cli("selftest", dir / "ok.log"), 0);
    EXPECT_NE(read_text_file(dir / "ok.log").find("PASS"), std::string::npos);
    EXPECT_EQ(run_cli("selftest --inject s_plus_symmetry", dir / "s.log"), 1);
    EXPECT_EQ(run_cli("selftest --inject f_symmetry", dir / "f.log"), 1);
    EXPECT_NE(read_text_file(dir / "f.log").find("FAIL"), std::string::npos);
    EXPECT_EQ(run_cli("selftest --inject nonsense", dir / "n.log"), 2);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
    const fs::path dir = scratch("cli_config");
    write_text_file(dir / "bad.json", R"({"x_step": -1})");
    EXPECT_EQ(run_cli("forward \"" + (dir / "bad.json").string() + "\"", dir / "a.log"), 2);
    EXPECT_NE(read_text_file(dir / "a.log").find("x_step"), std::string::npos);
    EXPECT_EQ(run_cli("forward \"" + (dir / "missing.json").string() + "\"", dir / "b.log"), 2);
    EXPECT_EQ(run_cli("", dir / "c.log"), 2);
}

TEST(Cli, ForwardThenInvertFreeData) {
    const fs::path dir = scratch("cli_free");
    const std::string cfg = (dir / "cfg.json").string();
    write_text_file(cfg, R"({"band_samples": 24, "x_min": -1, "x_max": 1, "x_step": 0.1})");
    const std::string out = " --out-dir \"" + dir.string() + "\"";
    ASSERT_EQ(run_cli("forward \"" + cfg + "\"" + out, dir / "fwd.log"), 0);
    ASSERT_TRUE(fs::exists(dir / "scattering_data.json"));
    ASSERT_TRUE(fs::exists(dir / "s_table.csv"));
    ASSERT_EQ(run_cli("invert \"" + (dir / "scattering_data.json").string() + "\" \"" + cfg + "\"" + out,
                      dir / "inv.log"), 0);
    const std::vector<std::string> ls = lines(read_text_file(dir / "recovered_q.csv"));
    ASSERT_EQ(ls.size(), 22u);
    for (std::size_t i = 1; i < ls.size(); ++i) {
        const std::string q = ls[i].substr(ls[i].find(',') + 1);
        EXPECT_NEAR(std::stod(q), 0.0, 1e-6) << ls[i];
    }
}

TEST(Cli, TruncatedSpectrumExitsWithThree) {
    const fs::path dir = scratch("cli_truncated");
    const std::string cfg = (dir / "cfg.json").string();
    write_text_file(cfg, R"({"potential": {"a_minus": 0, "a_plus": 2, "deviation": {"kind": "gaussian", "amplitude": -3, "center": 0.5, "width": 1}},
                             "band_samples": 16, "mu_max": 6, "tail_tol": 1e-6, "x_min": -1, "x_max": 1})");
    const std::string out = " --out-dir \"" + dir.string() + "\"";
    ASSERT_EQ(run_cli("forward \"" + cfg + "\"" + out, dir / "fwd.log"), 0);
    EXPECT_EQ(run_cli("invert \"" + (dir / "scattering_data.json").string() + "\" \"" + cfg + "\"" + out,
                      dir / "inv.log"), 3);
    EXPECT_NE(read_text_file(dir / "inv.log").find("TailTooShort"), std::string::npos);
}

#endif
