#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include "test_support.hpp"
#include "volwmc/errors.hpp"
#include "volwmc/pipeline.hpp"
#include "volwmc/reports.hpp"

using namespace volwmc;

namespace {

std::string slurp(const std::filesystem::path& f)
{
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string header_of(const std::filesystem::path& run, const std::string& tag)
{
    std::ostringstream out;
    reports::emit_report(run, tag, out);
    const std::string text = out.str();
    return text.substr(0, text.find('\n'));
}

#ifdef VOLWMC_CLI_PATH
int run_cli(const std::string& args)
{
    const std::string cmd = std::string(VOLWMC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

class SmokeRun : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = new testutil::TempDir("pipeline");
        config_ = pipeline::load_config(VOLWMC_SMOKE_CONFIG);
        pipeline::run_pipeline(config_, dir_->path() / "a");
    }
    static void TearDownTestSuite()
    {
        delete dir_;
        dir_ = nullptr;
    }
    static std::filesystem::path run() { return dir_->path() / "a"; }

    static testutil::TempDir* dir_;
    static pipeline::Config config_;
};

testutil::TempDir* SmokeRun::dir_ = nullptr;
pipeline::Config SmokeRun::config_;

} // namespace

TEST(Config, MissingFieldIsNamed)
{
    std::string text = slurp(VOLWMC_SMOKE_CONFIG);
    const auto pos = text.find("\"gamma\": 1e-08, ");
    ASSERT_NE(pos, std::string::npos);
    text.erase(pos, std::string("\"gamma\": 1e-08, ").size());
    try {
        pipeline::parse_config(text);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("wd.gamma"), std::string::npos) << e.what();
    }
}

TEST(Config, WrongTypeIsNamed)
{
    std::string text = slurp(VOLWMC_SMOKE_CONFIG);
    const auto pos = text.find("\"nu\": 400");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 9, "\"nu\": \"many\"");
    try {
        pipeline::parse_config(text);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("wmc.nu"), std::string::npos) << e.what();
    }
}

TEST(Config, JsonRoundTrip)
{
    const auto c = pipeline::load_config(VOLWMC_SMOKE_CONFIG);
    const auto text = pipeline::config_to_json(c);
    EXPECT_EQ(pipeline::config_to_json(pipeline::parse_config(text)), text);
}

TEST_F(SmokeRun, ManifestHasPerDateMraeForAllMethods)
{
    const std::string m = slurp(run() / pipeline::artifact::manifest);
    for (const char* key : {"\"mrae_direct\"", "\"mrae_finetuned\"", "\"mrae_calibration\"", "\"mrae_wd\"",
                            "\"config_hash\""}) {
        EXPECT_NE(m.find(key), std::string::npos) << key;
    }
}

TEST_F(SmokeRun, RerunIsBitIdentical)
{
    pipeline::run_pipeline(config_, dir_->path() / "b");
    EXPECT_EQ(slurp(run() / pipeline::artifact::manifest), slurp(dir_->path() / "b" / pipeline::artifact::manifest));
}

TEST_F(SmokeRun, ResumeReusesArtifacts)
{
    const auto copy = dir_->path() / "c";
    std::filesystem::copy(run(), copy);
    std::filesystem::remove(copy / pipeline::artifact::manifest);
    std::filesystem::remove(copy / pipeline::artifact::sabr_paths);
    pipeline::RunOptions opts;
    opts.resume = true;
    pipeline::run_pipeline(config_, copy, opts);
    EXPECT_EQ(slurp(run() / pipeline::artifact::manifest), slurp(copy / pipeline::artifact::manifest));
}

TEST_F(SmokeRun, ReportSchemas)
{
    const std::map<std::string, std::string> expected{
        {"fig2", "case,date,mrae,dK,T,vol_market,vol_reconstructed"},
        {"fig3", "resolution,dK,T,vol"},
        {"fig4", "dim,value,dK,T,vol,diff_vs_origin"},
        {"fig6", "date,split,dim,z_calibration,z_finetuned"},
        {"fig7", "date,split,mrae_direct,mrae_finetuned,mrae_calibration,sliding_std_relative,sliding_std_absolute"},
        {"fig9", "date,split,mrae_calibration,mrae_wd,relative_std"},
        {"fig10", "dim,value,expiry,bin_lo,bin_hi,mass"},
        {"fig11", "t1,t2,center,residual_uniform,residual_trained,mass_trained"},
        {"fig12", "date,relative_mart_loss,noise_floor"},
        {"fig13", "series,expiry,x,value"},
        {"fig14", "barrier,price_wmc,price_sabr,se_wmc,se_sabr"},
    };
    for (const auto& [tag, header] : expected) EXPECT_EQ(header_of(run(), tag), header) << tag;
    EXPECT_EQ(header_of(run(), "fig5").rfind("date,split,method,z0", 0), 0u);
    EXPECT_THROW(header_of(run(), "fig8"), ConfigError);
}

TEST_F(SmokeRun, ReportsArePureFunctionsOfArtifacts)
{
    for (const auto& tag : reports::report_tags()) {
        std::ostringstream a, b;
        reports::emit_report(run(), tag, a);
        reports::emit_report(run(), tag, b);
        EXPECT_EQ(a.str(), b.str()) << tag;
    }
}

TEST_F(SmokeRun, MissingArtifactIsReported)
{
    const auto copy = dir_->path() / "d";
    std::filesystem::copy(run(), copy);
    std::filesystem::remove(copy / pipeline::artifact::weight_decoder);
    std::ostringstream out;
    EXPECT_ANY_THROW(reports::emit_report(copy, "fig10", out));
}

#ifdef VOLWMC_CLI_PATH
TEST(Cli, ExitCodes)
{
    testutil::TempDir dir("cli");
    EXPECT_EQ(run_cli("price vanilla --s0 0 --k 0 --sigma 0.01 --t 1"), 0);
    EXPECT_EQ(run_cli("price implied-vol --s0 0 --k 0.002 --t 1 --price 0"), 3);
    EXPECT_EQ(run_cli("price vanilla --s0 0 --k 0 --sigma -1 --t 1"), 2);
    EXPECT_EQ(run_cli("no-such-command"), 2);
    std::ofstream(dir / "bad.json") << "{\"data\": {}}";
    EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "run").string()), 2);
    EXPECT_EQ(run_cli("report --run " + (dir / "missing").string() + " --which fig14"), 2);
}

TEST(Cli, SmokeRunAndReport)
{
    testutil::TempDir dir("cli");
    const auto out = dir / "run";
    ASSERT_EQ(run_cli(std::string("run --config ") + VOLWMC_SMOKE_CONFIG + " --out " + out.string()), 0);
    ASSERT_EQ(run_cli("report --run " + out.string() + " --which all --out " + (dir / "reports").string()), 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "reports" / "fig14.csv"));
}
#endif
