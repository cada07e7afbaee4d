#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ocdmlc/cli.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = OCDMLC_CLI_PATH;
const fs::path kTiny = fs::path(OCDMLC_SOURCE_DIR) / "configs" / "tiny.ini";

struct CliResult {
    int code;
    std::string output;
};

CliResult run(const std::string& args, const fs::path& dir) {
    const fs::path log = dir / "cli.log";
    const std::string cmd = "\"" + kCli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("ocdmlc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string out(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UnknownFlagExitsTwo) {
    EXPECT_EQ(run("train --no-such-flag", dir_).code, 2);
    EXPECT_EQ(run("", dir_).code, 2);
    EXPECT_EQ(run("oracle-check --max-l 9", dir_).code, 2);
}

TEST_F(Cli, HelpExitsZero) {
    const CliResult r = run("--help", dir_);
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.output.find("oracle-check"), std::string::npos);
}

TEST_F(Cli, OracleCheckPasses) {
    const CliResult r = run("oracle-check --max-l 5 --cases 2000", dir_);
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("q_mismatches=0"), std::string::npos) << r.output;
}

TEST_F(Cli, SynthIsDeterministic) {
    ASSERT_EQ(run("synth --config " + kTiny.string() + " --out " + out("a"), dir_).code, 0);
    ASSERT_EQ(run("synth --config " + kTiny.string() + " --out " + out("b"), dir_).code, 0);
    for (const char* split : {"train.jsonl", "val.jsonl", "test.jsonl", "test_unseen.jsonl"}) {
        const std::string a = slurp(dir_ / "a" / split);
        EXPECT_FALSE(a.empty()) << split;
        EXPECT_EQ(a, slurp(dir_ / "b" / split)) << split;
    }
    ASSERT_EQ(run("synth --config " + kTiny.string() + " --seed 99 --out " + out("c"), dir_).code, 0);
    EXPECT_NE(slurp(dir_ / "a" / "train.jsonl"), slurp(dir_ / "c" / "train.jsonl"));
}

TEST_F(Cli, TrainEvalDecodeReport) {
    const std::string cfg = " --config " + kTiny.string();
    CliResult r = run("train" + cfg + " --out " + out("run"), dir_);
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir_ / "run" / "model.ckpt"));
    const std::string curve = slurp(dir_ / "run" / "curve.csv");
    EXPECT_EQ(curve.rfind("update,", 0), 0u) << curve;
    const std::string metrics = slurp(dir_ / "run" / "metrics.csv");
    EXPECT_NE(metrics.find("ocd,test,"), std::string::npos) << metrics;
    EXPECT_NE(metrics.find("ocd,test_unseen,"), std::string::npos) << metrics;

    r = run("eval" + cfg + " --out " + out("run") + " --split test --strategy joint", dir_);
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(slurp(dir_ / "run" / "metrics.csv").find("joint,test,"), std::string::npos);

    r = run("eval" + cfg + " --out " + out("run") + " --split val --strategy br --threshold tuned", dir_);
    ASSERT_EQ(r.code, 0) << r.output;

    r = run("decode" + cfg + " --out " + out("run") + " --split test", dir_);
    ASSERT_EQ(r.code, 0) << r.output;
    std::istringstream preds(slurp(dir_ / "run" / "preds.jsonl"));
    std::string line;
    int lines = 0;
    while (std::getline(preds, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("gold"));
        EXPECT_TRUE(j["pred"].is_array());
        EXPECT_EQ(j["strategy"], "rnn");
        ++lines;
    }
    EXPECT_EQ(lines, 16);

    r = run("report" + cfg + " --out " + out("rep") + " --model ocd=" + out("run/model.ckpt") +
                " --splits test test_unseen",
            dir_);
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"metrics.csv", "combos.csv", "poswise.csv", "freq.csv", "report.txt"})
        EXPECT_TRUE(fs::exists(dir_ / "rep" / f)) << f;
    EXPECT_NE(slurp(dir_ / "rep" / "combos.csv").find("reference,test_unseen,"), std::string::npos);
}

TEST_F(Cli, TrainsFromJsonlDirectory) {
    const std::string cfg = " --config " + kTiny.string();
    ASSERT_EQ(run("synth" + cfg + " --out " + out("data"), dir_).code, 0);
    const CliResult r = run("train" + cfg + " --regime mle --data " + out("data") + " --out " + out("run"), dir_);
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(slurp(dir_ / "run" / "metrics.csv").find("mle,val,"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
    CliResult r = run("eval --config " + kTiny.string() + " --checkpoint " + out("missing.ckpt"), dir_);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("error:"), std::string::npos);
    std::ofstream(dir_ / "corrupt.ckpt") << "not a checkpoint";
    r = run("decode --config " + kTiny.string() + " --checkpoint " + out("corrupt.ckpt"), dir_);
    EXPECT_EQ(r.code, 1);
}

TEST_F(Cli, InvalidArgumentsExitTwo) {
    EXPECT_EQ(run("train --config " + out("missing.ini"), dir_).code, 2);
    EXPECT_EQ(run("train --config " + kTiny.string() + " --regime nonsense --out " + out("x"), dir_).code, 2);
    EXPECT_EQ(run("eval --config " + kTiny.string() + " --strategy greedy", dir_).code, 2);
}

TEST(CliInProcess, RunCliWritesToStreams) {
    std::ostringstream out, err;
    const char* argv[] = {"ocdmlc", "oracle-check", "--max-l", "3", "--cases", "200"};
    EXPECT_EQ(ocdmlc::run_cli(6, const_cast<char**>(argv), out, err), 0);
    EXPECT_NE(out.str().find("cases=200"), std::string::npos) << out.str();
}
