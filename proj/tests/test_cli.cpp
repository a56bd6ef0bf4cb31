#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& work() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("catnet_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Cleanup : ::testing::Environment {
    void TearDown() override { fs::remove_all(work()); }
};
const auto* const cleanup = ::testing::AddGlobalTestEnvironment(new Cleanup);

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const auto log = work() / "last.log";
    const std::string cmd = "cd " + work().string() + " && " + CATNET_CLI + std::string(" ") + args + " > " +
                            log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, {std::istreambuf_iterator<char>(in), {}}};
}

json record(const std::string& dir) {
    std::ifstream in(work() / dir / "run.json");
    return json::parse(in);
}

const char* kSmallSynth =
    "synth --subjects 3 --trials 24 --eeg-channels 6 --emg-channels 2 --samples 60 --informative-eeg 1,3 "
    "--informative-emg 0 --seed 7";

const char* kQuickTrain = "--epochs 2 --batch-size 16 --no-center";

void ensure_data() {
    if (!fs::exists(work() / "data" / "run.json")) {
        ASSERT_EQ(run(std::string(kSmallSynth) + " --out data").code, 0);
    }
}

}  // namespace

TEST(Cli, TrainWithoutDataPrintsUsageAndExitsOne) {
    auto r = run("train --out t");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("--data"), std::string::npos);
    EXPECT_NE(r.out.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownFlagExitsOne) {
    auto r = run("synth --out s --no-such-flag");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("Usage"), std::string::npos);
    EXPECT_EQ(run("no-such-command").code, 1);
}

TEST(Cli, SynthTwiceGivesIdenticalHashes) {
    ASSERT_EQ(run(std::string(kSmallSynth) + " --out s_a").code, 0);
    ASSERT_EQ(run(std::string(kSmallSynth) + " --out s_b").code, 0);
    const auto a = record("s_a"), b = record("s_b");
    EXPECT_EQ(a["artifacts"], b["artifacts"]);
    EXPECT_TRUE(a["artifacts"].contains("trials.bin"));
    EXPECT_EQ(a["command"], "synth");
    EXPECT_EQ(a["seed"], 7);
    EXPECT_EQ(a["status"], "ok");
}

TEST(Cli, GradcheckPassesAndWritesTable) {
    auto r = run("gradcheck --out gc");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
    EXPECT_TRUE(fs::exists(work() / "gc" / "gradcheck.csv"));
}

TEST(Cli, TrainRerunReproducesHashesAndLeavesInputAlone) {
    ensure_data();
    const auto before = record("data")["artifacts"];
    ASSERT_EQ(run(std::string("train --data data --out t_a ") + kQuickTrain).code, 0);
    ASSERT_EQ(run(std::string("train --data data --out t_b ") + kQuickTrain).code, 0);
    const auto a = record("t_a"), b = record("t_b");
    EXPECT_EQ(a["artifacts"], b["artifacts"]);
    for (const char* f : {"history.csv", "model.json", "params.bin", "tones.csv", "metrics.json"})
        EXPECT_TRUE(a["artifacts"].contains(f)) << f;
    std::ifstream h(work() / "t_a" / "history.csv");
    std::string header;
    std::getline(h, header);
    EXPECT_EQ(header, "epoch,train_loss,val_loss,val_acc,lr");
    // input directory unchanged: re-hash it with a fresh synth record of the same files
    ASSERT_EQ(run(std::string(kSmallSynth) + " --out data_again").code, 0);
    EXPECT_EQ(record("data_again")["artifacts"], before);
}

TEST(Cli, FlagOverridesConfigFile) {
    ensure_data();
    std::ofstream(work() / "cfg.json") << R"({"lr": 0.01, "epochs": 1, "batch_size": 16})";
    ASSERT_EQ(run("train --data data --out t_cfg --config cfg.json --lr 0.002").code, 0);
    const auto c = record("t_cfg")["config"];
    EXPECT_EQ(c["lr"], 0.002);
    EXPECT_EQ(c["epochs"], 1);
    EXPECT_EQ(c["batch_size"], 16);
    EXPECT_EQ(c["gamma"], 2.0);
    std::ofstream(work() / "bad.json") << R"({"learning_rate": 0.01})";
    EXPECT_EQ(run("train --data data --out t_bad --config bad.json").code, 1);
    EXPECT_EQ(run("train --data data --out t_bad --fold 9").code, 1);
    EXPECT_EQ(run("train --data data --out t_bad --alpha 1,2").code, 1);
}

TEST(Cli, EvalRankLosoAndReport) {
    ensure_data();
    if (!fs::exists(work() / "t_a")) {
        ASSERT_EQ(run(std::string("train --data data --out t_a ") + kQuickTrain).code, 0);
    }
    auto e = run("eval --model t_a --data data --out ev");
    ASSERT_EQ(e.code, 0) << e.out;
    std::ifstream tones(work() / "ev" / "tones.csv");
    std::string header;
    std::getline(tones, header);
    EXPECT_EQ(header, "tone,precision,recall,f1");

    auto r = run("rank-channels --model t_a --data data --out rk --k 3");
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream ch(work() / "rk" / "channels.csv");
    std::string line;
    int rows = -1;
    while (std::getline(ch, line)) ++rows;
    EXPECT_EQ(rows, 3);
    EXPECT_EQ(run("rank-channels --model t_a --data data --out rk2 --k 30").code, 1);

    auto l = run(std::string("loso --data data --out lo --holdout 2 ") + kQuickTrain);
    ASSERT_EQ(l.code, 0) << l.out;
    std::ifstream subj(work() / "lo" / "subjects.csv");
    std::getline(subj, header);
    EXPECT_EQ(header, "subject,accuracy");
    std::getline(subj, line);
    EXPECT_EQ(line.substr(0, 3), "S2,");
    std::getline(subj, line);
    EXPECT_EQ(line.substr(0, 4), "Avg,");

    auto rep = run("report ev lo --out rep");
    ASSERT_EQ(rep.code, 0) << rep.out;
    EXPECT_TRUE(fs::exists(work() / "rep" / "report.txt"));
    EXPECT_NE(rep.out.find("Avg"), std::string::npos);
    EXPECT_EQ(run("report data --out rep2").code, 1);
}

TEST(Cli, RuntimeFailureExitsTwoWithRecord) {
    ensure_data();
    if (!fs::exists(work() / "t_a")) {
        ASSERT_EQ(run(std::string("train --data data --out t_a ") + kQuickTrain).code, 0);
    }
    fs::copy(work() / "t_a", work() / "broken", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::resize_file(work() / "broken" / "params.bin", 8);
    auto r = run("eval --model broken --data data --out ev_broken");
    EXPECT_EQ(r.code, 2) << r.out;
    EXPECT_EQ(record("ev_broken")["status"], "failed");
}

TEST(Cli, PreprocessContinuousRecordings) {
    ASSERT_EQ(run("synth --continuous --subjects 2 --trials 4 --eeg-channels 4 --emg-channels 2 --informative-eeg 1 "
                  "--informative-emg 0 --out raw")
                  .code,
              0);
    auto r = run("preprocess --in raw --out pre --window 0,1 --band 1,100 --notch 50 --rate 500");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto rec = record("pre");
    EXPECT_EQ(rec["details"]["trials"], 8);
    EXPECT_EQ(run("preprocess --in raw --out raw").code, 1);
    EXPECT_EQ(run("preprocess --in raw --out pre2 --band 1").code, 1);
}
