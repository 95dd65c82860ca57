#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "depthpose/container.hpp"
#include "depthpose/ddp.hpp"

#ifndef DEPTHPOSE_CLI_PATH
#error "DEPTHPOSE_CLI_PATH must point at the depthpose executable"
#endif

namespace fs = std::filesystem;
using namespace depthpose;

namespace {

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("depthpose_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string &name) const { return (dir / name).string(); }

  // Runs the CLI with stdout/stderr captured; returns the exit status.
  int run(const std::string &args) {
    const std::string cmd = std::string(DEPTHPOSE_CLI_PATH) + " " + args + " > " + path("stdout.txt") + " 2> " +
                            path("stderr.txt");
    const int status = std::system(cmd.c_str());
    out = slurp(path("stdout.txt"));
    err = slurp(path("stderr.txt"));
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string &p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir;
  std::string out, err;
};

} // namespace

TEST_F(Cli, HelpAndUnknownFlags) {
  EXPECT_EQ(run("--help"), 0);
  for (const char *sub : {"synth", "cluster", "train", "eval", "infer", "fuse", "hpselect"}) {
    EXPECT_EQ(run(std::string(sub) + " --help"), 0) << sub;
    EXPECT_NE(out.find("-o"), std::string::npos) << sub;
  }
  EXPECT_EQ(run("synth --bogus 3 -o " + path("x.dpc")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, SynthCountsAndDeterminism) {
  ASSERT_EQ(run("synth --scenes 10 --cameras 3 --seed 7 -o " + path("a.dpc")), 0) << err;
  EXPECT_NE(out.find("views 30"), std::string::npos) << out;
  ASSERT_EQ(run("synth --scenes 10 --cameras 3 --seed 7 -o " + path("b.dpc")), 0);
  EXPECT_EQ(slurp(path("a.dpc")), slurp(path("b.dpc")));
  const Dataset ds = read_dataset(path("a.dpc"));
  EXPECT_EQ(ds.frame_count(), 30u);
  EXPECT_EQ(ds.samples.size(), 10u);
}

TEST_F(Cli, SynthConfigFileAndOverrides) {
  std::ofstream(path("synth.json")) << R"({"scenes": 4, "cameras": 2, "seed": 3, "train_fraction": 0.5})";
  ASSERT_EQ(run("synth --config " + path("synth.json") + " --cameras 1 -o " + path("c.dpc")), 0) << err;
  const Dataset ds = read_dataset(path("c.dpc"));
  EXPECT_EQ(ds.samples.size(), 4u);
  EXPECT_EQ(ds.frame_count(), 4u); // flag wins over the file
  EXPECT_EQ(ds.split(Split::Train).size(), 2u);
}

TEST_F(Cli, SynthErrors) {
  EXPECT_NE(run("synth --scenes 3"), 0); // no output path
  EXPECT_FALSE(err.empty());
  EXPECT_EQ(run("synth --scenes 3 --cameras 0 -o " + path("x.dpc")), 2);
  EXPECT_EQ(run("synth --config " + path("missing.json") + " -o " + path("x.dpc")), 3);
  std::ofstream(path("bad.json")) << "{ not json";
  EXPECT_EQ(run("synth --config " + path("bad.json") + " -o " + path("x.dpc")), 2);
  EXPECT_EQ(run("synth --scenes 3 -o " + path("no/such/dir/x.dpc")), 3);
}

TEST_F(Cli, ClusterPrototypes) {
  ASSERT_EQ(run("synth --scenes 200 --cameras 1 --seed 2 -o " + path("ds.dpc")), 0);
  ASSERT_EQ(run("cluster " + path("ds.dpc") + " -k 16 --seed 4 -o " + path("p1.dpm")), 0) << err;
  ASSERT_EQ(run("cluster " + path("ds.dpc") + " -k 16 --seed 4 -o " + path("p2.dpm")), 0);
  EXPECT_EQ(slurp(path("p1.dpm")), slurp(path("p2.dpm")));
  const ModelFile f = read_model_file(path("p1.dpm"));
  ASSERT_TRUE(f.prototypes.has_value());
  EXPECT_EQ(f.prototypes->k, 16u);
  EXPECT_FALSE(f.network.has_value());
  EXPECT_EQ(run("cluster " + path("ds.dpc") + " -k 500 -o " + path("p3.dpm")), 2);
  EXPECT_NE(err.find("exceeds"), std::string::npos) << err;
  EXPECT_EQ(run("cluster " + path("missing.dpc") + " -k 2 -o " + path("p4.dpm")), 3);
}

TEST_F(Cli, CorruptDatasetIsAnIoError) {
  ASSERT_EQ(run("synth --scenes 3 -o " + path("ds.dpc")), 0);
  auto bytes = slurp(path("ds.dpc"));
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(path("bad.dpc"), std::ios::binary) << bytes;
  EXPECT_EQ(run("cluster " + path("bad.dpc") + " -k 2 -o " + path("p.dpm")), 3);
  EXPECT_NE(err.find("checksum"), std::string::npos) << err;
}

TEST_F(Cli, TrainEvalInferFuse) {
  ASSERT_EQ(run("synth --scenes 500 --cameras 1 --seed 11 --train-fraction 1 -o " + path("train.dpc")), 0);
  ASSERT_EQ(run("train " + path("train.dpc") + " -k 16 --epochs 30 --batch 16 --lr 0.003 --seed 1 -o " +
                path("m.dpm")),
            0)
      << err;
  ASSERT_TRUE(fs::exists(path("m.dpm")));
  const std::string log = slurp(path("m.loss.csv"));
  EXPECT_EQ(log.rfind("epoch,lr,train_loss", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 31);

  ASSERT_EQ(run("eval " + path("m.dpm") + " " + path("train.dpc") + " --split train -o " + path("report")), 0)
      << err;
  const auto report = nlohmann::json::parse(slurp(path("report/report.json")));
  EXPECT_LT(report["average_error_cm"].get<double>(), report["mean_pose_baseline_error_cm"].get<double>());
  EXPECT_TRUE(fs::exists(path("report/curve.csv")));
  EXPECT_TRUE(fs::exists(path("report/curve.svg")));

  ASSERT_EQ(run("synth --scenes 4 --cameras 3 --seed 12 -o " + path("multi.dpc")), 0);
  ASSERT_EQ(run("infer " + path("m.dpm") + " " + path("multi.dpc") + " -o " + path("pred.json")), 0) << err;
  const auto pred = nlohmann::json::parse(slurp(path("pred.json")));
  ASSERT_EQ(pred["samples"].size(), 4u);
  EXPECT_EQ(pred["samples"][0]["views"].size(), 3u);

  ASSERT_EQ(run("fuse " + path("pred.json") + " -o " + path("fused.json")), 0) << err;
  const auto fused = nlohmann::json::parse(slurp(path("fused.json")));
  // Equal weights reproduce the fusion done by `infer`.
  const auto a = fused["samples"][1]["fused"][3], b = pred["samples"][1]["fused"][3];
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(a[k].get<double>(), b[k].get<double>(), 1e-12);
  EXPECT_EQ(run("fuse " + path("pred.json") + " --weights 0.5,0.3,0.3 -o " + path("f2.json")), 2);
  EXPECT_EQ(run("fuse " + path("pred.json") + " --weights 0.5,0.5 -o " + path("f3.json")), 2);
  EXPECT_EQ(run("fuse " + path("pred.json") + " --weights 0.5,0.3,0.2 -o " + path("f4.json")), 0) << err;
  EXPECT_EQ(run("infer " + path("m.dpm") + " " + path("multi.dpc") + " --weights 1,1,1 -o " + path("p.json")), 2);
}

TEST_F(Cli, TrainIsThreadCountInvariant) {
  ASSERT_EQ(run("synth --scenes 12 --cameras 2 --seed 5 --train-fraction 0.75 --val-fraction 0.25 -o " +
                path("ds.dpc")),
            0);
  const std::string common = "train " + path("ds.dpc") + " -k 4 --epochs 2 --batch 4 --seed 9 ";
  ASSERT_EQ(run(common + "--threads 1 -o " + path("t1.dpm")), 0) << err;
  ASSERT_EQ(run(common + "--threads 3 -o " + path("t3.dpm")), 0) << err;
  EXPECT_EQ(slurp(path("t1.dpm")), slurp(path("t3.dpm")));
  EXPECT_EQ(run(common + "--threads 0 -o " + path("t0.dpm")), 2);
  EXPECT_EQ(run(common + "--alpha 2 -o " + path("ta.dpm")), 2);
  EXPECT_EQ(run(common + "--preset nope -o " + path("tp.dpm")), 2);
}

TEST_F(Cli, HyperparameterSelection) {
  std::ofstream(path("scores.json")) << R"({"K=20": [0.10, 0.11, 0.12, 0.13, 0.14],
                                            "K=60": [0.20, 0.21, 0.22, 0.23, 0.24],
                                            "K=100": [0.105, 0.115, 0.125, 0.135, 0.145]})";
  ASSERT_EQ(run("hpselect " + path("scores.json") + " -o " + path("p.csv")), 0) << err;
  const std::string csv = slurp(path("p.csv"));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "config,K=20,K=60,K=100,mean_score");
  EXPECT_NE(csv.find("K=20,-,0.0079,"), std::string::npos) << csv;
  EXPECT_NE(out.find("chosen: K=20"), std::string::npos) << out;
  EXPECT_NE(out.find("K=100"), std::string::npos);
  std::ofstream(path("one.json")) << R"({"a": [1, 2]})";
  EXPECT_EQ(run("hpselect " + path("one.json")), 2);
}
