#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(ODENET_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

double value_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  if (pos == std::string::npos) return std::nan("");
  return std::stod(text.substr(pos + key.size()));
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("odenet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const std::string& extra_train = "") const {
    const std::string p = path("run.json");
    std::ofstream(p) << R"({
  "seed": 1,
  "dataset": {"kind": "two_spirals", "n_train": 128, "n_test": 64, "noise": 0.2},
  "model": {"blocks": [{"width": 6, "scheme": "rk4", "n_steps": 2, "family": "piecewise_constant", "k": 4}]},
  "train": {"epochs": 2, "batch_size": 32, "learning_rate": 0.02)" << extra_train << R"(},
  "output": {"checkpoint": "model.json", "metrics": "metrics.csv"}
})";
    return p;
  }

  std::string trained_checkpoint() {
    const RunResult r = run("train " + write_config() + " --quiet");
    EXPECT_EQ(r.code, 0) << r.out;
    return path("model.json");
  }

  fs::path dir_;
};

}  // namespace

TEST(CliBasic, NoArgumentsIsUsageError) {
  const RunResult r = run("");
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST(CliBasic, UnknownSubcommandIsUsageError) { EXPECT_EQ(run("frobnicate").code, 2); }

TEST(CliBasic, HelpSucceeds) {
  const RunResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("compress"), std::string::npos);
}

TEST(CliConvergence, Rk4SlopeIsFour) {
  const RunResult r = run("convergence --scheme rk4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, 14), "n_t,error,orde");
  const double slope = value_after(r.out, "slope,");
  EXPECT_GE(slope, 3.8);
  EXPECT_LE(slope, 4.2);
}

TEST(CliConvergence, EulerSlopeIsOne) {
  const RunResult r = run("convergence --scheme euler --n-t-list 8,16,32,64");
  ASSERT_EQ(r.code, 0) << r.out;
  const double slope = value_after(r.out, "slope,");
  EXPECT_GE(slope, 0.8);
  EXPECT_LE(slope, 1.2);
}

TEST(CliConvergence, BadArguments) {
  EXPECT_EQ(run("convergence --scheme dopri5").code, 2);
  EXPECT_EQ(run("convergence --n-t-list 8").code, 2);
  EXPECT_EQ(run("convergence --n-t-list 8,x").code, 2);
}

TEST_F(Cli, TrainWritesCheckpointAndMetrics) {
  const RunResult r = run("train " + write_config() + " --quiet");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("accuracy,loss,param_count,train_seconds"), std::string::npos);
  ASSERT_TRUE(fs::exists(path("model.json")));
  std::ifstream m(path("metrics.csv"));
  std::string header;
  std::getline(m, header);
  EXPECT_EQ(header, "epoch,k,n_t,train_loss,val_accuracy,lr");
}

TEST_F(Cli, TrainOutputOverrideAndSeedAfterSubcommand) {
  const RunResult a = run("train " + write_config() + " --out " + path("a.json") + " --metrics " +
                          path("a.csv") + " --seed 5 --quiet");
  ASSERT_EQ(a.code, 0) << a.out;
  const RunResult b = run("--seed 5 --quiet train " + write_config() + " -o " + path("b.json") +
                          " --metrics " + path("b.csv"));
  ASSERT_EQ(b.code, 0) << b.out;
  std::ifstream fa(path("a.json")), fb(path("b.json"));
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(sa.str().find("\"seed\": 5"), std::string::npos);
}

TEST_F(Cli, TrainConfigErrors) {
  EXPECT_EQ(run("train " + path("missing.json")).code, 2);
  std::ofstream(path("bad.json")) << R"({"seed": 0, "modle": {}})";
  const RunResult r = run("train " + path("bad.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("modle"), std::string::npos) << r.out;
  std::ofstream(path("broken.json")) << "{";
  EXPECT_EQ(run("train " + path("broken.json")).code, 2);
}

TEST_F(Cli, TrainDivergenceIsRuntimeFailure) {
  const std::string cfg = write_config();
  std::string text;
  {
    std::ifstream in(cfg);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  text.replace(text.find("0.02"), 4, "1e200");
  std::ofstream(cfg) << text;
  const RunResult r = run("train " + cfg + " --quiet");
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("diverged"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("model.json")));
}

TEST_F(Cli, CompressEvalAndSweep) {
  const std::string ckpt = trained_checkpoint();
  const RunResult c = run("compress " + ckpt + " --k 2 --method project --out " + path("small.json"));
  ASSERT_EQ(c.code, 0) << c.out;
  EXPECT_NE(c.out.find("source_params,target_params"), std::string::npos);

  const RunResult s = run("compress " + ckpt + " --n-t 1 --out " + path("short.json"));
  ASSERT_EQ(s.code, 0) << s.out;
  EXPECT_NE(s.out.find("warning"), std::string::npos);

  const RunResult e = run("eval " + path("small.json") + " --dataset two_spirals --n 50 --noise 0.2");
  ASSERT_EQ(e.code, 0) << e.out;
  EXPECT_NE(e.out.find("accuracy,loss,param_count,eval_ms,samples"), std::string::npos);
  EXPECT_NE(e.out.find(",50\n"), std::string::npos) << e.out;

  const RunResult w = run("sweep " + ckpt + " --dataset two_spirals --n 40 --k-list 4,2 --n-t-list 2,1 "
                          "--methods project,interpolate --repeats 1 --out " + path("sweep.csv"));
  ASSERT_EQ(w.code, 0) << w.out;
  std::ifstream in(path("sweep.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "k,n_t,method,family,param_count,accuracy,loss,eval_ms");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 8u);
}

TEST_F(Cli, CompressAndEvalErrors) {
  const std::string ckpt = trained_checkpoint();
  EXPECT_EQ(run("compress " + path("nope.json") + " --k 2 --out " + path("x.json")).code, 2);
  EXPECT_EQ(run("compress " + ckpt + " --k 2 --method svd --out " + path("x.json")).code, 2);
  EXPECT_EQ(run("compress " + ckpt + " --k 0 --out " + path("x.json")).code, 2);
  EXPECT_EQ(run("compress " + ckpt + " --k 2 --family fourier --out " + path("x.json")).code, 2);
  EXPECT_EQ(run("compress " + ckpt + " --k 2").code, 2);
  EXPECT_EQ(run("eval " + ckpt).code, 2);
  EXPECT_EQ(run("eval " + ckpt + " --dataset imagenet").code, 2);
  EXPECT_EQ(run("eval " + ckpt + " --dataset blobs").code, 2) << "3-class data on a 2-class model";
  EXPECT_EQ(run("sweep " + ckpt + " --dataset two_spirals --k-list 2,x").code, 2);

  std::ofstream(path("tampered.json")) << "{\"format_version\": 99}";
  const RunResult t = run("eval " + path("tampered.json") + " --dataset two_spirals");
  EXPECT_EQ(t.code, 2);
  EXPECT_NE(t.out.find("format_version"), std::string::npos) << t.out;
}
