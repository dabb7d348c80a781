#include "neomlp/store.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("neomlp_cli_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }

  Outcome neof(const std::string& args) const {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && '" NEOF_BINARY "' " + args + " 2>'" + err.string() + "'";
    Outcome r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    std::array<char, 4096> buf{};
    size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    r.err = ss.str();
    return r;
  }

  void synth_digits() const {
    const Outcome r = neof("-q synth digits --out-dir d --train 4 --val 2 --test 2 --classes 2");
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

const std::string kTinyModel = "--hidden-nodes 2 --token-dim 8 --layers 1 --heads 2 --ffn-hidden 16 --d-rff 16";

}  // namespace

TEST_F(Cli, MissingManifestNamesThePath) {
  const Outcome r = neof("fit --manifest nowhere/absent.json -o m.ckpt");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nowhere/absent.json"), std::string::npos) << r.err;
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(neof("").code, 2);
  EXPECT_EQ(neof("fit --no-such-flag").code, 2);
  EXPECT_EQ(neof("--help").code, 0);
}

TEST_F(Cli, DegenerateConfigIsRefused) {
  synth_digits();
  const Outcome r = neof("-q fit --manifest d/train.json -o m.ckpt --epochs 1 --hidden-nodes 0 --token-dim 8 --layers 1 "
                     "--heads 2 --ffn-hidden 16 --d-rff 16");
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_FALSE(fs::exists(dir / "m.ckpt"));
}

TEST_F(Cli, FitRecordsItsFlagsInTheCheckpoint) {
  synth_digits();
  const Outcome r = neof("-q --seed 7 fit --manifest d/train.json -o m.ckpt --epochs 1 --batch-points 256 " + kTinyModel);
  ASSERT_EQ(r.code, 0) << r.err;
  const json out = json::parse(r.out);
  EXPECT_EQ(out.at("signals"), 4);
  EXPECT_EQ(out.at("epochs"), 1);
  const neomlp::Checkpoint ck = neomlp::load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(ck.run.at("seed"), 7);
  EXPECT_EQ(ck.run.at("fit").at("epochs"), 1);
  EXPECT_EQ(ck.run.at("fit").at("batch_points"), 256);
  EXPECT_EQ(ck.run.at("fit").at("seed"), 7);
  EXPECT_EQ(ck.model.config().hidden_nodes, 2);
  EXPECT_EQ(neomlp::to_hex(neomlp::backbone_fingerprint(ck.model, ck.run)), out.at("fingerprint"));
}

TEST_F(Cli, DeterministicRunsShareAFingerprint) {
  synth_digits();
  const std::string fit = "-q --deterministic --seed 3 fit --manifest d/train.json --epochs 2 --batch-points 256 " + kTinyModel;
  const Outcome a = neof(fit + " -o a.ckpt"), b = neof(fit + " -o b.ckpt");
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(a.out).at("fingerprint"), json::parse(b.out).at("fingerprint"));
  const auto bytes = [&](const char* f) {
    std::ifstream in(dir / f, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(bytes("a.ckpt"), bytes("b.ckpt"));
}

TEST_F(Cli, FinetuneEvalAndClassify) {
  synth_digits();
  ASSERT_EQ(neof("-q fit --manifest d/train.json -o m.ckpt --epochs 2 --batch-points 256 " + kTinyModel).code, 0);
  for (const char* split : {"train", "val", "test"}) {
    const Outcome r = neof(std::string("-q finetune --manifest d/") + split + ".json --checkpoint m.ckpt --split " + split +
                       " -o " + split + ".nuset --epochs 2 --batch-points 256");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const Outcome e = neof("-q eval --manifest d/test.json --checkpoint m.ckpt --nuset test.nuset");
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_TRUE(json::parse(e.out).contains("mean_psnr"));
  EXPECT_EQ(neof("-q eval --manifest d/test.json --checkpoint m.ckpt --nuset test.nuset --min-psnr 200").code, 1);

  const Outcome c = neof("-q classify --train train.nuset --val val.nuset --test test.nuset --epochs 2");
  ASSERT_EQ(c.code, 0) << c.err;
  const json cj = json::parse(c.out);
  for (const char* key : {"train_acc", "val_acc", "test_acc", "epochs", "best_epoch", "config"})
    EXPECT_TRUE(cj.contains(key)) << key;
  EXPECT_GE(cj.at("test_acc").get<double>(), 0.0);
  EXPECT_LE(cj.at("test_acc").get<double>(), 1.0);

  ASSERT_EQ(neof("-q fit --manifest d/train.json -o other.ckpt --epochs 1 --batch-points 256 --seed 99 " + kTinyModel).code, 0);
  EXPECT_EQ(neof("-q eval --manifest d/test.json --checkpoint other.ckpt --nuset test.nuset").code, 2);
}

TEST_F(Cli, VerifyFastPasses) {
  const auto t0 = std::chrono::steady_clock::now();
  const Outcome r = neof("-q verify --fast");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 120.0);
  EXPECT_TRUE(json::parse(r.out).at("ok").get<bool>());
}

TEST_F(Cli, InjectedFaultFailsOnlyTheOracle) {
  const Outcome oracle = neof("-q verify oracle --fast --inject-fault");
  EXPECT_EQ(oracle.code, 1);
  EXPECT_FALSE(json::parse(oracle.out).at("ok").get<bool>());
  const Outcome grad = neof("-q verify grad --fast --inject-fault");
  EXPECT_EQ(grad.code, 0) << grad.err;
}

TEST_F(Cli, VerifyReportIsReproducible) {
  auto strip = [](json j) {
    j.erase("seconds");
    for (auto& s : j.at("suites")) s.erase("seconds");
    return j;
  };
  const Outcome a = neof("-q verify symmetry --fast --report a.json");
  const Outcome b = neof("-q verify symmetry --fast");
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(strip(json::parse(a.out)), strip(json::parse(b.out)));
  std::ifstream in(dir / "a.json");
  EXPECT_EQ(strip(json::parse(in)), strip(json::parse(a.out)));
}
