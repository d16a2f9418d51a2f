#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "r2au/data.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + R2AU_CLI_PATH + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string l; std::getline(ss, l);) out.push_back(l);
  return out;
}

std::vector<std::string> cells(const std::string& row) {
  std::vector<std::string> out;
  std::stringstream ss(row);
  for (std::string c; std::getline(ss, c, ',');) out.push_back(c);
  return out;
}

const char* kTinyConfig = R"({
  "seed": 3,
  "model": {"depth": 1, "base_channels": 4, "height": 16, "width": 16, "init": "kaiming"},
  "train": {"epochs": 2, "use_augmentation": false, "optimizer": {"lr": 0.001}},
  "data": {"image_size": 16}
})";

// One small dataset and training run shared by the tests below.
class CliWorkspace : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("r2au_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(root_);
    std::ofstream(root_ / "tiny.json") << kTinyConfig;
    synth_ = run("synth --out " + (root_ / "data").string() + " --n 12 --size 16 --val 2 --test 2 --seed 5");
    train_ = run("train --config " + (root_ / "tiny.json").string() + " --data " + (root_ / "data").string() +
                 " --out " + (root_ / "run").string());
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  static CliRun synth_, train_;
};

fs::path CliWorkspace::root_;
CliRun CliWorkspace::synth_;
CliRun CliWorkspace::train_;

}  // namespace

TEST(Cli, PrintConfigDumpsDefaults) {
  const auto r = run("--print-config");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["train"]["epochs"], 20);
  EXPECT_EQ(j["train"]["batch_size"], 4);
  EXPECT_EQ(j["model"]["init"], "paper");
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("--no-such-flag").code, 2);
  EXPECT_EQ(run("eval --ckpt /nonexistent.r2au --data /tmp").code, 2);
  EXPECT_EQ(run("train --config /nonexistent.json --out /tmp/x").code, 2);
}

TEST(Cli, ConfigErrorNamesField) {
  const fs::path p = fs::temp_directory_path() / ("r2au_bad_" + std::to_string(std::random_device{}()) + ".json");
  std::ofstream(p) << R"({"train": {"optimizer": {"lr": "fast"}}})";
  const auto r = run("train --config " + p.string() + " --out /tmp/unused");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("train.optimizer.lr"), std::string::npos) << r.out;
  fs::remove(p);
}

TEST(Cli, GradcheckListsEveryCheck) {
  const auto r = run("gradcheck --seeds 1");
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* name : {"conv2d same", "conv2d_transpose 2x2 stride2", "maxpool2d", "batch_norm train",
                           "recurrent_conv T=2", "attention_gate", "loss focal_tversky", "model end-to-end"}) {
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
  }
}

TEST_F(CliWorkspace, SynthIsDeterministic) {
  ASSERT_EQ(synth_.code, 0) << synth_.out;
  std::size_t dirs = 0;
  for (const auto& e : fs::directory_iterator(root_ / "data")) dirs += e.is_directory();
  EXPECT_EQ(dirs, 12u);
  const auto again = run("synth --out " + (root_ / "again").string() + " --n 12 --size 16 --val 2 --test 2 --seed 5");
  ASSERT_EQ(again.code, 0);
  const std::string id = "synth_00003";
  EXPECT_EQ(slurp(root_ / "data" / id / "images" / (id + ".png")),
            slurp(root_ / "again" / id / "images" / (id + ".png")));
  EXPECT_EQ(slurp(root_ / "data" / "manifest.json"), slurp(root_ / "again" / "manifest.json"));
}

TEST_F(CliWorkspace, TrainWritesArtifacts) {
  ASSERT_EQ(train_.code, 0) << train_.out;
  for (const char* f : {"best.r2au", "metrics.csv", "config.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(root_ / "run" / f)) << f;
  }
  EXPECT_EQ(lines(slurp(root_ / "run" / "metrics.csv")).size(), 3u);
}

TEST_F(CliWorkspace, EvalReproducesLoggedValidationDice) {
  ASSERT_EQ(train_.code, 0);
  const auto log = lines(slurp(root_ / "run" / "metrics.csv"));
  std::string best;
  double best_val = -1;
  for (std::size_t i = 1; i < log.size(); ++i) {
    const auto c = cells(log[i]);
    if (std::stod(c[2]) > best_val) {
      best_val = std::stod(c[2]);
      best = c[2];
    }
  }
  const auto r = run("eval --ckpt " + (root_ / "run" / "best.r2au").string() + " --data " +
                     (root_ / "data").string() + " --split val");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto out = lines(r.out);
  ASSERT_EQ(out.size(), 2u);
  const auto row = cells(out[1]);
  EXPECT_EQ(row[1], "recurrent_residual_attention_unet");
  EXPECT_EQ(row[6], best);
  EXPECT_TRUE(row[2].empty());  // no --config, no loss columns

  const auto per = run("eval --per-image --ckpt " + (root_ / "run" / "best.r2au").string() + " --data " +
                       (root_ / "data").string() + " --split val --config " + (root_ / "tiny.json").string());
  ASSERT_EQ(per.code, 0) << per.out;
  const auto prow = cells(lines(per.out)[1]);
  EXPECT_EQ(prow[2], "focal_tversky");
  EXPECT_EQ(prow[0], row[0]);
}

TEST_F(CliWorkspace, PredictWritesBinaryPngDeterministically) {
  ASSERT_EQ(train_.code, 0);
  const std::string id = "synth_00000";
  const fs::path img = root_ / "data" / id / "images" / (id + ".png");
  const std::string ckpt = (root_ / "run" / "best.r2au").string();
  ASSERT_EQ(run("predict --ckpt " + ckpt + " --image " + img.string() + " --out " + (root_ / "a.png").string()).code, 0);
  ASSERT_EQ(run("predict --ckpt " + ckpt + " --image " + img.string() + " --out " + (root_ / "b.png").string()).code, 0);
  EXPECT_EQ(slurp(root_ / "a.png"), slurp(root_ / "b.png"));
  const auto mask = r2au::read_grayscale_png(root_ / "a.png");
  for (float v : mask.values()) EXPECT_TRUE(v == 0.f || v == 1.f);
}

TEST_F(CliWorkspace, ResumeRefusesDifferentModel) {
  ASSERT_EQ(train_.code, 0);
  std::string other = kTinyConfig;
  other.replace(other.find("\"base_channels\": 4"), 18, "\"base_channels\": 2");
  std::ofstream(root_ / "other.json") << other;
  const auto r = run("train --config " + (root_ / "other.json").string() + " --data " + (root_ / "data").string() +
                     " --out " + (root_ / "run2").string() + " --resume " + (root_ / "run" / "best.r2au").string());
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST_F(CliWorkspace, SeedEnvironmentOverridesConfig) {
  const auto r = run("train --print-config --config " + (root_ / "tiny.json").string(), "R2AU_SEED=99");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(r.out)["seed"], 99);
  EXPECT_EQ(run("train --print-config", "R2AU_SEED=abc").code, 2);
}

TEST_F(CliWorkspace, AblateSubsetWritesCsv) {
  ASSERT_EQ(synth_.code, 0);
  std::string cfg = kTinyConfig;
  cfg.replace(cfg.find("\"epochs\": 2"), 11, "\"epochs\": 1");
  std::ofstream(root_ / "ablate.json") << cfg;
  const fs::path csv = root_ / "ablation.csv";
  const auto r = run("ablate --config " + (root_ / "ablate.json").string() + " --data " + (root_ / "data").string() +
                     " --subset 0,18 --out " + csv.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rows = lines(slurp(csv));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(cells(rows[1])[2], "focal_tversky");
  EXPECT_EQ(cells(rows[2])[2], "wbce");
  EXPECT_EQ(run("ablate --config " + (root_ / "ablate.json").string() + " --subset 40").code, 2);
}

TEST(Cli, SynthDefaultHoldoutScalesWithSize) {
  const fs::path dir = fs::temp_directory_path() / ("r2au_synth_" + std::to_string(std::random_device{}()));
  ASSERT_EQ(run("synth --out " + dir.string() + " --n 10 --size 16").code, 0);
  std::size_t val = 0, test = 0;
  for (const auto& e : r2au::read_manifest(dir / "manifest.json")) {
    val += e.split == r2au::Split::val;
    test += e.split == r2au::Split::test;
  }
  EXPECT_EQ(val, 2u);
  EXPECT_EQ(test, 2u);
  EXPECT_EQ(run("synth --out " + dir.string() + " --n 10 --val 6 --test 6").code, 2);
  fs::remove_all(dir);
}
