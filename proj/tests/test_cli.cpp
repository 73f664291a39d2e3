// Subprocess tests of the command-line surface: exit codes, single-line
// error reporting, artifact layout, provenance, and byte-identical reruns.
// The binary path comes in through RBCNET_CLI_PATH at compile time.

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/manifest.hpp"
#include "rbcnet/synth.hpp"

namespace rbcnet {
namespace {

namespace fs = std::filesystem;

struct RunOutcome {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunOutcome run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path() / "rbcnet-cli-io";
  fs::create_directories(dir);
  const fs::path out = dir / ("out-" + std::to_string(counter));
  const fs::path err = dir / ("err-" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(RBCNET_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunOutcome r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Shared tiny dataset: written once, used by the pipeline tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "rbcnet-cli-e2e";
    fs::remove_all(root_);
    fs::create_directories(root_);
    write_synth_tree((root_ / "data").string(), 8, 6, 24,
                     SynthTask::task_a(), 13);
  }

  static std::string model_flags() {
    return "--model custom-small --input_size 16 --base_width 4 "
           "--head_width 16";
  }

  static fs::path root_;
};

fs::path CliPipeline::root_;

TEST(CliErrors, MissingSubcommandIsASingleLineError) {
  const RunOutcome r = run_cli("");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(count_lines(r.err), 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(CliErrors, ConfigViolationsAreBatchedOnOneLine) {
  const RunOutcome r = run_cli("train --model bogus --epochs 0 --lr -1");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(count_lines(r.err), 1);
  EXPECT_NE(r.err.find("model must be"), std::string::npos);
  EXPECT_NE(r.err.find("epochs must be"), std::string::npos);
  EXPECT_NE(r.err.find("lr must be"), std::string::npos);
}

TEST(CliErrors, MissingInputIsARuntimeError) {
  const RunOutcome r = run_cli("cv --manifest /nonexistent/manifest.csv");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(count_lines(r.err), 1);
  EXPECT_NE(r.err.find("IngestError"), std::string::npos);
}

TEST(CliGradcheck, PristineBuildPassesAndListsAllKinds) {
  const RunOutcome r = run_cli("gradcheck --instances 2");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  for (const char* kind : {"conv2d", "maxpool2d", "relu", "dense", "dropout",
                           "flatten", "softmax-bce"})
    EXPECT_NE(r.out.find(kind), std::string::npos) << kind;
  EXPECT_NE(r.out.find("overall=pass"), std::string::npos);
}

TEST_F(CliPipeline, PrepareWritesManifestAndCachedPatches) {
  const fs::path out = root_ / "prep";
  const RunOutcome r = run_cli("prepare --data " + (root_ / "data").string() +
                               " --input_size 16 --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("prepare ok rows=48"), std::string::npos);

  const Manifest m = load_manifest((out / "manifest.csv").string());
  ASSERT_EQ(m.rows.size(), 48u);
  for (const auto& row : m.rows) {
    EXPECT_TRUE(fs::exists(row.path));
    EXPECT_EQ(row.patient_id.rfind("PT", 0), 0u);
  }
  EXPECT_TRUE(fs::exists(out / "effective-config.txt"));
}

TEST_F(CliPipeline, TrainEvalDiagnoseProduceArtifacts) {
  const std::string manifest = (root_ / "prep" / "manifest.csv").string();
  ASSERT_TRUE(fs::exists(manifest)) << "runs after the prepare test";

  const fs::path tdir = root_ / "train";
  const RunOutcome t = run_cli(
      "train --manifest " + manifest + " " + model_flags() +
      " --epochs 2 --batch 16 --seed 3 --split_seed 21 --svm --out " +
      tdir.string());
  ASSERT_EQ(t.exit_code, 0) << t.err;
  for (const char* f :
       {"model.ckpt", "history.csv", "test_metrics.txt", "test_metrics.csv",
        "test_predictions.csv", "svm.ckpt", "svm_metrics.txt",
        "effective-config.txt"})
    EXPECT_TRUE(fs::exists(tdir / f)) << f;

  const std::string history = slurp(tdir / "history.csv");
  EXPECT_EQ(history.rfind("epoch,train_loss,train_acc,val_loss,val_acc", 0),
            0u);
  EXPECT_EQ(count_lines(history), 3);  // header + 2 epochs

  const fs::path edir = root_ / "eval";
  const RunOutcome e = run_cli("eval --checkpoint " +
                               (tdir / "model.ckpt").string() +
                               " --manifest " + manifest + " " +
                               model_flags() + " --out " + edir.string());
  ASSERT_EQ(e.exit_code, 0) << e.err;
  EXPECT_NE(e.out.find("accuracy="), std::string::npos);
  EXPECT_TRUE(fs::exists(edir / "eval_predictions.csv"));

  const fs::path ddir = root_ / "diag";
  const RunOutcome d = run_cli("diagnose --checkpoint " +
                               (tdir / "model.ckpt").string() +
                               " --manifest " + manifest + " " +
                               model_flags() + " --out " + ddir.string());
  ASSERT_EQ(d.exit_code, 0) << d.err;
  EXPECT_NE(d.out.find("diagnose ok patients=8"), std::string::npos);
  const std::string patients = slurp(ddir / "patients.csv");
  EXPECT_EQ(patients.rfind("patient_id,cells,predicted,truth,max_prob", 0),
            0u);
  EXPECT_EQ(count_lines(patients), 9);  // header + 8 patients
}

TEST_F(CliPipeline, RerunWithSameSeedsIsByteIdentical) {
  const std::string manifest = (root_ / "prep" / "manifest.csv").string();
  ASSERT_TRUE(fs::exists(manifest));

  const std::string args = "train --manifest " + manifest + " " +
                           model_flags() +
                           " --epochs 2 --batch 16 --seed 5 --split_seed 21";
  const fs::path a = root_ / "rerun-a";
  const fs::path b = root_ / "rerun-b";
  ASSERT_EQ(run_cli(args + " --out " + a.string()).exit_code, 0);
  ASSERT_EQ(run_cli(args + " --out " + b.string()).exit_code, 0);

  for (const char* f : {"model.ckpt", "history.csv", "test_metrics.csv",
                        "test_predictions.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST_F(CliPipeline, FlagOverridesFileAndProvenanceSaysSo) {
  const std::string manifest = (root_ / "prep" / "manifest.csv").string();
  ASSERT_TRUE(fs::exists(manifest));

  const fs::path cfg_path = root_ / "run.cfg";
  std::ofstream cfg(cfg_path);
  cfg << "manifest=" << manifest << "\n"
      << "model=custom-small\ninput_size=16\nbase_width=4\nhead_width=16\n"
      << "epochs=2\nbatch_size=16\nseed=11\n";
  cfg.close();

  const fs::path out = root_ / "prov";
  const RunOutcome r = run_cli("--seed 12 train --config " +
                               cfg_path.string() + " --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const std::string eff = slurp(out / "effective-config.txt");
  EXPECT_NE(eff.find("# seed: flag"), std::string::npos);
  EXPECT_NE(eff.find("# model: file"), std::string::npos);
  EXPECT_NE(eff.find("# lr: default"), std::string::npos);
  EXPECT_NE(eff.find("\nseed=12\n"), std::string::npos);
}

}  // namespace
}  // namespace rbcnet
