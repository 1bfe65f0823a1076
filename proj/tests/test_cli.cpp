#include "support/testcommon.hpp"

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ocvp/config.hpp"

namespace fs = std::filesystem;
using namespace ocvp;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Runs the installed binary with stdout/stderr captured to files. The
// binary location comes from the build system, so the test exercises the
// exact executable a user would run.
CliResult run_cli(const std::string& args) {
  const fs::path dir = fs::temp_directory_path() / "ocvp_cli_io";
  fs::create_directories(dir);
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(OCVP_CLI_PATH) + " " + args + " >" +
                          out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CliResult result;
  result.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  result.out = slurp(out);
  result.err = slurp(err);
  return result;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

// Small enough that generate + one training epoch stay in the second range.
std::string tiny_flags() {
  return "--override dataset.height=16 --override dataset.width=16"
         " --override dataset.frames=4"
         " --override network.enc_channels=8 --override network.enc_blocks=1"
         " --override network.lstm_channels=8 --override network.perm_channels=4"
         " --override network.perm_hidden=8 --override network.param_channels=4"
         " --override network.param_hidden1=8 --override network.param_hidden2=8"
         " --override network.bg_channels=4 --override network.bg_layers=2";
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("help and usage errors pick the right exit codes") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("generate --help").code == 0);

  const auto none = run_cli("");
  CHECK(none.code == 2);  // a subcommand is required

  const auto unknown = run_cli("frobnicate");
  CHECK(unknown.code == 2);

  const auto badflag = run_cli("generate --no-such-flag 3");
  CHECK(badflag.code == 2);
}

TEST_CASE("config errors report the offending key and exit 2") {
  const auto bad_value = run_cli("generate --override train.epochs=soon");
  CHECK(bad_value.code == 2);
  CHECK(bad_value.err.find("train.epochs") != std::string::npos);

  const auto bad_key = run_cli("generate --override dataset.wobble=3");
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("dataset.wobble") != std::string::npos);

  const auto missing_file = run_cli("generate --config /nonexistent/conf.toml");
  CHECK(missing_file.code == 2);
  CHECK(missing_file.err.find("/nonexistent/conf.toml") != std::string::npos);
}

TEST_CASE("train without a dataset exits 2 and names the path") {
  const auto res = run_cli("train --dataset /nonexistent/data");
  CHECK(res.code == 2);
  CHECK(res.err.find("/nonexistent/data") != std::string::npos);

  const auto eval_res = run_cli("eval --dataset somewhere");
  CHECK(eval_res.code == 2);
  CHECK(eval_res.err.find("checkpoint") != std::string::npos);

  const auto cross_res = run_cli("crosseval --datasets a,b");
  CHECK(cross_res.code == 2);
  CHECK(cross_res.err.find("checkpoints") != std::string::npos);
}

TEST_CASE("generate writes the dataset and its resolved config") {
  const fs::path root = fresh_dir("ocvp_cli_gen");
  const auto res = run_cli("generate --out " + root.string() +
                           " --kd 2 --train 2 --val 1 --test 1 --seed 11 " +
                           tiny_flags());
  REQUIRE(res.code == 0);
  CHECK(fs::exists(root / "manifest.json"));
  CHECK(fs::exists(root / "resolved.toml"));

  // the dumped config reparses to the exact requested dataset
  const auto cfg = config::resolve(config::load_tree((root / "resolved.toml").string()));
  CHECK(cfg.command == "generate");
  CHECK(cfg.dataset.root == root.string());
  CHECK(cfg.dataset.objects == 2);
  CHECK(cfg.dataset.train == 2);
  CHECK(cfg.dataset.height == 16);
  CHECK(cfg.seed == 11);
  CHECK(cfg.dataset.seed == 11);  // master seed flows into the section

  // same command, fresh directory: the dataset bytes come out identical
  const fs::path again = fresh_dir("ocvp_cli_gen2");
  REQUIRE(run_cli("generate --out " + again.string() +
                  " --kd 2 --train 2 --val 1 --test 1 --seed 11 " + tiny_flags())
              .code == 0);
  const fs::path rel = fs::path("train") / "seq_000000.bin";
  CHECK(slurp(root / rel) == slurp(again / rel));
  CHECK(slurp(root / "manifest.json") == slurp(again / "manifest.json"));
}

TEST_CASE("train, eval, crosseval and visualize chain on a tiny dataset") {
  const fs::path root = fresh_dir("ocvp_cli_chain_data");
  REQUIRE(run_cli("generate --out " + root.string() +
                  " --kd 2 --train 2 --val 1 --test 2 --seed 3 " + tiny_flags())
              .code == 0);

  const fs::path run = fresh_dir("ocvp_cli_chain_run");
  const auto train_res = run_cli(
      "train --dataset " + root.string() + " --out " + run.string() +
      " --km 2 --epochs 1 --batch 2 --optimizer adam --seed 5 " + tiny_flags() +
      " --override train.checkpoint_every=1");
  REQUIRE(train_res.code == 0);
  const std::string ckpt = (run / "checkpoints" / "best").string();
  CHECK(fs::exists(ckpt + ".pt"));
  CHECK(fs::exists(run / "train_log.csv"));
  CHECK(fs::exists(run / "resolved.toml"));

  const fs::path eval_out = fresh_dir("ocvp_cli_chain_eval");
  const auto eval_res = run_cli("eval --checkpoint " + ckpt + " --dataset " +
                                root.string() + " --split test --out " +
                                eval_out.string());
  REQUIRE(eval_res.code == 0);
  const auto report = nlohmann::json::parse(slurp(eval_out / "report.json"));
  CHECK(report.at("schema_version") == "1");
  CHECK(report.at("split") == "test");
  CHECK(report.at("sequences").get<int>() == 2);
  CHECK(report.at("psnr").size() == 3);  // frames=4 gives 3 predicted steps
  CHECK(report.at("psnr_q50").size() == 3);

  const fs::path cross_out = fresh_dir("ocvp_cli_chain_cross");
  const auto cross_res = run_cli("crosseval --checkpoints " + ckpt +
                                 " --datasets " + root.string() +
                                 " --split val --out " + cross_out.string());
  REQUIRE(cross_res.code == 0);
  CHECK(fs::exists(cross_out / "report.json"));
  CHECK(fs::exists(cross_out / "summary.csv"));
  CHECK(fs::exists(cross_out / "psnr_boxplot.png"));
  CHECK(fs::exists(cross_out / "ssim_boxplot.png"));

  const fs::path viz_out = fresh_dir("ocvp_cli_chain_viz");
  const auto viz_res = run_cli("visualize --checkpoint " + ckpt + " --dataset " +
                               root.string() + " --split test --sequences 0,1" +
                               " --steps 2,3 --out " + viz_out.string());
  REQUIRE(viz_res.code == 0);
  for (const char* name : {"test_000000_panel.png", "test_000000_object0_strip.png",
                           "test_000000_object1_strip.png",
                           "test_000000_background_strip.png", "test_000001_panel.png"}) {
    CHECK(fs::exists(viz_out / name));
  }

  // rerunning visualize reproduces the images byte for byte
  const fs::path viz_again = fresh_dir("ocvp_cli_chain_viz2");
  REQUIRE(run_cli("visualize --checkpoint " + ckpt + " --dataset " + root.string() +
                  " --split test --sequences 0,1 --steps 2,3 --out " +
                  viz_again.string())
              .code == 0);
  CHECK(slurp(viz_out / "test_000000_panel.png") ==
        slurp(viz_again / "test_000000_panel.png"));
  CHECK(slurp(viz_out / "test_000001_panel.png") ==
        slurp(viz_again / "test_000001_panel.png"));

  // out-of-range sequence index is a usage error
  const auto bad_seq = run_cli("visualize --checkpoint " + ckpt + " --dataset " +
                               root.string() + " --split test --sequences 99 --out " +
                               fresh_dir("ocvp_cli_chain_viz3").string());
  CHECK(bad_seq.code == 2);
}

TEST_CASE("flags override config file values") {
  const fs::path dir = fresh_dir("ocvp_cli_flagwins");
  fs::create_directories(dir);
  const fs::path conf = dir / "run.toml";
  {
    std::ofstream out(conf);
    out << "dataset.train = 5\ndataset.objects = 3\nseed = 1\n";
  }
  const fs::path root = dir / "data";
  const auto res = run_cli("generate --config " + conf.string() + " --out " +
                           root.string() + " --kd 2 --train 1 --val 1 --test 1 " +
                           tiny_flags());
  REQUIRE(res.code == 0);
  const auto cfg = config::resolve(config::load_tree((root / "resolved.toml").string()));
  CHECK(cfg.dataset.objects == 2);  // flag beats file
  CHECK(cfg.dataset.train == 1);
  CHECK(cfg.seed == 1);  // file beats default
}

}  // TEST_SUITE
