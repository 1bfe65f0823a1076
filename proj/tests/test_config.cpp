#include "support/testcommon.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ocvp/config.hpp"

namespace fs = std::filesystem;
using namespace ocvp;

TEST_SUITE("config") {

TEST_CASE("parse_tree reads sections, dotted keys, comments and strings") {
  const std::string text = R"(# top comment
seed = 7

[dataset]
root = "d/"          # trailing comment
objects = 3

[train]
learning_rate = 1e-3
optimizer = rmsprop
sinkhorn.decay = 0.9

[network]
projective = true
)";
  const auto tree = config::parse_tree(text);
  CHECK(tree.at("seed") == "7");
  CHECK(tree.at("dataset.root") == "\"d/\"");
  CHECK(tree.at("dataset.objects") == "3");
  CHECK(tree.at("train.learning_rate") == "1e-3");
  CHECK(tree.at("train.optimizer") == "rmsprop");
  CHECK(tree.at("train.sinkhorn.decay") == "0.9");
  CHECK(tree.at("network.projective") == "true");
  CHECK(tree.size() == 7);
}

TEST_CASE("parse_tree rejects malformed lines with line numbers") {
  CHECK_THROWS_AS(config::parse_tree("[open\n"), ParamError);
  CHECK_THROWS_AS(config::parse_tree("novalue\n"), ParamError);
  CHECK_THROWS_AS(config::parse_tree("key =\n"), ParamError);
  CHECK_THROWS_AS(config::parse_tree("bad key = 1\n"), ParamError);
  CHECK_THROWS_AS(config::parse_tree("[a..b]\nk = 1\n"), ParamError);
  try {
    config::parse_tree("ok = 1\nbroken\n");
    CHECK(false);
  } catch (const ParamError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("resolve on an empty tree produces the documented defaults") {
  const auto cfg = config::resolve({});
  CHECK(cfg.seed == 0);
  CHECK(cfg.dataset.train == 20000);
  CHECK(cfg.dataset.objects == 3);
  CHECK(cfg.dataset.height == 64);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.learning_rate == doctest::Approx(1e-4));
  CHECK(cfg.train.optimizer == traineval::Optimizer::rmsprop);
  CHECK(cfg.train.epochs == 50);
  CHECK(cfg.train.network.slots == 3);
  CHECK(cfg.train.network.binarize_alpha == doctest::Approx(75.0));
  CHECK(cfg.train.weights.consistency == doctest::Approx(1.0));
  CHECK(cfg.train.sinkhorn.decay == doctest::Approx(0.97));
  CHECK(cfg.eval.split == "test");
  CHECK(cfg.visualize.sequences == std::vector<std::int64_t>{0});
  CHECK(cfg.visualize.steps.empty());
}

TEST_CASE("flag overrides beat the file which beats the defaults") {
  config::ConfigTree tree = config::parse_tree("[train]\nepochs = 7\nbatch_size = 4\n");
  config::apply_override(tree, "train.epochs=9");
  const auto cfg = config::resolve(tree);
  CHECK(cfg.train.epochs == 9);        // flag wins over file
  CHECK(cfg.train.batch_size == 4);    // file wins over default
  CHECK(cfg.train.checkpoint_every == 5);  // untouched default
}

TEST_CASE("loss.lambda4 override disables the consistency weight") {
  config::ConfigTree tree;
  config::apply_override(tree, "loss.lambda4=0");
  const auto cfg = config::resolve(tree);
  CHECK(cfg.train.weights.consistency == 0.0);
  CHECK(cfg.train.weights.prediction == doctest::Approx(1.0));
}

TEST_CASE("master seed reaches section seeds unless they are spelled out") {
  auto cfg = config::resolve(config::parse_tree("seed = 42\n"));
  CHECK(cfg.dataset.seed == 42);
  CHECK(cfg.train.seed == 42);

  cfg = config::resolve(config::parse_tree("seed = 42\n[dataset]\nseed = 5\n"));
  CHECK(cfg.dataset.seed == 5);
  CHECK(cfg.train.seed == 42);
}

TEST_CASE("dataset root stands in for per-command dataset paths") {
  const auto cfg = config::resolve(config::parse_tree("[dataset]\nroot = \"d/\"\n"));
  CHECK(cfg.train.dataset == "d/");
  CHECK(cfg.eval.dataset == "d/");
  CHECK(cfg.visualize.dataset == "d/");

  const auto other = config::resolve(
      config::parse_tree("[dataset]\nroot = \"d/\"\n[train]\ndataset = \"e/\"\n"));
  CHECK(other.train.dataset == "e/");
}

TEST_CASE("unknown keys and ill-typed values are rejected by name") {
  CHECK_THROWS_AS(config::resolve(config::parse_tree("typo = 1\n")), ParamError);
  CHECK_THROWS_AS(config::resolve(config::parse_tree("[train]\nepochs = soon\n")), ParamError);
  CHECK_THROWS_AS(config::resolve(config::parse_tree("[network]\nprojective = yes\n")),
                  ParamError);
  CHECK_THROWS_AS(config::resolve(config::parse_tree("[train]\noptimizer = sgd\n")), ParamError);
  try {
    config::resolve(config::parse_tree("[train]\nepochs = soon\n"));
    CHECK(false);
  } catch (const ParamError& e) {
    CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
  }
}

TEST_CASE("override specs must be path=value") {
  config::ConfigTree tree;
  CHECK_THROWS_AS(config::apply_override(tree, "no-equals"), ParamError);
  CHECK_THROWS_AS(config::apply_override(tree, "=5"), ParamError);
  CHECK_THROWS_AS(config::apply_override(tree, "train.epochs="), ParamError);
  config::apply_override(tree, "train.epochs = 3");
  CHECK(tree.at("train.epochs") == "3");
}

TEST_CASE("serialize round-trips a heavily customised config") {
  config::RunConfig cfg;
  cfg.command = "crosseval";
  cfg.seed = 9;
  cfg.dataset.root = "data set/with space";
  cfg.dataset.objects = 4;
  cfg.dataset.textured = true;
  cfg.dataset.seed = 17;
  cfg.train.dataset = "data set/with space";
  cfg.train.out = "runs/x";
  cfg.train.learning_rate = 3.0e-4;
  cfg.train.optimizer = traineval::Optimizer::adam;
  cfg.train.network.slots = 2;
  cfg.train.network.projective = true;
  cfg.train.weights.consistency = 0.0;
  cfg.train.sinkhorn.floor = 0.25;
  cfg.eval.checkpoint = "ck/best";
  cfg.eval.dataset = cfg.dataset.root;
  cfg.crosseval.checkpoints = {"a", "b", "c"};
  cfg.crosseval.datasets = {"d2", "d3"};
  cfg.visualize.dataset = cfg.dataset.root;
  cfg.visualize.sequences = {1, 5};
  cfg.visualize.steps = {5, 7};

  const std::string text = config::serialize(cfg);
  const auto back = config::resolve(config::parse_tree(text));
  CHECK(back.command == cfg.command);
  CHECK(back.seed == cfg.seed);
  CHECK(back.dataset.root == cfg.dataset.root);
  CHECK(back.dataset.objects == cfg.dataset.objects);
  CHECK(back.dataset.textured == cfg.dataset.textured);
  CHECK(back.dataset.seed == cfg.dataset.seed);
  CHECK(back.train.out == cfg.train.out);
  CHECK(back.train.learning_rate == cfg.train.learning_rate);
  CHECK(back.train.optimizer == traineval::Optimizer::adam);
  CHECK(back.train.network.slots == 2);
  CHECK(back.train.network.projective);
  CHECK(back.train.weights.consistency == 0.0);
  CHECK(back.train.sinkhorn.floor == cfg.train.sinkhorn.floor);
  CHECK(back.eval.checkpoint == cfg.eval.checkpoint);
  CHECK(back.crosseval.checkpoints == cfg.crosseval.checkpoints);
  CHECK(back.crosseval.datasets == cfg.crosseval.datasets);
  CHECK(back.visualize.sequences == cfg.visualize.sequences);
  CHECK(back.visualize.steps == cfg.visualize.steps);

  // a second pass over its own output is a fixed point
  CHECK(config::serialize(back) == text);
}

TEST_CASE("from_sources merges a config file with overrides") {
  const fs::path path = fs::temp_directory_path() / "ocvp_config_merge.toml";
  {
    std::ofstream out(path);
    out << "[train]\nepochs = 12\nlearning_rate = 1e-3\n";
  }
  const auto cfg = config::from_sources(path.string(), {"train.epochs=3", "seed=8"});
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.learning_rate == doctest::Approx(1e-3));
  CHECK(cfg.seed == 8);
  fs::remove(path);

  CHECK_THROWS_AS(config::from_sources("/nonexistent/ocvp.toml", {}), IoError);
  const auto bare = config::from_sources("", {"train.epochs=2"});
  CHECK(bare.train.epochs == 2);
}

TEST_CASE("default_out honours the output-root environment variable") {
  ::setenv("OCVP_OUTPUT_ROOT", "/tmp/ocvp_root", 1);
  CHECK(config::default_out("train") == "/tmp/ocvp_root/train");
  ::unsetenv("OCVP_OUTPUT_ROOT");
  CHECK(config::default_out("eval") == "runs/eval");
}

}  // TEST_SUITE
