#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocvp/common.hpp"
#include "ocvp/datagen.hpp"
#include "ocvp/traineval.hpp"

namespace ocvp::config {

// Flat view of a key-value config file: dotted path -> raw value text.
// Values stay untyped until resolve() interprets them, so a flag override
// ("loss.lambda4=0") and a file line ("lambda4 = 0" under [loss]) land in
// the same place and the later writer wins.
using ConfigTree = std::map<std::string, std::string>;

// Parses the key-value tree format:
//   # comment
//   [section] or [section.sub]   -- prefix for the keys that follow
//   key = value                  -- dotted keys allowed, e.g. sinkhorn.start
// Values are bools (true/false), numbers, quoted strings ("..." with \" and
// \\ escapes) or bare words. Throws ParamError with a line number on
// malformed input.
ConfigTree parse_tree(const std::string& text);

// parse_tree over the contents of a file; IoError if it cannot be read.
ConfigTree load_tree(const std::string& path);

// Applies one "dotted.path=value" override; ParamError if there is no '='
// or the path is empty.
void apply_override(ConfigTree& tree, const std::string& spec);

// Everything a subcommand can consume, fully resolved. Fields mirror the
// owning modules; the sections below only exist here because no module owns
// them (they are command plumbing, not algorithm state).
struct EvalConfig {
  std::string checkpoint;  // checkpoint stem (without .pt/.json)
  std::string dataset;     // dataset root
  std::string split = "test";
  std::string out;
  std::int64_t max_sequences = 0;  // 0 = whole split
};

struct CrossEvalConfig {
  std::vector<std::string> checkpoints;  // row per checkpoint stem
  std::vector<std::string> datasets;     // column per dataset root
  std::string split = "test";
  std::string out;
  std::int64_t max_sequences = 0;
};

struct VisualizeConfig {
  std::string checkpoint;
  std::string dataset;
  std::string split = "test";
  std::string out;
  std::vector<std::int64_t> sequences{0};  // indices within the split
  std::vector<std::int64_t> steps;         // target frames to render; empty = all
};

struct RunConfig {
  // Which subcommand produced/consumes this config; informational but
  // serialized so an output directory states how it was made.
  std::string command;
  // Master seed: dataset.seed and train.seed default to it unless their own
  // keys are present.
  std::uint64_t seed = 0;
  datagen::DatasetConfig dataset;
  traineval::TrainConfig train;
  EvalConfig eval;
  CrossEvalConfig crosseval;
  VisualizeConfig visualize;
};

// Defaults overlaid with the tree. Unknown keys and ill-typed values throw
// ParamError naming the key. resolve(parse_tree(serialize(rc))) == rc.
RunConfig resolve(const ConfigTree& tree);

// Deterministic round-trippable text with every default spelled out.
std::string serialize(const RunConfig& cfg);

// load_tree + overrides + resolve; empty path skips the file.
RunConfig from_sources(const std::string& config_path,
                       const std::vector<std::string>& overrides);

// Output root for commands that were not given one: $OCVP_OUTPUT_ROOT or
// "runs", with the command name appended.
std::string default_out(const std::string& command);

}  // namespace ocvp::config
