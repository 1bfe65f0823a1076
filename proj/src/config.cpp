#include "ocvp/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

namespace ocvp::config {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_path_chars(const std::string& key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  bool prev_dot = false;
  for (char c : key) {
    if (c == '.') {
      if (prev_dot) return false;
      prev_dot = true;
      continue;
    }
    prev_dot = false;
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_';
    if (!ok) return false;
  }
  return true;
}

// Drops an unquoted trailing comment; quotes are honoured so '#' may appear
// inside string values.
std::string strip_comment(const std::string& line) {
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_quotes = !in_quotes;
    if (c == '#' && !in_quotes) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void bad_line(std::size_t lineno, const std::string& why) {
  throw ParamError("config: line " + std::to_string(lineno) + ": " + why);
}

std::string unquote(const std::string& key, const std::string& raw) {
  if (raw.size() < 2 || raw.front() != '"') return raw;
  if (raw.back() != '"') {
    throw ParamError("config: " + key + ": unterminated string " + raw);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] == '\\') {
      ++i;
      if (i + 1 >= raw.size() || (raw[i] != '"' && raw[i] != '\\')) {
        throw ParamError("config: " + key + ": unsupported escape in " + raw);
      }
    }
    out.push_back(raw[i]);
  }
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool as_bool(const std::string& key, const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ParamError("config: " + key + ": expected true or false, got " + raw);
}

std::int64_t as_int(const std::string& key, const std::string& raw) {
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size()) {
    throw ParamError("config: " + key + ": expected an integer, got " + raw);
  }
  return v;
}

std::uint64_t as_uint(const std::string& key, const std::string& raw) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size()) {
    throw ParamError("config: " + key + ": expected a non-negative integer, got " + raw);
  }
  return v;
}

double as_double(const std::string& key, const std::string& raw) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (ec != std::errc() || p != raw.data() + raw.size()) {
    throw ParamError("config: " + key + ": expected a number, got " + raw);
  }
  return v;
}

std::vector<std::string> as_string_list(const std::string& key, const std::string& raw) {
  const std::string body = unquote(key, raw);
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(body);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::vector<std::int64_t> as_int_list(const std::string& key, const std::string& raw) {
  std::vector<std::int64_t> out;
  for (const auto& item : as_string_list(key, raw)) out.push_back(as_int(key, item));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(',');
    out += items[i];
  }
  return out;
}

std::string join(const std::vector<std::int64_t>& items) {
  std::vector<std::string> text;
  text.reserve(items.size());
  for (auto v : items) text.push_back(std::to_string(v));
  return join(text);
}

}  // namespace

ConfigTree parse_tree(const std::string& text) {
  ConfigTree tree;
  std::string prefix;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') bad_line(lineno, "unterminated section header " + line);
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!valid_path_chars(name)) bad_line(lineno, "bad section name [" + name + "]");
      prefix = name + ".";
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) bad_line(lineno, "expected key = value, got " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_path_chars(key)) bad_line(lineno, "bad key " + key);
    if (value.empty()) bad_line(lineno, "missing value for " + key);
    tree[prefix + key] = value;
  }
  return tree;
}

ConfigTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tree(buf.str());
}

void apply_override(ConfigTree& tree, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) {
    throw ParamError("config: override must look like path=value, got " + spec);
  }
  const std::string key = trim(spec.substr(0, eq));
  const std::string value = trim(spec.substr(eq + 1));
  if (!valid_path_chars(key)) throw ParamError("config: bad override path " + key);
  if (value.empty()) throw ParamError("config: empty override value for " + key);
  tree[key] = value;
}

RunConfig resolve(const ConfigTree& tree) {
  RunConfig cfg;
  using Handler = std::function<void(const std::string&, const std::string&)>;
  std::unordered_map<std::string, Handler> handle;

  auto on_string = [&](const char* key, std::string& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = unquote(k, v); };
  };
  auto on_int = [&](const char* key, std::int64_t& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = as_int(k, v); };
  };
  auto on_uint = [&](const char* key, std::uint64_t& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = as_uint(k, v); };
  };
  auto on_double = [&](const char* key, double& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = as_double(k, v); };
  };
  auto on_bool = [&](const char* key, bool& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = as_bool(k, v); };
  };
  auto on_string_list = [&](const char* key, std::vector<std::string>& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) {
      slot = as_string_list(k, v);
    };
  };
  auto on_int_list = [&](const char* key, std::vector<std::int64_t>& slot) {
    handle[key] = [&slot](const std::string& k, const std::string& v) { slot = as_int_list(k, v); };
  };

  on_string("command", cfg.command);
  on_uint("seed", cfg.seed);

  on_string("dataset.root", cfg.dataset.root);
  on_int("dataset.train", cfg.dataset.train);
  on_int("dataset.val", cfg.dataset.val);
  on_int("dataset.test", cfg.dataset.test);
  on_int("dataset.objects", cfg.dataset.objects);
  on_int("dataset.frames", cfg.dataset.frames);
  on_int("dataset.height", cfg.dataset.height);
  on_int("dataset.width", cfg.dataset.width);
  on_uint("dataset.seed", cfg.dataset.seed);
  on_bool("dataset.textured", cfg.dataset.textured);

  on_string("train.dataset", cfg.train.dataset);
  on_string("train.out", cfg.train.out);
  on_int("train.batch_size", cfg.train.batch_size);
  on_double("train.learning_rate", cfg.train.learning_rate);
  handle["train.optimizer"] = [&cfg](const std::string& k, const std::string& v) {
    const std::string name = unquote(k, v);
    if (name == "rmsprop") {
      cfg.train.optimizer = traineval::Optimizer::rmsprop;
    } else if (name == "adam") {
      cfg.train.optimizer = traineval::Optimizer::adam;
    } else {
      throw ParamError("config: " + k + ": expected rmsprop or adam, got " + name);
    }
  };
  on_int("train.epochs", cfg.train.epochs);
  on_uint("train.seed", cfg.train.seed);
  on_int("train.checkpoint_every", cfg.train.checkpoint_every);
  on_int("train.max_train_sequences", cfg.train.max_train_sequences);
  on_int("train.max_val_sequences", cfg.train.max_val_sequences);
  on_double("train.sinkhorn.start", cfg.train.sinkhorn.start);
  on_double("train.sinkhorn.decay", cfg.train.sinkhorn.decay);
  on_double("train.sinkhorn.floor", cfg.train.sinkhorn.floor);

  on_double("loss.lambda1", cfg.train.weights.prediction);
  on_double("loss.lambda2", cfg.train.weights.sparsity);
  on_double("loss.lambda3", cfg.train.weights.concentration);
  on_double("loss.lambda4", cfg.train.weights.consistency);
  on_double("loss.lambda5", cfg.train.weights.weight_decay);
  on_double("loss.binarize_alpha", cfg.train.weights.binarize_alpha);
  on_double("loss.binarize_beta", cfg.train.weights.binarize_beta);

  on_int("network.slots", cfg.train.network.slots);
  on_int("network.enc_channels", cfg.train.network.enc_channels);
  on_int("network.enc_blocks", cfg.train.network.enc_blocks);
  on_int("network.lstm_channels", cfg.train.network.lstm_channels);
  on_int("network.perm_channels", cfg.train.network.perm_channels);
  on_int("network.perm_hidden", cfg.train.network.perm_hidden);
  on_int("network.param_channels", cfg.train.network.param_channels);
  on_int("network.param_hidden1", cfg.train.network.param_hidden1);
  on_int("network.param_hidden2", cfg.train.network.param_hidden2);
  on_int("network.bg_channels", cfg.train.network.bg_channels);
  on_int("network.bg_layers", cfg.train.network.bg_layers);
  on_bool("network.projective", cfg.train.network.projective);
  on_double("network.binarize_alpha", cfg.train.network.binarize_alpha);
  on_double("network.binarize_beta", cfg.train.network.binarize_beta);
  on_int("network.sinkhorn_iters", cfg.train.network.sinkhorn_iters);
  on_double("network.offset_scale_linear", cfg.train.network.offset_scale_linear);
  on_double("network.offset_scale_translation", cfg.train.network.offset_scale_translation);
  on_double("network.slot_init_scale", cfg.train.network.slot_init_scale);
  on_uint("network.slot_init_seed", cfg.train.network.slot_init_seed);

  on_string("eval.checkpoint", cfg.eval.checkpoint);
  on_string("eval.dataset", cfg.eval.dataset);
  on_string("eval.split", cfg.eval.split);
  on_string("eval.out", cfg.eval.out);
  on_int("eval.max_sequences", cfg.eval.max_sequences);

  on_string_list("crosseval.checkpoints", cfg.crosseval.checkpoints);
  on_string_list("crosseval.datasets", cfg.crosseval.datasets);
  on_string("crosseval.split", cfg.crosseval.split);
  on_string("crosseval.out", cfg.crosseval.out);
  on_int("crosseval.max_sequences", cfg.crosseval.max_sequences);

  on_string("visualize.checkpoint", cfg.visualize.checkpoint);
  on_string("visualize.dataset", cfg.visualize.dataset);
  on_string("visualize.split", cfg.visualize.split);
  on_string("visualize.out", cfg.visualize.out);
  on_int_list("visualize.sequences", cfg.visualize.sequences);
  on_int_list("visualize.steps", cfg.visualize.steps);

  for (const auto& [key, value] : tree) {
    const auto it = handle.find(key);
    if (it == handle.end()) throw ParamError("config: unknown key " + key);
    it->second(key, value);
  }

  // the master seed stands in for section seeds that were not spelled out
  if (!tree.count("dataset.seed")) cfg.dataset.seed = cfg.seed;
  if (!tree.count("train.seed")) cfg.train.seed = cfg.seed;
  // commands that chain generate -> train -> eval usually mean one dataset
  if (cfg.train.dataset.empty()) cfg.train.dataset = cfg.dataset.root;
  if (cfg.eval.dataset.empty()) cfg.eval.dataset = cfg.dataset.root;
  if (cfg.visualize.dataset.empty()) cfg.visualize.dataset = cfg.dataset.root;
  return cfg;
}

std::string serialize(const RunConfig& cfg) {
  std::ostringstream out;
  out << "command = " << quote(cfg.command) << "\n";
  out << "seed = " << cfg.seed << "\n";

  out << "\n[dataset]\n";
  out << "root = " << quote(cfg.dataset.root) << "\n";
  out << "train = " << cfg.dataset.train << "\n";
  out << "val = " << cfg.dataset.val << "\n";
  out << "test = " << cfg.dataset.test << "\n";
  out << "objects = " << cfg.dataset.objects << "\n";
  out << "frames = " << cfg.dataset.frames << "\n";
  out << "height = " << cfg.dataset.height << "\n";
  out << "width = " << cfg.dataset.width << "\n";
  out << "seed = " << cfg.dataset.seed << "\n";
  out << "textured = " << (cfg.dataset.textured ? "true" : "false") << "\n";

  out << "\n[train]\n";
  out << "dataset = " << quote(cfg.train.dataset) << "\n";
  out << "out = " << quote(cfg.train.out) << "\n";
  out << "batch_size = " << cfg.train.batch_size << "\n";
  out << "learning_rate = " << format_double(cfg.train.learning_rate) << "\n";
  out << "optimizer = "
      << quote(cfg.train.optimizer == traineval::Optimizer::adam ? "adam" : "rmsprop") << "\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "seed = " << cfg.train.seed << "\n";
  out << "checkpoint_every = " << cfg.train.checkpoint_every << "\n";
  out << "max_train_sequences = " << cfg.train.max_train_sequences << "\n";
  out << "max_val_sequences = " << cfg.train.max_val_sequences << "\n";

  out << "\n[train.sinkhorn]\n";
  out << "start = " << format_double(cfg.train.sinkhorn.start) << "\n";
  out << "decay = " << format_double(cfg.train.sinkhorn.decay) << "\n";
  out << "floor = " << format_double(cfg.train.sinkhorn.floor) << "\n";

  out << "\n[loss]\n";
  out << "lambda1 = " << format_double(cfg.train.weights.prediction) << "\n";
  out << "lambda2 = " << format_double(cfg.train.weights.sparsity) << "\n";
  out << "lambda3 = " << format_double(cfg.train.weights.concentration) << "\n";
  out << "lambda4 = " << format_double(cfg.train.weights.consistency) << "\n";
  out << "lambda5 = " << format_double(cfg.train.weights.weight_decay) << "\n";
  out << "binarize_alpha = " << format_double(cfg.train.weights.binarize_alpha) << "\n";
  out << "binarize_beta = " << format_double(cfg.train.weights.binarize_beta) << "\n";

  const auto& net = cfg.train.network;
  out << "\n[network]\n";
  out << "slots = " << net.slots << "\n";
  out << "enc_channels = " << net.enc_channels << "\n";
  out << "enc_blocks = " << net.enc_blocks << "\n";
  out << "lstm_channels = " << net.lstm_channels << "\n";
  out << "perm_channels = " << net.perm_channels << "\n";
  out << "perm_hidden = " << net.perm_hidden << "\n";
  out << "param_channels = " << net.param_channels << "\n";
  out << "param_hidden1 = " << net.param_hidden1 << "\n";
  out << "param_hidden2 = " << net.param_hidden2 << "\n";
  out << "bg_channels = " << net.bg_channels << "\n";
  out << "bg_layers = " << net.bg_layers << "\n";
  out << "projective = " << (net.projective ? "true" : "false") << "\n";
  out << "binarize_alpha = " << format_double(net.binarize_alpha) << "\n";
  out << "binarize_beta = " << format_double(net.binarize_beta) << "\n";
  out << "sinkhorn_iters = " << net.sinkhorn_iters << "\n";
  out << "offset_scale_linear = " << format_double(net.offset_scale_linear) << "\n";
  out << "offset_scale_translation = " << format_double(net.offset_scale_translation) << "\n";
  out << "slot_init_scale = " << format_double(net.slot_init_scale) << "\n";
  out << "slot_init_seed = " << net.slot_init_seed << "\n";

  out << "\n[eval]\n";
  out << "checkpoint = " << quote(cfg.eval.checkpoint) << "\n";
  out << "dataset = " << quote(cfg.eval.dataset) << "\n";
  out << "split = " << quote(cfg.eval.split) << "\n";
  out << "out = " << quote(cfg.eval.out) << "\n";
  out << "max_sequences = " << cfg.eval.max_sequences << "\n";

  out << "\n[crosseval]\n";
  out << "checkpoints = " << quote(join(cfg.crosseval.checkpoints)) << "\n";
  out << "datasets = " << quote(join(cfg.crosseval.datasets)) << "\n";
  out << "split = " << quote(cfg.crosseval.split) << "\n";
  out << "out = " << quote(cfg.crosseval.out) << "\n";
  out << "max_sequences = " << cfg.crosseval.max_sequences << "\n";

  out << "\n[visualize]\n";
  out << "checkpoint = " << quote(cfg.visualize.checkpoint) << "\n";
  out << "dataset = " << quote(cfg.visualize.dataset) << "\n";
  out << "split = " << quote(cfg.visualize.split) << "\n";
  out << "out = " << quote(cfg.visualize.out) << "\n";
  out << "sequences = " << quote(join(cfg.visualize.sequences)) << "\n";
  out << "steps = " << quote(join(cfg.visualize.steps)) << "\n";
  return out.str();
}

RunConfig from_sources(const std::string& config_path,
                       const std::vector<std::string>& overrides) {
  ConfigTree tree;
  if (!config_path.empty()) tree = load_tree(config_path);
  for (const auto& spec : overrides) apply_override(tree, spec);
  return resolve(tree);
}

std::string default_out(const std::string& command) {
  const char* root = std::getenv("OCVP_OUTPUT_ROOT");
  return std::string(root && *root ? root : "runs") + "/" + command;
}

}  // namespace ocvp::config
