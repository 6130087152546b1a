#include "mpt/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mpt/errors.hpp"

#ifndef MPT_PRESET_DIR
#define MPT_PRESET_DIR "presets"
#endif

namespace mpt {

namespace {

const std::vector<std::string> kBuildableArch{"mlp", "conv", "vgg-small"};
const std::vector<std::string> kReferenceArch{"resnet-18", "wrn-34", "wrn-50"};
const std::vector<std::string> kDatasets{"mnist", "cifar10", "two-moons"};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

template <typename T>
T get(const Json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

Shape shape_from(const Json& j, const std::string& where) {
  Shape s;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw ConfigError(where + ": dimensions must be positive integers");
    s.push_back(v.get<std::int64_t>());
  }
  return s;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

Json default_config_json() {
  return Json::parse(R"({
    "name": "",
    "mode": "find",
    "notes": "",
    "out_dir": "runs/default",
    "stretch_target_top1": null,
    "network": {
      "arch": "mlp",
      "input_shape": null,
      "num_classes": 10,
      "widths": [256, 256],
      "depth": null,
      "activation": "mpt-1/32",
      "init": "kaiming-normal",
      "width_multiplier": 1.0,
      "batchnorm": false,
      "exempt_first_last": false,
      "residual": false,
      "spline_t": 1.0
    },
    "train": {
      "optimizer": "sgd",
      "lr": 0.1,
      "momentum": 0.9,
      "nesterov": false,
      "weight_decay": 0.0001,
      "adam_beta1": 0.9,
      "adam_beta2": 0.999,
      "adam_eps": 1e-8,
      "warmup_epochs": 0,
      "prune_percent": 50.0,
      "epochs": 20,
      "batch_size": 128,
      "seed": 0,
      "bn_policy": "frozen",
      "mask_cadence": "batch",
      "grad_norm_warn": 1000.0,
      "evaluate": true,
      "eval_limit": 0
    },
    "data": {
      "dataset": "mnist",
      "dir": "",
      "augment": true,
      "train_limit": 0,
      "test_limit": 0,
      "toy_samples": 1000,
      "toy_noise": 0.1
    },
    "sweep": {
      "prune_percent": [],
      "depth": [],
      "width_multiplier": [],
      "seeds": []
    },
    "theory": {
      "family": "lemma1",
      "eps": 0.25,
      "delta": 0.1,
      "s": 1,
      "n": 2,
      "d": 4,
      "depth": 2,
      "multipliers": [1.0],
      "trials": 100,
      "seed": 0
    }
  })");
}

Json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

Json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::filesystem::path preset_dir() {
  if (const char* env = std::getenv("MPT_PRESET_DIR"); env && *env) return env;
  return MPT_PRESET_DIR;
}

Json load_preset_json(const std::string& name) {
  const auto path = preset_dir() / (name + ".json");
  if (!std::filesystem::exists(path)) {
    std::string known;
    for (const auto& p : list_presets()) known += (known.empty() ? "" : ", ") + p;
    throw ConfigError("unknown preset '" + name + "' (available: " + known + ")");
  }
  return read_config_file(path);
}

std::vector<std::string> list_presets() {
  std::vector<std::string> names;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(preset_dir(), ec)) {
    if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

void merge_config(Json& base, const Json& overlay, const std::string& where) {
  if (!overlay.is_object()) throw ConfigError((where.empty() ? "config" : where) + " must be an object");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_config(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  // Build a nested object from the dotted path and merge it, so unknown keys are caught the same way.
  Json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_config(doc, patch);
}

Shape default_input_shape(const std::string& dataset) {
  if (dataset == "mnist") return {1, 28, 28};
  if (dataset == "cifar10") return {3, 32, 32};
  if (dataset == "two-moons") return {2};
  throw ConfigError("no input shape known for dataset '" + dataset + "'");
}

NetworkSpec network_from_json(const Json& j, std::string* arch_out, float* spline_out) {
  const std::string where = "network";
  const auto arch = get<std::string>(j, "arch", where);
  if (arch_out) *arch_out = arch;
  if (spline_out) *spline_out = get<float>(j, "spline_t", where);
  if (!contains(kBuildableArch, arch)) {
    if (contains(kReferenceArch, arch)) {
      throw ConfigError("architecture '" + arch + "' is recorded as a reference table row only and cannot be built");
    }
    throw ConfigError("unknown architecture '" + arch + "' (expected mlp, conv or vgg-small)");
  }
  if (j.at("input_shape").is_null()) throw ConfigError("network.input_shape is unresolved");
  const Shape input = shape_from(j.at("input_shape"), "network.input_shape");
  const auto classes = get<std::int64_t>(j, "num_classes", where);
  if (classes < 2) throw ConfigError("network.num_classes must be >= 2");
  NetworkSpec spec;
  if (arch == "mlp") {
    auto widths = get<std::vector<std::int64_t>>(j, "widths", where);
    if (!j.at("depth").is_null()) {
      const auto depth = get<int>(j, "depth", where);
      if (depth < 1 || widths.empty()) throw ConfigError("mlp depth needs depth >= 1 and a non-empty widths list");
      widths.assign(static_cast<std::size_t>(depth), widths.front());
    }
    spec = NetworkSpec::mlp(input, widths, classes);
    if (get<bool>(j, "residual", where)) {
      for (std::size_t i = 1; i < spec.hidden.size(); ++i) spec.hidden[i].residual = spec.hidden[i].width == spec.hidden[i - 1].width;
    }
  } else if (arch == "conv") {
    if (j.at("depth").is_null()) throw ConfigError("conv architecture needs network.depth (2, 4, 6 or 8)");
    spec = NetworkSpec::conv(get<int>(j, "depth", where), input, classes);
  } else {
    spec = NetworkSpec::vgg_small(input, classes);
  }
  spec.activation = parse_activation_mode(get<std::string>(j, "activation", where));
  spec.init = parse_weight_init(get<std::string>(j, "init", where));
  spec.width_multiplier = get<double>(j, "width_multiplier", where);
  spec.batchnorm = spec.batchnorm || get<bool>(j, "batchnorm", where);
  spec.exempt_first_last = get<bool>(j, "exempt_first_last", where);
  if (j.contains("bn_policy")) spec.bn_policy = parse_bn_policy(get<std::string>(j, "bn_policy", where));
  return spec;
}

std::uint64_t RunConfig::hash() const {
  Json canon = doc;
  canon.erase("out_dir");
  const std::string s = canon.dump();
  return fnv1a(s.data(), s.size());
}

bool RunConfig::buildable() const { return contains(kBuildableArch, arch) && contains(kDatasets, data.dataset); }

RunConfig make_run_config(const Json& input) {
  Json doc = default_config_json();
  merge_config(doc, input);
  RunConfig cfg;
  cfg.name = get<std::string>(doc, "name", "config");
  const auto mode = get<std::string>(doc, "mode", "config");
  if (!contains({"find", "eval", "pack", "verify-theory", "sweep"}, mode)) throw ConfigError("unknown mode '" + mode + "'");
  cfg.out_dir = get<std::string>(doc, "out_dir", "config");
  if (!doc.at("stretch_target_top1").is_null()) cfg.stretch_target_top1 = get<double>(doc, "stretch_target_top1", "config");

  const auto& d = doc.at("data");
  cfg.data.dataset = get<std::string>(d, "dataset", "data");
  cfg.data.dir = get<std::string>(d, "dir", "data");
  cfg.data.augment = get<bool>(d, "augment", "data");
  cfg.data.train_limit = get<std::size_t>(d, "train_limit", "data");
  cfg.data.test_limit = get<std::size_t>(d, "test_limit", "data");
  cfg.data.toy_samples = get<std::size_t>(d, "toy_samples", "data");
  cfg.data.toy_noise = get<double>(d, "toy_noise", "data");

  auto& net = doc.at("network");
  cfg.arch = get<std::string>(net, "arch", "network");
  cfg.spline_t = get<float>(net, "spline_t", "network");
  if (!(cfg.spline_t > 0.0f)) throw ConfigError("network.spline_t must be > 0");
  if (net.at("input_shape").is_null() && contains(kDatasets, cfg.data.dataset)) {
    net["input_shape"] = default_input_shape(cfg.data.dataset);
  }
  if (!contains(kDatasets, cfg.data.dataset) && cfg.data.dataset != "imagenet") {
    throw ConfigError("unknown dataset '" + cfg.data.dataset + "' (expected mnist, cifar10 or two-moons)");
  }
  if (cfg.data.dataset == "two-moons" && net.at("num_classes").get<std::int64_t>() == 10) net["num_classes"] = 2;

  const auto& t = doc.at("train");
  auto& tc = cfg.train;
  tc.optimizer = parse_optimizer(get<std::string>(t, "optimizer", "train"));
  tc.lr = get<double>(t, "lr", "train");
  tc.momentum = get<double>(t, "momentum", "train");
  tc.nesterov = get<bool>(t, "nesterov", "train");
  tc.weight_decay = get<double>(t, "weight_decay", "train");
  tc.adam_beta1 = get<double>(t, "adam_beta1", "train");
  tc.adam_beta2 = get<double>(t, "adam_beta2", "train");
  tc.adam_eps = get<double>(t, "adam_eps", "train");
  tc.warmup_epochs = get<int>(t, "warmup_epochs", "train");
  tc.prune_percent = get<double>(t, "prune_percent", "train");
  tc.epochs = get<int>(t, "epochs", "train");
  tc.batch_size = get<int>(t, "batch_size", "train");
  tc.seed = get<std::uint64_t>(t, "seed", "train");
  tc.bn_policy = parse_bn_policy(get<std::string>(t, "bn_policy", "train"));
  tc.cadence = parse_mask_cadence(get<std::string>(t, "mask_cadence", "train"));
  tc.grad_norm_warn = get<double>(t, "grad_norm_warn", "train");
  tc.evaluate = get<bool>(t, "evaluate", "train");
  tc.eval_limit = get<std::size_t>(t, "eval_limit", "train");
  try {
    tc.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }

  if (cfg.buildable()) {
    Json nj = net;
    nj["bn_policy"] = to_string(tc.bn_policy);
    cfg.network = network_from_json(nj);
  }

  const auto& sw = doc.at("sweep");
  cfg.sweep.prune_percent = get<std::vector<double>>(sw, "prune_percent", "sweep");
  cfg.sweep.depth = get<std::vector<int>>(sw, "depth", "sweep");
  cfg.sweep.width_multiplier = get<std::vector<double>>(sw, "width_multiplier", "sweep");
  cfg.sweep.seeds = get<std::vector<std::uint64_t>>(sw, "seeds", "sweep");

  const auto& th = doc.at("theory");
  auto& sp = cfg.theory;
  sp.family = theory::parse_target_family(get<std::string>(th, "family", "theory"));
  sp.eps = get<double>(th, "eps", "theory");
  sp.delta = get<double>(th, "delta", "theory");
  sp.s = get<std::int64_t>(th, "s", "theory");
  sp.n = get<std::int64_t>(th, "n", "theory");
  sp.d = get<std::int64_t>(th, "d", "theory");
  sp.ell = get<std::int64_t>(th, "depth", "theory");
  sp.multipliers = get<std::vector<double>>(th, "multipliers", "theory");
  sp.trials = get<std::int64_t>(th, "trials", "theory");
  sp.seed = get<std::uint64_t>(th, "seed", "theory");

  cfg.doc = doc;
  return cfg;
}

RunConfig resolve_config(const ConfigSources& src) {
  Json doc = default_config_json();
  if (!src.preset.empty()) merge_config(doc, load_preset_json(src.preset));
  if (!src.config_path.empty()) merge_config(doc, read_config_file(src.config_path));
  for (const auto& o : src.overrides) apply_override(doc, o);
  if (src.seed) doc["train"]["seed"] = *src.seed;
  if (!src.out_dir.empty()) doc["out_dir"] = src.out_dir;
  return make_run_config(doc);
}

Json network_to_json(const RunConfig& cfg) {
  Json j = cfg.doc.at("network");
  j["bn_policy"] = to_string(cfg.train.bn_policy);
  return j;
}

std::filesystem::path data_dir_for(const DataConfig& d) {
  if (!d.dir.empty()) return d.dir;
  std::filesystem::path root = "data";
  if (const char* env = std::getenv("MPT_DATA_DIR"); env && *env) root = env;
  if (d.dataset == "mnist") return root / "mnist";
  if (d.dataset == "cifar10") return root / "cifar-10-batches-bin";
  return root;
}

data::DatasetPair load_data(const DataConfig& d, std::uint64_t seed) {
  data::DatasetPair p;
  if (d.dataset == "mnist") {
    p = data::load_mnist_idx(data_dir_for(d));
  } else if (d.dataset == "cifar10") {
    p = data::load_cifar10_bin(data_dir_for(d), d.augment);
  } else if (d.dataset == "two-moons") {
    p.train = data::toy_two_moons(d.toy_samples, d.toy_noise, seed);
    p.train.split = data::Split::Train;
    p.test = data::toy_two_moons(d.toy_samples / 4, d.toy_noise, seed + 0x7e57);
    p.test.split = data::Split::Test;
  } else {
    throw ConfigError("dataset '" + d.dataset + "' has no loader in this build");
  }
  p.train.truncate(d.train_limit);
  p.test.truncate(d.test_limit);
  return p;
}

}  // namespace mpt
