#pragma once
// Run configuration: one JSON document (comments allowed) with sections
// network, train, data, sweep, theory. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpt/biprop.hpp"
#include "mpt/data.hpp"
#include "mpt/layers.hpp"
#include "mpt/theory.hpp"

namespace mpt {

using Json = nlohmann::json;

struct DataConfig {
  std::string dataset = "mnist";  // mnist | cifar10 | two-moons
  std::string dir;                // empty: $MPT_DATA_DIR/<dataset default>
  bool augment = true;            // cifar10 train split only
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t toy_samples = 1000;
  double toy_noise = 0.1;
};

struct SweepConfig {
  std::vector<double> prune_percent;
  std::vector<int> depth;
  std::vector<double> width_multiplier;
  std::vector<std::uint64_t> seeds;
};

struct RunConfig {
  std::string name;
  std::string arch = "mlp";  // mlp | conv | vgg-small; other names are reference-only table rows
  NetworkSpec network;
  float spline_t = 1.0f;
  TrainConfig train;
  DataConfig data;
  SweepConfig sweep;
  theory::StudyParams theory;
  std::string out_dir = "runs/default";
  double stretch_target_top1 = -1.0;  // reported top-1 for this configuration; informational
  Json doc;                           // fully resolved document

  // FNV-1a of the canonical document with out_dir removed.
  std::uint64_t hash() const;
  bool buildable() const;
};

// Defaults for every key; the base every document is merged onto.
Json default_config_json();

// Parses a JSON document (comments allowed) from text or file.
Json parse_config_text(const std::string& text, const std::string& origin = "<config>");
Json read_config_file(const std::filesystem::path& path);

// Directory searched for presets: $MPT_PRESET_DIR if set, else the build-time preset dir.
std::filesystem::path preset_dir();
Json load_preset_json(const std::string& name);
std::vector<std::string> list_presets();

// Deep-merges overlay onto base; unknown keys in overlay raise ConfigError.
void merge_config(Json& base, const Json& overlay, const std::string& where = "");
// key.path=value; value parsed as JSON when possible, otherwise taken as a string.
void apply_override(Json& doc, const std::string& assignment);

// Validates and converts a merged document.
RunConfig make_run_config(const Json& doc);

// preset (optional) -> config file (optional) -> overrides -> seed/out flags.
struct ConfigSources {
  std::string preset;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};
RunConfig resolve_config(const ConfigSources& src);

// Network section as JSON (embedded in checkpoints) and back.
Json network_to_json(const RunConfig& cfg);
NetworkSpec network_from_json(const Json& j, std::string* arch = nullptr, float* spline_t = nullptr);

std::filesystem::path data_dir_for(const DataConfig& d);
data::DatasetPair load_data(const DataConfig& d, std::uint64_t seed);
Shape default_input_shape(const std::string& dataset);

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull);
std::string hex64(std::uint64_t v);

}  // namespace mpt
