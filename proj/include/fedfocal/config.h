#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfocal/data.h"
#include "fedfocal/federation.h"

namespace fedfocal::config {

namespace fs = std::filesystem;

struct NoiseSpec {
  double mu = 0.0;
  double sigma = 0.0;
};

struct UnbalanceSpec {
  std::vector<int> classes;
  std::size_t ratio = 1;
};

// Where the data comes from and which transforms to apply before training.
// Transform order: subsample → unbalance (train only) → noise → normalize.
struct DatasetSpec {
  enum class Kind { kIdx, kCsv, kCache, kSynthetic };
  Kind kind = Kind::kIdx;
  std::string name;

  fs::path train_images, train_labels, test_images, test_labels;  // idx
  fs::path train_csv, test_csv;                                    // csv
  std::string label_column = "label";
  fs::path manifest;                                               // cache
  std::optional<std::size_t> class_count;

  std::size_t classes = 2, per_class = 100, test_per_class = 0, dim = 2;  // synthetic
  double separation = 4.0;

  std::optional<std::size_t> train_limit, test_limit;
  std::optional<UnbalanceSpec> unbalance;
  std::optional<NoiseSpec> noise;
  std::optional<bool> normalize;  // default: true for pixel data
  std::uint64_t seed = 0;
};

struct ConfigFile {
  federation::ExperimentConfig experiment;
  DatasetSpec dataset;
  std::vector<std::size_t> hidden_layers{100, 100};
  fs::path output_dir = "out";
  // Input document with overrides applied, minus output_dir; the config hash covers this.
  nlohmann::json canonical;
};

// Unknown keys raise ConfigError, as do referenced paths that do not exist.
// Relative dataset paths are looked up under FEDFOCAL_DATA_DIR first, then
// under base_dir.
ConfigFile parse_config(const nlohmann::json& doc, const fs::path& base_dir);
ConfigFile load_config(const fs::path& path);
nlohmann::json read_config_json(const fs::path& path);

enum class AblationAxis { kGamma, kPsi, kClientRatio };
AblationAxis parse_axis(const std::string& name);
std::string axis_name(AblationAxis axis);
// Sets one hyperparameter in a config document. The gamma axis also
// switches the loss family to focal (γ = 0 is plain cross-entropy).
void apply_axis(nlohmann::json& doc, AblationAxis axis, double value);

// Replaces the seed list and refreshes the canonical document.
void override_seeds(ConfigFile& config, std::vector<std::uint64_t> seeds);

// SHA-256 hex of the canonical document.
std::string config_hash(const ConfigFile& config);

// Loads and transforms the data, then sizes the model's input and output layers.
federation::ExperimentData load_data(ConfigFile& config);

nlohmann::json summary_json(const ConfigFile& config, const federation::ExperimentResult& result);

// ---- prepared dataset cache ----

struct PrepareRequest {
  std::string name = "mnist";
  DatasetSpec source;  // idx or csv
  fs::path out_dir;
};

// Writes <out>/train.* (and test.* when a test split exists) plus
// <out>/manifest.json. Returns the manifest.
nlohmann::json prepare(const PrepareRequest& request);

// Reads a manifest written by prepare.
federation::ExperimentData read_prepared(const fs::path& manifest, bool* pixel_scale = nullptr);

// Parses "1,2,3".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace fedfocal::config
