#include "fedfocal/config.h"

#include <openssl/evp.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "fedfocal/errors.h"
#include "fedfocal/rng.h"

namespace fedfocal::config {

using nlohmann::json;

namespace {

constexpr const char* kCacheFormat = "fedfocal-cache-v1";

enum class TransformStream : std::uint64_t {
  kTrainSample = 11,
  kTestSample = 12,
  kUnbalance = 13,
  kTrainNoise = 14,
  kTestNoise = 15,
};

std::uint64_t transform_seed(std::uint64_t seed, TransformStream s) {
  return derive_seed(seed, {static_cast<std::uint64_t>(s)});
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
std::optional<T> get_opt(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return get_or<T>(obj, key, T{}, where);
}

std::optional<fs::path> env_data_dir() {
  if (const char* env = std::getenv("FEDFOCAL_DATA_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return std::nullopt;
}

fs::path existing_path(const json& obj, const char* key, const fs::path& root,
                       const std::string& where, bool required) {
  if (!obj.contains(key)) {
    if (required) throw ConfigError(where + " needs '" + key + "'");
    return {};
  }
  const fs::path given = get_or<std::string>(obj, key, "", where);
  if (given.is_absolute()) {
    if (!fs::exists(given)) throw ConfigError(where + "." + key + ": no such file " + given.string());
    return given;
  }
  if (auto env = env_data_dir(); env && fs::exists(*env / given)) return *env / given;
  if (fs::exists(root / given)) return root / given;
  throw ConfigError(where + "." + key + ": no such file " + given.string());
}

DatasetSpec parse_dataset(const json& d, const fs::path& root) {
  const std::string where = "dataset";
  check_keys(d, {"kind", "name", "train_images", "train_labels", "test_images", "test_labels",
                 "train_csv", "test_csv", "label_column", "class_count", "manifest", "classes",
                 "per_class", "test_per_class", "dim", "separation", "train_limit", "test_limit",
                 "unbalance", "noise", "normalize", "seed"},
             where);
  DatasetSpec spec;
  const auto kind = get_or<std::string>(d, "kind", "", where);
  if (kind == "idx") {
    spec.kind = DatasetSpec::Kind::kIdx;
    spec.train_images = existing_path(d, "train_images", root, where, true);
    spec.train_labels = existing_path(d, "train_labels", root, where, true);
    spec.test_images = existing_path(d, "test_images", root, where, false);
    spec.test_labels = existing_path(d, "test_labels", root, where, false);
    if (spec.test_images.empty() != spec.test_labels.empty()) {
      throw ConfigError("dataset needs both test_images and test_labels, or neither");
    }
  } else if (kind == "csv") {
    spec.kind = DatasetSpec::Kind::kCsv;
    spec.train_csv = existing_path(d, "train_csv", root, where, true);
    spec.test_csv = existing_path(d, "test_csv", root, where, false);
  } else if (kind == "cache") {
    spec.kind = DatasetSpec::Kind::kCache;
    spec.manifest = existing_path(d, "manifest", root, where, true);
  } else if (kind == "synthetic") {
    spec.kind = DatasetSpec::Kind::kSynthetic;
  } else {
    throw ConfigError("dataset.kind must be one of idx, csv, cache, synthetic");
  }
  spec.name = get_or<std::string>(d, "name", kind, where);
  spec.label_column = get_or<std::string>(d, "label_column", "label", where);
  spec.class_count = get_opt<std::size_t>(d, "class_count", where);
  spec.classes = get_or<std::size_t>(d, "classes", spec.classes, where);
  spec.per_class = get_or<std::size_t>(d, "per_class", spec.per_class, where);
  spec.test_per_class = get_or<std::size_t>(d, "test_per_class", spec.test_per_class, where);
  spec.dim = get_or<std::size_t>(d, "dim", spec.dim, where);
  spec.separation = get_or<double>(d, "separation", spec.separation, where);
  spec.train_limit = get_opt<std::size_t>(d, "train_limit", where);
  spec.test_limit = get_opt<std::size_t>(d, "test_limit", where);
  spec.normalize = get_opt<bool>(d, "normalize", where);
  spec.seed = get_or<std::uint64_t>(d, "seed", 0, where);
  if (d.contains("unbalance") && !d["unbalance"].is_null()) {
    const auto& u = d["unbalance"];
    check_keys(u, {"classes", "ratio"}, "dataset.unbalance");
    UnbalanceSpec ub;
    ub.classes = get_or<std::vector<int>>(u, "classes", {}, "dataset.unbalance");
    ub.ratio = get_or<std::size_t>(u, "ratio", 1, "dataset.unbalance");
    spec.unbalance = ub;
  }
  if (d.contains("noise") && !d["noise"].is_null()) {
    const auto& n = d["noise"];
    check_keys(n, {"mu", "sigma"}, "dataset.noise");
    spec.noise = NoiseSpec{get_or<double>(n, "mu", 0.0, "dataset.noise"),
                           get_or<double>(n, "sigma", 0.0, "dataset.noise")};
  }
  return spec;
}

void apply_transforms(federation::ExperimentData& data, const DatasetSpec& spec) {
  if (spec.train_limit) {
    data.train = data::sample(data.train, *spec.train_limit,
                              transform_seed(spec.seed, TransformStream::kTrainSample));
  }
  if (spec.test_limit && data.test) {
    data.test = data::sample(*data.test, *spec.test_limit,
                             transform_seed(spec.seed, TransformStream::kTestSample));
  }
  if (spec.unbalance) {
    data.train = data::unbalance(
        data.train, {spec.unbalance->classes, spec.unbalance->ratio,
                     transform_seed(spec.seed, TransformStream::kUnbalance)});
  }
  if (spec.noise) {
    data.train = data::add_gaussian_noise(data.train, spec.noise->mu, spec.noise->sigma,
                                          transform_seed(spec.seed, TransformStream::kTrainNoise));
    if (data.test) {
      data.test = data::add_gaussian_noise(*data.test, spec.noise->mu, spec.noise->sigma,
                                           transform_seed(spec.seed, TransformStream::kTestNoise));
    }
  }
}

// Loads the raw split. Sets pixel_scale for 0–255 image data.
federation::ExperimentData load_raw(const DatasetSpec& spec, bool& pixel_scale) {
  federation::ExperimentData data;
  pixel_scale = false;
  switch (spec.kind) {
    case DatasetSpec::Kind::kIdx: {
      const auto classes = spec.class_count.value_or(10);
      data.train = data::load_idx(spec.train_images, spec.train_labels, classes, spec.name);
      if (!spec.test_images.empty()) {
        data.test = data::load_idx(spec.test_images, spec.test_labels, classes, spec.name + "/test");
      }
      pixel_scale = true;
      break;
    }
    case DatasetSpec::Kind::kCsv:
      data.train = data::load_csv(spec.train_csv, spec.label_column, spec.class_count);
      if (!spec.test_csv.empty()) {
        data.test = data::load_csv(spec.test_csv, spec.label_column, data.train.class_count);
      }
      break;
    case DatasetSpec::Kind::kCache:
      data = read_prepared(spec.manifest, &pixel_scale);
      break;
    case DatasetSpec::Kind::kSynthetic: {
      auto all = data::synth_blobs(spec.classes, spec.per_class + spec.test_per_class, spec.dim,
                                   spec.separation, spec.seed);
      // rows cycle through the classes, so any prefix of whole cycles is balanced
      std::vector<std::size_t> train_idx, test_idx;
      for (std::size_t i = 0; i < all.size(); ++i) {
        (i < spec.classes * spec.per_class ? train_idx : test_idx).push_back(i);
      }
      data.train = data::subset(all, train_idx);
      if (!test_idx.empty()) data.test = data::subset(all, test_idx);
      break;
    }
  }
  data.train.name = spec.name;
  if (data.test) data.test->name = spec.name + "/test";
  return data;
}

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

json nan_to_null(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(std::isnan(v) ? json(nullptr) : json(v));
  return out;
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

ConfigFile parse_config(const json& doc, const fs::path& base_dir) {
  check_keys(doc, {"name", "dataset", "partition", "model", "loss", "federation", "seeds",
                   "minority_classes", "output_dir"},
             "config");
  if (!doc.contains("dataset")) throw ConfigError("config needs a 'dataset' section");

  ConfigFile cfg;
  auto& ex = cfg.experiment;
  ex.name = get_or<std::string>(doc, "name", "experiment", "config");
  cfg.dataset = parse_dataset(doc["dataset"], base_dir);
  cfg.output_dir = get_or<std::string>(doc, "output_dir", "out", "config");
  ex.seeds = get_or<std::vector<std::uint64_t>>(doc, "seeds", {0}, "config");

  const json empty = json::object();
  const auto& p = doc.contains("partition") ? doc["partition"] : empty;
  check_keys(p, {"clients", "scheme", "val_fraction", "test_fraction"}, "partition");
  ex.n_clients = get_or<std::size_t>(p, "clients", 10, "partition");
  const auto scheme = get_or<std::string>(p, "scheme", "iid_shards", "partition");
  if (scheme == "iid_shards") {
    ex.scheme = data::PartitionScheme::kIidShards;
  } else if (scheme == "label_shards") {
    ex.scheme = data::PartitionScheme::kLabelShards;
  } else {
    throw ConfigError("partition.scheme must be iid_shards or label_shards");
  }
  ex.val_fraction = get_or<double>(p, "val_fraction", 0.1, "partition");
  ex.test_fraction = get_or<double>(p, "test_fraction", 0.0, "partition");

  const auto& m = doc.contains("model") ? doc["model"] : empty;
  check_keys(m, {"hidden", "head", "activation"}, "model");
  cfg.hidden_layers = get_or<std::vector<std::size_t>>(m, "hidden", {100, 100}, "model");
  const auto head = get_or<std::string>(m, "head", "softmax", "model");
  if (head == "softmax") {
    ex.model.head = nn::Head::kSoftmax;
  } else if (head == "sigmoid") {
    ex.model.head = nn::Head::kSigmoid;
  } else {
    throw ConfigError("model.head must be softmax or sigmoid");
  }
  if (get_or<std::string>(m, "activation", "relu", "model") != "relu") {
    throw ConfigError("model.activation must be relu");
  }

  const auto& l = doc.contains("loss") ? doc["loss"] : empty;
  check_keys(l, {"family", "gamma", "alpha"}, "loss");
  const auto family = get_or<std::string>(l, "family", "cross_entropy", "loss");
  if (family == "cross_entropy") {
    ex.loss.family = loss::Family::kCrossEntropy;
  } else if (family == "focal") {
    ex.loss.family = loss::Family::kFocal;
  } else {
    throw ConfigError("loss.family must be cross_entropy or focal");
  }
  ex.loss.gamma = get_or<double>(l, "gamma", 0.0, "loss");
  if (l.contains("alpha")) {
    if (l["alpha"].is_number()) {
      // scalar alpha is expanded once the class count is known
      ex.loss.alpha = {l["alpha"].get<double>()};
    } else {
      ex.loss.alpha = get_or<std::vector<double>>(l, "alpha", {}, "loss");
    }
  }

  const auto& f = doc.contains("federation") ? doc["federation"] : empty;
  check_keys(f, {"algorithm", "psi", "client_ratio", "rounds", "local_epochs", "lr", "batch_size"},
             "federation");
  const auto algorithm = get_or<std::string>(f, "algorithm", "fedavg", "federation");
  if (algorithm == "fedavg") {
    ex.algorithm = federation::Algorithm::kFedAvg;
  } else if (algorithm == "local_only") {
    ex.algorithm = federation::Algorithm::kLocalOnly;
  } else if (algorithm == "global_only") {
    ex.algorithm = federation::Algorithm::kGlobalOnly;
  } else {
    throw ConfigError("federation.algorithm must be fedavg, local_only or global_only");
  }
  ex.psi = get_or<double>(f, "psi", 0.0, "federation");
  ex.client_ratio = get_or<double>(f, "client_ratio", 0.1, "federation");
  ex.rounds = get_or<std::size_t>(f, "rounds", 1, "federation");
  ex.training.local_epochs = get_or<std::size_t>(f, "local_epochs", 1, "federation");
  ex.training.lr = get_or<double>(f, "lr", 0.05, "federation");
  ex.training.batch_size = get_or<std::size_t>(f, "batch_size", 32, "federation");

  if (doc.contains("minority_classes")) {
    ex.minority_classes = get_or<std::vector<int>>(doc, "minority_classes", {}, "config");
  } else if (cfg.dataset.unbalance) {
    ex.minority_classes = cfg.dataset.unbalance->classes;
  }

  cfg.canonical = doc;
  cfg.canonical.erase("output_dir");
  return cfg;
}

json read_config_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ConfigFile load_config(const fs::path& path) {
  return parse_config(read_config_json(path), fs::absolute(path).parent_path());
}

AblationAxis parse_axis(const std::string& name) {
  if (name == "gamma") return AblationAxis::kGamma;
  if (name == "psi") return AblationAxis::kPsi;
  if (name == "client_ratio") return AblationAxis::kClientRatio;
  throw ConfigError("ablation axis must be gamma, psi or client_ratio");
}

std::string axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kGamma:
      return "gamma";
    case AblationAxis::kPsi:
      return "psi";
    case AblationAxis::kClientRatio:
      return "client_ratio";
  }
  return "";
}

void apply_axis(json& doc, AblationAxis axis, double value) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  switch (axis) {
    case AblationAxis::kGamma:
      doc["loss"]["family"] = "focal";
      doc["loss"]["gamma"] = value;
      break;
    case AblationAxis::kPsi:
      doc["federation"]["psi"] = value;
      break;
    case AblationAxis::kClientRatio:
      doc["federation"]["client_ratio"] = value;
      break;
  }
}

void override_seeds(ConfigFile& config, std::vector<std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("seed override is empty");
  config.canonical["seeds"] = seeds;
  config.experiment.seeds = std::move(seeds);
}

std::string config_hash(const ConfigFile& config) { return sha256_hex(config.canonical.dump()); }

federation::ExperimentData load_data(ConfigFile& config) {
  bool pixel_scale = false;
  auto data = load_raw(config.dataset, pixel_scale);
  apply_transforms(data, config.dataset);
  if (config.dataset.normalize.value_or(pixel_scale)) {
    data.train = data::normalize(data.train);
    if (data.test) data.test = data::normalize(*data.test);
  }

  auto& ex = config.experiment;
  const auto classes = data.train.class_count;
  ex.model.layer_sizes.clear();
  ex.model.layer_sizes.push_back(data.train.dim());
  for (auto h : config.hidden_layers) ex.model.layer_sizes.push_back(h);
  ex.model.layer_sizes.push_back(ex.model.head == nn::Head::kSigmoid ? 1 : classes);
  if (ex.loss.alpha.size() == 1 && classes != 1) {
    ex.loss.alpha.assign(classes, ex.loss.alpha.front());
  }
  return data;
}

json summary_json(const ConfigFile& config, const federation::ExperimentResult& result) {
  const auto& ex = config.experiment;
  json out;
  out["method"] = result.summary.method;
  out["dataset"] = result.summary.dataset;
  out["mean"] = result.summary.mean;
  out["std"] = result.summary.std;
  out["n_seeds"] = result.summary.n_seeds;
  out["config_hash"] = config_hash(config);
  out["gamma"] = ex.loss.effective_gamma();
  out["psi"] = ex.psi;
  out["client_ratio"] = ex.client_ratio;
  out["clients_per_round"] = federation::clients_per_round(ex);

  std::vector<double> seeds_json;
  std::vector<double> minority, smooth;
  std::vector<double> per_class_mean;
  json runs = json::array();
  for (const auto& run : result.runs) {
    json r;
    r["seed"] = run.seed;
    r["accuracy"] = run.final_eval.overall_accuracy;
    r["minority_recall"] = nan_to_null(run.final_eval.minority_recall);
    r["smoothness"] = run.smoothness;
    r["per_class_accuracy"] = nan_to_null(run.final_eval.per_class_accuracy);
    r["per_client_accuracy"] = run.per_client_accuracy;
    r["rounds"] = run.trace.size();
    runs.push_back(std::move(r));
    minority.push_back(run.final_eval.minority_recall);
    smooth.push_back(run.smoothness);
    if (per_class_mean.empty()) per_class_mean.assign(run.final_eval.per_class_accuracy.size(), 0.0);
    for (std::size_t c = 0; c < per_class_mean.size(); ++c) {
      per_class_mean[c] += run.final_eval.per_class_accuracy[c] / static_cast<double>(result.runs.size());
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  out["seeds"] = ex.seeds;
  out["per_class_accuracy"] = nan_to_null(per_class_mean);
  out["minority_recall"] = nan_to_null(mean(minority));
  out["smoothness"] = mean(smooth);
  out["runs"] = std::move(runs);
  return out;
}

json prepare(const PrepareRequest& request) {
  if (request.source.kind != DatasetSpec::Kind::kIdx && request.source.kind != DatasetSpec::Kind::kCsv) {
    throw ConfigError("prepare reads idx or csv sources");
  }
  bool pixel_scale = false;
  auto data = load_raw(request.source, pixel_scale);
  apply_transforms(data, request.source);

  json manifest;
  manifest["format"] = kCacheFormat;
  manifest["name"] = request.name;
  manifest["class_count"] = data.train.class_count;
  manifest["dim"] = data.train.dim();
  manifest["pixel_scale"] = pixel_scale;
  manifest["seed"] = request.source.seed;
  json transforms = json::object();
  if (request.source.train_limit) transforms["train_limit"] = *request.source.train_limit;
  if (request.source.test_limit) transforms["test_limit"] = *request.source.test_limit;
  if (request.source.unbalance) {
    transforms["unbalance"] = {{"classes", request.source.unbalance->classes},
                               {"ratio", request.source.unbalance->ratio}};
  }
  if (request.source.noise) {
    transforms["noise"] = {{"mu", request.source.noise->mu}, {"sigma", request.source.noise->sigma}};
  }
  manifest["transforms"] = transforms;
  manifest["train"] = {{"stem", "train"}, {"rows", data.train.size()}};
  manifest["test"] = data.test ? json{{"stem", "test"}, {"rows", data.test->size()}} : json(nullptr);

  fs::create_directories(request.out_dir);
  data::write_cache(data.train, request.out_dir / "train");
  if (data.test) data::write_cache(*data.test, request.out_dir / "test");
  write_text(request.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

federation::ExperimentData read_prepared(const fs::path& manifest_path, bool* pixel_scale) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
    if (m.at("format").get<std::string>() != kCacheFormat) {
      throw FormatError(manifest_path.string() + ": unsupported cache format");
    }
    const auto dir = manifest_path.parent_path();
    const auto classes = m.at("class_count").get<std::size_t>();
    const auto dim = m.at("dim").get<std::size_t>();
    const auto name = m.at("name").get<std::string>();
    federation::ExperimentData data;
    data.train = data::read_cache(dir / m.at("train").at("stem").get<std::string>(),
                                  m.at("train").at("rows").get<std::size_t>(), dim, classes, name);
    if (!m.at("test").is_null()) {
      data.test = data::read_cache(dir / m.at("test").at("stem").get<std::string>(),
                                   m.at("test").at("rows").get<std::size_t>(), dim, classes,
                                   name + "/test");
    }
    if (pixel_scale) *pixel_scale = m.at("pixel_scale").get<bool>();
    return data;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError("bad seed '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError("bad number '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

}  // namespace fedfocal::config
