// fedfocal: experiment runner for focal-loss federated training.
//
//   fedfocal run     --config exp.json [--out DIR] [--seeds 1,2,3] [--workers N]
//   fedfocal ablate  --config exp.json --axis gamma --values 1,2,3,4,5
//   fedfocal prepare --source DIR --out DIR [--unbalance 0,1,2,9:100] [--noise 10,5]
//   fedfocal report  DIR...

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fedfocal/config.h"
#include "fedfocal/errors.h"
#include "fedfocal/federation.h"
#include "fedfocal/metrics.h"

namespace fs = std::filesystem;
using fedfocal::config::ConfigFile;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::size_t workers = 1;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw fedfocal::IoError("failed writing " + path.string());
}

void print_warnings(const ConfigFile& cfg, std::size_t class_count) {
  for (const auto& w : fedfocal::federation::validate(cfg.experiment, class_count)) {
    std::cerr << "warning: " << w << "\n";
  }
}

ConfigFile finish_config(const json& doc, const CommonFlags& flags) {
  auto cfg = fedfocal::config::parse_config(doc, fs::absolute(flags.config_path).parent_path());
  if (!flags.seeds.empty()) {
    fedfocal::config::override_seeds(cfg, fedfocal::config::parse_seed_list(flags.seeds));
  }
  if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
  return cfg;
}

// Runs one config and writes trace_seed<k>.csv files plus summary.json into dir.
json run_and_write(ConfigFile& cfg, const fs::path& dir, std::size_t workers) {
  const auto data = fedfocal::config::load_data(cfg);
  print_warnings(cfg, data.train.class_count);
  const auto result =
      fedfocal::federation::run_experiment(cfg.experiment, data, {.workers = workers});
  auto summary = fedfocal::config::summary_json(cfg, result);

  fs::create_directories(dir);
  for (const auto& run : result.runs) {
    write_file(dir / ("trace_seed" + std::to_string(run.seed) + ".csv"),
               fedfocal::metrics::emit_trace(run.trace));
  }
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << cfg.experiment.name << ": accuracy "
            << fedfocal::metrics::format_mean_std(result.summary) << " over "
            << result.summary.n_seeds << " seed(s) -> " << dir.string() << "\n";
  return summary;
}

int cmd_run(const CommonFlags& flags) {
  const auto doc = fedfocal::config::read_config_json(flags.config_path);
  auto cfg = finish_config(doc, flags);
  run_and_write(cfg, cfg.output_dir / cfg.experiment.name, flags.workers);
  return 0;
}

int cmd_ablate(const CommonFlags& flags, const std::string& axis_text, const std::string& values_text) {
  const auto axis = fedfocal::config::parse_axis(axis_text);
  const auto values = fedfocal::config::parse_double_list(values_text);
  const auto base = fedfocal::config::read_config_json(flags.config_path);

  // Parse every variant up front so a bad value fails before anything is written.
  std::vector<ConfigFile> variants;
  for (double v : values) {
    auto doc = base;
    fedfocal::config::apply_axis(doc, axis, v);
    variants.push_back(finish_config(doc, flags));
  }

  const auto name = variants.front().experiment.name;
  const auto root = variants.front().output_dir / (name + "_ablate_" + axis_text);
  std::string table = "axis,value,method,mean,std,n_seeds,minority_recall,smoothness,config_hash\n";
  for (std::size_t i = 0; i < variants.size(); ++i) {
    auto& cfg = variants[i];
    const auto label = axis_text + "=" + fedfocal::metrics::format_double(values[i]);
    cfg.experiment.name = name + "[" + label + "]";
    const auto summary = run_and_write(cfg, root / label, flags.workers);
    auto num = [](const json& j) {
      return j.is_null() ? std::string("nan") : fedfocal::metrics::format_double(j.get<double>());
    };
    table += axis_text + "," + fedfocal::metrics::format_double(values[i]) + "," +
             summary["method"].get<std::string>() + "," + num(summary["mean"]) + "," +
             num(summary["std"]) + "," + std::to_string(summary["n_seeds"].get<std::size_t>()) +
             "," + num(summary["minority_recall"]) + "," + num(summary["smoothness"]) + "," +
             summary["config_hash"].get<std::string>() + "\n";
  }
  write_file(root / "ablation.csv", table);
  std::cout << table;
  return 0;
}

fs::path find_idx(const fs::path& dir, const std::string& stem) {
  for (const auto& candidate : {dir / stem, dir / (stem + ".gz")}) {
    if (fs::exists(candidate)) return candidate;
  }
  throw fedfocal::IoError("no " + stem + "[.gz] in " + dir.string());
}

int cmd_prepare(std::string source, const std::string& csv, const std::string& out,
                const std::string& name, const std::string& unbalance, const std::string& noise,
                std::optional<std::size_t> train_limit, std::optional<std::size_t> test_limit,
                std::uint64_t seed, const std::string& label_column) {
  fedfocal::config::PrepareRequest req;
  req.name = name;
  req.out_dir = out;
  auto& src = req.source;
  src.name = name;
  src.seed = seed;
  src.train_limit = train_limit;
  src.test_limit = test_limit;
  if (!csv.empty()) {
    src.kind = fedfocal::config::DatasetSpec::Kind::kCsv;
    src.train_csv = csv;
    src.label_column = label_column;
  } else {
    if (source.empty()) {
      const char* env = std::getenv("FEDFOCAL_DATA_DIR");
      if (env == nullptr) throw fedfocal::ConfigError("prepare needs --source or FEDFOCAL_DATA_DIR");
      source = env;
    }
    src.kind = fedfocal::config::DatasetSpec::Kind::kIdx;
    src.train_images = find_idx(source, "train-images-idx3-ubyte");
    src.train_labels = find_idx(source, "train-labels-idx1-ubyte");
    try {
      src.test_images = find_idx(source, "t10k-images-idx3-ubyte");
      src.test_labels = find_idx(source, "t10k-labels-idx1-ubyte");
    } catch (const fedfocal::IoError&) {
      src.test_images.clear();
      src.test_labels.clear();
    }
  }
  if (!unbalance.empty()) {
    // "0,1,2,9:100"
    const auto colon = unbalance.find(':');
    if (colon == std::string::npos) throw fedfocal::ConfigError("--unbalance expects CLASSES:RATIO");
    fedfocal::config::UnbalanceSpec ub;
    for (auto c : fedfocal::config::parse_seed_list(unbalance.substr(0, colon))) {
      ub.classes.push_back(static_cast<int>(c));
    }
    ub.ratio = fedfocal::config::parse_seed_list(unbalance.substr(colon + 1)).at(0);
    src.unbalance = ub;
  }
  if (!noise.empty()) {
    const auto v = fedfocal::config::parse_double_list(noise);
    if (v.size() != 2) throw fedfocal::ConfigError("--noise expects MU,SIGMA");
    src.noise = fedfocal::config::NoiseSpec{v[0], v[1]};
  }
  const auto manifest = fedfocal::config::prepare(req);
  std::cout << manifest.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs) {
  std::printf("%-40s %-16s %-18s %-8s %-10s\n", "method", "dataset", "accuracy", "seeds",
              "minority");
  for (const auto& d : dirs) {
    std::vector<fs::path> found;
    if (fs::is_regular_file(d)) {
      found.push_back(d);
    } else {
      for (const auto& e : fs::recursive_directory_iterator(d)) {
        if (e.path().filename() == "summary.json") found.push_back(e.path());
      }
    }
    std::sort(found.begin(), found.end());
    for (const auto& p : found) {
      std::ifstream in(p);
      const auto s = json::parse(in);
      fedfocal::metrics::SummaryRow row{s["method"], s["dataset"], s["mean"], s["std"],
                                        s["n_seeds"]};
      const auto minority = s["minority_recall"].is_null()
                                ? std::string("-")
                                : fedfocal::metrics::format_double(s["minority_recall"].get<double>()).substr(0, 6);
      std::printf("%-40s %-16s %-18s %-8zu %-10s\n", row.method.c_str(), row.dataset.c_str(),
                  fedfocal::metrics::format_mean_std(row).c_str(), row.n_seeds, minority.c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated training with focal loss and validation-driven client selection"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seeds", flags.seeds, "comma-separated seed list");
    sub->add_option("--workers", flags.workers, "client training threads")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run);

  std::string axis, values;
  auto* ablate = app.add_subcommand("ablate", "sweep gamma, psi or client_ratio");
  add_common(ablate);
  ablate->add_option("--axis", axis, "gamma | psi | client_ratio")->required();
  ablate->add_option("--values", values, "comma-separated values")->required();

  std::string source, csv, out, name = "mnist", unbalance, noise, label_column = "label";
  std::optional<std::size_t> train_limit, test_limit;
  std::uint64_t seed = 0;
  auto* prepare = app.add_subcommand("prepare", "transform a dataset into the binary cache");
  prepare->add_option("--source", source, "directory with IDX files (default FEDFOCAL_DATA_DIR)");
  prepare->add_option("--csv", csv, "CSV file instead of IDX");
  prepare->add_option("--label-column", label_column, "CSV label column");
  prepare->add_option("--out", out, "cache directory")->required();
  prepare->add_option("--name", name, "dataset name");
  prepare->add_option("--unbalance", unbalance, "CLASSES:RATIO, e.g. 0,1,2,9:100");
  prepare->add_option("--noise", noise, "MU,SIGMA, e.g. 10,5");
  prepare->add_option("--train-limit", train_limit, "subsample the training split");
  prepare->add_option("--test-limit", test_limit, "subsample the test split");
  prepare->add_option("--seed", seed, "transform seed");

  std::vector<std::string> report_dirs;
  auto* report = app.add_subcommand("report", "tabulate summary.json files");
  report->add_option("dirs", report_dirs, "output directories or summary files")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(flags);
    if (ablate->parsed()) return cmd_ablate(flags, axis, values);
    if (prepare->parsed()) {
      return cmd_prepare(source, csv, out, name, unbalance, noise, train_limit, test_limit, seed,
                         label_column);
    }
    if (report->parsed()) return cmd_report(report_dirs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
