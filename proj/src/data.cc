#include "fedfocal/data.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fedfocal/errors.h"
#include "fedfocal/rng.h"

namespace fedfocal::data {
namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::size_t retained_count(std::size_t n, std::size_t ratio) { return (n + ratio - 1) / ratio; }

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ValidationError("dataset '" + name + "' has " + std::to_string(features.rows()) +
                          " rows but " + std::to_string(labels.size()) + " labels");
  }
  if (class_count == 0) throw ValidationError("dataset '" + name + "' has no classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw ValidationError("dataset '" + name + "' label " + std::to_string(y) + " outside " +
                            std::to_string(class_count) + " classes");
    }
  }
  if (!features.allFinite()) throw ValidationError("dataset '" + name + "' has non-finite features");
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices) {
  Dataset out;
  out.name = dataset.name;
  out.class_count = dataset.class_count;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), dataset.features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dataset.size()) throw DimensionError("subset index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) =
        dataset.features.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(dataset.labels[indices[i]]);
  }
  return out;
}

std::vector<std::size_t> class_counts(const Dataset& dataset) {
  std::vector<std::size_t> counts(dataset.class_count, 0);
  for (int y : dataset.labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Dataset concatenate(std::span<const Dataset* const> parts, std::string name) {
  if (parts.empty()) throw ValidationError("nothing to concatenate");
  Dataset out;
  out.name = std::move(name);
  out.class_count = parts.front()->class_count;
  Eigen::Index rows = 0;
  for (const auto* p : parts) {
    if (p->features.cols() != parts.front()->features.cols() || p->class_count != out.class_count) {
      throw DimensionError("cannot concatenate datasets of different shape");
    }
    rows += p->features.rows();
  }
  out.features.resize(rows, parts.front()->features.cols());
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.features.middleRows(at, p->features.rows()) = p->features;
    at += p->features.rows();
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                 std::optional<std::size_t> class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header row");
  const auto header = split_csv(line);
  const auto label_it = std::find(header.begin(), header.end(), std::string_view(label_column));
  if (label_it == header.end()) {
    throw ConfigError(path.string() + ": no column named '" + label_column + "'");
  }
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t width = header.size();

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != width) {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(width));
    }
    for (std::size_t col = 0; col < width; ++col) {
      const auto cell = cells[col];
      auto fail = [&] {
        return ParseError(path.string() + ": row " + std::to_string(row) + ", column " +
                          std::to_string(col + 1) + ": cannot parse '" + std::string(cell) + "'");
      };
      if (col == label_col) {
        int y = 0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (ec != std::errc{} || ptr != cell.data() + cell.size() || y < 0) throw fail();
        labels.push_back(y);
      } else {
        double v = 0;
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v)) throw fail();
        values.push_back(v);
      }
    }
  }

  Dataset ds;
  ds.name = path.stem().string();
  const auto dim = static_cast<Eigen::Index>(width - 1);
  ds.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()), dim);
  ds.labels = std::move(labels);
  if (class_count) {
    ds.class_count = *class_count;
  } else {
    const auto max_it = std::max_element(ds.labels.begin(), ds.labels.end());
    ds.class_count = max_it == ds.labels.end() ? 1 : static_cast<std::size_t>(*max_it) + 1;
  }
  ds.validate();
  return ds;
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                    double separation, std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || dim == 0) {
    throw ConfigError("synthetic blobs need positive classes, per_class and dim");
  }
  if (!(separation >= 0.0)) throw ConfigError("separation must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  Matrix centers = Matrix::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < classes; ++c) {
    if (c < dim) {
      centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) = separation;
    } else {
      Eigen::RowVectorXd dir(static_cast<Eigen::Index>(dim));
      for (auto& v : dir) v = unit(rng);
      centers.row(static_cast<Eigen::Index>(c)) = separation * dir.normalized();
    }
  }

  Dataset ds;
  ds.name = "blobs";
  ds.class_count = classes;
  ds.features.resize(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < classes * per_class; ++i) {
    const auto c = i % classes;
    for (std::size_t j = 0; j < dim; ++j) {
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) + unit(rng);
    }
    ds.labels.push_back(static_cast<int>(c));
  }
  return ds;
}

FederatedPartition partition(const Dataset& dataset, std::size_t n_clients,
                             PartitionScheme scheme, double val_fraction, double test_fraction,
                             std::uint64_t seed) {
  if (n_clients == 0) throw ConfigError("need at least one client");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0) || val_fraction + test_fraction >= 1.0) {
    throw ConfigError("test fraction must lie in [0, 1) and leave room for training data");
  }

  auto order = iota_indices(dataset.size());
  if (scheme == PartitionScheme::kIidShards) {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dataset.labels[a] < dataset.labels[b];
    });
  }

  const std::size_t base = dataset.size() / n_clients;
  const std::size_t extra = dataset.size() % n_clients;
  if (base == 0) {
    throw PartitionError(std::to_string(dataset.size()) + " samples cannot fill " +
                         std::to_string(n_clients) + " client shards");
  }

  FederatedPartition out;
  out.scheme = scheme;
  std::size_t cursor = 0;
  for (std::size_t c = 0; c < n_clients; ++c) {
    const std::size_t m = base + (c < extra ? 1 : 0);
    std::vector<std::size_t> shard(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + m));
    cursor += m;
    Rng shard_rng(derive_seed(seed, {c}));
    std::shuffle(shard.begin(), shard.end(), shard_rng);

    const auto n_val = std::max<std::size_t>(1, std::lround(val_fraction * static_cast<double>(m)));
    const auto n_test =
        test_fraction > 0.0 ? std::max<std::size_t>(1, std::lround(test_fraction * static_cast<double>(m)))
                            : std::size_t{0};
    if (n_val + n_test >= m) {
      throw PartitionError("client " + std::to_string(c) + " shard of " + std::to_string(m) +
                           " samples leaves no training data");
    }
    ClientData client;
    client.validation_indices.assign(shard.begin(), shard.begin() + static_cast<std::ptrdiff_t>(n_val));
    client.test_indices.assign(shard.begin() + static_cast<std::ptrdiff_t>(n_val),
                               shard.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
    client.train_indices.assign(shard.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), shard.end());
    client.train = subset(dataset, client.train_indices);
    client.validation = subset(dataset, client.validation_indices);
    client.test = subset(dataset, client.test_indices);
    const auto suffix = "/client" + std::to_string(c);
    client.train.name += suffix + "/train";
    client.validation.name += suffix + "/val";
    client.test.name += suffix + "/test";
    out.clients.push_back(std::move(client));
  }
  return out;
}

Dataset unbalance(const Dataset& dataset, const ImbalanceSpec& spec) {
  if (spec.ratio < 1) throw ConfigError("imbalance ratio must be >= 1");
  if (spec.target_classes.empty()) throw ConfigError("imbalance needs at least one target class");
  std::set<int> targets;
  for (int c : spec.target_classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= dataset.class_count) {
      throw ConfigError("imbalance target class " + std::to_string(c) + " out of range");
    }
    targets.insert(c);
  }

  std::vector<std::vector<std::size_t>> members(dataset.class_count);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    members[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }

  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < dataset.class_count; ++c) {
    auto& m = members[c];
    if (!targets.contains(static_cast<int>(c))) {
      keep.insert(keep.end(), m.begin(), m.end());
      continue;
    }
    if (m.empty()) {
      throw ImbalanceError("class " + std::to_string(c) + " has no samples to retain");
    }
    Rng rng(derive_seed(spec.seed, {c}));
    std::shuffle(m.begin(), m.end(), rng);
    keep.insert(keep.end(), m.begin(),
                m.begin() + static_cast<std::ptrdiff_t>(retained_count(m.size(), spec.ratio)));
  }
  Rng rng(derive_seed(spec.seed, {dataset.class_count}));
  std::sort(keep.begin(), keep.end());
  std::shuffle(keep.begin(), keep.end(), rng);
  return subset(dataset, keep);
}

Dataset add_gaussian_noise(const Dataset& dataset, double mu, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be >= 0");
  if (!std::isfinite(mu)) throw DomainError("noise mean must be finite");
  Dataset out = dataset;
  double* x = out.features.data();
  const auto n = static_cast<std::size_t>(out.features.size());
  if (sigma == 0.0) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i] + mu, 0.0, 255.0);
    return out;
  }
  Rng rng(seed);
  std::normal_distribution<double> noise(mu, sigma);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(x[i] + noise(rng), 0.0, 255.0);
  return out;
}

Dataset normalize(const Dataset& dataset) {
  Dataset out = dataset;
  out.features /= 255.0;
  return out;
}

Dataset sample(const Dataset& dataset, std::size_t count, std::uint64_t seed) {
  auto idx = iota_indices(dataset.size());
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(count, idx.size()));
  return subset(dataset, idx);
}

static_assert(std::endian::native == std::endian::little,
              "binary cache assumes a little-endian host");

void write_cache(const Dataset& dataset, const std::filesystem::path& stem) {
  const auto features_path = std::filesystem::path(stem.string() + ".features.f64");
  const auto labels_path = std::filesystem::path(stem.string() + ".labels.i32");
  std::ofstream f(features_path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(dataset.features.data()),
          static_cast<std::streamsize>(dataset.features.size() * sizeof(double)));
  std::ofstream l(labels_path, std::ios::binary);
  std::vector<std::int32_t> labels(dataset.labels.begin(), dataset.labels.end());
  l.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
  if (!f || !l) throw IoError("failed writing cache " + stem.string());
}

Dataset read_cache(const std::filesystem::path& stem, std::size_t rows, std::size_t cols,
                   std::size_t class_count, std::string name) {
  const auto features_path = std::filesystem::path(stem.string() + ".features.f64");
  const auto labels_path = std::filesystem::path(stem.string() + ".labels.i32");
  auto read_exact = [](const std::filesystem::path& p, char* dst, std::size_t bytes) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    if (std::filesystem::file_size(p) != bytes) {
      throw LengthError(p.string() + " has " + std::to_string(std::filesystem::file_size(p)) +
                        " bytes, manifest implies " + std::to_string(bytes));
    }
    in.read(dst, static_cast<std::streamsize>(bytes));
  };
  Dataset ds;
  ds.name = std::move(name);
  ds.class_count = class_count;
  ds.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  read_exact(features_path, reinterpret_cast<char*>(ds.features.data()), rows * cols * sizeof(double));
  std::vector<std::int32_t> labels(rows);
  read_exact(labels_path, reinterpret_cast<char*>(labels.data()), rows * sizeof(std::int32_t));
  ds.labels.assign(labels.begin(), labels.end());
  ds.validate();
  return ds;
}

}  // namespace fedfocal::data
