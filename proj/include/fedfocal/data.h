#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfocal/nn.h"

namespace fedfocal::data {

struct Dataset {
  std::string name;
  Matrix features;          // n × d
  std::vector<int> labels;  // n class indices
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  // Throws ValidationError when the invariants do not hold.
  void validate() const;
};

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<std::size_t> class_counts(const Dataset& dataset);
// Rows of each part in order. Parts must agree on dim and class count.
Dataset concatenate(std::span<const Dataset* const> parts, std::string name);

// ---- IDX (MNIST distribution format) ----

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct ImageTensor {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count·rows·cols, row-major per image

  std::uint8_t at(std::size_t image, std::size_t r, std::size_t c) const {
    return pixels[(image * rows + r) * cols + c];
  }
};

// FormatError on a bad/missing magic, LengthError on a truncated or oversized payload.
ImageTensor parse_idx_images(std::span<const std::uint8_t> bytes);
// With class_count set, a label >= class_count raises ValidationError.
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes,
                                  std::optional<std::size_t> class_count = 10);

// Reads a whole file, transparently inflating gzip. Throws IoError.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Pixel-scale features (0–255), one flattened image per row.
Dataset dataset_from_idx(const ImageTensor& images, std::span<const int> labels,
                         std::size_t class_count, std::string name);
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count = 10, std::string name = "mnist");

// ---- CSV ----

// Header row required. class_count defaults to max label + 1.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                 std::optional<std::size_t> class_count = std::nullopt);

// ---- synthetic ----

// Unit-variance Gaussian clusters centred at separation·e_c (random unit
// directions once classes exceed dim).
Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                    double separation, std::uint64_t seed);

// ---- federation ----

enum class PartitionScheme { kIidShards, kLabelShards };

struct ClientData {
  Dataset train;
  Dataset validation;
  Dataset test;
  // Row indices into the source dataset.
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
  std::vector<std::size_t> test_indices;
};

struct FederatedPartition {
  PartitionScheme scheme = PartitionScheme::kIidShards;
  std::vector<ClientData> clients;

  std::size_t client_count() const { return clients.size(); }
};

// iid_shards: seeded shuffle then equal split; label_shards: label-sorted
// contiguous split. Each shard then carves its own validation and test
// pieces. test_fraction may be 0 when evaluation uses a separate test set.
FederatedPartition partition(const Dataset& dataset, std::size_t n_clients,
                             PartitionScheme scheme, double val_fraction, double test_fraction,
                             std::uint64_t seed);

// ---- transforms ----

struct ImbalanceSpec {
  std::vector<int> target_classes;
  std::size_t ratio = 1;  // keep 1 of every `ratio`
  std::uint64_t seed = 0;
};

// Keeps ⌈n_c/ratio⌉ seeded members of each target class and reshuffles.
Dataset unbalance(const Dataset& dataset, const ImbalanceSpec& spec);

// x → clamp(x + N(mu, sigma²), 0, 255), pixel scale.
Dataset add_gaussian_noise(const Dataset& dataset, double mu, double sigma, std::uint64_t seed);

// Divides features by 255. Not idempotent.
Dataset normalize(const Dataset& dataset);

// Seeded uniform subsample without replacement; count >= size returns a permutation.
Dataset sample(const Dataset& dataset, std::size_t count, std::uint64_t seed);

// ---- binary cache ----
//
// <stem>.features.f64: little-endian float64, n·d row-major
// <stem>.labels.i32:   little-endian int32, n
// Dimensions live in the caller-owned manifest.
void write_cache(const Dataset& dataset, const std::filesystem::path& stem);
Dataset read_cache(const std::filesystem::path& stem, std::size_t rows, std::size_t cols,
                   std::size_t class_count, std::string name);

}  // namespace fedfocal::data
