#include <zlib.h>

#include <cstdio>
#include <limits>
#include <memory>
#include <string>

#include "fedfocal/data.h"
#include "fedfocal/errors.h"

namespace fedfocal::data {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::span<const std::uint8_t> bytes, std::uint32_t magic, const char* what) {
  if (bytes.size() < 4) throw FormatError(std::string("IDX ") + what + " file too short for a magic number");
  const auto found = read_be32(bytes, 0);
  if (found != magic) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "IDX %s magic 0x%08x, expected 0x%08x", what, found, magic);
    throw FormatError(buf);
  }
}

void expect_payload(std::size_t have, std::size_t header, std::size_t payload, const char* what) {
  if (have < header + payload) {
    throw LengthError(std::string("IDX ") + what + " payload truncated: " +
                      std::to_string(have - header) + " of " + std::to_string(payload) + " bytes");
  }
  if (have > header + payload) {
    throw LengthError(std::string("IDX ") + what + " has " +
                      std::to_string(have - header - payload) + " trailing bytes");
  }
}

}  // namespace

ImageTensor parse_idx_images(std::span<const std::uint8_t> bytes) {
  expect_magic(bytes, kIdxImageMagic, "image");
  constexpr std::size_t kHeader = 16;
  if (bytes.size() < kHeader) throw LengthError("IDX image header truncated");
  ImageTensor out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::size_t per_image = out.rows * out.cols;
  if (per_image != 0 && out.count > std::numeric_limits<std::size_t>::max() / per_image) {
    throw LengthError("IDX image dimensions overflow");
  }
  const std::size_t payload = out.count * per_image;
  expect_payload(bytes.size(), kHeader, payload, "image");
  out.pixels.assign(bytes.begin() + kHeader, bytes.end());
  return out;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes,
                                  std::optional<std::size_t> class_count) {
  expect_magic(bytes, kIdxLabelMagic, "label");
  constexpr std::size_t kHeader = 8;
  if (bytes.size() < kHeader) throw LengthError("IDX label header truncated");
  const std::size_t count = read_be32(bytes, 4);
  expect_payload(bytes.size(), kHeader, count, "label");
  std::vector<int> labels(bytes.begin() + kHeader, bytes.end());
  if (class_count) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) >= *class_count) {
        throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                              std::to_string(i) + " outside " + std::to_string(*class_count) +
                              " classes");
      }
    }
  }
  return labels;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  // gzread passes uncompressed files through unchanged
  std::unique_ptr<gzFile_s, decltype(&gzclose)> file(gzopen(path.c_str(), "rb"), &gzclose);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(file.get(), buf, sizeof buf);
    if (n < 0) {
      int code = 0;
      throw IoError("read error in " + path.string() + ": " + gzerror(file.get(), &code));
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  return out;
}

Dataset dataset_from_idx(const ImageTensor& images, std::span<const int> labels,
                         std::size_t class_count, std::string name) {
  if (images.count != labels.size()) {
    throw DimensionError("image count " + std::to_string(images.count) + " != label count " +
                         std::to_string(labels.size()));
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.class_count = class_count;
  const auto dim = images.rows * images.cols;
  ds.features.resize(static_cast<Eigen::Index>(images.count), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < images.pixels.size(); ++i) ds.features.data()[i] = images.pixels[i];
  ds.labels.assign(labels.begin(), labels.end());
  ds.validate();
  return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t class_count, std::string name) {
  const auto image_bytes = read_file_bytes(images);
  const auto label_bytes = read_file_bytes(labels);
  return dataset_from_idx(parse_idx_images(image_bytes), parse_idx_labels(label_bytes, class_count),
                          class_count, std::move(name));
}

}  // namespace fedfocal::data
