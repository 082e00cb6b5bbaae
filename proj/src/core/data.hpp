#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace vib {

enum class Split { train, test };

/// Affine map applied to raw pixel values: stored = (raw - mean) * scale.
struct Normalization {
  double mean = 0.0;
  double scale = 1.0;
  double apply(double raw) const { return (raw - mean) * scale; }
  double invert(double stored) const { return stored / scale + mean; }
};

struct Dataset {
  Tensor images;  // (n, features...) flattened or (n, c, h, w)
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
  void apply_normalization(Normalization n);
  void remove_normalization();
};

/// Decoded IDX container: big-endian dims followed by unsigned bytes.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> values;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

IdxArray parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxArray& array);

/// Images file (magic 0x803) to a (count, rows, cols) tensor scaled into [0, 1].
Tensor parse_idx_images(std::span<const std::uint8_t> bytes);
/// Labels file (magic 0x801).
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

/// Inverse of parse_idx_images/parse_idx_labels for [0,1] images.
std::vector<std::uint8_t> images_to_idx(const Tensor& images);
std::vector<std::uint8_t> labels_to_idx(std::span<const int> labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Loads {train,t10k}-{images-idx3,labels-idx1}-ubyte from `dir`. Images are
/// flattened to (n, 784).
Dataset load_mnist(const std::filesystem::path& dir, Split split);
bool mnist_available(const std::filesystem::path& dir);
/// DATA_DIR, falling back to `fallback`.
std::filesystem::path data_dir_from_env(const std::filesystem::path& fallback = {});

/// Isotropic unit-variance Gaussian clusters. Class centres are `separation`
/// apart: on orthogonal axes when classes <= dim, along one axis otherwise.
Dataset synthetic_blobs(std::size_t n, std::size_t classes, std::size_t dim, double separation, std::uint64_t seed);

}  // namespace vib
