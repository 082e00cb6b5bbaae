#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "network.hpp"

namespace vib {

inline constexpr char kCheckpointMagic[4] = {'V', 'I', 'B', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

/// Everything a checkpoint carries besides the network arrays.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;
  /// Free-form dataset tag, e.g. "mnist" or "blobs 400 2 5 8 7 200".
  std::string data = "mnist";
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Topology text: one directive per line, parameters live in the arrays.
std::string describe_topology(const Network& net, const CheckpointMeta& meta);

std::vector<std::uint8_t> encode_checkpoint(const Network& net, const CheckpointMeta& meta);
Network decode_checkpoint(std::span<const std::uint8_t> bytes, CheckpointMeta* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Network& net, const CheckpointMeta& meta);
Network load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

/// Arrays in file order, for inspection and round-trip tests.
std::vector<NamedArray> checkpoint_arrays(std::span<const std::uint8_t> bytes);

}  // namespace vib
