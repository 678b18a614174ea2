#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmet/tensor.hpp"

namespace mmet {

struct TensorBlock {
  Shape shape;
  std::vector<double> values;

  bool operator==(const TensorBlock&) const = default;
};

/// Binary checkpoint: "MMETCKPT", u32 version, named tensor blocks
/// (name, shape, little-endian f64 values), then named text blocks.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, TensorBlock> tensors;
  std::map<std::string, std::string> texts;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const TensorBlock& tensor(const std::string& name) const;
  const std::string& text(const std::string& name) const;

  bool operator==(const Checkpoint&) const = default;
};

}  // namespace mmet
