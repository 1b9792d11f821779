#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gosvae/common.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae {

// Named-tensor checkpoint container.
//
// Layout (all integers little-endian):
//   magic "GOSW" | u8 version (=1) | u32 tensor count
//   per tensor, in lexicographic (bytewise) name order:
//     u16 name length | UTF-8 name | u8 rank | u32 extents[rank] |
//     raw IEEE-754 binary64 values, little-endian
struct NamedTensor {
  Shape shape;
  std::vector<double> values;
};

using TensorMap = std::map<std::string, NamedTensor>;  // ordered => deterministic writes

Bytes serialize_checkpoint(const TensorMap& tensors);
TensorMap parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

// FNV-1a over the serialized container; the digest used for freeze checks.
std::uint64_t checkpoint_digest(const TensorMap& tensors);

// File helpers shared by the formats and the CLI.
Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace gosvae
