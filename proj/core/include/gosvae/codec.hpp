#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gosvae/common.hpp"
#include "gosvae/vq.hpp"

namespace gosvae {

// Wire packet layout (multi-byte integers little-endian, body bits big-endian
// within each byte):
//   magic "GOSM" | u8 version (=1) | u16 H | u16 W | u8 r | u16 K |
//   u8 coder_id | u32 symbol_count |
//   [coder 1 only: K bytes of code lengths, 0 = symbol absent] |
//   u32 body_len | body bytes (zero-padded to a byte boundary)
inline constexpr std::uint8_t kCoderFixed = 0;
inline constexpr std::uint8_t kCoderHuffman = 1;
inline constexpr int kMaxCodeLength = 16;

struct PacketMeta {
  std::uint16_t H = 0;
  std::uint16_t W = 0;
  std::uint8_t r = 1;
  std::uint16_t K = 1;
};

Bytes encode_packet(const IndexMap& idx, const PacketMeta& meta, int coder_id);
std::pair<IndexMap, PacketMeta> decode_packet(std::span<const std::uint8_t> packet);

struct PayloadReport {
  std::uint64_t header_bytes = 0;  // includes the code-length table
  std::uint64_t body_bytes = 0;
  std::uint64_t total_bytes = 0;
  double kib = 0.0;  // total / 1024
};

PayloadReport payload(std::span<const std::uint8_t> packet);

// Canonical Huffman code lengths for a histogram, limited to max_len by the
// standard overflow fold. Zero length marks an absent symbol; a lone present
// symbol gets length 1 (and the body carries no bits for it).
std::vector<std::uint8_t> huffman_code_lengths(const std::vector<std::int64_t>& hist,
                                               int max_len = kMaxCodeLength);

// Canonical codes from lengths (deflate numbering: sort by length then
// symbol). codes[s] is valid where lengths[s] > 0.
std::vector<std::uint32_t> canonical_codes(const std::vector<std::uint8_t>& lengths);

// IEEE CRC-32 (reflected, poly 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Channel framing: u32 payload length | payload | u32 crc32(payload).
Bytes frame_packet(std::span<const std::uint8_t> packet);
std::vector<Bytes> parse_frames(std::span<const std::uint8_t> stream);

// Error-free loopback delivery with an optional seeded bit-flip injector used
// to demonstrate CRC detection. Receive failures surface as
// TransmissionError, never as corrupted data.
class LoopbackChannel {
 public:
  LoopbackChannel(std::uint64_t seed, double flip_prob)
      : seed_(seed), flip_prob_(flip_prob) {}

  // Frames, (possibly) corrupts, unframes with CRC verification.
  Bytes transmit(std::span<const std::uint8_t> packet);

 private:
  std::uint64_t seed_;
  double flip_prob_;
  std::uint64_t counter_ = 0;
};

}  // namespace gosvae
