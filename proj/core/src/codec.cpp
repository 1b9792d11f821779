#include "gosvae/codec.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <queue>

#include "gosvae/rng.hpp"

namespace gosvae {

namespace {

constexpr char kMagic[4] = {'G', 'O', 'S', 'M'};
constexpr std::uint8_t kVersion = 1;

int fixed_width(std::uint32_t K) {
  return K <= 1 ? 0 : std::bit_width(K - 1);
}

// MSB-first bit packer.
class BitWriter {
 public:
  void put(std::uint32_t bits, int n) {
    for (int i = n - 1; i >= 0; --i) {
      cur_ = static_cast<std::uint8_t>((cur_ << 1) | ((bits >> i) & 1u));
      if (++fill_ == 8) {
        out_.push_back(cur_);
        cur_ = 0;
        fill_ = 0;
      }
    }
  }

  Bytes finish() {
    if (fill_ > 0) {
      out_.push_back(static_cast<std::uint8_t>(cur_ << (8 - fill_)));
      cur_ = 0;
      fill_ = 0;
    }
    return std::move(out_);
  }

 private:
  Bytes out_;
  std::uint8_t cur_ = 0;
  int fill_ = 0;
};

// MSB-first bit reader over the body span.
class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}

  bool next(int* bit) {
    if (pos_ >= data_.size() * 8) return false;
    const std::size_t byte = pos_ / 8;
    const int off = 7 - static_cast<int>(pos_ % 8);
    *bit = (data_[byte] >> off) & 1;
    ++pos_;
    return true;
  }

  bool read(int n, std::uint32_t* out) {
    std::uint32_t v = 0;
    for (int i = 0; i < n; ++i) {
      int b;
      if (!next(&b)) return false;
      v = (v << 1) | static_cast<std::uint32_t>(b);
    }
    *out = v;
    return true;
  }

  std::size_t consumed_bits() const { return pos_; }

  bool padding_is_zero() const {
    for (std::size_t p = pos_; p < data_.size() * 8; ++p) {
      const std::size_t byte = p / 8;
      const int off = 7 - static_cast<int>(p % 8);
      if ((data_[byte] >> off) & 1) return false;
    }
    return true;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct HuffNode {
  std::int64_t count;
  std::uint32_t id;  // leaves: symbol; internals: K + creation order (tie-break)
  int left = -1, right = -1;
  std::uint32_t symbol = 0;
  bool leaf = false;
};

}  // namespace

std::vector<std::uint8_t> huffman_code_lengths(const std::vector<std::int64_t>& hist,
                                               int max_len) {
  const std::size_t K = hist.size();
  std::vector<std::uint8_t> lengths(K, 0);
  std::vector<std::uint32_t> present;
  for (std::size_t s = 0; s < K; ++s)
    if (hist[s] > 0) present.push_back(static_cast<std::uint32_t>(s));
  if (present.empty()) return lengths;
  if (present.size() == 1) {
    lengths[present[0]] = 1;
    return lengths;
  }

  std::vector<HuffNode> nodes;
  nodes.reserve(2 * present.size());
  auto cmp = [&nodes](int a, int b) {
    if (nodes[a].count != nodes[b].count) return nodes[a].count > nodes[b].count;
    return nodes[a].id > nodes[b].id;
  };
  std::priority_queue<int, std::vector<int>, decltype(cmp)> pq(cmp);
  for (std::uint32_t s : present) {
    HuffNode n;
    n.count = hist[s];
    n.id = s;
    n.leaf = true;
    n.symbol = s;
    nodes.push_back(n);
    pq.push(static_cast<int>(nodes.size()) - 1);
  }
  std::uint32_t next_id = static_cast<std::uint32_t>(K);
  while (pq.size() > 1) {
    const int a = pq.top();
    pq.pop();
    const int b = pq.top();
    pq.pop();
    HuffNode n;
    n.count = nodes[a].count + nodes[b].count;
    n.id = next_id++;
    n.left = a;
    n.right = b;
    nodes.push_back(n);
    pq.push(static_cast<int>(nodes.size()) - 1);
  }

  // Depth-first walk assigns depths = code lengths.
  std::vector<std::pair<int, int>> stack{{pq.top(), 0}};
  while (!stack.empty()) {
    auto [i, depth] = stack.back();
    stack.pop_back();
    const HuffNode& n = nodes[static_cast<std::size_t>(i)];
    if (n.leaf) {
      lengths[n.symbol] = static_cast<std::uint8_t>(depth);
    } else {
      stack.push_back({n.left, depth + 1});
      stack.push_back({n.right, depth + 1});
    }
  }

  // Overflow fold: clamp to max_len, then lengthen the deepest still-foldable
  // codes until the Kraft sum fits. Deterministic scan order.
  bool overflow = false;
  for (std::uint32_t s : present)
    if (lengths[s] > max_len) {
      lengths[s] = static_cast<std::uint8_t>(max_len);
      overflow = true;
    }
  if (overflow) {
    auto kraft = [&]() {
      std::uint64_t k = 0;
      for (std::uint32_t s : present) k += 1ull << (max_len - lengths[s]);
      return k;
    };
    std::uint64_t limit = 1ull << max_len;
    std::uint64_t k = kraft();
    while (k > limit) {
      // Deepest code shorter than max_len, lowest symbol on ties.
      int best_len = -1;
      std::uint32_t best_sym = 0;
      for (std::uint32_t s : present) {
        if (lengths[s] < max_len && lengths[s] > best_len) {
          best_len = lengths[s];
          best_sym = s;
        }
      }
      if (best_len < 0) throw CodecError("huffman: cannot satisfy length limit");
      k -= 1ull << (max_len - lengths[best_sym] - 1);
      ++lengths[best_sym];
    }
  }
  return lengths;
}

std::vector<std::uint32_t> canonical_codes(const std::vector<std::uint8_t>& lengths) {
  int max_len = 0;
  for (std::uint8_t l : lengths) max_len = std::max(max_len, static_cast<int>(l));
  std::vector<std::uint32_t> bl_count(static_cast<std::size_t>(max_len) + 1, 0);
  for (std::uint8_t l : lengths)
    if (l > 0) ++bl_count[l];
  std::vector<std::uint32_t> next_code(static_cast<std::size_t>(max_len) + 1, 0);
  std::uint32_t code = 0;
  for (int l = 1; l <= max_len; ++l) {
    code = (code + bl_count[static_cast<std::size_t>(l) - 1]) << 1;
    next_code[static_cast<std::size_t>(l)] = code;
  }
  std::vector<std::uint32_t> codes(lengths.size(), 0);
  for (int l = 1; l <= max_len; ++l)
    for (std::size_t s = 0; s < lengths.size(); ++s)
      if (lengths[s] == l) codes[s] = next_code[static_cast<std::size_t>(l)]++;
  return codes;
}

Bytes encode_packet(const IndexMap& idx, const PacketMeta& meta, int coder_id) {
  if (coder_id != kCoderFixed && coder_id != kCoderHuffman)
    throw CodecError("encode: unsupported coder id " + std::to_string(coder_id));
  if (meta.r == 0 || meta.H % meta.r != 0 || meta.W % meta.r != 0)
    throw CodecError("encode: r does not divide the image dims");
  if (idx.h != meta.H / meta.r || idx.w != meta.W / meta.r)
    throw CodecError("encode: index map is " + std::to_string(idx.h) + "x" +
                     std::to_string(idx.w) + ", meta implies " +
                     std::to_string(meta.H / meta.r) + "x" + std::to_string(meta.W / meta.r));
  if (idx.K != meta.K) throw CodecError("encode: index map K != meta K");
  for (std::uint32_t v : idx.idx)
    if (v >= meta.K) throw CodecError("encode: index " + std::to_string(v) + " out of range");

  const std::uint32_t symbol_count = static_cast<std::uint32_t>(idx.idx.size());
  Bytes body;
  std::vector<std::uint8_t> table;

  if (coder_id == kCoderFixed) {
    const int w = fixed_width(meta.K);
    BitWriter bw;
    for (std::uint32_t v : idx.idx) bw.put(v, w);
    body = bw.finish();
  } else {
    std::vector<std::int64_t> hist(meta.K, 0);
    for (std::uint32_t v : idx.idx) ++hist[v];
    table = huffman_code_lengths(hist);
    int distinct = 0;
    for (std::uint8_t l : table) distinct += l > 0;
    if (distinct > 1) {
      auto codes = canonical_codes(table);
      BitWriter bw;
      for (std::uint32_t v : idx.idx) bw.put(codes[v], table[v]);
      body = bw.finish();
    }
    // A lone distinct symbol is reconstructed from the table alone.
  }

  Bytes out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u8(out, kVersion);
  put_u16(out, meta.H);
  put_u16(out, meta.W);
  put_u8(out, meta.r);
  put_u16(out, meta.K);
  put_u8(out, static_cast<std::uint8_t>(coder_id));
  put_u32(out, symbol_count);
  out.insert(out.end(), table.begin(), table.end());
  put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

std::pair<IndexMap, PacketMeta> decode_packet(std::span<const std::uint8_t> packet) {
  ByteReader r(packet, "packet");
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic");
  if (r.u8() != kVersion) r.fail("unsupported version");
  PacketMeta meta;
  meta.H = r.u16();
  meta.W = r.u16();
  meta.r = r.u8();
  meta.K = r.u16();
  const std::uint8_t coder = r.u8();
  if (coder != kCoderFixed && coder != kCoderHuffman) r.fail("unsupported coder");
  const std::uint32_t symbol_count = r.u32();
  if (meta.r == 0 || meta.H % meta.r != 0 || meta.W % meta.r != 0)
    r.fail("r does not divide the image dims");
  const std::uint32_t h = meta.H / meta.r;
  const std::uint32_t w = meta.W / meta.r;
  if (symbol_count != h * w) r.fail("symbol_count does not match dims");
  if (meta.K == 0) r.fail("K must be >= 1");

  std::vector<std::uint8_t> table;
  if (coder == kCoderHuffman) {
    auto t = r.raw(meta.K);
    table.assign(t.begin(), t.end());
    std::uint64_t kraft = 0;
    for (std::uint8_t l : table) {
      if (l > kMaxCodeLength) r.fail("code length exceeds 16");
      if (l > 0) kraft += 1ull << (kMaxCodeLength - l);
    }
    if (kraft > (1ull << kMaxCodeLength)) r.fail("Kraft inequality violated");
  }

  const std::uint32_t body_len = r.u32();
  if (body_len != r.remaining())
    r.fail(body_len > r.remaining() ? "truncated body" : "trailing garbage after body");
  auto body = r.raw(body_len);

  IndexMap idx;
  idx.h = static_cast<int>(h);
  idx.w = static_cast<int>(w);
  idx.K = meta.K;
  idx.idx.resize(symbol_count);

  if (coder == kCoderFixed) {
    const int width = fixed_width(meta.K);
    const std::uint64_t need_bits = static_cast<std::uint64_t>(symbol_count) * width;
    if (body.size() != (need_bits + 7) / 8) r.fail("body length does not match symbol count");
    BitReader br(body);
    for (std::uint32_t i = 0; i < symbol_count; ++i) {
      std::uint32_t v = 0;
      if (!br.read(width, &v)) r.fail("truncated body");
      if (v >= meta.K) r.fail("decoded index out of range");
      idx.idx[i] = v;
    }
    if (!br.padding_is_zero()) r.fail("nonzero padding bits");
    return {idx, meta};
  }

  int distinct = 0;
  std::uint32_t lone = 0;
  for (std::size_t s = 0; s < table.size(); ++s)
    if (table[s] > 0) {
      ++distinct;
      lone = static_cast<std::uint32_t>(s);
    }
  if (distinct == 0) {
    if (symbol_count != 0) r.fail("empty code table for nonempty map");
    if (body_len != 0) r.fail("trailing garbage after body");
    return {idx, meta};
  }
  if (distinct == 1) {
    if (body_len != 0) r.fail("degenerate code must have an empty body");
    std::fill(idx.idx.begin(), idx.idx.end(), lone);
    return {idx, meta};
  }

  // Canonical decode tables per length.
  auto codes = canonical_codes(table);
  std::array<std::uint32_t, kMaxCodeLength + 1> first_code{}, count{}, base{};
  std::vector<std::uint32_t> sorted;  // symbols by (length, symbol)
  for (int l = 1; l <= kMaxCodeLength; ++l)
    for (std::size_t s = 0; s < table.size(); ++s)
      if (table[s] == l) {
        if (count[static_cast<std::size_t>(l)] == 0) {
          first_code[static_cast<std::size_t>(l)] = codes[s];
          base[static_cast<std::size_t>(l)] = static_cast<std::uint32_t>(sorted.size());
        }
        ++count[static_cast<std::size_t>(l)];
        sorted.push_back(static_cast<std::uint32_t>(s));
      }

  BitReader br(body);
  for (std::uint32_t i = 0; i < symbol_count; ++i) {
    std::uint32_t code = 0;
    int len = 0;
    for (;;) {
      int bit;
      if (!br.next(&bit)) r.fail("truncated body");
      code = (code << 1) | static_cast<std::uint32_t>(bit);
      ++len;
      if (len > kMaxCodeLength) r.fail("invalid codeword");
      const auto l = static_cast<std::size_t>(len);
      if (count[l] != 0 && code >= first_code[l] && code - first_code[l] < count[l]) {
        idx.idx[i] = sorted[base[l] + (code - first_code[l])];
        break;
      }
    }
  }
  if ((br.consumed_bits() + 7) / 8 != body.size()) r.fail("trailing garbage after body");
  if (!br.padding_is_zero()) r.fail("nonzero padding bits");
  return {idx, meta};
}

PayloadReport payload(std::span<const std::uint8_t> packet) {
  ByteReader r(packet, "packet");
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic");
  if (r.u8() != kVersion) r.fail("unsupported version");
  r.u16();
  r.u16();
  r.u8();
  const std::uint16_t K = r.u16();
  const std::uint8_t coder = r.u8();
  r.u32();
  if (coder == kCoderHuffman) r.raw(K);
  const std::uint32_t body_len = r.u32();
  PayloadReport rep;
  rep.header_bytes = r.pos();
  rep.body_bytes = body_len;
  rep.total_bytes = packet.size();
  if (rep.header_bytes + rep.body_bytes != rep.total_bytes)
    r.fail("inconsistent body length");
  rep.kib = static_cast<double>(rep.total_bytes) / 1024.0;
  return rep;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xffffffffu;
  for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

Bytes frame_packet(std::span<const std::uint8_t> packet) {
  Bytes out;
  put_u32(out, static_cast<std::uint32_t>(packet.size()));
  out.insert(out.end(), packet.begin(), packet.end());
  put_u32(out, crc32(packet));
  return out;
}

std::vector<Bytes> parse_frames(std::span<const std::uint8_t> stream) {
  std::vector<Bytes> out;
  ByteReader r(stream, "frame");
  while (r.remaining() > 0) {
    const std::uint32_t len = r.u32();
    if (r.remaining() < static_cast<std::size_t>(len) + 4) r.fail("truncated frame");
    auto payload_bytes = r.raw(len);
    const std::uint32_t want = r.u32();
    if (crc32(payload_bytes) != want)
      throw TransmissionError("frame CRC mismatch: packet corrupted in transit");
    out.emplace_back(payload_bytes.begin(), payload_bytes.end());
  }
  return out;
}

Bytes LoopbackChannel::transmit(std::span<const std::uint8_t> packet) {
  Bytes framed = frame_packet(packet);
  const std::uint64_t call = counter_++;
  if (flip_prob_ > 0.0) {
    // Flip bits of the payload+CRC region; the length prefix stays intact so
    // every corruption manifests as a CRC mismatch rather than a framing loss.
    for (std::size_t byte = 4; byte < framed.size(); ++byte) {
      for (int bit = 0; bit < 8; ++bit) {
        const double u =
            unit_double(mix64(seed_, call, static_cast<std::uint64_t>(byte) * 8 + bit));
        if (u < flip_prob_) framed[byte] ^= static_cast<std::uint8_t>(1u << bit);
      }
    }
  }
  auto frames = parse_frames(framed);
  if (frames.size() != 1) throw TransmissionError("loopback: expected exactly one frame");
  return frames[0];
}

}  // namespace gosvae
