#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "gosvae/checkpoint.hpp"
#include "gosvae/codec.hpp"
#include "gosvae/rng.hpp"
#include "test_util.hpp"

using namespace gosvae;

namespace {

IndexMap random_map(int h, int w, std::uint32_t K, std::uint64_t seed, bool skewed = false) {
  Rng rng(seed);
  IndexMap idx;
  idx.h = h;
  idx.w = w;
  idx.K = K;
  idx.idx.resize(static_cast<std::size_t>(h) * w);
  for (auto& v : idx.idx) {
    if (skewed) {
      // Geometric-ish skew so entropy coding has something to win.
      std::uint32_t x = 0;
      while (x + 1 < K && rng.uniform() < 0.55) ++x;
      v = x;
    } else {
      v = static_cast<std::uint32_t>(rng.next() % K);
    }
  }
  return idx;
}

PacketMeta meta_for(const IndexMap& idx, int r = 1) {
  PacketMeta m;
  m.H = static_cast<std::uint16_t>(idx.h * r);
  m.W = static_cast<std::uint16_t>(idx.w * r);
  m.r = static_cast<std::uint8_t>(r);
  m.K = static_cast<std::uint16_t>(idx.K);
  return m;
}

}  // namespace

TEST_CASE("fixed coder emits exactly ceil(log2 K) bits per symbol") {
  // 64x128 map at K=512: 8192 symbols * 9 bits = 9216 bytes of body.
  IndexMap idx = random_map(64, 128, 512, 1);
  Bytes packet = encode_packet(idx, meta_for(idx, 4), kCoderFixed);
  PayloadReport rep = payload(packet);
  CHECK(rep.body_bytes == 9216);
  CHECK(rep.total_bytes == rep.header_bytes + 9216);
  auto [decoded, meta] = decode_packet(packet);
  CHECK(decoded == idx);
}

TEST_CASE("single-symbol maps ship a zero-byte body under the huffman coder") {
  IndexMap idx;
  idx.h = 4;
  idx.w = 4;
  idx.K = 32;
  idx.idx.assign(16, 7);
  Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);
  CHECK(payload(packet).body_bytes == 0);
  auto [decoded, meta] = decode_packet(packet);
  CHECK(decoded == idx);
}

TEST_CASE("hand-built histogram yields the 13-bit huffman code") {
  // Counts {a:5, b:1, c:1, d:1} over 8 positions: total bits
  // 5*1 + 1*len(b) + 1*len(c) + 1*len(d) with lengths a permutation of
  // (1,2,3,3) = 13 bits -> 2 body bytes.
  IndexMap idx;
  idx.h = 2;
  idx.w = 4;
  idx.K = 4;
  idx.idx = {0, 0, 0, 0, 0, 1, 2, 3};
  std::vector<std::int64_t> hist = {5, 1, 1, 1};
  auto lengths = huffman_code_lengths(hist);
  std::multiset<int> got(lengths.begin(), lengths.end());
  CHECK(got == std::multiset<int>{1, 2, 3, 3});
  std::int64_t bits = 0;
  for (std::size_t s = 0; s < hist.size(); ++s) bits += hist[s] * lengths[s];
  CHECK(bits == 13);

  Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);
  CHECK(payload(packet).body_bytes == 2);
  auto [decoded, meta] = decode_packet(packet);
  CHECK(decoded == idx);
}

TEST_CASE("huffman body length equals the sum of count times code length") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    IndexMap idx = random_map(8, 8, 16, 100 + seed, true);
    std::vector<std::int64_t> hist(16, 0);
    for (auto v : idx.idx) ++hist[v];
    auto lengths = huffman_code_lengths(hist);
    std::int64_t bits = 0;
    for (std::size_t s = 0; s < hist.size(); ++s) bits += hist[s] * lengths[s];
    Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);
    int distinct = 0;
    for (auto c : hist) distinct += c > 0;
    const std::uint64_t expect = distinct == 1 ? 0 : (static_cast<std::uint64_t>(bits) + 7) / 8;
    CHECK(payload(packet).body_bytes == expect);
  }
}

TEST_CASE("roundtrip is lossless across coders, sizes and codebook sizes") {
  int cases = 0;
  for (std::uint32_t K : {4u, 64u, 512u, 16384u}) {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
      IndexMap idx = random_map(8, 16, K, 1000 + seed, seed % 2 == 0);
      for (int coder : {kCoderFixed, kCoderHuffman}) {
        Bytes packet = encode_packet(idx, meta_for(idx, 2), coder);
        auto [decoded, meta] = decode_packet(packet);
        CHECK(decoded == idx);
        CHECK(meta.K == idx.K);
        ++cases;
      }
    }
  }
  CHECK(cases == 4 * 12 * 2);
}

TEST_CASE("identical histograms produce byte-identical packets") {
  IndexMap a = random_map(16, 16, 64, 7, true);
  IndexMap b = a;
  Bytes pa = encode_packet(a, meta_for(a), kCoderHuffman);
  Bytes pb = encode_packet(b, meta_for(b), kCoderHuffman);
  CHECK(pa == pb);
}

TEST_CASE("deep histograms fold to the 16-bit length limit and stay lossless") {
  // Fibonacci-like counts force unlimited Huffman depths past 16.
  const int n = 24;
  std::vector<std::int64_t> hist(n);
  std::int64_t a = 1, b = 1;
  for (int i = 0; i < n; ++i) {
    hist[static_cast<std::size_t>(i)] = a;
    const std::int64_t next = a + b;
    a = b;
    b = next;
  }
  auto lengths = huffman_code_lengths(hist);
  std::uint64_t kraft = 0;
  for (int i = 0; i < n; ++i) {
    CHECK(lengths[static_cast<std::size_t>(i)] >= 1);
    CHECK(lengths[static_cast<std::size_t>(i)] <= 16);
    kraft += 1ull << (16 - lengths[static_cast<std::size_t>(i)]);
  }
  CHECK(kraft <= (1ull << 16));

  // Encode an index map realizing a decimated version of that histogram.
  IndexMap idx;
  idx.h = 16;
  idx.w = 16;
  idx.K = n;
  idx.idx.clear();
  Rng rng(3);
  for (int i = 0; i < 256; ++i)
    idx.idx.push_back(static_cast<std::uint32_t>(rng.next() % n));
  Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);
  auto [decoded, meta] = decode_packet(packet);
  CHECK(decoded == idx);
}

TEST_CASE("empty maps carry an empty body") {
  IndexMap idx;
  idx.h = 0;
  idx.w = 0;
  idx.K = 16;
  PacketMeta meta;
  meta.H = 0;
  meta.W = 0;
  meta.r = 2;
  meta.K = 16;
  for (int coder : {kCoderFixed, kCoderHuffman}) {
    Bytes packet = encode_packet(idx, meta, coder);
    CHECK(payload(packet).body_bytes == 0);
    auto [decoded, m2] = decode_packet(packet);
    CHECK(decoded.idx.empty());
  }
}

TEST_CASE("decode fails closed on malformed packets") {
  IndexMap idx = random_map(8, 8, 64, 11);
  Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);

  Bytes bad_magic = packet;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_packet(bad_magic), CodecError);

  Bytes bad_version = packet;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_packet(bad_version), CodecError);

  Bytes bad_coder = packet;
  bad_coder[12] = 7;
  CHECK_THROWS_AS(decode_packet(bad_coder), CodecError);

  Bytes truncated(packet.begin(), packet.end() - 1);
  CHECK_THROWS_AS(decode_packet(truncated), CodecError);

  Bytes trailing = packet;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_packet(trailing), CodecError);

  // A Kraft-violating table: every symbol claims a 1-bit code.
  Bytes kraft = packet;
  for (std::size_t i = 0; i < 64; ++i) kraft[17 + i] = 1;
  CHECK_THROWS_AS(decode_packet(kraft), CodecError);
}

TEST_CASE("truncation never yields a wrong index map") {
  IndexMap idx = random_map(8, 8, 64, 13, true);
  for (int coder : {kCoderFixed, kCoderHuffman}) {
    Bytes packet = encode_packet(idx, meta_for(idx), coder);
    for (std::size_t cut = 1; cut <= 4; ++cut) {
      Bytes t(packet.begin(), packet.end() - static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(decode_packet(t), CodecError);
    }
  }
}

TEST_CASE("huffman payload never exceeds fixed payload by more than the table") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    IndexMap idx = random_map(16, 16, 64, 3000 + seed, seed % 3 != 0);
    Bytes fixed = encode_packet(idx, meta_for(idx), kCoderFixed);
    Bytes huff = encode_packet(idx, meta_for(idx), kCoderHuffman);
    CHECK(payload(huff).total_bytes <= payload(fixed).total_bytes + idx.K);
  }
}

TEST_CASE("skewed histograms win strictly over the fixed coder") {
  // Entropy well below log2(K) - 1: body must shrink strictly.
  IndexMap idx = random_map(32, 32, 64, 17, true);
  Bytes fixed = encode_packet(idx, meta_for(idx), kCoderFixed);
  Bytes huff = encode_packet(idx, meta_for(idx), kCoderHuffman);
  CHECK(payload(huff).body_bytes < payload(fixed).body_bytes);
}

TEST_CASE("payload reports split header and body exactly") {
  IndexMap idx = random_map(4, 4, 16, 19);
  Bytes fixed = encode_packet(idx, meta_for(idx), kCoderFixed);
  PayloadReport rf = payload(fixed);
  // magic4 + ver1 + H2 + W2 + r1 + K2 + coder1 + count4 + body_len4
  CHECK(rf.header_bytes == 21);
  CHECK(rf.total_bytes == fixed.size());
  CHECK(rf.kib == doctest::Approx(static_cast<double>(fixed.size()) / 1024.0));

  Bytes huff = encode_packet(idx, meta_for(idx), kCoderHuffman);
  CHECK(payload(huff).header_bytes == 21 + 16);  // + K-entry length table
}

TEST_CASE("crc32 matches the reference value for 123456789") {
  const char* s = "123456789";
  CHECK(crc32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s), 9)) ==
        0xCBF43926u);
}

TEST_CASE("loopback at p=0 delivers the exact packet") {
  IndexMap idx = random_map(8, 8, 32, 23);
  Bytes packet = encode_packet(idx, meta_for(idx), kCoderHuffman);
  LoopbackChannel ch(5, 0.0);
  CHECK(ch.transmit(packet) == packet);
}

TEST_CASE("bit flips are detected by the CRC in nearly every corrupted trial") {
  IndexMap idx = random_map(32, 32, 256, 29);
  Bytes packet = encode_packet(idx, meta_for(idx), kCoderFixed);
  REQUIRE(packet.size() >= 1024);

  int corrupted = 0, detected = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    LoopbackChannel ch(static_cast<std::uint64_t>(trial), 0.01);
    try {
      Bytes rx = ch.transmit(packet);
      if (rx != packet) ++corrupted;  // undetected corruption: must stay rare
    } catch (const TransmissionError&) {
      ++corrupted;
      ++detected;
    }
  }
  REQUIRE(corrupted > 900);  // p=0.01 over >8 kbit practically always flips something
  CHECK(detected * 100 >= corrupted * 99);
}

TEST_CASE("frames parse back-to-back packets") {
  IndexMap a = random_map(4, 4, 8, 31);
  IndexMap b = random_map(4, 8, 8, 32);
  Bytes pa = encode_packet(a, meta_for(a), kCoderFixed);
  Bytes pb = encode_packet(b, meta_for(b), kCoderHuffman);
  Bytes stream = frame_packet(pa);
  Bytes fb = frame_packet(pb);
  stream.insert(stream.end(), fb.begin(), fb.end());

  auto frames = parse_frames(stream);
  REQUIRE(frames.size() == 2);
  CHECK(frames[0] == pa);
  CHECK(frames[1] == pb);

  Bytes cut(stream.begin(), stream.end() - 2);
  CHECK_THROWS_AS(parse_frames(cut), CodecError);
  stream[6] ^= 0x40;
  CHECK_THROWS_AS(parse_frames(stream), TransmissionError);
}

TEST_CASE("golden packet fixtures decode and re-encode bit-exactly") {
  for (const char* name : {"fixed_k7.gsp", "huffman_k7.gsp"}) {
    Bytes packet = read_file(std::string(GOSVAE_FIXTURE_DIR) + "/" + name);
    auto [idx, meta] = decode_packet(packet);
    CHECK(meta.K == 7);
    const int coder = packet[12];
    Bytes re = encode_packet(idx, meta, coder);
    CHECK(re == packet);
  }
}
