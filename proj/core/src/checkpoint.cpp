#include "gosvae/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <limits>

namespace gosvae {

namespace {
constexpr char kMagic[4] = {'G', 'O', 'S', 'W'};
constexpr std::uint8_t kVersion = 1;
}  // namespace

Bytes serialize_checkpoint(const TensorMap& tensors) {
  Bytes out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u8(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw IoError("checkpoint: tensor name too long: " + name);
    if (static_cast<std::int64_t>(t.values.size()) != shape_numel(t.shape))
      throw IoError("checkpoint: value count does not match shape for " + name);
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, static_cast<std::uint8_t>(t.shape.size()));
    for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.values) put_f64(out, v);
  }
  return out;
}

TensorMap parse_checkpoint(std::span<const std::uint8_t> bytes) {
  try {
    ByteReader r(bytes, "checkpoint");
    auto magic = r.raw(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic");
    if (r.u8() != kVersion) r.fail("unsupported version");
    const std::uint32_t count = r.u32();
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint16_t name_len = r.u16();
      std::string name = r.str(name_len);
      const std::uint8_t rank = r.u8();
      NamedTensor t;
      t.shape.resize(rank);
      std::int64_t numel = 1;
      for (int d = 0; d < rank; ++d) {
        t.shape[d] = static_cast<int>(r.u32());
        numel *= t.shape[d];
      }
      t.values.resize(static_cast<std::size_t>(numel));
      for (auto& v : t.values) v = r.f64();
      out.emplace(std::move(name), std::move(t));
    }
    if (r.remaining() != 0) r.fail("trailing bytes after last tensor");
    return out;
  } catch (const CodecError& e) {
    throw IoError(e.what());
  }
}

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  write_file(path, serialize_checkpoint(tensors));
}

TensorMap load_checkpoint(const std::string& path) {
  Bytes b = read_file(path);
  return parse_checkpoint(b);
}

std::uint64_t checkpoint_digest(const TensorMap& tensors) {
  Bytes b = serialize_checkpoint(tensors);
  return fnv1a64(b.data(), b.size());
}

Bytes read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  Bytes out(static_cast<std::size_t>(size < 0 ? 0 : size));
  const std::size_t got = size > 0 ? std::fread(out.data(), 1, out.size(), f) : 0;
  std::fclose(f);
  if (got != out.size()) throw IoError("short read from " + path);
  return out;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  const std::size_t put = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
  const int rc = std::fclose(f);
  if (put != bytes.size() || rc != 0) throw IoError("short write to " + path);
}

}  // namespace gosvae
