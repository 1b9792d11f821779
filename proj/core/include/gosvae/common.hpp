#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gosvae {

// Error taxonomy. The CLI maps these onto exit codes: ConfigError -> 2,
// DivergenceError -> 3, CodecError / IoError / TransmissionError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct CodecError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct ConvergenceError : Error {
  using Error::Error;
};
struct TransmissionError : Error {
  using Error::Error;
};

// Numeric mode. Tensors always store doubles; in Single mode the convolution
// kernels run float32 arithmetic and every op output is rounded to the nearest
// float32-representable value, so a trajectory stays on the float32 grid.
// Double mode is the reference mode used by the gradient-check tests.
enum class Precision { Single, Double };

Precision precision();
void set_precision(Precision p);

inline double squash_single(double v) {
  return static_cast<double>(static_cast<float>(v));
}

// Worker threads used by the heavy kernels. 0 = hardware concurrency.
int max_threads();
void set_threads(int n);

// Runs fn over [0, n) in at most max_threads() contiguous chunks. Each index
// is processed by exactly one thread, so results never depend on the thread
// count as long as chunks write disjoint outputs.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

// FNV-1a, used for content digests of scenes, checkpoints and packets.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string hex64(std::uint64_t v);

using Bytes = std::vector<std::uint8_t>;

// Little-endian byte stream helpers shared by the wire and file formats.
void put_u8(Bytes& b, std::uint8_t v);
void put_u16(Bytes& b, std::uint16_t v);
void put_u32(Bytes& b, std::uint32_t v);
void put_u64(Bytes& b, std::uint64_t v);
void put_f64(Bytes& b, double v);

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str(std::size_t n);
  std::span<const std::uint8_t> raw(std::size_t n);

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

// Per-pixel class labels for an H x W image.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }

  static LabelMap zeros(int h, int w) {
    LabelMap m;
    m.h = h;
    m.w = w;
    m.v.assign(static_cast<std::size_t>(h) * w, 0);
    return m;
  }
};

std::string format_g17(double v);

}  // namespace gosvae
