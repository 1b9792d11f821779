#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gosvae/checkpoint.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae {

enum class Variant { Shallow, Residual };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct EncoderDecoderConfig {
  int r = 4;  // compression ratio, power of two in {2,...,32}
  int D = 8;  // codeword length = encoder output channels
  std::vector<int> widths;  // channel count per stride-2 stage
  Variant variant = Variant::Shallow;

  int stages() const;  // log2(r); validates r
  static EncoderDecoderConfig defaults(int r, int D, Variant variant);
};

namespace layers {

struct Layer {
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual void collect(std::vector<Parameter*>& out) {}
};

}  // namespace layers

// An ordered stack of layers with named parameters. Checkpoint names are
// "<prefix><2-digit layer index>.<w|b>", which keeps the container's
// lexicographic write order equal to layer order.
class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Tensor forward(const Tensor& x) const;

  std::vector<Parameter*> params() const;
  std::int64_t param_count() const;
  void freeze();
  bool frozen() const { return frozen_; }

  TensorMap state() const;
  void load_state(const TensorMap& tensors);
  std::uint64_t digest() const { return checkpoint_digest(state()); }

  void add(std::unique_ptr<layers::Layer> l) { layers_.push_back(std::move(l)); }

 private:
  std::vector<std::unique_ptr<layers::Layer>> layers_;
  bool frozen_ = false;
};

// Image[H,W,3] -> FeatureMap[H/r, W/r, D]. Shallow: log2(r) blocks of
// (4x4 stride-2 conv, relu) then a 3x3 conv to D channels. Residual adds two
// residual blocks at the bottleneck.
Network build_encoder(const EncoderDecoderConfig& cfg, std::uint64_t seed,
                      const std::string& name_prefix = "enc.");

// Mirror of the encoder with transposed convolutions and a sigmoid head, so
// outputs always land in [0,1].
Network build_decoder(const EncoderDecoderConfig& cfg, std::uint64_t seed,
                      const std::string& name_prefix = "dec.");

// Fully convolutional segmentation head: 3x 3x3 convs at width 32, any input
// resolution, Image[H,W,3] -> logits[H,W,m]. Built unfrozen; the task module
// freezes it after pre-training.
Network build_segmenter(int m, std::uint64_t seed, const std::string& name_prefix = "seg.");

inline constexpr std::uint64_t kExtractorBuildSeed = 0x0feedbeef01dcafe;

// Frozen random 3-stage conv stack tapping feature maps at H/2, H/4, H/8.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = kExtractorBuildSeed);

  std::array<Tensor, 3> taps(const Tensor& image) const;
  std::uint64_t digest() const { return net_.digest(); }
  const Network& net() const { return net_; }

 private:
  Network net_;  // owns the conv parameters; taps() walks conv+relu pairs
};

}  // namespace gosvae
