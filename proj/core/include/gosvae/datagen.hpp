#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gosvae/common.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae {

// One synthetic image with per-pixel ground-truth class labels. Content is a
// pure function of (seed, H, W, m) so the corpus never needs to be stored.
struct LabeledScene {
  Tensor image;  // [H,W,3] in [0,1]
  LabelMap labels;
  std::uint64_t seed = 0;
};

struct DatasetSpec {
  int n_train = 200;
  int n_val = 50;
  int H = 64;
  int W = 64;
  int m = 5;  // class count incl. background (class 0)
  std::uint64_t master_seed = 7;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<LabeledScene> train;
  std::vector<LabeledScene> val;
};

inline constexpr int kPaletteSize = 16;
inline constexpr int kMaxCompressionRatio = 32;
inline constexpr double kDefaultNoiseAmplitude = 0.05;

// Base color of each class; classes keep distinct, well separated hues.
std::array<double, 3> class_base_color(int cls);

// Background class 0 everywhere; for m >= 2, 3..8 seeded shapes (rectangles,
// ellipses, triangles) of classes 1..m-1, drawn back to front, the last one a
// small object covering < 1% of the pixels. Per-pixel noise of the given
// amplitude is added to the image only; labels delineate shapes exactly.
LabeledScene generate_scene(std::uint64_t seed, int H, int W, int m,
                            double noise_amplitude = kDefaultNoiseAmplitude);

// Scene i of each split uses seed mix(master_seed, split_tag, i); the train
// and val streams are disjoint.
Dataset make_dataset(const DatasetSpec& spec);

std::uint64_t scene_image_digest(const LabeledScene& s);
std::uint64_t scene_label_digest(const LabeledScene& s);

// Diagnostics: the shapes a scene was drawn from, in draw order, with the
// pixel count each one still owns after occlusion. The last entry is the
// scene's small object.
struct SceneShapeInfo {
  int cls = 0;
  std::int64_t visible_pixels = 0;
};
std::vector<SceneShapeInfo> scene_shapes(std::uint64_t seed, int H, int W, int m);

// Raw scene container, for inspection and the encode/decode CLI:
//   magic "GOSD" | u8 version (=1) | u16 H | u16 W | u8 m | u64 seed |
//   H*W*3 bytes row-major RGB (round(v*255)) | H*W label bytes
Bytes serialize_scene(const LabeledScene& s, int m);
LabeledScene parse_scene(std::span<const std::uint8_t> bytes, int* m_out = nullptr);
void save_scene(const std::string& path, const LabeledScene& s, int m);
LabeledScene load_scene(const std::string& path, int* m_out = nullptr);

}  // namespace gosvae
