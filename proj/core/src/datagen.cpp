#include "gosvae/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gosvae/checkpoint.hpp"
#include "gosvae/rng.hpp"

namespace gosvae {

namespace {

constexpr char kMagic[4] = {'G', 'O', 'S', 'D'};
constexpr std::uint8_t kVersion = 1;

constexpr std::uint64_t kTrainTag = 1;
constexpr std::uint64_t kValTag = 2;
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;  // "nois"
constexpr std::uint64_t kShapeTag = 0x73687065;  // "shpe"

// Base colors, kept inside [0.08, 0.92] so +-0.05 noise rarely clips.
// Class 0 (background) is a dark neutral. Classes 1 and 4 are deliberately
// near neighbors (vermilion vs red, within a few noise widths): fine-grained
// categories whose pixels a downstream model cannot always call with
// certainty, like the real scenes this corpus stands in for.
constexpr std::array<std::array<double, 3>, kPaletteSize> kPalette = {{
    {0.15, 0.15, 0.18},  // background
    {0.85, 0.20, 0.20},  // red
    {0.20, 0.75, 0.25},  // green
    {0.20, 0.35, 0.85},  // blue
    {0.82, 0.23, 0.21},  // vermilion, confusable with red
    {0.80, 0.25, 0.80},  // magenta
    {0.20, 0.80, 0.80},  // cyan
    {0.90, 0.55, 0.15},  // orange
    {0.55, 0.25, 0.75},  // purple
    {0.55, 0.75, 0.30},  // olive
    {0.35, 0.60, 0.90},  // sky
    {0.75, 0.45, 0.45},  // rose
    {0.40, 0.80, 0.60},  // mint
    {0.70, 0.70, 0.90},  // lavender
    {0.60, 0.45, 0.20},  // brown
    {0.85, 0.65, 0.75},  // pink
}};

enum class ShapeKind { Rectangle, Ellipse, Triangle };

struct ShapeSpec {
  ShapeKind kind;
  int cls;
  // Rectangle: [x0,x1) x [y0,y1); ellipse: center/.radii; triangle: 3 vertices.
  double x0, y0, x1, y1;
  double cx, cy, rx, ry;
  double ax, ay, bx, by, tx, ty;
};

bool inside(const ShapeSpec& s, int x, int y) {
  const double px = x + 0.5;
  const double py = y + 0.5;
  switch (s.kind) {
    case ShapeKind::Rectangle:
      return px >= s.x0 && px < s.x1 && py >= s.y0 && py < s.y1;
    case ShapeKind::Ellipse: {
      const double dx = (px - s.cx) / s.rx;
      const double dy = (py - s.cy) / s.ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::Triangle: {
      auto cross = [](double ox, double oy, double ux, double uy, double vx, double vy) {
        return (ux - ox) * (vy - oy) - (uy - oy) * (vx - ox);
      };
      const double d1 = cross(s.ax, s.ay, s.bx, s.by, px, py);
      const double d2 = cross(s.bx, s.by, s.tx, s.ty, px, py);
      const double d3 = cross(s.tx, s.ty, s.ax, s.ay, px, py);
      const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(has_neg && has_pos);
    }
  }
  return false;
}

ShapeSpec random_shape(Rng& rng, int H, int W, int m, bool small) {
  ShapeSpec s{};
  s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  s.cls = rng.uniform_int(1, m - 1);
  const double minext = static_cast<double>(std::min(H, W));
  // Regular shapes span 1/8 .. 1/3 of the smaller image extent; the small
  // object stays under 1% of the pixel count.
  double lo = minext / 8.0, hi = minext / 3.0;
  if (small) {
    // Half-extent bound sized so even a full rectangle stays below 1% of the
    // pixels with margin for boundary pixels.
    const double cap = 0.9 * std::sqrt(0.01 * H * W) / 2.0;
    lo = std::max(1.5, cap * 0.5);
    hi = std::max(lo + 0.25, cap);
  }
  const double cx = rng.uniform(0.1 * W, 0.9 * W);
  const double cy = rng.uniform(0.1 * H, 0.9 * H);
  const double ex = rng.uniform(lo, hi);
  const double ey = rng.uniform(lo, hi);
  switch (s.kind) {
    case ShapeKind::Rectangle:
      s.x0 = cx - ex;
      s.x1 = cx + ex;
      s.y0 = cy - ey;
      s.y1 = cy + ey;
      break;
    case ShapeKind::Ellipse:
      s.cx = cx;
      s.cy = cy;
      s.rx = ex;
      s.ry = ey;
      break;
    case ShapeKind::Triangle: {
      const double a0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      for (int v = 0; v < 3; ++v) {
        const double ang = a0 + v * 2.0943951023931953;  // 2*pi/3
        const double rad = rng.uniform(std::max(1.0, lo * 0.8), hi);
        const double vx = cx + rad * std::cos(ang);
        const double vy = cy + rad * std::sin(ang);
        if (v == 0) {
          s.ax = vx;
          s.ay = vy;
        } else if (v == 1) {
          s.bx = vx;
          s.by = vy;
        } else {
          s.tx = vx;
          s.ty = vy;
        }
      }
      break;
    }
  }
  return s;
}

}  // namespace

std::array<double, 3> class_base_color(int cls) { return kPalette[static_cast<std::size_t>(cls)]; }

namespace {

void validate_scene_args(int H, int W, int m) {
  if (m < 1) throw ValueError("generate_scene: m must be >= 1");
  if (m > kPaletteSize)
    throw ValueError("generate_scene: m exceeds the palette size (" +
                     std::to_string(kPaletteSize) + ")");
  if (H < 16 || W < 16) throw ValueError("generate_scene: H and W must be >= 16");
}

std::vector<ShapeSpec> scene_shape_stream(std::uint64_t seed, int H, int W, int m) {
  std::vector<ShapeSpec> shapes;
  if (m >= 2) {
    Rng rng(mix64(seed, kShapeTag));
    const int n_shapes = rng.uniform_int(3, 8);
    for (int i = 0; i < n_shapes; ++i) {
      const bool small = (i == n_shapes - 1);  // drawn last: survives occlusion
      shapes.push_back(random_shape(rng, H, W, m, small));
    }
  }
  return shapes;
}

}  // namespace

LabeledScene generate_scene(std::uint64_t seed, int H, int W, int m, double noise_amplitude) {
  validate_scene_args(H, W, m);

  LabeledScene scene;
  scene.seed = seed;
  scene.labels = LabelMap::zeros(H, W);

  std::vector<ShapeSpec> shapes = scene_shape_stream(seed, H, W, m);

  // Later shapes occlude earlier ones.
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (const ShapeSpec& s : shapes)
        if (inside(s, x, y)) scene.labels.at(y, x) = static_cast<std::uint8_t>(s.cls);

  std::vector<double> img(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto base = kPalette[scene.labels.at(y, x)];
      for (int c = 0; c < 3; ++c) {
        double v = base[static_cast<std::size_t>(c)];
        if (noise_amplitude > 0.0) {
          const double u = unit_double(mix64(seed, kNoiseTag,
                                             static_cast<std::uint64_t>(y) * W + x,
                                             static_cast<std::uint64_t>(c)));
          v += (2.0 * u - 1.0) * noise_amplitude;
        }
        img[(static_cast<std::size_t>(y) * W + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  scene.image = Tensor::from_values({H, W, 3}, std::move(img));
  return scene;
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.n_train < 0 || spec.n_val < 0) throw ValueError("make_dataset: negative counts");
  if (spec.H % kMaxCompressionRatio != 0 || spec.W % kMaxCompressionRatio != 0)
    throw ValueError("make_dataset: H and W must be divisible by " +
                     std::to_string(kMaxCompressionRatio));
  Dataset ds;
  ds.spec = spec;
  ds.train.reserve(static_cast<std::size_t>(spec.n_train));
  ds.val.reserve(static_cast<std::size_t>(spec.n_val));
  for (int i = 0; i < spec.n_train; ++i)
    ds.train.push_back(generate_scene(mix64(spec.master_seed, kTrainTag, i), spec.H, spec.W,
                                      spec.m));
  for (int i = 0; i < spec.n_val; ++i)
    ds.val.push_back(generate_scene(mix64(spec.master_seed, kValTag, i), spec.H, spec.W, spec.m));
  return ds;
}

std::vector<SceneShapeInfo> scene_shapes(std::uint64_t seed, int H, int W, int m) {
  validate_scene_args(H, W, m);
  std::vector<ShapeSpec> shapes = scene_shape_stream(seed, H, W, m);
  std::vector<SceneShapeInfo> out(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) out[i].cls = shapes[i].cls;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int owner = -1;
      for (std::size_t i = 0; i < shapes.size(); ++i)
        if (inside(shapes[i], x, y)) owner = static_cast<int>(i);
      if (owner >= 0) ++out[static_cast<std::size_t>(owner)].visible_pixels;
    }
  return out;
}

std::uint64_t scene_image_digest(const LabeledScene& s) {
  const auto& v = s.image.values();
  return fnv1a64(v.data(), v.size() * sizeof(double));
}

std::uint64_t scene_label_digest(const LabeledScene& s) {
  return fnv1a64(s.labels.v.data(), s.labels.v.size());
}

Bytes serialize_scene(const LabeledScene& s, int m) {
  const int H = s.labels.h, W = s.labels.w;
  Bytes out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u8(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(H));
  put_u16(out, static_cast<std::uint16_t>(W));
  put_u8(out, static_cast<std::uint8_t>(m));
  put_u64(out, s.seed);
  const auto& img = s.image.values();
  for (double v : img)
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  out.insert(out.end(), s.labels.v.begin(), s.labels.v.end());
  return out;
}

LabeledScene parse_scene(std::span<const std::uint8_t> bytes, int* m_out) {
  try {
    ByteReader r(bytes, "scene");
    auto magic = r.raw(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) r.fail("bad magic");
    if (r.u8() != kVersion) r.fail("unsupported version");
    const int H = r.u16();
    const int W = r.u16();
    const int m = r.u8();
    const std::uint64_t seed = r.u64();
    LabeledScene s;
    s.seed = seed;
    const std::size_t npix = static_cast<std::size_t>(H) * W;
    auto rgb = r.raw(npix * 3);
    std::vector<double> img(npix * 3);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rgb[i] / 255.0;
    s.image = Tensor::from_values({H, W, 3}, std::move(img));
    auto lbl = r.raw(npix);
    s.labels.h = H;
    s.labels.w = W;
    s.labels.v.assign(lbl.begin(), lbl.end());
    for (std::uint8_t l : s.labels.v)
      if (l >= m) r.fail("label out of range");
    if (r.remaining() != 0) r.fail("trailing bytes");
    if (m_out) *m_out = m;
    return s;
  } catch (const CodecError& e) {
    throw IoError(e.what());
  }
}

void save_scene(const std::string& path, const LabeledScene& s, int m) {
  write_file(path, serialize_scene(s, m));
}

LabeledScene load_scene(const std::string& path, int* m_out) {
  Bytes b = read_file(path);
  return parse_scene(b, m_out);
}

}  // namespace gosvae
