#include "gosvae/nets.hpp"

#include <cmath>
#include <cstdio>

#include "gosvae/ops.hpp"
#include "gosvae/rng.hpp"

namespace gosvae {

const char* variant_name(Variant v) { return v == Variant::Shallow ? "shallow" : "residual"; }

Variant parse_variant(const std::string& s) {
  if (s == "shallow") return Variant::Shallow;
  if (s == "residual") return Variant::Residual;
  throw ConfigError("unknown variant '" + s + "' (expected shallow|residual)");
}

int EncoderDecoderConfig::stages() const {
  int s = 0, v = r;
  while (v > 1 && v % 2 == 0) {
    v /= 2;
    ++s;
  }
  if (v != 1 || s < 1 || s > 5)
    throw ValueError("compression ratio must be a power of two in {2,...,32}, got " +
                     std::to_string(r));
  return s;
}

EncoderDecoderConfig EncoderDecoderConfig::defaults(int r, int D, Variant variant) {
  EncoderDecoderConfig cfg;
  cfg.r = r;
  cfg.D = D;
  cfg.variant = variant;
  const int s = cfg.stages();
  for (int i = 0; i < s; ++i) {
    const int base = variant == Variant::Shallow ? 16 : 32;
    const int cap = variant == Variant::Shallow ? 64 : 128;
    cfg.widths.push_back(std::min(base << i, cap));
  }
  return cfg;
}

namespace layers {
namespace {

std::vector<double> init_kernel(Rng& rng, int kh, int kw, int ci, int co) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(kh) * kw * ci);
  std::vector<double> w(static_cast<std::size_t>(kh) * kw * ci * co);
  const bool single = precision() == Precision::Single;
  for (double& v : w) {
    v = rng.uniform(-bound, bound);
    if (single) v = squash_single(v);
  }
  return w;
}

struct Conv final : Layer {
  Parameter w, b;
  int stride, pad;

  Conv(Rng& rng, const std::string& name, int kh, int kw, int ci, int co, int stride_, int pad_)
      : stride(stride_), pad(pad_) {
    w.tensor = make_leaf({kh, kw, ci, co}, init_kernel(rng, kh, kw, ci, co));
    w.name = name + ".w";
    b.tensor = make_leaf({co}, std::vector<double>(static_cast<std::size_t>(co), 0.0));
    b.name = name + ".b";
  }

  Tensor forward(const Tensor& x) override { return ops::conv2d(x, w.tensor, b.tensor, stride, pad); }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct TConv final : Layer {
  Parameter w, b;
  int stride;

  TConv(Rng& rng, const std::string& name, int kh, int kw, int ci, int co, int stride_)
      : stride(stride_) {
    w.tensor = make_leaf({kh, kw, ci, co}, init_kernel(rng, kh, kw, ci, co));
    w.name = name + ".w";
    b.tensor = make_leaf({co}, std::vector<double>(static_cast<std::size_t>(co), 0.0));
    b.name = name + ".b";
  }

  Tensor forward(const Tensor& x) override {
    return ops::conv_transpose2d(x, w.tensor, b.tensor, stride);
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct Relu final : Layer {
  Tensor forward(const Tensor& x) override { return ops::relu(x); }
};

struct Sigmoid final : Layer {
  Tensor forward(const Tensor& x) override { return ops::sigmoid(x); }
};

// conv -> relu -> conv, then the additive skip.
struct ResidualBlock final : Layer {
  Parameter w1, b1, w2, b2;

  ResidualBlock(Rng& rng, const std::string& name, int width) {
    w1.tensor = make_leaf({3, 3, width, width}, init_kernel(rng, 3, 3, width, width));
    w1.name = name + ".w1";
    b1.tensor = make_leaf({width}, std::vector<double>(static_cast<std::size_t>(width), 0.0));
    b1.name = name + ".b1";
    w2.tensor = make_leaf({3, 3, width, width}, init_kernel(rng, 3, 3, width, width));
    w2.name = name + ".w2";
    b2.tensor = make_leaf({width}, std::vector<double>(static_cast<std::size_t>(width), 0.0));
    b2.name = name + ".b2";
  }

  Tensor forward(const Tensor& x) override {
    Tensor h = ops::conv2d(x, w1.tensor, b1.tensor, 1, 1);
    h = ops::relu(h);
    h = ops::conv2d(h, w2.tensor, b2.tensor, 1, 1);
    return ops::add(x, h);
  }

  void collect(std::vector<Parameter*>& out) override {
    out.push_back(&w1);
    out.push_back(&b1);
    out.push_back(&w2);
    out.push_back(&b2);
  }
};

// Encoder entry guard: rank/channel/divisibility contract.
struct InputCheck final : Layer {
  int r;
  explicit InputCheck(int r_) : r(r_) {}
  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(2) != 3) throw ShapeError("encoder input must be [H,W,3]");
    if (x.dim(0) % r != 0 || x.dim(1) % r != 0)
      throw ShapeError("encoder input dims " + std::to_string(x.dim(0)) + "x" +
                       std::to_string(x.dim(1)) + " not divisible by r=" + std::to_string(r));
    return x;
  }
};

std::string layer_name(const std::string& prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%02d", index);
  return prefix + buf;
}

}  // namespace
}  // namespace layers

Tensor Network::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = l->forward(h);
  return h;
}

std::vector<Parameter*> Network::params() const {
  std::vector<Parameter*> out;
  for (const auto& l : layers_) l->collect(out);
  return out;
}

std::int64_t Network::param_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : params()) n += p->numel();
  return n;
}

void Network::freeze() {
  for (Parameter* p : params()) p->freeze();
  frozen_ = true;
}

TensorMap Network::state() const {
  TensorMap out;
  for (const Parameter* p : params()) out[p->name] = {p->tensor.shape(), p->tensor.values()};
  return out;
}

void Network::load_state(const TensorMap& tensors) {
  for (Parameter* p : params()) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw IoError("checkpoint missing tensor '" + p->name + "'");
    if (it->second.shape != p->tensor.shape())
      throw IoError("checkpoint tensor '" + p->name + "' has shape " +
                    shape_str(it->second.shape) + ", expected " + shape_str(p->tensor.shape()));
    p->tensor.values() = it->second.values;
  }
}

Network build_encoder(const EncoderDecoderConfig& cfg, std::uint64_t seed,
                      const std::string& prefix) {
  using namespace layers;
  const int stages = cfg.stages();
  if (static_cast<int>(cfg.widths.size()) != stages)
    throw ValueError("encoder config needs one width per stage (" + std::to_string(stages) + ")");
  Rng rng(seed);
  Network net;
  net.add(std::make_unique<InputCheck>(cfg.r));
  int idx = 0;
  int cin = 3;
  for (int i = 0; i < stages; ++i) {
    net.add(std::make_unique<Conv>(rng, layer_name(prefix, idx++), 4, 4, cin, cfg.widths[i], 2, 1));
    net.add(std::make_unique<Relu>());
    cin = cfg.widths[i];
  }
  if (cfg.variant == Variant::Residual) {
    net.add(std::make_unique<ResidualBlock>(rng, layer_name(prefix, idx++), cin));
    net.add(std::make_unique<ResidualBlock>(rng, layer_name(prefix, idx++), cin));
  }
  net.add(std::make_unique<Conv>(rng, layer_name(prefix, idx++), 3, 3, cin, cfg.D, 1, 1));
  return net;
}

Network build_decoder(const EncoderDecoderConfig& cfg, std::uint64_t seed,
                      const std::string& prefix) {
  using namespace layers;
  const int stages = cfg.stages();
  if (static_cast<int>(cfg.widths.size()) != stages)
    throw ValueError("decoder config needs one width per stage (" + std::to_string(stages) + ")");
  Rng rng(seed);
  Network net;
  int idx = 0;
  const int wlast = cfg.widths[static_cast<std::size_t>(stages) - 1];
  net.add(std::make_unique<Conv>(rng, layer_name(prefix, idx++), 3, 3, cfg.D, wlast, 1, 1));
  net.add(std::make_unique<Relu>());
  if (cfg.variant == Variant::Residual) {
    net.add(std::make_unique<ResidualBlock>(rng, layer_name(prefix, idx++), wlast));
    net.add(std::make_unique<ResidualBlock>(rng, layer_name(prefix, idx++), wlast));
  }
  for (int i = stages - 1; i >= 1; --i) {
    net.add(std::make_unique<TConv>(rng, layer_name(prefix, idx++), 4, 4, cfg.widths[i],
                                    cfg.widths[i - 1], 2));
    net.add(std::make_unique<Relu>());
  }
  net.add(std::make_unique<TConv>(rng, layer_name(prefix, idx++), 4, 4, cfg.widths[0], 3, 2));
  net.add(std::make_unique<Sigmoid>());
  return net;
}

Network build_segmenter(int m, std::uint64_t seed, const std::string& prefix) {
  using namespace layers;
  if (m < 2) throw ValueError("segmenter needs m >= 2 classes");
  Rng rng(seed);
  Network net;
  net.add(std::make_unique<Conv>(rng, layer_name(prefix, 0), 3, 3, 3, 32, 1, 1));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Conv>(rng, layer_name(prefix, 1), 3, 3, 32, 32, 1, 1));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Conv>(rng, layer_name(prefix, 2), 3, 3, 32, m, 1, 1));
  return net;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
  using namespace layers;
  Rng rng(seed);
  net_.add(std::make_unique<Conv>(rng, layer_name("fx.", 0), 4, 4, 3, 16, 2, 1));
  net_.add(std::make_unique<Relu>());
  net_.add(std::make_unique<Conv>(rng, layer_name("fx.", 1), 4, 4, 16, 32, 2, 1));
  net_.add(std::make_unique<Relu>());
  net_.add(std::make_unique<Conv>(rng, layer_name("fx.", 2), 4, 4, 32, 64, 2, 1));
  net_.add(std::make_unique<Relu>());
  net_.freeze();
}

std::array<Tensor, 3> FeatureExtractor::taps(const Tensor& image) const {
  // Walk the conv/relu pairs manually so each post-activation map is exposed.
  const auto& ps = net_.params();
  std::array<Tensor, 3> out;
  Tensor h = image;
  for (int s = 0; s < 3; ++s) {
    const Parameter* w = ps[static_cast<std::size_t>(2 * s)];
    const Parameter* b = ps[static_cast<std::size_t>(2 * s) + 1];
    h = ops::relu(ops::conv2d(h, w->tensor, b->tensor, 2, 1));
    out[static_cast<std::size_t>(s)] = h;
  }
  return out;
}

}  // namespace gosvae
