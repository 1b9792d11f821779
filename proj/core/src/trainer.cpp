#include "gosvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gosvae/adam.hpp"
#include "gosvae/codec.hpp"
#include "gosvae/ops.hpp"
#include "gosvae/rng.hpp"

namespace gosvae {

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::VQVAE: return "VQVAE";
    case Scheme::GOSVAE: return "GOSVAE";
    case Scheme::GOSVAE_STAR: return "GOSVAE_STAR";
    case Scheme::VQVAE_DAGGER: return "VQVAE_DAGGER";
    case Scheme::GOSVAE_DAGGER: return "GOSVAE_DAGGER";
    case Scheme::ABL_CE: return "ABL_CE";
    case Scheme::ABL_KLD: return "ABL_KLD";
    case Scheme::ABL_VQ_KLD: return "ABL_VQ_KLD";
    case Scheme::ABL_VQ_LPIPS: return "ABL_VQ_LPIPS";
    case Scheme::ABL_KLD_LPIPS: return "ABL_KLD_LPIPS";
  }
  return "?";
}

Scheme parse_scheme(const std::string& s) {
  static const std::pair<const char*, Scheme> table[] = {
      {"VQVAE", Scheme::VQVAE},
      {"GOSVAE", Scheme::GOSVAE},
      {"GOSVAE_STAR", Scheme::GOSVAE_STAR},
      {"VQVAE_DAGGER", Scheme::VQVAE_DAGGER},
      {"GOSVAE_DAGGER", Scheme::GOSVAE_DAGGER},
      {"ABL_CE", Scheme::ABL_CE},
      {"ABL_KLD", Scheme::ABL_KLD},
      {"ABL_VQ_KLD", Scheme::ABL_VQ_KLD},
      {"ABL_VQ_LPIPS", Scheme::ABL_VQ_LPIPS},
      {"ABL_KLD_LPIPS", Scheme::ABL_KLD_LPIPS},
  };
  for (const auto& [name, sch] : table)
    if (s == name) return sch;
  throw ConfigError("unknown scheme '" + s + "'");
}

CompositeScheme scheme_composite(Scheme s) {
  switch (s) {
    case Scheme::VQVAE:
    case Scheme::VQVAE_DAGGER: return CompositeScheme::Lv;
    case Scheme::GOSVAE:
    case Scheme::GOSVAE_STAR:
    case Scheme::GOSVAE_DAGGER: return CompositeScheme::Ls;
    case Scheme::ABL_CE: return CompositeScheme::Lsc;
    case Scheme::ABL_KLD: return CompositeScheme::Lk;
    case Scheme::ABL_VQ_KLD: return CompositeScheme::Lvk;
    case Scheme::ABL_VQ_LPIPS: return CompositeScheme::Lvp;
    case Scheme::ABL_KLD_LPIPS: return CompositeScheme::Lkp;
  }
  return CompositeScheme::Lv;
}

namespace {

bool composite_needs_segmenter(CompositeScheme c) {
  return c == CompositeScheme::Ls || c == CompositeScheme::Lsc || c == CompositeScheme::Lvk ||
         c == CompositeScheme::Lk || c == CompositeScheme::Lkp;
}

bool composite_needs_extractor(CompositeScheme c) {
  return c == CompositeScheme::Ls || c == CompositeScheme::Lvp || c == CompositeScheme::Lkp;
}

bool composite_needs_images(CompositeScheme c) {
  return c == CompositeScheme::Lv || c == CompositeScheme::Lvk;
}

}  // namespace

bool scheme_needs_segmenter(Scheme s) { return composite_needs_segmenter(scheme_composite(s)); }
bool scheme_needs_extractor(Scheme s) { return composite_needs_extractor(scheme_composite(s)); }
bool scheme_is_two_phase(Scheme s) {
  return s == Scheme::GOSVAE_STAR || s == Scheme::GOSVAE_DAGGER;
}

EncoderDecoderConfig TrainConfig::net_config() const {
  return EncoderDecoderConfig::defaults(r, D, variant);
}

VqModel VqModel::build(const EncoderDecoderConfig& cfg, int K, std::uint64_t seed) {
  VqModel m;
  m.net_cfg = cfg;
  m.K = K;
  m.encoder = build_encoder(cfg, mix64(seed, 0xe4c0de));
  m.decoder = build_decoder(cfg, mix64(seed, 0xdec0de));
  m.codebook = Codebook::init(K, cfg.D, mix64(seed, 0xc0deb00c));
  return m;
}

std::vector<Parameter*> VqModel::params() {
  std::vector<Parameter*> out = encoder.params();
  auto dec = decoder.params();
  out.insert(out.end(), dec.begin(), dec.end());
  out.push_back(&codebook.e);
  return out;
}

std::int64_t VqModel::param_count() const {
  return encoder.param_count() + decoder.param_count() + codebook.e.numel();
}

TensorMap VqModel::state() const {
  TensorMap out = encoder.state();
  for (auto& [k, v] : decoder.state()) out[k] = std::move(v);
  out["codebook"] = {codebook.e.tensor.shape(), codebook.e.tensor.values()};
  std::vector<double> meta = {1.0,
                              static_cast<double>(net_cfg.r),
                              static_cast<double>(net_cfg.D),
                              static_cast<double>(K),
                              net_cfg.variant == Variant::Residual ? 1.0 : 0.0,
                              static_cast<double>(net_cfg.widths.size())};
  for (int w : net_cfg.widths) meta.push_back(static_cast<double>(w));
  out["_meta"] = {{static_cast<int>(meta.size())}, std::move(meta)};
  return out;
}

void VqModel::save(const std::string& path) const { save_checkpoint(path, state()); }

VqModel VqModel::load(const std::string& path) {
  TensorMap tensors = load_checkpoint(path);
  auto it = tensors.find("_meta");
  if (it == tensors.end() || it->second.values.size() < 6 || it->second.values[0] != 1.0)
    throw IoError("model checkpoint: bad or missing _meta");
  const auto& mv = it->second.values;
  EncoderDecoderConfig cfg;
  cfg.r = static_cast<int>(mv[1]);
  cfg.D = static_cast<int>(mv[2]);
  const int K = static_cast<int>(mv[3]);
  cfg.variant = mv[4] != 0.0 ? Variant::Residual : Variant::Shallow;
  const auto nw = static_cast<std::size_t>(mv[5]);
  if (mv.size() != 6 + nw) throw IoError("model checkpoint: malformed _meta");
  for (std::size_t i = 0; i < nw; ++i) cfg.widths.push_back(static_cast<int>(mv[6 + i]));

  VqModel m = VqModel::build(cfg, K, 0);
  m.encoder.load_state(tensors);
  m.decoder.load_state(tensors);
  auto cb = tensors.find("codebook");
  if (cb == tensors.end() || cb->second.shape != m.codebook.e.tensor.shape())
    throw IoError("model checkpoint: bad codebook tensor");
  m.codebook.e.tensor.values() = cb->second.values;
  return m;
}

ForwardResult reconstruct(const VqModel& model, const Tensor& x) {
  ForwardResult r;
  r.z_e = model.encoder.forward(x);
  r.idx = quantize(r.z_e, model.codebook);
  r.z_q = dequantize(r.idx, model.codebook);
  r.xhat = model.decoder.forward(ops::straight_through(r.z_e, r.z_q));
  return r;
}

std::vector<double> TrainingCurves::series_divergence() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.train.divergence);
  return out;
}

std::vector<double> TrainingCurves::series_perceptual() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.train.perceptual);
  return out;
}

std::string TrainingCurves::csv() const {
  std::ostringstream os;
  os << "epoch,phase,reconstruction,divergence,perceptual,codebook,commitment,total,"
        "val_mse,val_miou,val_acc,payload_bytes\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.phase << ',' << format_g17(r.train.reconstruction) << ','
       << format_g17(r.train.divergence) << ',' << format_g17(r.train.perceptual) << ','
       << format_g17(r.train.codebook) << ',' << format_g17(r.train.commitment) << ','
       << format_g17(r.train.total) << ',' << format_g17(r.val_mse) << ','
       << format_g17(r.val_miou) << ',' << format_g17(r.val_acc) << ','
       << format_g17(r.payload_bytes) << '\n';
  }
  return os.str();
}

void TrainingCurves::save_csv(const std::string& path) const {
  const std::string s = csv();
  write_file(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

EvalResult evaluate_model(const VqModel& model, std::span<const LabeledScene> val,
                          const FrozenSegmenter* F, const FeatureExtractor* fx, int coder) {
  NoGradGuard ng;
  EvalResult out;
  if (val.empty()) return out;
  Confusion conf(F ? F->m : 1);
  double mse_sum = 0.0, per_sum = 0.0, payload_sum = 0.0;
  for (const auto& scene : val) {
    Tensor z_e = model.encoder.forward(scene.image);
    IndexMap idx = quantize(z_e, model.codebook);
    PacketMeta meta;
    meta.H = static_cast<std::uint16_t>(scene.image.dim(0));
    meta.W = static_cast<std::uint16_t>(scene.image.dim(1));
    meta.r = static_cast<std::uint8_t>(model.net_cfg.r);
    meta.K = static_cast<std::uint16_t>(model.K);
    Bytes packet = encode_packet(idx, meta, coder);
    payload_sum += static_cast<double>(payload(packet).total_bytes);
    auto [rx_idx, rx_meta] = decode_packet(packet);
    Tensor z_q = dequantize(rx_idx, model.codebook);
    Tensor xhat = model.decoder.forward(z_q);
    mse_sum += mse(scene.image, xhat).value();
    if (fx) per_sum += perceptual(*fx, scene.image, xhat).value();
    if (F) conf.add(hard_labels(segment(*F, xhat)), scene.labels);
  }
  const double n = static_cast<double>(val.size());
  out.mse = mse_sum / n;
  out.perceptual = fx ? per_sum / n : std::numeric_limits<double>::quiet_NaN();
  out.payload_bytes = payload_sum / n;
  if (F) {
    TaskMetrics tm = conf.metrics();
    out.miou = tm.miou;
    out.accuracy = tm.accuracy;
  } else {
    out.miou = std::numeric_limits<double>::quiet_NaN();
    out.accuracy = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

namespace {

void check_frozen_aux(const FrozenSegmenter& F) {
  if (!F.net.frozen()) throw ValueError("train: segmenter must be frozen");
}

// One optimization phase. Appends one curve row per epoch.
void run_phase(VqModel& model, CompositeScheme comp, int epochs, int phase, int epoch_offset,
               const TrainConfig& cfg, const Dataset& data, const FrozenSegmenter& F,
               const FeatureExtractor* fx, TrainingCurves& curves) {
  if (data.train.empty()) throw ValueError("train: empty training set");
  if (composite_needs_extractor(comp) && !fx)
    throw ValueError("train: scheme needs the feature extractor");

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(model.params(), acfg);

  // Teacher maps are pure functions of the frozen segmenter and the images;
  // cache them once per phase unless the config insists on recomputing.
  std::vector<Tensor> teacher(data.train.size());
  const bool needs_teacher = composite_needs_segmenter(comp);
  if (needs_teacher && cfg.cache_teacher)
    for (std::size_t i = 0; i < data.train.size(); ++i)
      teacher[i] = imitation_target(F, data.train[i].image);

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(mix64(cfg.seed, 0x0eb0c4, static_cast<std::uint64_t>(phase) << 32 |
                                                  static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    LossBreakdown epoch_mean;
    int n_batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
      Tensor batch_total;
      LossBreakdown batch_mean;
      for (std::size_t i = b; i < e; ++i) {
        const LabeledScene& scene = data.train[order[i]];
        ForwardResult fr = reconstruct(model, scene.image);
        CompositeInputs in;
        in.x = &scene.image;
        in.xhat = &fr.xhat;
        in.fx = fx;
        Tensor S, Shat;
        if (needs_teacher) {
          S = cfg.cache_teacher ? teacher[order[i]] : imitation_target(F, scene.image);
          Shat = segment(F, fr.xhat);
          in.S = &S;
          in.Shat = &Shat;
        }
        CompositeLoss loss = composite(comp, in, fr.z_e, fr.z_q, cfg.beta);
        batch_total =
            batch_total.defined() ? ops::add(batch_total, loss.total) : loss.total;
        batch_mean.reconstruction += loss.values.reconstruction;
        batch_mean.divergence += loss.values.divergence;
        batch_mean.perceptual += loss.values.perceptual;
        batch_mean.codebook += loss.values.codebook;
        batch_mean.commitment += loss.values.commitment;
        batch_mean.total += loss.values.total;
      }
      const double inv = 1.0 / static_cast<double>(e - b);
      batch_total = ops::scale(batch_total, inv);
      if (!std::isfinite(batch_total.value()))
        throw DivergenceError(std::string("train: non-finite loss (scheme ") +
                              scheme_name(cfg.scheme) + ", phase " + std::to_string(phase) +
                              ", epoch " + std::to_string(epoch_offset + epoch + 1) + ")");
      backward(batch_total);
      opt.step();
      opt.zero_grad();

      epoch_mean.reconstruction += batch_mean.reconstruction * inv;
      epoch_mean.divergence += batch_mean.divergence * inv;
      epoch_mean.perceptual += batch_mean.perceptual * inv;
      epoch_mean.codebook += batch_mean.codebook * inv;
      epoch_mean.commitment += batch_mean.commitment * inv;
      epoch_mean.total += batch_mean.total * inv;
      ++n_batches;
    }
    const double bn = 1.0 / std::max(1, n_batches);
    epoch_mean.reconstruction *= bn;
    epoch_mean.divergence *= bn;
    epoch_mean.perceptual *= bn;
    epoch_mean.codebook *= bn;
    epoch_mean.commitment *= bn;
    epoch_mean.total *= bn;

    EvalResult ev = evaluate_model(model, data.val, &F, nullptr, cfg.payload_coder);
    CurveRow row;
    row.epoch = epoch_offset + epoch + 1;
    row.phase = phase;
    row.train = epoch_mean;
    row.val_mse = ev.mse;
    row.val_miou = ev.miou;
    row.val_acc = ev.accuracy;
    row.payload_bytes = ev.payload_bytes;
    curves.rows.push_back(row);
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const FrozenSegmenter& F,
                  const FeatureExtractor* fx) {
  check_frozen_aux(F);
  if (cfg.beta <= 0.0) throw ValueError("train: beta must be > 0");
  if (cfg.batch < 1) throw ValueError("train: batch must be >= 1");
  if (cfg.K < 1 || cfg.K > 65535)
    throw ValueError("train: K must fit the wire format (1..65535)");

  TrainResult result;
  if (scheme_is_two_phase(cfg.scheme)) {
    if (cfg.pretrain_checkpoint.empty())
      throw ValueError(std::string(scheme_name(cfg.scheme)) +
                       " requires a pretrain checkpoint path (or use pretrain_then_finetune)");
    result.model = VqModel::load(cfg.pretrain_checkpoint);
    const EncoderDecoderConfig want = cfg.net_config();
    if (result.model.net_cfg.r != want.r || result.model.net_cfg.D != want.D ||
        result.model.K != cfg.K || result.model.net_cfg.variant != want.variant)
      throw ConfigError("pretrain checkpoint does not match the training config");
    run_phase(result.model, scheme_composite(cfg.scheme), cfg.finetune_epochs, 2, 0, cfg, data, F,
              fx, result.curves);
    return result;
  }

  result.model = VqModel::build(cfg.net_config(), cfg.K, cfg.seed);
  run_phase(result.model, scheme_composite(cfg.scheme), cfg.epochs, 1, 0, cfg, data, F, fx,
            result.curves);
  return result;
}

TrainResult pretrain_then_finetune(const TrainConfig& cfg, const Dataset& data,
                                   const FrozenSegmenter& F, const FeatureExtractor* fx) {
  if (!scheme_is_two_phase(cfg.scheme))
    throw ValueError("pretrain_then_finetune: scheme must be GOSVAE_STAR or GOSVAE_DAGGER");
  check_frozen_aux(F);

  TrainResult result;
  result.model = VqModel::build(cfg.net_config(), cfg.K, cfg.seed);
  run_phase(result.model, CompositeScheme::Lv, cfg.epochs, 1, 0, cfg, data, F, nullptr,
            result.curves);
  run_phase(result.model, scheme_composite(cfg.scheme), cfg.finetune_epochs, 2, cfg.epochs, cfg,
            data, F, fx, result.curves);
  return result;
}

double curve_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValueError("curve_correlation: length mismatch");
  if (a.size() < 3) throw ValueError("curve_correlation: need at least 3 points");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw ValueError("curve_correlation: degenerate series (zero variance)");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace gosvae
