#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gosvae/datagen.hpp"
#include "gosvae/nets.hpp"
#include "gosvae/objectives.hpp"
#include "gosvae/task.hpp"
#include "gosvae/vq.hpp"

namespace gosvae {

enum class Scheme {
  VQVAE,
  GOSVAE,
  GOSVAE_STAR,
  VQVAE_DAGGER,
  GOSVAE_DAGGER,
  ABL_CE,
  ABL_KLD,
  ABL_VQ_KLD,
  ABL_VQ_LPIPS,
  ABL_KLD_LPIPS,
};

const char* scheme_name(Scheme s);
Scheme parse_scheme(const std::string& s);

// Loss selection per scheme; two-phase schemes use Lv while pretraining.
CompositeScheme scheme_composite(Scheme s);
bool scheme_needs_segmenter(Scheme s);
bool scheme_needs_extractor(Scheme s);
bool scheme_is_two_phase(Scheme s);

struct TrainConfig {
  Scheme scheme = Scheme::VQVAE;
  int r = 4;
  int K = 64;
  int D = 8;
  double beta = 0.25;
  double lr = 2e-4;
  int epochs = 50;
  int finetune_epochs = 20;
  int batch = 8;
  std::uint64_t seed = 1;
  Variant variant = Variant::Shallow;
  std::string pretrain_checkpoint;  // two-phase schemes may reuse one
  bool cache_teacher = true;        // caching is exact: segment() is pure
  int payload_coder = 1;            // coder used for the curves' payload column

  EncoderDecoderConfig net_config() const;
};

// The codec: encoder + decoder + codebook, saved as one container.
struct VqModel {
  EncoderDecoderConfig net_cfg;
  int K = 0;
  Network encoder;
  Network decoder;
  Codebook codebook;

  static VqModel build(const EncoderDecoderConfig& cfg, int K, std::uint64_t seed);

  std::vector<Parameter*> params();
  std::int64_t param_count() const;
  TensorMap state() const;
  std::uint64_t digest() const { return checkpoint_digest(state()); }
  void save(const std::string& path) const;
  static VqModel load(const std::string& path);
};

struct ForwardResult {
  Tensor z_e;
  IndexMap idx;
  Tensor z_q;
  Tensor xhat;
};

ForwardResult reconstruct(const VqModel& model, const Tensor& x);

struct CurveRow {
  int epoch = 0;  // 1-based, monotone across phases
  int phase = 1;  // 1 = scratch/pretrain, 2 = fine-tune
  LossBreakdown train;
  double val_mse = 0.0;
  double val_miou = 0.0;
  double val_acc = 0.0;
  double payload_bytes = 0.0;
};

struct TrainingCurves {
  std::vector<CurveRow> rows;

  std::vector<double> series_divergence() const;
  std::vector<double> series_perceptual() const;
  std::string csv() const;
  void save_csv(const std::string& path) const;
};

struct TrainResult {
  VqModel model;
  TrainingCurves curves;
};

// One call = the full schedule of cfg.scheme: single-phase schemes train
// cfg.epochs from scratch; two-phase schemes require cfg.pretrain_checkpoint
// and fine-tune for cfg.finetune_epochs. A non-finite loss aborts with
// DivergenceError. The frozen segmenter is also used for the per-epoch
// validation metrics, so it is always required.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const FrozenSegmenter& F,
                  const FeatureExtractor* fx);

// Phase 1 trains the matching VQ-VAE objective from scratch, phase 2 reloads
// and continues with the goal-oriented objective; curves are concatenated
// with the phase marker.
TrainResult pretrain_then_finetune(const TrainConfig& cfg, const Dataset& data,
                                   const FrozenSegmenter& F, const FeatureExtractor* fx);

struct EvalResult {
  double mse = 0.0;
  double perceptual = 0.0;
  double miou = 0.0;
  double accuracy = 0.0;
  double payload_bytes = 0.0;  // mean total packet bytes over the set
};

// Receiver-path evaluation: every image runs through encode -> wire packet ->
// decode -> dequantize -> decoder, then the frozen segmenter.
EvalResult evaluate_model(const VqModel& model, std::span<const LabeledScene> val,
                          const FrozenSegmenter* F, const FeatureExtractor* fx, int coder);

// Pearson product-moment correlation; lengths must match and be >= 3 with
// nonzero variance on both sides.
double curve_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace gosvae
