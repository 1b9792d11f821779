#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gosvae/codec.hpp"
#include "gosvae/ops.hpp"
#include "gosvae/trainer.hpp"
#include "test_util.hpp"

using namespace gosvae;
using testutil::PrecisionGuard;

namespace fs = std::filesystem;

namespace {

struct Bed {
  Dataset data;
  FrozenSegmenter F;
  FeatureExtractor fx;

  explicit Bed(int m = 3, int n_train = 16, int n_val = 6) {
    DatasetSpec spec;
    spec.H = 32;
    spec.W = 32;
    spec.m = m;
    spec.n_train = n_train;
    spec.n_val = n_val;
    spec.master_seed = 5;
    data = make_dataset(spec);
    F = pretrain_segmenter(data.train, data.val, m, 20, 3);
  }

  TrainConfig config(Scheme s, int epochs, std::uint64_t seed = 1) const {
    TrainConfig tc;
    tc.scheme = s;
    tc.r = 4;
    tc.K = 8;
    tc.D = 4;
    tc.epochs = epochs;
    tc.finetune_epochs = 2;
    tc.batch = 8;
    tc.seed = seed;
    return tc;
  }
};

Bed& bed() {
  static Bed b;
  return b;
}

}  // namespace

TEST_CASE("scheme parsing and requirement tables") {
  CHECK(parse_scheme("GOSVAE_STAR") == Scheme::GOSVAE_STAR);
  CHECK_THROWS_AS(parse_scheme("nope"), ConfigError);
  for (Scheme s : {Scheme::VQVAE, Scheme::GOSVAE, Scheme::GOSVAE_STAR, Scheme::VQVAE_DAGGER,
                   Scheme::GOSVAE_DAGGER, Scheme::ABL_CE, Scheme::ABL_KLD, Scheme::ABL_VQ_KLD,
                   Scheme::ABL_VQ_LPIPS, Scheme::ABL_KLD_LPIPS})
    CHECK(parse_scheme(scheme_name(s)) == s);

  CHECK(scheme_composite(Scheme::VQVAE) == CompositeScheme::Lv);
  CHECK(scheme_composite(Scheme::GOSVAE) == CompositeScheme::Ls);
  CHECK(scheme_composite(Scheme::ABL_CE) == CompositeScheme::Lsc);
  CHECK(scheme_composite(Scheme::ABL_KLD) == CompositeScheme::Lk);
  CHECK(scheme_composite(Scheme::ABL_VQ_KLD) == CompositeScheme::Lvk);
  CHECK(scheme_composite(Scheme::ABL_VQ_LPIPS) == CompositeScheme::Lvp);
  CHECK(scheme_composite(Scheme::ABL_KLD_LPIPS) == CompositeScheme::Lkp);

  CHECK_FALSE(scheme_needs_segmenter(Scheme::VQVAE));
  CHECK(scheme_needs_segmenter(Scheme::GOSVAE));
  CHECK(scheme_needs_extractor(Scheme::GOSVAE));
  CHECK_FALSE(scheme_needs_extractor(Scheme::ABL_VQ_KLD));
  CHECK(scheme_is_two_phase(Scheme::GOSVAE_STAR));
  CHECK_FALSE(scheme_is_two_phase(Scheme::GOSVAE));
}

TEST_CASE("zero epochs returns the initialization with empty curves") {
  PrecisionGuard pg(Precision::Double);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::VQVAE, 0);
  TrainResult r = train(tc, b.data, b.F, nullptr);
  CHECK(r.curves.rows.empty());
  VqModel fresh = VqModel::build(tc.net_config(), tc.K, tc.seed);
  CHECK(r.model.digest() == fresh.digest());
}

TEST_CASE("training is deterministic under a fixed seed in both modes") {
  auto& b = bed();
  for (Precision p : {Precision::Double, Precision::Single}) {
    PrecisionGuard pg(p);
    TrainConfig tc = b.config(Scheme::VQVAE, 2);
    TrainResult r1 = train(tc, b.data, b.F, nullptr);
    TrainResult r2 = train(tc, b.data, b.F, nullptr);
    CHECK(r1.model.digest() == r2.model.digest());
    CHECK(r1.curves.csv() == r2.curves.csv());
    TrainConfig other = tc;
    other.seed = 2;
    CHECK(train(other, b.data, b.F, nullptr).model.digest() != r1.model.digest());
  }
}

TEST_CASE("curves carry one row per epoch with monotone indices") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainResult r = train(b.config(Scheme::VQVAE, 3), b.data, b.F, nullptr);
  REQUIRE(r.curves.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.curves.rows[i].epoch == static_cast<int>(i) + 1);
    CHECK(r.curves.rows[i].phase == 1);
    CHECK(std::isfinite(r.curves.rows[i].val_mse));
    CHECK(r.curves.rows[i].payload_bytes > 0.0);
  }
  const std::string csv = r.curves.csv();
  CHECK(csv.find("epoch,phase,reconstruction") == 0);
}

TEST_CASE("frozen nets are untouched and only codec parameters get gradients") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  const std::uint64_t seg_before = b.F.digest();
  const std::uint64_t fx_before = b.fx.digest();
  TrainResult r = train(b.config(Scheme::GOSVAE, 2), b.data, b.F, &b.fx);
  CHECK(b.F.digest() == seg_before);
  CHECK(b.F.digest() == b.F.train_digest);
  CHECK(b.fx.digest() == fx_before);
  for (const Parameter* p : b.F.net.params()) CHECK_FALSE(p->tensor.has_grad());
  for (const Parameter* p : b.fx.net().params()) CHECK_FALSE(p->tensor.has_grad());
  CHECK(r.model.param_count() > 0);
}

TEST_CASE("every scheme trains one epoch and logs exactly its loss terms") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  struct Expect {
    Scheme s;
    bool recon, divergence, perceptual;
  };
  const Expect table[] = {
      {Scheme::VQVAE, true, false, false},     {Scheme::GOSVAE, false, true, true},
      {Scheme::ABL_CE, false, true, false},    {Scheme::ABL_KLD, false, true, false},
      {Scheme::ABL_VQ_KLD, true, true, false}, {Scheme::ABL_VQ_LPIPS, false, false, true},
      {Scheme::ABL_KLD_LPIPS, false, true, true},
  };
  for (const Expect& e : table) {
    TrainResult r = train(b.config(e.s, 1), b.data, b.F, &b.fx);
    const LossBreakdown& l = r.curves.rows[0].train;
    CHECK((l.reconstruction != 0.0) == e.recon);
    CHECK((l.divergence != 0.0) == e.divergence);
    CHECK((l.perceptual != 0.0) == e.perceptual);
    CHECK(l.codebook >= 0.0);
    CHECK(l.commitment >= 0.0);
    CHECK(std::abs(l.total - (l.reconstruction + l.divergence + l.perceptual + l.codebook +
                              l.commitment)) < 1e-9);
  }
}

TEST_CASE("two-phase schemes demand a pretrain source") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::GOSVAE_STAR, 2);
  CHECK_THROWS_AS(train(tc, b.data, b.F, &b.fx), ValueError);

  // A checkpoint with different hyperparameters is rejected.
  TrainConfig other = b.config(Scheme::VQVAE, 1);
  other.K = 16;
  TrainResult vq = train(other, b.data, b.F, nullptr);
  const std::string path = (fs::temp_directory_path() / "gosvae_mismatch.gosw").string();
  vq.model.save(path);
  tc.pretrain_checkpoint = path;
  CHECK_THROWS_AS(train(tc, b.data, b.F, &b.fx), ConfigError);
  fs::remove(path);
}

TEST_CASE("zero finetune epochs reproduces the pretrain checkpoint exactly") {
  PrecisionGuard pg(Precision::Double);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::GOSVAE_STAR, 3);
  tc.finetune_epochs = 0;
  TrainResult two_phase = pretrain_then_finetune(tc, b.data, b.F, &b.fx);

  TrainConfig vq = b.config(Scheme::VQVAE, 3);
  TrainResult pretrain_only = train(vq, b.data, b.F, nullptr);
  CHECK(two_phase.model.digest() == pretrain_only.model.digest());
  CHECK(two_phase.curves.rows.size() == 3);
}

TEST_CASE("phase-2 rows continue the epoch count with the phase marker") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::GOSVAE_STAR, 2);
  tc.finetune_epochs = 2;
  TrainResult r = pretrain_then_finetune(tc, b.data, b.F, &b.fx);
  REQUIRE(r.curves.rows.size() == 4);
  CHECK(r.curves.rows[0].phase == 1);
  CHECK(r.curves.rows[1].phase == 1);
  CHECK(r.curves.rows[2].phase == 2);
  CHECK(r.curves.rows[3].phase == 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.curves.rows[i].epoch == static_cast<int>(i) + 1);
  // Phase 1 is the vq objective, phase 2 the goal-oriented one.
  CHECK(r.curves.rows[0].train.reconstruction > 0.0);
  CHECK(r.curves.rows[0].train.divergence == 0.0);
  CHECK(r.curves.rows[2].train.reconstruction == 0.0);
  CHECK(r.curves.rows[2].train.divergence > 0.0);
}

TEST_CASE("fine-tuning from a checkpoint path matches the two-phase run") {
  PrecisionGuard pg(Precision::Double);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::GOSVAE_STAR, 2);
  tc.finetune_epochs = 2;
  TrainResult direct = pretrain_then_finetune(tc, b.data, b.F, &b.fx);

  TrainConfig vq = b.config(Scheme::VQVAE, 2);
  TrainResult pre = train(vq, b.data, b.F, nullptr);
  const std::string path = (fs::temp_directory_path() / "gosvae_pre.gosw").string();
  pre.model.save(path);
  TrainConfig ft = tc;
  ft.pretrain_checkpoint = path;
  TrainResult resumed = train(ft, b.data, b.F, &b.fx);
  CHECK(resumed.model.digest() == direct.model.digest());
  fs::remove(path);
}

TEST_CASE("first fine-tune loss equals an independent objective evaluation") {
  PrecisionGuard pg(Precision::Double);
  auto& b = bed();
  // Fine-tune with the whole training split as a single batch: the first
  // curve row's loss is evaluated on the unmodified pretrained weights.
  TrainConfig vq = b.config(Scheme::VQVAE, 2);
  TrainResult pre = train(vq, b.data, b.F, nullptr);
  const std::string path = (fs::temp_directory_path() / "gosvae_pre2.gosw").string();
  pre.model.save(path);

  TrainConfig ft = b.config(Scheme::GOSVAE_STAR, 2);
  ft.finetune_epochs = 1;
  ft.batch = static_cast<int>(b.data.train.size());
  ft.pretrain_checkpoint = path;
  TrainResult tuned = train(ft, b.data, b.F, &b.fx);

  // Independent evaluation of the same objective on the loaded checkpoint.
  VqModel model = VqModel::load(path);
  double expect = 0.0;
  for (const auto& scene : b.data.train) {
    ForwardResult fr = reconstruct(model, scene.image);
    Tensor S = imitation_target(b.F, scene.image);
    Tensor Shat = segment(b.F, fr.xhat);
    CompositeInputs in;
    in.x = &scene.image;
    in.xhat = &fr.xhat;
    in.S = &S;
    in.Shat = &Shat;
    in.fx = &b.fx;
    expect += composite(CompositeScheme::Ls, in, fr.z_e, fr.z_q, ft.beta).values.total;
  }
  expect /= static_cast<double>(b.data.train.size());
  CHECK(std::abs(tuned.curves.rows[0].train.total - expect) < 1e-10);
  fs::remove(path);
}

TEST_CASE("non-finite losses abort with a divergence error") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::VQVAE, 3);
  tc.lr = 1e25;  // blows the activations past float range within an epoch
  CHECK_THROWS_AS(train(tc, b.data, b.F, nullptr), DivergenceError);
}

TEST_CASE("teacher caching changes nothing") {
  PrecisionGuard pg(Precision::Double);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::GOSVAE, 2);
  TrainResult cached = train(tc, b.data, b.F, &b.fx);
  tc.cache_teacher = false;
  TrainResult recomputed = train(tc, b.data, b.F, &b.fx);
  CHECK(cached.model.digest() == recomputed.model.digest());
}

TEST_CASE("evaluation runs the receiver path bit-exactly") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainConfig tc = b.config(Scheme::VQVAE, 2);
  TrainResult r = train(tc, b.data, b.F, nullptr);

  const Tensor& x = b.data.val[0].image;
  NoGradGuard ng;
  Tensor z_e = r.model.encoder.forward(x);
  IndexMap idx = quantize(z_e, r.model.codebook);
  PacketMeta meta;
  meta.H = 32;
  meta.W = 32;
  meta.r = 4;
  meta.K = static_cast<std::uint16_t>(r.model.K);
  Bytes packet = encode_packet(idx, meta, kCoderHuffman);
  auto [rx_idx, rx_meta] = decode_packet(packet);
  CHECK(rx_idx == idx);
  Tensor tx_zq = dequantize(idx, r.model.codebook);
  Tensor rx_zq = dequantize(rx_idx, r.model.codebook);
  CHECK(tx_zq.values() == rx_zq.values());

  EvalResult ev = evaluate_model(r.model, b.data.val, &b.F, &b.fx, 1);
  CHECK(ev.payload_bytes > 0.0);
  CHECK(ev.miou >= 0.0);
  CHECK(ev.miou <= 100.0);
  CHECK(std::isfinite(ev.perceptual));
}

TEST_CASE("vq training reduces validation reconstruction error") {
  PrecisionGuard pg(Precision::Single);
  auto& b = bed();
  TrainResult r = train(b.config(Scheme::VQVAE, 12), b.data, b.F, nullptr);
  const double first = r.curves.rows.front().val_mse;
  const double last = r.curves.rows.back().val_mse;
  CHECK(last < first);
}

TEST_CASE("model checkpoints round-trip with config metadata") {
  PrecisionGuard pg(Precision::Single);
  auto cfg = EncoderDecoderConfig::defaults(8, 4, Variant::Residual);
  VqModel m = VqModel::build(cfg, 32, 77);
  const std::string path = (fs::temp_directory_path() / "gosvae_model_rt.gosw").string();
  m.save(path);
  VqModel back = VqModel::load(path);
  CHECK(back.net_cfg.r == 8);
  CHECK(back.net_cfg.D == 4);
  CHECK(back.net_cfg.variant == Variant::Residual);
  CHECK(back.net_cfg.widths == cfg.widths);
  CHECK(back.K == 32);
  CHECK(back.digest() == m.digest());
  CHECK(back.param_count() == m.param_count());
  fs::remove(path);
}

TEST_CASE("curve correlation matches the Pearson definition") {
  std::vector<double> a = {1, 2, 3, 5};
  CHECK(curve_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> neg = {-1, -2, -3, -5};
  CHECK(curve_correlation(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));

  // Two-pass oracle, computed independently of the implementation.
  std::vector<double> b = {2, 4, 6, 9};
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= 4;
  mb /= 4;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double oracle = sab / std::sqrt(saa * sbb);
  CHECK(curve_correlation(a, b) == doctest::Approx(oracle).epsilon(1e-15));
  // Frozen: 15.25 / sqrt(8.75 * 26.75) = 0.996791 to six decimals.
  CHECK(curve_correlation(a, b) == doctest::Approx(0.996791).epsilon(1e-6));
}

TEST_CASE("curve correlation validates its inputs") {
  std::vector<double> a = {1, 2, 3};
  std::vector<double> short_b = {1, 2};
  CHECK_THROWS_AS(curve_correlation(a, short_b), ValueError);
  std::vector<double> two = {1, 2};
  CHECK_THROWS_AS(curve_correlation(two, two), ValueError);
  std::vector<double> flat = {4, 4, 4};
  CHECK_THROWS_AS(curve_correlation(a, flat), ValueError);
}
