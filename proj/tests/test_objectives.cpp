#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gosvae/objectives.hpp"
#include "gosvae/ops.hpp"
#include "gosvae/vq.hpp"
#include "test_util.hpp"

using namespace gosvae;
using testutil::grad_check;
using testutil::PrecisionGuard;
using testutil::random_segdist;
using testutil::random_tensor;

namespace {

Tensor pixel_dist(std::vector<double> probs, int m) {
  const int n = static_cast<int>(probs.size()) / m;
  return Tensor::from_values({n, 1, m}, std::move(probs));
}

// Flat-loop reference for the perceptual distance, independent of the op
// implementations: normalize each position's channel vector, average squared
// differences, sum scales.
double perceptual_reference(const FeatureExtractor& fx, const Tensor& x, const Tensor& y) {
  NoGradGuard ng;
  auto ta = fx.taps(x);
  auto tb = fx.taps(y);
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    const Tensor& a = ta[static_cast<std::size_t>(s)];
    const Tensor& b = tb[static_cast<std::size_t>(s)];
    const int C = a.dim(2);
    const std::size_t pixels = a.values().size() / static_cast<std::size_t>(C);
    double acc = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      double na = 1e-10, nb = 1e-10;
      for (int c = 0; c < C; ++c) {
        na += a.values()[p * C + c] * a.values()[p * C + c];
        nb += b.values()[p * C + c] * b.values()[p * C + c];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      for (int c = 0; c < C; ++c) {
        const double d = a.values()[p * C + c] / na - b.values()[p * C + c] / nb;
        acc += d * d;
      }
    }
    total += acc / (static_cast<double>(pixels) * C);
  }
  return total;
}

}  // namespace

TEST_CASE("mse is zero on identical images and one on unit difference") {
  Tensor x = random_tensor({4, 4, 3}, 1);
  CHECK(mse(x, x).value() == 0.0);
  Tensor ones = Tensor::from_values({2, 2, 3}, std::vector<double>(12, 1.0));
  Tensor zeros = Tensor::zeros({2, 2, 3});
  CHECK(mse(ones, zeros).value() == 1.0);
  CHECK_THROWS_AS(mse(ones, random_tensor({3, 2, 3}, 2)), ShapeError);
}

TEST_CASE("mse matches a flat-loop reference") {
  PrecisionGuard pg(Precision::Double);
  Tensor x = random_tensor({5, 7, 3}, 11);
  Tensor y = random_tensor({5, 7, 3}, 12);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    const double d = x.values()[i] - y.values()[i];
    acc += d * d;
  }
  acc /= static_cast<double>(x.values().size());
  CHECK(std::abs(mse(x, y).value() - acc) < 1e-12);
}

TEST_CASE("kld hand value and asymmetry") {
  PrecisionGuard pg(Precision::Double);
  Tensor P = pixel_dist({0.5, 0.5}, 2);
  Tensor Q = pixel_dist({0.9, 0.1}, 2);
  // 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.5 ln(25/9)
  CHECK(kld(P, Q).value() == doctest::Approx(0.510826).epsilon(1e-6));
  CHECK(kld(P, P).value() == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(kld(P, Q).value() != kld(Q, P).value());
}

TEST_CASE("kld is nonnegative up to epsilon effects on random simplex pairs") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    Tensor P = random_segdist(2, 3, 4, 100 + s);
    Tensor Q = random_segdist(2, 3, 4, 500 + s);
    CHECK(kld(P, Q).value() >= -1e-7);
  }
}

TEST_CASE("jsd hand values, symmetry and the ln 2 bound") {
  PrecisionGuard pg(Precision::Double);
  Tensor S = pixel_dist({0.5, 0.5}, 2);
  Tensor T = pixel_dist({1.0, 0.0}, 2);
  // M = (0.75, 0.25): 0.5*KL(S||M) + 0.5*KL(T||M) = 0.215762
  CHECK(jsd(S, T).value() == doctest::Approx(0.215762).epsilon(1e-6));
  CHECK(jsd(S, T).value() == doctest::Approx(jsd(T, S).value()).epsilon(1e-12));
  CHECK(jsd(S, S).value() == doctest::Approx(0.0).epsilon(1e-7));

  Tensor A = pixel_dist({1.0, 0.0}, 2);
  Tensor B = pixel_dist({0.0, 1.0}, 2);
  CHECK(jsd(A, B).value() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(jsd(A, B).value() <= std::log(2.0) + 1e-9);
}

TEST_CASE("jsd stays within [0, ln 2] on random simplex pairs") {
  PrecisionGuard pg(Precision::Double);
  for (std::uint64_t s = 0; s < 300; ++s) {
    Tensor A = random_segdist(3, 3, 5, 1000 + s);
    Tensor B = random_segdist(3, 3, 5, 4000 + s);
    const double v = jsd(A, B).value();
    CHECK(v >= -1e-9);
    CHECK(v <= std::log(2.0) + 1e-9);
    CHECK(std::abs(jsd(A, B).value() - jsd(B, A).value()) < 1e-12);
  }
}

TEST_CASE("ce scores the teacher argmax class") {
  PrecisionGuard pg(Precision::Double);
  Tensor perfect_teacher = pixel_dist({0.6, 0.4}, 2);
  Tensor hit = pixel_dist({1.0, 0.0}, 2);
  CHECK(ce(perfect_teacher, hit).value() == doctest::Approx(0.0).epsilon(1e-7));

  Tensor student = pixel_dist({0.5, 0.5}, 2);
  CHECK(ce(perfect_teacher, student).value() == doctest::Approx(0.693147).epsilon(1e-6));

  // Teacher tie: lowest class index wins, so only Shat[0] matters.
  Tensor tie = pixel_dist({0.5, 0.5}, 2);
  Tensor skewed = pixel_dist({0.9, 0.1}, 2);
  CHECK(ce(tie, skewed).value() == doctest::Approx(-std::log(0.9 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("perceptual distance is zero on identical inputs and symmetric") {
  PrecisionGuard pg(Precision::Double);
  FeatureExtractor fx;
  Tensor x = random_tensor({16, 16, 3}, 21, 0.0, 1.0);
  Tensor y = random_tensor({16, 16, 3}, 22, 0.0, 1.0);
  CHECK(perceptual(fx, x, x).value() == 0.0);
  CHECK(perceptual(fx, x, y).value() ==
        doctest::Approx(perceptual(fx, y, x).value()).epsilon(1e-12));
  CHECK(perceptual(fx, x, y).value() > 0.0);
}

TEST_CASE("perceptual distance matches the naive-loop reference") {
  PrecisionGuard pg(Precision::Double);
  FeatureExtractor fx;
  Tensor x = random_tensor({16, 16, 3}, 31, 0.0, 1.0);
  Tensor y = random_tensor({16, 16, 3}, 32, 0.0, 1.0);
  CHECK(std::abs(perceptual(fx, x, y).value() - perceptual_reference(fx, x, y)) < 1e-10);
}

TEST_CASE("divergence and perceptual losses pass finite-difference checks") {
  PrecisionGuard pg(Precision::Double);
  Tensor Q = random_segdist(2, 2, 3, 41);
  Tensor P = random_segdist(2, 2, 3, 42);
  Tensor Ql = make_leaf(Q.shape(), Q.values());
  CHECK(grad_check([&] { return kld(P, Ql); }, {Ql}) < 1e-4);
  CHECK(grad_check([&] { return jsd(P, Ql); }, {Ql}) < 1e-4);
  CHECK(grad_check([&] { return ce(P, Ql); }, {Ql}) < 1e-4);

  FeatureExtractor fx;
  Tensor x = random_tensor({8, 8, 3}, 43, 0.1, 0.9);
  Tensor xh = random_tensor({8, 8, 3}, 44, 0.1, 0.9, true);
  CHECK(grad_check([&] { return perceptual(fx, x, xh); }, {xh}) < 1e-3);
}

namespace {

struct CompositeBed {
  Codebook cb = Codebook::init(4, 2, 51);
  Tensor x = random_tensor({8, 8, 3}, 52, 0.0, 1.0);
  Tensor xhat = random_tensor({8, 8, 3}, 53, 0.0, 1.0);
  Tensor S = random_segdist(8, 8, 3, 54);
  Tensor Shat = random_segdist(8, 8, 3, 55);
  Tensor z_e = random_tensor({4, 4, 2}, 56);
  Tensor z_q;
  FeatureExtractor fx;

  CompositeBed() { z_q = dequantize(quantize(z_e, cb), cb); }

  CompositeInputs inputs(bool with_images = true, bool with_dists = true) {
    CompositeInputs in;
    if (with_images) {
      in.x = &x;
      in.xhat = &xhat;
    }
    if (with_dists) {
      in.S = &S;
      in.Shat = &Shat;
    }
    in.fx = &fx;
    return in;
  }
};

}  // namespace

TEST_CASE("composites assemble exactly their cited terms") {
  PrecisionGuard pg(Precision::Double);
  CompositeBed bed;
  auto in = bed.inputs();

  CompositeLoss lv = composite(CompositeScheme::Lv, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lv.values.reconstruction == doctest::Approx(mse(bed.x, bed.xhat).value()));
  CHECK(lv.values.divergence == 0.0);
  CHECK(lv.values.perceptual == 0.0);

  CompositeLoss ls = composite(CompositeScheme::Ls, in, bed.z_e, bed.z_q, 0.25);
  CHECK(ls.values.reconstruction == 0.0);
  CHECK(ls.values.divergence == doctest::Approx(jsd(bed.S, bed.Shat).value()).epsilon(1e-12));
  CHECK(ls.values.perceptual ==
        doctest::Approx(perceptual(bed.fx, bed.x, bed.xhat).value()).epsilon(1e-12));

  CompositeLoss lsc = composite(CompositeScheme::Lsc, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lsc.values.divergence == doctest::Approx(ce(bed.S, bed.Shat).value()).epsilon(1e-12));
  CHECK(lsc.values.perceptual == 0.0);
  CHECK(lsc.values.reconstruction == 0.0);

  CompositeLoss lvk = composite(CompositeScheme::Lvk, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lvk.values.reconstruction == doctest::Approx(mse(bed.x, bed.xhat).value()));
  CHECK(lvk.values.divergence == doctest::Approx(kld(bed.S, bed.Shat).value()).epsilon(1e-12));

  CompositeLoss lvp = composite(CompositeScheme::Lvp, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lvp.values.reconstruction == 0.0);
  CHECK(lvp.values.divergence == 0.0);
  CHECK(lvp.values.perceptual > 0.0);

  CompositeLoss lk = composite(CompositeScheme::Lk, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lk.values.perceptual == 0.0);
  CHECK(lk.values.divergence == doctest::Approx(kld(bed.S, bed.Shat).value()).epsilon(1e-12));

  CompositeLoss lkp = composite(CompositeScheme::Lkp, in, bed.z_e, bed.z_q, 0.25);
  CHECK(lkp.values.perceptual > 0.0);
  CHECK(lkp.values.divergence == doctest::Approx(kld(bed.S, bed.Shat).value()).epsilon(1e-12));
}

TEST_CASE("composite total equals the independent sum of its terms") {
  PrecisionGuard pg(Precision::Double);
  CompositeBed bed;
  auto in = bed.inputs();
  for (CompositeScheme s : {CompositeScheme::Lv, CompositeScheme::Ls, CompositeScheme::Lsc,
                            CompositeScheme::Lvk, CompositeScheme::Lvp, CompositeScheme::Lk,
                            CompositeScheme::Lkp}) {
    CompositeLoss l = composite(s, in, bed.z_e, bed.z_q, 0.25);
    const double sum = l.values.reconstruction + l.values.divergence + l.values.perceptual +
                       l.values.codebook + l.values.commitment;
    CHECK(l.values.total == sum);
    CHECK(l.values.total == doctest::Approx(l.total.value()).epsilon(1e-12));
  }
}

TEST_CASE("perfect reconstruction on codewords zeroes the vq composites") {
  PrecisionGuard pg(Precision::Double);
  CompositeBed bed;
  Tensor z_on = bed.z_q;  // exactly on codewords
  CompositeInputs in;
  in.x = &bed.x;
  in.xhat = &bed.x;
  in.S = &bed.S;
  in.Shat = &bed.S;
  in.fx = &bed.fx;
  CompositeLoss lv = composite(CompositeScheme::Lv, in, z_on, bed.z_q, 0.25);
  CHECK(lv.values.total == doctest::Approx(0.0).epsilon(1e-12));
  CompositeLoss ls = composite(CompositeScheme::Ls, in, z_on, bed.z_q, 0.25);
  CHECK(ls.values.total == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("composites demand the inputs their terms need") {
  CompositeBed bed;
  auto no_dists = bed.inputs(true, false);
  CHECK_THROWS_AS(composite(CompositeScheme::Ls, no_dists, bed.z_e, bed.z_q, 0.25), ValueError);
  auto no_images = bed.inputs(false, true);
  CHECK_THROWS_AS(composite(CompositeScheme::Lv, no_images, bed.z_e, bed.z_q, 0.25), ValueError);
  CHECK_THROWS_AS(composite(CompositeScheme::Lvp, no_images, bed.z_e, bed.z_q, 0.25), ValueError);
  auto no_fx = bed.inputs();
  no_fx.fx = nullptr;
  CHECK_THROWS_AS(composite(CompositeScheme::Lvp, no_fx, bed.z_e, bed.z_q, 0.25), ValueError);
  // Lvp needs no segmentation distributions at all.
  CHECK_NOTHROW(composite(CompositeScheme::Lvp, no_dists, bed.z_e, bed.z_q, 0.25));
}

TEST_CASE("teacher distribution never receives gradient through composites") {
  PrecisionGuard pg(Precision::Double);
  CompositeBed bed;
  Tensor S_leaf = make_leaf(bed.S.shape(), bed.S.values());
  Tensor Shat_leaf = make_leaf(bed.Shat.shape(), bed.Shat.values());
  CompositeInputs in = bed.inputs();
  in.S = &S_leaf;
  in.Shat = &Shat_leaf;
  for (CompositeScheme s :
       {CompositeScheme::Ls, CompositeScheme::Lsc, CompositeScheme::Lvk, CompositeScheme::Lk}) {
    S_leaf.zero_grad();
    Shat_leaf.zero_grad();
    CompositeLoss l = composite(s, in, bed.z_e, bed.z_q, 0.25);
    backward(l.total);
    CHECK_FALSE(S_leaf.has_grad());
    CHECK(Shat_leaf.has_grad());
  }
}

TEST_CASE("is_segdist accepts softmax outputs and rejects junk") {
  Tensor good = random_segdist(3, 3, 4, 61);
  CHECK(is_segdist(good));
  Tensor bad = random_tensor({3, 3, 4}, 62, -1.0, 1.0);
  CHECK_FALSE(is_segdist(bad));
}
