#include "gosvae/task.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gosvae/adam.hpp"
#include "gosvae/ops.hpp"
#include "gosvae/rng.hpp"

namespace gosvae {

namespace {

double validation_accuracy(const Network& net, const std::vector<LabeledScene>& val) {
  if (val.empty()) return 0.0;
  NoGradGuard ng;
  std::int64_t hit = 0, total = 0;
  for (const auto& scene : val) {
    Tensor dist = ops::softmax_channels(net.forward(scene.image));
    LabelMap pred = hard_labels(dist);
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
      hit += pred.v[i] == scene.labels.v[i];
      ++total;
    }
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

FrozenSegmenter pretrain_segmenter(const std::vector<LabeledScene>& train,
                                   const std::vector<LabeledScene>& val, int m, int epochs,
                                   std::uint64_t seed) {
  PretrainOptions opts;
  opts.epochs = epochs;
  return pretrain_segmenter(train, val, m, opts, seed);
}

FrozenSegmenter pretrain_segmenter(const std::vector<LabeledScene>& train,
                                   const std::vector<LabeledScene>& val, int m,
                                   const PretrainOptions& opts, std::uint64_t seed) {
  if (train.empty()) throw ValueError("pretrain_segmenter: empty training set");
  FrozenSegmenter F;
  F.m = m;
  F.net = build_segmenter(m, mix64(seed, 0x5e67));

  AdamConfig acfg;
  acfg.lr = opts.lr;
  Adam opt(F.net.params(), acfg);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng(mix64(seed, 0x0eb0c4, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opts.batch)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(opts.batch));
      Tensor loss;
      for (std::size_t i = b; i < e; ++i) {
        const auto& scene = train[order[i]];
        Tensor l = ops::cross_entropy_with_labels(F.net.forward(scene.image), scene.labels);
        loss = loss.defined() ? ops::add(loss, l) : l;
      }
      loss = ops::scale(loss, 1.0 / static_cast<double>(e - b));
      if (!std::isfinite(loss.value()))
        throw DivergenceError("pretrain_segmenter: non-finite loss at epoch " +
                              std::to_string(epoch));
      backward(loss);
      opt.step();
      opt.zero_grad();
    }
    if (!val.empty() && validation_accuracy(F.net, val) >= opts.early_stop_accuracy) break;
  }

  const double acc = validation_accuracy(F.net, val);
  if (!val.empty() && acc < opts.min_accuracy)
    throw ConvergenceError("pretrain_segmenter: validation accuracy " + std::to_string(acc) +
                           "% below required " + std::to_string(opts.min_accuracy) + "%");
  F.net.freeze();
  F.train_digest = F.net.digest();
  return F;
}

Tensor segment(const FrozenSegmenter& F, const Tensor& image) {
  return ops::softmax_channels(F.net.forward(image));
}

LabelMap hard_labels(const Tensor& segdist) {
  if (segdist.rank() != 3) throw ShapeError("hard_labels: expected [H,W,m]");
  const int m = segdist.dim(2);
  LabelMap out = LabelMap::zeros(segdist.dim(0), segdist.dim(1));
  const double* v = segdist.values().data();
  for (std::size_t p = 0; p < out.v.size(); ++p) {
    const double* row = v + p * m;
    int arg = 0;
    for (int c = 1; c < m; ++c)
      if (row[c] > row[arg]) arg = c;
    out.v[p] = static_cast<std::uint8_t>(arg);
  }
  return out;
}

Confusion::Confusion(int m) : m_(m), counts_(static_cast<std::size_t>(m) * m, 0) {
  if (m < 1) throw ValueError("confusion: m must be >= 1");
}

void Confusion::add(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("metrics: label map size mismatch");
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const int p = pred.v[i], g = gt.v[i];
    if (p >= m_ || g >= m_) throw ValueError("metrics: label out of range");
    ++counts_[static_cast<std::size_t>(g) * m_ + p];
  }
}

TaskMetrics Confusion::metrics() const {
  TaskMetrics out;
  out.per_class_iou.assign(static_cast<std::size_t>(m_),
                           std::numeric_limits<double>::quiet_NaN());
  std::int64_t diag = 0, total = 0;
  double iou_sum = 0.0;
  int present = 0;
  for (int c = 0; c < m_; ++c) {
    std::int64_t tp = counts_[static_cast<std::size_t>(c) * m_ + c];
    std::int64_t gt_c = 0, pred_c = 0;
    for (int o = 0; o < m_; ++o) {
      gt_c += counts_[static_cast<std::size_t>(c) * m_ + o];
      pred_c += counts_[static_cast<std::size_t>(o) * m_ + c];
    }
    const std::int64_t uni = gt_c + pred_c - tp;
    if (uni > 0) {
      const double iou = static_cast<double>(tp) / static_cast<double>(uni);
      out.per_class_iou[static_cast<std::size_t>(c)] = iou;
      iou_sum += iou;
      ++present;
    }
    diag += tp;
  }
  for (std::int64_t c : counts_) total += c;
  out.miou = present > 0 ? 100.0 * iou_sum / present : 0.0;
  out.accuracy = total > 0 ? 100.0 * static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  return out;
}

TaskMetrics metrics(const LabelMap& pred, const LabelMap& gt, int m) {
  Confusion c(m);
  c.add(pred, gt);
  return c.metrics();
}

Tensor imitation_target(const FrozenSegmenter& F, const Tensor& x) {
  NoGradGuard ng;
  return ops::stop_gradient(segment(F, x));
}

void save_segmenter(const std::string& path, const FrozenSegmenter& F) {
  TensorMap state = F.net.state();
  state["_meta"] = {{2}, {1.0, static_cast<double>(F.m)}};
  save_checkpoint(path, state);
}

FrozenSegmenter load_segmenter(const std::string& path) {
  TensorMap state = load_checkpoint(path);
  auto it = state.find("_meta");
  if (it == state.end() || it->second.values.size() != 2 || it->second.values[0] != 1.0)
    throw IoError("segmenter checkpoint: bad or missing _meta");
  FrozenSegmenter F;
  F.m = static_cast<int>(it->second.values[1]);
  F.net = build_segmenter(F.m, 0);
  F.net.load_state(state);
  F.net.freeze();
  F.train_digest = F.net.digest();
  return F;
}

}  // namespace gosvae
