#pragma once

#include <cstdint>
#include <vector>

#include "gosvae/datagen.hpp"
#include "gosvae/nets.hpp"
#include "gosvae/tensor.hpp"

namespace gosvae {

struct TaskMetrics {
  double miou = 0.0;      // percent, mean over classes present in the union
  double accuracy = 0.0;  // percent
  std::vector<double> per_class_iou;  // in [0,1]; NaN marks an absent class
};

// The downstream model: pre-trained on synthetic ground truth, then frozen.
// Any training that follows must leave its digest untouched.
struct FrozenSegmenter {
  Network net;
  int m = 0;
  std::uint64_t train_digest = 0;

  std::uint64_t digest() const { return net.digest(); }
};

struct PretrainOptions {
  int epochs = 10;
  int batch = 8;
  double lr = 2e-3;
  // Stop after the first epoch whose validation accuracy reaches this; the
  // stop rule is part of the deterministic trajectory.
  double early_stop_accuracy = 99.5;
  double min_accuracy = 90.0;  // below this the imitation target is useless
};

// Hard-label cross-entropy training against ground truth labels; freezes the
// net and records its digest. Throws ConvergenceError if validation pixel
// accuracy ends below opts.min_accuracy.
FrozenSegmenter pretrain_segmenter(const std::vector<LabeledScene>& train,
                                   const std::vector<LabeledScene>& val, int m, int epochs,
                                   std::uint64_t seed);
FrozenSegmenter pretrain_segmenter(const std::vector<LabeledScene>& train,
                                   const std::vector<LabeledScene>& val, int m,
                                   const PretrainOptions& opts, std::uint64_t seed);

// softmax_channels(F(x)); valid SegDist at any resolution.
Tensor segment(const FrozenSegmenter& F, const Tensor& image);

// Per-pixel argmax, ties to the lowest class index.
LabelMap hard_labels(const Tensor& segdist);

// Corpus-level confusion accumulator; metrics() is the single-map shortcut.
class Confusion {
 public:
  explicit Confusion(int m);
  void add(const LabelMap& pred, const LabelMap& gt);
  TaskMetrics metrics() const;
  int m() const { return m_; }

 private:
  int m_;
  std::vector<std::int64_t> counts_;  // gt-major m x m
};

TaskMetrics metrics(const LabelMap& pred, const LabelMap& gt, int m);

// segment(F, x) detached from the graph; the teacher side of every
// distribution loss.
Tensor imitation_target(const FrozenSegmenter& F, const Tensor& x);

// Segmenter checkpoints (shared container format, "_meta" holds m).
void save_segmenter(const std::string& path, const FrozenSegmenter& F);
FrozenSegmenter load_segmenter(const std::string& path);

}  // namespace gosvae
