#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "gosvae/trainer.hpp"

namespace gosvae {

// One experiment = one dataset + one frozen segmenter + a list of training
// runs evaluated on the shared validation split.
struct ExperimentConfig {
  DatasetSpec data;
  std::vector<Scheme> schemes{Scheme::VQVAE, Scheme::GOSVAE_STAR};
  std::vector<std::uint64_t> seeds{1, 2, 3};  // multi-seed commands (sweep/ablate)

  // Shared hyperparameters applied to every scheme.
  int r = 4;
  int K = 64;
  int dagger_K = 256;  // codebook size used by the DAGGER schemes
  int D = 8;
  double beta = 0.25;
  double lr = 2e-4;
  int epochs = 50;
  int finetune_epochs = 20;
  int batch = 8;
  std::string variant = "shallow";
  int coder = 1;

  int seg_epochs = 10;
  int ablate_epochs = 20;
  int sweep_epochs = 20;
  int sweep_finetune_epochs = 8;
  std::vector<int> sweep_rs{2, 4, 8, 16, 32};

  std::string out_dir = "out";
  std::uint64_t seed = 1;  // global seed: segmenter pretrain + single-run schemes

  TrainConfig train_config(Scheme scheme, std::uint64_t run_seed) const;
};

// Flat key=value config file; '#' starts a comment. Unknown keys are errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);

struct ReportRow {
  std::string scheme;
  int r = 0;
  int K = 0;
  std::uint64_t seed = 0;
  std::int64_t params_count = 0;
  double payload_bytes = 0.0;
  double kib = 0.0;
  double miou = 0.0;
  double accuracy = 0.0;
  double mse = 0.0;
  double perceptual = 0.0;
  // Multi-seed aggregates (sweep/ablate rows); empty otherwise.
  std::optional<double> miou_min;
  std::optional<double> miou_max;
  std::string status = "ok";  // or "diverged: <what>"
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<std::string> notes;   // convention notes emitted as CSV comments
  double gosvae_curve_correlation = std::numeric_limits<double>::quiet_NaN();

  std::string csv() const;
  std::string json() const;
  void save(const std::string& dir, const std::string& stem) const;
};

// Dataset + frozen segmenter + perceptual extractor shared by every run of an
// experiment.
struct Workbench {
  Dataset data;
  FrozenSegmenter segmenter;
  FeatureExtractor extractor;
  double segmenter_val_accuracy = 0.0;
  double segmenter_val_miou = 0.0;
};

Workbench prepare_workbench(const ExperimentConfig& cfg);

// Trains (or fine-tunes) every scheme in cfg.schemes once with the global
// seed, evaluates each on validation, writes report.csv/report.json plus
// per-scheme curves and checkpoints under cfg.out_dir.
Report run_experiment(const ExperimentConfig& cfg);

// One aggregated row per (scheme, r) over cfg.sweep_rs x cfg.seeds, with
// min/max spread; divergent runs are flagged, not dropped.
Report sweep_r(const ExperimentConfig& cfg);

// The six-objective comparison on the shared dataset and segmenter; also
// emits the divergence-vs-perceptual training-curve correlation for GOSVAE.
Report ablation_suite(const ExperimentConfig& cfg);

// Re-evaluates a stored checkpoint against a freshly prepared workbench (the
// independent path behind the `report` subcommand).
EvalResult reevaluate_checkpoint(const std::string& checkpoint_path, const Workbench& wb,
                                 int coder);

std::string run_dir_name(Scheme scheme, int r, std::uint64_t seed);

}  // namespace gosvae
