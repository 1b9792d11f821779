#include "gosvae/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gosvae/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace gosvae {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return n;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string csv_opt(const std::optional<double>& v) {
  return v ? format_g17(*v) : std::string();
}

}  // namespace

TrainConfig ExperimentConfig::train_config(Scheme scheme, std::uint64_t run_seed) const {
  TrainConfig tc;
  tc.scheme = scheme;
  tc.r = r;
  tc.K = K;
  tc.D = D;
  tc.beta = beta;
  tc.lr = lr;
  tc.epochs = epochs;
  tc.finetune_epochs = finetune_epochs;
  tc.batch = batch;
  tc.seed = run_seed;
  tc.variant = parse_variant(variant);
  tc.payload_coder = coder;
  if (scheme == Scheme::VQVAE_DAGGER || scheme == Scheme::GOSVAE_DAGGER) {
    tc.variant = Variant::Residual;
    tc.K = dagger_K;
  }
  return tc;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (val.empty()) throw ConfigError("config: key '" + key + "' has no value");

    if (key == "n_train") cfg.data.n_train = static_cast<int>(parse_int(key, val));
    else if (key == "n_val") cfg.data.n_val = static_cast<int>(parse_int(key, val));
    else if (key == "height") cfg.data.H = static_cast<int>(parse_int(key, val));
    else if (key == "width") cfg.data.W = static_cast<int>(parse_int(key, val));
    else if (key == "classes") cfg.data.m = static_cast<int>(parse_int(key, val));
    else if (key == "data_seed") cfg.data.master_seed = static_cast<std::uint64_t>(parse_int(key, val));
    else if (key == "schemes") {
      cfg.schemes.clear();
      for (const auto& s : split_list(val)) cfg.schemes.push_back(parse_scheme(s));
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& s : split_list(val))
        cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
      if (cfg.seeds.empty()) throw ConfigError("config: 'seeds' must not be empty");
    } else if (key == "r") cfg.r = static_cast<int>(parse_int(key, val));
    else if (key == "codebook_size") cfg.K = static_cast<int>(parse_int(key, val));
    else if (key == "dagger_codebook_size") cfg.dagger_K = static_cast<int>(parse_int(key, val));
    else if (key == "codeword_dim") cfg.D = static_cast<int>(parse_int(key, val));
    else if (key == "beta") cfg.beta = parse_double(key, val);
    else if (key == "lr") cfg.lr = parse_double(key, val);
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, val));
    else if (key == "finetune_epochs") cfg.finetune_epochs = static_cast<int>(parse_int(key, val));
    else if (key == "batch") cfg.batch = static_cast<int>(parse_int(key, val));
    else if (key == "variant") cfg.variant = val;
    else if (key == "coder") cfg.coder = static_cast<int>(parse_int(key, val));
    else if (key == "seg_epochs") cfg.seg_epochs = static_cast<int>(parse_int(key, val));
    else if (key == "ablate_epochs") cfg.ablate_epochs = static_cast<int>(parse_int(key, val));
    else if (key == "sweep_epochs") cfg.sweep_epochs = static_cast<int>(parse_int(key, val));
    else if (key == "sweep_finetune_epochs")
      cfg.sweep_finetune_epochs = static_cast<int>(parse_int(key, val));
    else if (key == "sweep_rs") {
      cfg.sweep_rs.clear();
      for (const auto& s : split_list(val)) cfg.sweep_rs.push_back(static_cast<int>(parse_int(key, s)));
    } else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, val));
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  if (cfg.data.m < 2 || cfg.data.m > kPaletteSize)
    throw ConfigError("config: classes must be in [2, " + std::to_string(kPaletteSize) + "]");
  if (cfg.K < 1 || cfg.K > 65535 || cfg.dagger_K < 1 || cfg.dagger_K > 65535)
    throw ConfigError("config: codebook sizes must be in [1, 65535]");
  if (cfg.coder != 0 && cfg.coder != 1) throw ConfigError("config: coder must be 0 or 1");
  if (cfg.lr <= 0.0) throw ConfigError("config: lr must be > 0");
  if (cfg.beta <= 0.0) throw ConfigError("config: beta must be > 0");
  if (cfg.batch < 1) throw ConfigError("config: batch must be >= 1");
  parse_variant(cfg.variant);  // validates
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  Bytes b = read_file(path);
  return parse_config(std::string(b.begin(), b.end()));
}

std::string run_dir_name(Scheme scheme, int r, std::uint64_t seed) {
  return std::string(scheme_name(scheme)) + "_r" + std::to_string(r) + "_seed" +
         std::to_string(seed);
}

Workbench prepare_workbench(const ExperimentConfig& cfg) {
  Workbench wb{make_dataset(cfg.data), {}, FeatureExtractor{}, 0.0, 0.0};
  wb.segmenter = pretrain_segmenter(wb.data.train, wb.data.val, cfg.data.m, cfg.seg_epochs,
                                    mix64(cfg.seed, 0x5e6));
  NoGradGuard ng;
  Confusion conf(cfg.data.m);
  for (const auto& scene : wb.data.val)
    conf.add(hard_labels(segment(wb.segmenter, scene.image)), scene.labels);
  TaskMetrics tm = conf.metrics();
  wb.segmenter_val_accuracy = tm.accuracy;
  wb.segmenter_val_miou = tm.miou;
  return wb;
}

std::string Report::csv() const {
  std::ostringstream os;
  for (const auto& n : notes) os << "# " << n << '\n';
  if (!std::isnan(gosvae_curve_correlation))
    os << "# gosvae_curve_correlation: " << format_g17(gosvae_curve_correlation) << '\n';
  os << "scheme,r,K,seed,params_count,payload_bytes,kib,miou,miou_min,miou_max,accuracy,mse,"
        "perceptual,status\n";
  for (const auto& row : rows) {
    os << row.scheme << ',' << row.r << ',' << row.K << ',' << row.seed << ','
       << row.params_count << ',' << format_g17(row.payload_bytes) << ',' << format_g17(row.kib)
       << ',' << format_g17(row.miou) << ',' << csv_opt(row.miou_min) << ','
       << csv_opt(row.miou_max) << ',' << format_g17(row.accuracy) << ',' << format_g17(row.mse)
       << ',' << format_g17(row.perceptual) << ',' << row.status << '\n';
  }
  return os.str();
}

std::string Report::json() const {
  ordered_json j;
  j["notes"] = notes;
  if (!std::isnan(gosvae_curve_correlation))
    j["gosvae_curve_correlation"] = gosvae_curve_correlation;
  j["rows"] = ordered_json::array();
  for (const auto& row : rows) {
    ordered_json r;
    r["scheme"] = row.scheme;
    r["r"] = row.r;
    r["K"] = row.K;
    r["seed"] = row.seed;
    r["params_count"] = row.params_count;
    r["payload_bytes"] = row.payload_bytes;
    r["kib"] = row.kib;
    r["miou"] = row.miou;
    if (row.miou_min) r["miou_min"] = *row.miou_min;
    if (row.miou_max) r["miou_max"] = *row.miou_max;
    r["accuracy"] = row.accuracy;
    r["mse"] = row.mse;
    r["perceptual"] = row.perceptual;
    r["status"] = row.status;
    j["rows"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

void Report::save(const std::string& dir, const std::string& stem) const {
  fs::create_directories(dir);
  const std::string c = csv();
  write_file((fs::path(dir) / (stem + ".csv")).string(),
             std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(c.data()),
                                           c.size()));
  const std::string js = json();
  write_file((fs::path(dir) / (stem + ".json")).string(),
             std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(js.data()),
                                           js.size()));
}

namespace {

std::vector<std::string> standard_notes(const ExperimentConfig& cfg, const Workbench& wb) {
  return {
      "miou/accuracy convention: corpus-level confusion accumulation over the validation split",
      "payload convention: mean total packet bytes over validation images, coder " +
          std::to_string(cfg.coder) + "; kib = bytes / 1024",
      "segmenter at freeze: validation accuracy " + format_g17(wb.segmenter_val_accuracy) +
          ", miou " + format_g17(wb.segmenter_val_miou),
      "segmenter digest: " + hex64(wb.segmenter.digest()),
      "extractor digest: " + hex64(wb.extractor.digest()),
  };
}

struct RunOutcome {
  ReportRow row;
  bool diverged = false;
  TrainingCurves curves;
};

// Trains one (scheme, seed) run, writing its checkpoint and curves under
// out_dir, and evaluates it. A matching pretrain checkpoint (same phase-1
// trajectory) is reused for two-phase schemes when available.
RunOutcome execute_run(const ExperimentConfig& cfg, const Workbench& wb, Scheme scheme,
                       TrainConfig tc, const fs::path& out_dir) {
  RunOutcome out;
  out.row.scheme = scheme_name(scheme);
  out.row.r = tc.r;
  out.row.K = tc.K;
  out.row.seed = tc.seed;

  const fs::path run_dir = out_dir / run_dir_name(scheme, tc.r, tc.seed);
  fs::create_directories(run_dir);

  try {
    TrainResult result;
    if (scheme_is_two_phase(scheme)) {
      Scheme pre = scheme == Scheme::GOSVAE_STAR ? Scheme::VQVAE : Scheme::VQVAE_DAGGER;
      const fs::path pre_ckpt =
          out_dir / run_dir_name(pre, tc.r, tc.seed) / "model.gosw";
      if (tc.pretrain_checkpoint.empty() && fs::exists(pre_ckpt)) {
        // Identical phase-1 trajectory: same seed, init and batch schedule.
        tc.pretrain_checkpoint = pre_ckpt.string();
      }
      result = tc.pretrain_checkpoint.empty()
                   ? pretrain_then_finetune(tc, wb.data, wb.segmenter, &wb.extractor)
                   : train(tc, wb.data, wb.segmenter, &wb.extractor);
    } else {
      const FeatureExtractor* fx = scheme_needs_extractor(scheme) ? &wb.extractor : nullptr;
      result = train(tc, wb.data, wb.segmenter, fx);
    }
    result.model.save((run_dir / "model.gosw").string());
    result.curves.save_csv((run_dir / "curves.csv").string());
    out.curves = result.curves;

    EvalResult ev = evaluate_model(result.model, wb.data.val, &wb.segmenter, &wb.extractor,
                                   cfg.coder);
    out.row.params_count = result.model.param_count();
    out.row.payload_bytes = ev.payload_bytes;
    out.row.kib = ev.payload_bytes / 1024.0;
    out.row.miou = ev.miou;
    out.row.accuracy = ev.accuracy;
    out.row.mse = ev.mse;
    out.row.perceptual = ev.perceptual;
  } catch (const DivergenceError& e) {
    out.diverged = true;
    out.row.status = std::string("diverged: ") + e.what();
    out.row.miou = std::numeric_limits<double>::quiet_NaN();
    out.row.accuracy = std::numeric_limits<double>::quiet_NaN();
    out.row.mse = std::numeric_limits<double>::quiet_NaN();
    out.row.perceptual = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// Mean/min/max aggregation across per-seed rows of one (scheme, r).
ReportRow aggregate_rows(const std::vector<RunOutcome>& seeds) {
  ReportRow agg = seeds.front().row;
  agg.seed = 0;
  int ok = 0, bad = 0;
  double miou = 0, acc = 0, mse_s = 0, per = 0, pay = 0;
  double mi_min = std::numeric_limits<double>::infinity();
  double mi_max = -std::numeric_limits<double>::infinity();
  for (const auto& s : seeds) {
    if (s.diverged) {
      ++bad;
      continue;
    }
    ++ok;
    miou += s.row.miou;
    acc += s.row.accuracy;
    mse_s += s.row.mse;
    per += s.row.perceptual;
    pay += s.row.payload_bytes;
    mi_min = std::min(mi_min, s.row.miou);
    mi_max = std::max(mi_max, s.row.miou);
  }
  if (ok > 0) {
    agg.miou = miou / ok;
    agg.accuracy = acc / ok;
    agg.mse = mse_s / ok;
    agg.perceptual = per / ok;
    agg.payload_bytes = pay / ok;
    agg.kib = agg.payload_bytes / 1024.0;
    agg.miou_min = mi_min;
    agg.miou_max = mi_max;
  } else {
    agg.miou = agg.accuracy = agg.mse = agg.perceptual =
        std::numeric_limits<double>::quiet_NaN();
  }
  agg.status = bad == 0 ? "ok" : ("diverged: " + std::to_string(bad) + "/" +
                                  std::to_string(seeds.size()) + " seeds");
  return agg;
}

}  // namespace

Report run_experiment(const ExperimentConfig& cfg) {
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  Workbench wb = prepare_workbench(cfg);
  save_segmenter((out_dir / "segmenter.gosw").string(), wb.segmenter);

  Report report;
  report.notes = standard_notes(cfg, wb);
  for (Scheme scheme : cfg.schemes) {
    RunOutcome out = execute_run(cfg, wb, scheme, cfg.train_config(scheme, cfg.seed), out_dir);
    report.rows.push_back(out.row);
  }
  report.save(cfg.out_dir, "report");
  return report;
}

Report sweep_r(const ExperimentConfig& cfg) {
  for (int r : cfg.sweep_rs)
    if (cfg.data.H % r != 0 || cfg.data.W % r != 0)
      throw ConfigError("sweep: dataset dims must be divisible by r=" + std::to_string(r));

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  Workbench wb = prepare_workbench(cfg);
  save_segmenter((out_dir / "segmenter.gosw").string(), wb.segmenter);

  Report report;
  report.notes = standard_notes(cfg, wb);
  report.notes.push_back("sweep budgets: epochs " + std::to_string(cfg.sweep_epochs) +
                         ", finetune " + std::to_string(cfg.sweep_finetune_epochs) + ", seeds " +
                         std::to_string(cfg.seeds.size()));
  for (Scheme scheme : cfg.schemes) {
    for (int r : cfg.sweep_rs) {
      std::vector<RunOutcome> outcomes;
      for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train_config(scheme, seed);
        tc.r = r;
        tc.epochs = cfg.sweep_epochs;
        tc.finetune_epochs = cfg.sweep_finetune_epochs;
        outcomes.push_back(execute_run(cfg, wb, scheme, tc, out_dir));
      }
      report.rows.push_back(aggregate_rows(outcomes));
    }
  }
  report.save(cfg.out_dir, "sweep");
  return report;
}

Report ablation_suite(const ExperimentConfig& cfg) {
  static const Scheme kAblation[] = {Scheme::ABL_CE,       Scheme::ABL_KLD,
                                     Scheme::ABL_VQ_KLD,   Scheme::ABL_VQ_LPIPS,
                                     Scheme::ABL_KLD_LPIPS, Scheme::GOSVAE};
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  Workbench wb = prepare_workbench(cfg);
  save_segmenter((out_dir / "segmenter.gosw").string(), wb.segmenter);

  Report report;
  report.notes = standard_notes(cfg, wb);
  report.notes.push_back("ablation budget: " + std::to_string(cfg.ablate_epochs) +
                         " epochs from scratch, seeds " + std::to_string(cfg.seeds.size()));
  std::vector<double> correlations;
  for (Scheme scheme : kAblation) {
    std::vector<RunOutcome> outcomes;
    for (std::uint64_t seed : cfg.seeds) {
      TrainConfig tc = cfg.train_config(scheme, seed);
      tc.epochs = cfg.ablate_epochs;
      outcomes.push_back(execute_run(cfg, wb, scheme, tc, out_dir));
      if (scheme == Scheme::GOSVAE && !outcomes.back().diverged) {
        const auto div = outcomes.back().curves.series_divergence();
        const auto per = outcomes.back().curves.series_perceptual();
        if (div.size() >= 3) correlations.push_back(curve_correlation(div, per));
      }
    }
    report.rows.push_back(aggregate_rows(outcomes));
  }
  if (!correlations.empty()) {
    double s = 0.0;
    for (double c : correlations) s += c;
    report.gosvae_curve_correlation = s / static_cast<double>(correlations.size());
    std::string per_seed = "gosvae per-seed curve correlations:";
    for (double c : correlations) per_seed += " " + format_g17(c);
    report.notes.push_back(per_seed);
  }
  report.save(cfg.out_dir, "ablation");
  return report;
}

EvalResult reevaluate_checkpoint(const std::string& checkpoint_path, const Workbench& wb,
                                 int coder) {
  VqModel model = VqModel::load(checkpoint_path);
  return evaluate_model(model, wb.data.val, &wb.segmenter, &wb.extractor, coder);
}

}  // namespace gosvae
