// Flat key = value run configuration: defaults, presets, file parsing, CLI
// overrides, validation, and run manifests that re-parse as configs.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metasaug/covariance.hpp"
#include "metasaug/losses.hpp"

namespace metasaug {

enum class HypergradMethod { kAnalyticLastLayer, kFiniteDifference };

// Every field maps to one config key (same name). String fields holding
// enumerations are validated by validate_config; -1 means "auto" where
// noted.
struct TrainConfig {
  // data and artifacts
  std::string train_csv;
  std::string val_csv;
  std::string test_csv;
  std::string out_dir = "runs/out";

  std::uint64_t seed = 1;
  std::string hidden_dims;  // comma-separated layer widths, empty = linear model

  // loss
  std::string base_loss = "ce";  // ce | focal | ldam
  double focal_gamma = 1.0;
  double ldam_max_margin = 0.5;
  double lambda = 0.5;  // augmentation strength
  double beta = -1.0;   // class-balance beta; -1 = auto (N-1)/N
  bool normalize_weights = true;
  bool reweight = false;
  int drw_start = -1;  // step where weights switch on; -1 = auto (see resolve_drw_start)

  // outer optimizer
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::string lr_schedule;  // "step:factor,step:factor"

  // meta phase
  double sigma_lr = 0.1;
  int t1 = 0;  // phase-switch step; steps [0, t1) train without augmentation
  int t2 = 0;  // total steps
  int batch_size = 100;
  int val_batch_size = 0;  // 0 = auto, min(10 * classes, validation size)
  std::string hypergrad = "analytic";  // analytic | fd
  double fd_h = 1e-5;
  std::string psd_policy = "none";  // none | project
  std::string reduction = "mean";   // mean | sum
  std::string ablation = "none";    // none | no-reweight | no-meta
  bool zero_init_bank = false;
  bool plain_final_step = false;
  bool strict_psd = false;
  bool bessel = false;
};

// Known preset names, in documentation order.
std::vector<std::string> preset_names();
// Overlays a preset's field values on cfg; throws ConfigError on unknown
// names. Presets fix the method, not durations or paths.
void apply_preset(TrainConfig& cfg, const std::string& name);

// One "key = value" per line; '#' starts a comment; keys prefixed "run."
// are manifest information and are skipped, so manifests re-parse as
// configs. Unknown keys are errors.
TrainConfig parse_config_file(const std::string& path);
// Same parsing, layered onto an existing config.
void apply_config_file(TrainConfig& cfg, const std::string& path);
void apply_config_line(TrainConfig& cfg, const std::string& line, const std::string& where);
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

// Stable key order, one per line; parse(serialize(cfg)) == cfg.
std::string serialize_config(const TrainConfig& cfg);

// Collects every violated key into one ConfigError.
void validate_config(const TrainConfig& cfg);

// Typed views of the string-backed fields. All assume validate_config passed.
std::vector<int> parsed_hidden_dims(const TrainConfig& cfg);
std::vector<std::pair<int, double>> parsed_lr_schedule(const TrainConfig& cfg);
Reduction parsed_reduction(const TrainConfig& cfg);
PsdPolicy parsed_psd_policy(const TrainConfig& cfg);
HypergradMethod parsed_hypergrad(const TrainConfig& cfg);
// Needs per-class train counts for the margin variant.
BaseLoss parsed_base_loss(const TrainConfig& cfg, const std::vector<int>& counts);
// -1 resolves to t1, so deferred weights enter exactly at the phase switch.
int resolve_drw_start(const TrainConfig& cfg);
// -1 resolves to (N-1)/N.
double resolve_beta(const TrainConfig& cfg, long long total_train_samples);

// 64-bit FNV-1a over the file bytes, hex-encoded. Content fingerprint for
// manifests, not a cryptographic hash.
std::uint64_t fnv1a_file(const std::string& path);
std::string fingerprint_hex(std::uint64_t h);

// Serialized config plus "run." info lines (fingerprints, timings, paths).
std::string manifest_text(const TrainConfig& cfg,
                          const std::vector<std::pair<std::string, std::string>>& run_info);

}  // namespace metasaug
