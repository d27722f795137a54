#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "difaug/diffusion_augment.hpp"
#include "difaug/sr_models.hpp"
#include "difaug/synthetic.hpp"
#include "difaug/training.hpp"

namespace difaug {

struct DatasetSettings {
  std::uint64_t seed = 0;
  std::size_t patch_size = 64;
  std::size_t count = 400;
  std::size_t val_count = 16;
  std::size_t val_patch_size = 128;
};

struct AugmentSettings {
  bool enabled = true;
  double eta = 0.05;
  AugmentMode mode = AugmentMode::kLrMean;
  bool share_t_across_batch = true;
  bool share_t_real_fake = true;
  bool reuse_d_step_for_g = false;
};

struct PhaseSettings {
  std::size_t total_iters = 0;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  std::size_t calib_probe_interval = 250;
  double lambda1 = 0.0;
  double lambda2 = 0.005;
};

struct TrainSettings {
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  SignConvention sign_convention = SignConvention::kStandard;
  std::size_t calib_probe_crops = 1000;
  std::size_t calib_bins = 15;
  std::optional<int> calib_eval_step;
  std::size_t checkpoint_interval = 1000;
  PhaseSettings pretrain{1000};
  PhaseSettings adversarial{3000};
};

/// The experiment config file: sections dataset, schedule, augment, model,
/// train and output. Parsing is strict: unknown keys and wrongly typed values
/// are errors; absent keys take the defaults below.
struct ExperimentConfig {
  DatasetSettings dataset;
  NoiseSchedule schedule;
  int max_step = 1000;
  AugmentSettings augment;
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  TrainSettings train;
  std::string output_dir = "runs/default";

  DatasetManifest manifest() const;
  // nullopt when augmentation is disabled.
  std::optional<AugmentConfig> augment_config() const;
  TrainConfig pretrain_config() const;
  TrainConfig adversarial_config() const;
  RunOptions run_options() const;

  // Throws ConfigError describing the first invalid setting.
  void validate() const;
};

// Every key with its current value; to_json(ExperimentConfig{}) is the
// reference config.
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Small and fast preset used by smoke tests: 32 px patches, narrow models.
ExperimentConfig smoke_experiment_config();

}  // namespace difaug
