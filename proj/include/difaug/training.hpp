#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "difaug/calibration.hpp"
#include "difaug/diffusion_augment.hpp"
#include "difaug/optim.hpp"
#include "difaug/params.hpp"
#include "difaug/rng.hpp"
#include "difaug/sr_models.hpp"
#include "difaug/synthetic.hpp"
#include "difaug/tape.hpp"
#include "difaug/tensor.hpp"

namespace difaug {

enum class Phase { kPretrain, kAdversarial };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

/// Which BCE targets the discriminator and generator losses use.
///   kStandard:     L_D = bce(D(F(hr)), 1) + bce(D(F(sr)), 0), L_adv = bce(D(F(sr)), 1)
///   kPaperLiteral: both targets swapped, so D learns to call HR fake.
enum class SignConvention { kStandard, kPaperLiteral };

std::string_view to_string(SignConvention convention);
// Accepts "standard" and "paper-literal".
SignConvention parse_sign_convention(std::string_view text);

struct TrainConfig {
  Phase phase = Phase::kPretrain;
  double lambda1 = 0.0;
  double lambda2 = 0.005;
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t total_iters = 1000;
  // nullopt trains the unaugmented baseline.
  std::optional<AugmentConfig> augment;
  std::size_t calib_probe_interval = 250;
  std::size_t calib_probe_crops = 1000;
  std::uint64_t seed = 0;
  SignConvention sign_convention = SignConvention::kStandard;
  // Real and fake discriminator inputs use the same drawn steps.
  bool share_t_real_fake = true;
  // The generator's adversarial pass reuses the steps drawn by the
  // discriminator step of the same iteration instead of drawing fresh ones.
  bool reuse_d_step_for_g = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Independent RNG streams, derived from the run seed with derive_seed.
enum class Stream : std::uint64_t {
  kData = 1,
  kDiscAugment = 2,
  kGenAugment = 3,
  kProbe = 4,
  kGenInit = 5,
  kDiscInit = 6,
  kPercep = 7,
};

std::uint64_t stream_seed(std::uint64_t seed, Stream stream);

template <typename T>
struct SrModels {
  GeneratorSpec gen_spec;
  DiscriminatorSpec disc_spec;
  ParamSet<T> gen;
  ParamSet<T> disc;
  AdamState<T> gen_opt;
  AdamState<T> disc_opt;
  // Frozen feature extractor for the perceptual surrogate.
  ParamSet<T> percep;
};

template <typename T>
SrModels<T> init_models(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec,
                        std::uint64_t seed);

template <typename T>
struct TrainBatch {
  Tensor<T> hr;     // [N,3,H,W]
  Tensor<T> lr;     // [N,3,H/4,W/4]
  Tensor<T> lr_up;  // bicubic x4 of lr
};

template <typename T>
TrainBatch<T> make_batch(std::span<const ImagePair* const> pairs);

// Seeded random-init probe: conv 3->16 (stride 1) and conv 16->16 (stride 2),
// each followed by leaky relu.
template <typename T>
ParamSet<T> make_percep_probe(std::uint64_t seed);

/// Mean over the two probe layers of the mean squared feature difference.
template <typename T>
Var percep_loss(Tape<T>& tape, std::span<const Var> probe, Var a, Var b);
template <typename T>
double percep_loss_surrogate(const Tensor<T>& a, const Tensor<T>& b, const ParamSet<T>& probe);

// Loss graphs on already computed logits, shared by the steps below.
template <typename T>
Var discriminator_loss(Tape<T>& tape, Var real_logits, Var fake_logits, SignConvention conv);
template <typename T>
Var adversarial_loss(Tape<T>& tape, Var fake_logits, SignConvention conv);

/// One Adam step on the mean absolute error between G(lr) and hr.
template <typename T>
double pretrain_step(SrModels<T>& models, const TrainBatch<T>& batch, const TrainConfig& cfg);

struct DiscStepResult {
  double d_loss = 0.0;
  std::vector<PredictionRecord> records;
  // Steps used for the real inputs (empty without augmentation).
  std::vector<int> steps;
};

/// One Adam step on the discriminator. The SR batch is generated without
/// gradient tracking; with augmentation both inputs are corrupted before D.
template <typename T>
DiscStepResult discriminator_step(SrModels<T>& models, const TrainBatch<T>& batch,
                                  const TrainConfig& cfg, Rng& rng);

struct GenStepResult {
  double pixel_loss = 0.0;
  double percep_loss = 0.0;
  double adv_loss = 0.0;
};

/// One Adam step on L_pixel + lambda1 * L_percep + lambda2 * L_adv with the
/// discriminator frozen. reuse_steps, when non-null, replaces the fresh step
/// draw. Terms with zero weight are evaluated for logging only.
template <typename T>
GenStepResult generator_step(SrModels<T>& models, const TrainBatch<T>& batch,
                             const TrainConfig& cfg, Rng& rng,
                             const std::vector<int>* reuse_steps = nullptr);

struct AdversarialStepResult {
  DiscStepResult disc;
  GenStepResult gen;
};

/// discriminator_step then generator_step on the same batch, sharing one
/// generator forward pass. Bit-identical to calling the two in sequence
/// (with reuse_steps = &disc.steps when cfg.reuse_d_step_for_g).
template <typename T>
AdversarialStepResult adversarial_step(SrModels<T>& models, const TrainBatch<T>& batch,
                                       const TrainConfig& cfg, Rng& disc_rng, Rng& gen_rng);

struct HistoryRow {
  std::size_t iter = 0;
  Phase phase = Phase::kPretrain;
  double pixel_loss = 0.0;
  double percep_loss = 0.0;
  double adv_loss = 0.0;
  double d_loss = 0.0;
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  double ece = 0.0;
  double disc_acc = 0.0;

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

inline constexpr std::string_view kHistoryHeader =
    "iter,phase,pixel_loss,percep_loss,adv_loss,d_loss,val_psnr,val_ssim,ece,disc_acc";

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> rows);
// Throws ParseError naming a missing column or the offending line.
std::vector<HistoryRow> read_history_csv(const std::filesystem::path& path);

/// Held-out evaluation data: validation HR/LR pairs as float tensors.
struct ValidationSet {
  std::vector<Tensor<float>> hr;
  std::vector<Tensor<float>> lr;
  std::vector<Tensor<float>> lr_up;
};

ValidationSet make_validation_set(const Dataset& dataset);

struct ProbeOptions {
  std::size_t crops = 1000;
  std::size_t crop_size = 64;
  std::size_t bins = kDefaultCalibrationBins;
  std::uint64_t seed = 0;
  SignConvention sign_convention = SignConvention::kStandard;
  // When set, crops are corrupted at this fixed step before D sees them.
  std::optional<int> eval_step;
  std::optional<AugmentConfig> augment;
};

struct ProbeResult {
  double val_psnr = 0.0;
  double val_ssim = 0.0;
  std::vector<PredictionRecord> records;
  CalibrationReport report;
};

/// PSNR/SSIM of the clamped SR output on every validation image, then D on
/// ceil(crops/2) HR crops and floor(crops/2) SR crops taken at the same
/// positions. Crop positions come from Rng(opts.seed) only.
ProbeResult run_probe(const SrModels<float>& models, const ValidationSet& val,
                      const ProbeOptions& opts);

/// Everything that is not a per-phase TrainConfig.
struct RunOptions {
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  std::size_t calib_bins = kDefaultCalibrationBins;
  std::optional<int> calib_eval_step;
  std::size_t checkpoint_interval = 1000;
  bool probes_enabled = true;
  // Echoed into run.json and checkpoints.
  nlohmann::json experiment = nlohmann::json::object();

  void validate() const;
};

struct IntervalStats {
  double pixel_sum = 0.0;
  double percep_sum = 0.0;
  double adv_sum = 0.0;
  double d_sum = 0.0;
  std::size_t pixel_count = 0;
  std::size_t gen_count = 0;
  std::size_t disc_count = 0;
};

struct Checkpoint {
  std::size_t iteration = 0;
  TrainConfig pretrain;
  TrainConfig adversarial;
  RunOptions options;
  DatasetManifest manifest;
  SrModels<float> models;
  std::string data_rng;
  std::string disc_aug_rng;
  std::string gen_aug_rng;
  IntervalStats stats;
  std::vector<HistoryRow> history;
};

inline constexpr std::string_view kCheckpointFormatVersion = "difaug-checkpoint-v1";

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct RunResult {
  Checkpoint final;
  std::filesystem::path final_checkpoint;
};

using ProbeCallback = std::function<void(const HistoryRow&)>;

/// Pretrain for cfg_pretrain.total_iters iterations, then alternate one
/// discriminator and one generator step for cfg_adversarial.total_iters. The
/// generator's Adam state is reset when the adversarial phase starts.
/// Writes history.csv, calib_<iter>.{csv,svg}, calib_<iter>_records.csv,
/// ckpt_<iter>/ and run.json under out_dir. A non-finite value aborts with a
/// NumericError after saving ckpt_<iter>_nonfinite/.
RunResult run_experiment(const TrainConfig& cfg_pretrain, const TrainConfig& cfg_adversarial,
                         const Dataset& dataset, const std::filesystem::path& out_dir,
                         const RunOptions& options = {}, const ProbeCallback& on_probe = {});

// Continues a run from a checkpoint written by run_experiment.
RunResult resume_experiment(const std::filesystem::path& checkpoint_dir, const Dataset& dataset,
                            const std::filesystem::path& out_dir,
                            const ProbeCallback& on_probe = {});
// Same, from a loaded (possibly edited) checkpoint. The pretrain phase never
// reads the augmentation settings, so a checkpoint taken at the end of
// pretraining can seed adversarial runs with different augment configs.
RunResult resume_experiment(Checkpoint checkpoint, const Dataset& dataset,
                            const std::filesystem::path& out_dir,
                            const ProbeCallback& on_probe = {});

}  // namespace difaug
