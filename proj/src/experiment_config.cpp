#include "difaug/experiment_config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "difaug/error.hpp"

namespace difaug {

using nlohmann::json;

namespace {

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads the keys of one JSON object and reports anything left unread.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + label() + "' must be a JSON object");
  }

  void read(const char* key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!non_negative_integer(*v)) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const char* key, std::uint64_t& out, int) {
    if (const json* v = take(key)) {
      if (!non_negative_integer(*v)) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(key, "a 32-bit integer");
      out = static_cast<int>(x);
    }
  }
  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void read(const char* key, std::optional<int>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_number_integer()) fail(key, "an integer or null");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(key, "a 32-bit integer");
      out = static_cast<int>(x);
    }
  }
  template <typename Parse>
  void read_enum(const char* key, Parse parse) {
    std::string text;
    if (take_peek(key)) {
      read(key, text);
      try {
        parse(text);
      } catch (const ConfigError& e) {
        throw ConfigError(label(key) + ": " + e.what());
      }
    }
  }

  // Sub-section, or nullopt when absent.
  std::optional<Section> child(const char* key) {
    if (const json* v = take(key)) return Section(*v, label(key));
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + label(it.key()) + "'");
    }
  }

 private:
  std::string label(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  bool take_peek(const char* key) const { return j_.contains(key); }
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("'" + label(key) + "' must be " + expected);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_phase(Section& s, PhaseSettings& p, bool adversarial) {
  s.read("total_iters", p.total_iters);
  s.read("batch_size", p.batch_size);
  s.read("lr", p.lr);
  s.read("calib_probe_interval", p.calib_probe_interval);
  if (adversarial) {
    s.read("lambda1", p.lambda1);
    s.read("lambda2", p.lambda2);
  }
  s.finish();
}

json phase_json(const PhaseSettings& p, bool adversarial) {
  json j = {{"total_iters", p.total_iters},
            {"batch_size", p.batch_size},
            {"lr", p.lr},
            {"calib_probe_interval", p.calib_probe_interval}};
  if (adversarial) {
    j["lambda1"] = p.lambda1;
    j["lambda2"] = p.lambda2;
  }
  return j;
}

}  // namespace

DatasetManifest ExperimentConfig::manifest() const {
  return make_manifest(dataset.seed, dataset.patch_size, dataset.count, dataset.val_count,
                       dataset.val_patch_size);
}

std::optional<AugmentConfig> ExperimentConfig::augment_config() const {
  if (!augment.enabled) return std::nullopt;
  AugmentConfig a;
  a.schedule = schedule;
  a.policy.max_step = max_step;
  a.eta = augment.eta;
  a.mode = augment.mode;
  a.share_t_across_batch = augment.share_t_across_batch;
  return a;
}

namespace {

TrainConfig phase_config(const ExperimentConfig& c, const PhaseSettings& p, Phase phase) {
  TrainConfig t;
  t.phase = phase;
  t.lambda1 = p.lambda1;
  t.lambda2 = p.lambda2;
  t.adam.lr = p.lr;
  t.adam.beta1 = c.train.adam_beta1;
  t.adam.beta2 = c.train.adam_beta2;
  t.adam.eps = c.train.adam_eps;
  t.batch_size = p.batch_size;
  t.total_iters = p.total_iters;
  t.augment = c.augment_config();
  t.calib_probe_interval = p.calib_probe_interval;
  t.calib_probe_crops = c.train.calib_probe_crops;
  t.seed = c.train.seed;
  t.sign_convention = c.train.sign_convention;
  t.share_t_real_fake = c.augment.share_t_real_fake;
  t.reuse_d_step_for_g = c.augment.reuse_d_step_for_g;
  return t;
}

}  // namespace

TrainConfig ExperimentConfig::pretrain_config() const {
  return phase_config(*this, train.pretrain, Phase::kPretrain);
}

TrainConfig ExperimentConfig::adversarial_config() const {
  return phase_config(*this, train.adversarial, Phase::kAdversarial);
}

RunOptions ExperimentConfig::run_options() const {
  RunOptions o;
  o.generator = generator;
  o.discriminator = discriminator;
  o.calib_bins = train.calib_bins;
  o.calib_eval_step = train.calib_eval_step;
  o.checkpoint_interval = train.checkpoint_interval;
  o.experiment = to_json(*this);
  return o;
}

void ExperimentConfig::validate() const {
  if (dataset.patch_size == 0 || dataset.patch_size % 4 != 0) {
    throw ConfigError("dataset.patch_size must be a positive multiple of 4");
  }
  if (dataset.val_patch_size == 0 || dataset.val_patch_size % 4 != 0) {
    throw ConfigError("dataset.val_patch_size must be a positive multiple of 4");
  }
  if (dataset.val_patch_size < dataset.patch_size) {
    throw ConfigError("dataset.val_patch_size must be at least dataset.patch_size");
  }
  if (dataset.count == 0) throw ConfigError("dataset.count must be positive");
  if (dataset.val_count == 0) throw ConfigError("dataset.val_count must be positive");
  const std::size_t stride = std::size_t{1} << discriminator.num_downsamples;
  if (dataset.patch_size % stride != 0) {
    throw ConfigError("dataset.patch_size must be divisible by 2^num_downsamples = " +
                      std::to_string(stride));
  }
  schedule.validate();
  if (max_step < 0 || max_step > schedule.total_steps) {
    throw ConfigError("schedule.max_step must be in [0, total_steps]");
  }
  if (auto a = augment_config()) a->validate();
  if (train.calib_eval_step) {
    if (!augment.enabled) throw ConfigError("train.calib_eval_step requires augment.enabled");
    if (*train.calib_eval_step < 0 || *train.calib_eval_step > schedule.total_steps) {
      throw ConfigError("train.calib_eval_step must be in [0, total_steps]");
    }
  }
  generator.validate();
  discriminator.validate();
  pretrain_config().validate();
  adversarial_config().validate();
  run_options().validate();
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"] = {{"seed", c.dataset.seed},
                  {"patch_size", c.dataset.patch_size},
                  {"count", c.dataset.count},
                  {"val_count", c.dataset.val_count},
                  {"val_patch_size", c.dataset.val_patch_size}};
  j["schedule"] = {{"beta_min", c.schedule.beta_min},
                   {"beta_max", c.schedule.beta_max},
                   {"total_steps", c.schedule.total_steps},
                   {"max_step", c.max_step}};
  j["augment"] = {{"enabled", c.augment.enabled},
                  {"eta", c.augment.eta},
                  {"mode", std::string(to_string(c.augment.mode))},
                  {"share_t_across_batch", c.augment.share_t_across_batch},
                  {"share_t_real_fake", c.augment.share_t_real_fake},
                  {"reuse_d_step_for_g", c.augment.reuse_d_step_for_g}};
  j["model"] = {{"generator",
                 {{"base_channels", c.generator.base_channels},
                  {"num_blocks", c.generator.num_blocks},
                  {"scale", c.generator.scale}}},
                {"discriminator",
                 {{"base_channels", c.discriminator.base_channels},
                  {"num_downsamples", c.discriminator.num_downsamples}}}};
  const TrainSettings& t = c.train;
  j["train"] = {{"seed", t.seed},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},
                {"sign_convention", std::string(to_string(t.sign_convention))},
                {"calib_probe_crops", t.calib_probe_crops},
                {"calib_bins", t.calib_bins},
                {"calib_eval_step", t.calib_eval_step ? json(*t.calib_eval_step) : json(nullptr)},
                {"checkpoint_interval", t.checkpoint_interval},
                {"pretrain", phase_json(t.pretrain, false)},
                {"adversarial", phase_json(t.adversarial, true)}};
  j["output"] = {{"dir", c.output_dir}};
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (auto s = root.child("dataset")) {
    s->read("seed", c.dataset.seed, 0);
    s->read("patch_size", c.dataset.patch_size);
    s->read("count", c.dataset.count);
    s->read("val_count", c.dataset.val_count);
    s->read("val_patch_size", c.dataset.val_patch_size);
    s->finish();
  }
  if (auto s = root.child("schedule")) {
    s->read("beta_min", c.schedule.beta_min);
    s->read("beta_max", c.schedule.beta_max);
    s->read("total_steps", c.schedule.total_steps);
    s->read("max_step", c.max_step);
    s->finish();
  }
  if (auto s = root.child("augment")) {
    s->read("enabled", c.augment.enabled);
    s->read("eta", c.augment.eta);
    s->read_enum("mode", [&](const std::string& v) { c.augment.mode = parse_augment_mode(v); });
    s->read("share_t_across_batch", c.augment.share_t_across_batch);
    s->read("share_t_real_fake", c.augment.share_t_real_fake);
    s->read("reuse_d_step_for_g", c.augment.reuse_d_step_for_g);
    s->finish();
  }
  if (auto s = root.child("model")) {
    if (auto g = s->child("generator")) {
      g->read("base_channels", c.generator.base_channels);
      g->read("num_blocks", c.generator.num_blocks);
      g->read("scale", c.generator.scale);
      g->finish();
    }
    if (auto d = s->child("discriminator")) {
      d->read("base_channels", c.discriminator.base_channels);
      d->read("num_downsamples", c.discriminator.num_downsamples);
      d->finish();
    }
    s->finish();
  }
  if (auto s = root.child("train")) {
    TrainSettings& t = c.train;
    s->read("seed", t.seed, 0);
    s->read("adam_beta1", t.adam_beta1);
    s->read("adam_beta2", t.adam_beta2);
    s->read("adam_eps", t.adam_eps);
    s->read_enum("sign_convention",
                 [&](const std::string& v) { t.sign_convention = parse_sign_convention(v); });
    s->read("calib_probe_crops", t.calib_probe_crops);
    s->read("calib_bins", t.calib_bins);
    s->read("calib_eval_step", t.calib_eval_step);
    s->read("checkpoint_interval", t.checkpoint_interval);
    if (auto p = s->child("pretrain")) read_phase(*p, t.pretrain, false);
    if (auto p = s->child("adversarial")) read_phase(*p, t.adversarial, true);
    s->finish();
  }
  if (auto s = root.child("output")) {
    s->read("dir", c.output_dir);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return experiment_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ExperimentConfig smoke_experiment_config() {
  ExperimentConfig c;
  c.dataset.patch_size = 32;
  c.dataset.count = 64;
  c.dataset.val_count = 4;
  c.dataset.val_patch_size = 64;
  c.generator.base_channels = 16;
  c.generator.num_blocks = 2;
  c.discriminator.base_channels = 16;
  c.train.calib_probe_crops = 200;
  c.train.checkpoint_interval = 100;
  c.train.pretrain.total_iters = 50;
  c.train.pretrain.batch_size = 4;
  c.train.pretrain.calib_probe_interval = 50;
  c.train.adversarial.total_iters = 150;
  c.train.adversarial.batch_size = 4;
  c.train.adversarial.calib_probe_interval = 50;
  c.output_dir = "runs/smoke";
  return c;
}

}  // namespace difaug
