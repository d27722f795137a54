#include "difaug/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "difaug/error.hpp"
#include "difaug/image.hpp"
#include "difaug/metrics.hpp"
#include "difaug/ops.hpp"
#include "difaug/parallel.hpp"
#include "difaug/resample.hpp"

namespace difaug {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Phase phase) {
  return phase == Phase::kPretrain ? "pretrain" : "adversarial";
}

Phase parse_phase(std::string_view text) {
  if (text == "pretrain") return Phase::kPretrain;
  if (text == "adversarial") return Phase::kAdversarial;
  throw ConfigError("unknown phase '" + std::string(text) +
                    "' (expected 'pretrain' or 'adversarial')");
}

std::string_view to_string(SignConvention convention) {
  return convention == SignConvention::kStandard ? "standard" : "paper-literal";
}

SignConvention parse_sign_convention(std::string_view text) {
  if (text == "standard") return SignConvention::kStandard;
  if (text == "paper-literal") return SignConvention::kPaperLiteral;
  throw ConfigError("unknown sign convention '" + std::string(text) +
                    "' (expected 'standard' or 'paper-literal')");
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (total_iters == 0) throw ConfigError("total_iters must be positive");
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) throw ConfigError("lambda1 must be >= 0");
  if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) throw ConfigError("lambda2 must be >= 0");
  if (phase == Phase::kAdversarial && !(lambda2 > 0.0)) {
    throw ConfigError("lambda2 must be > 0 in the adversarial phase");
  }
  if (calib_probe_interval == 0) throw ConfigError("calib_probe_interval must be positive");
  if (calib_probe_crops < 2) throw ConfigError("calib_probe_crops must be at least 2");
  if (augment) augment->validate();
}

namespace {

json augment_to_json(const AugmentConfig& a) {
  return {{"beta_min", a.schedule.beta_min},
          {"beta_max", a.schedule.beta_max},
          {"total_steps", a.schedule.total_steps},
          {"max_step", a.policy.max_step},
          {"eta", a.eta},
          {"mode", std::string(to_string(a.mode))},
          {"share_t_across_batch", a.share_t_across_batch}};
}

AugmentConfig augment_from_json(const json& j) {
  AugmentConfig a;
  a.schedule.beta_min = j.at("beta_min").get<double>();
  a.schedule.beta_max = j.at("beta_max").get<double>();
  a.schedule.total_steps = j.at("total_steps").get<int>();
  a.policy.max_step = j.at("max_step").get<int>();
  a.eta = j.at("eta").get<double>();
  a.mode = parse_augment_mode(j.at("mode").get<std::string>());
  a.share_t_across_batch = j.at("share_t_across_batch").get<bool>();
  return a;
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"phase", std::string(to_string(c.phase))},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lr", c.adam.lr},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"batch_size", c.batch_size},
          {"total_iters", c.total_iters},
          {"augment", c.augment ? augment_to_json(*c.augment) : json(nullptr)},
          {"calib_probe_interval", c.calib_probe_interval},
          {"calib_probe_crops", c.calib_probe_crops},
          {"seed", c.seed},
          {"sign_convention", std::string(to_string(c.sign_convention))},
          {"share_t_real_fake", c.share_t_real_fake},
          {"reuse_d_step_for_g", c.reuse_d_step_for_g}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.phase = parse_phase(j.at("phase").get<std::string>());
    c.lambda1 = j.at("lambda1").get<double>();
    c.lambda2 = j.at("lambda2").get<double>();
    c.adam.lr = j.at("lr").get<double>();
    c.adam.beta1 = j.at("adam_beta1").get<double>();
    c.adam.beta2 = j.at("adam_beta2").get<double>();
    c.adam.eps = j.at("adam_eps").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.total_iters = j.at("total_iters").get<std::size_t>();
    if (!j.at("augment").is_null()) c.augment = augment_from_json(j.at("augment"));
    c.calib_probe_interval = j.at("calib_probe_interval").get<std::size_t>();
    c.calib_probe_crops = j.at("calib_probe_crops").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.sign_convention = parse_sign_convention(j.at("sign_convention").get<std::string>());
    c.share_t_real_fake = j.at("share_t_real_fake").get<bool>();
    c.reuse_d_step_for_g = j.at("reuse_d_step_for_g").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

std::uint64_t stream_seed(std::uint64_t seed, Stream stream) {
  return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

template <typename T>
SrModels<T> init_models(const GeneratorSpec& gen_spec, const DiscriminatorSpec& disc_spec,
                        std::uint64_t seed) {
  SrModels<T> m;
  m.gen_spec = gen_spec;
  m.disc_spec = disc_spec;
  m.gen = init_generator<T>(gen_spec, stream_seed(seed, Stream::kGenInit));
  m.disc = init_discriminator<T>(disc_spec, stream_seed(seed, Stream::kDiscInit));
  m.gen.set_requires_grad(true);
  m.disc.set_requires_grad(true);
  m.gen_opt = make_adam_state(m.gen);
  m.disc_opt = make_adam_state(m.disc);
  m.percep = make_percep_probe<T>(stream_seed(seed, Stream::kPercep));
  return m;
}

template <typename T>
TrainBatch<T> make_batch(std::span<const ImagePair* const> pairs) {
  if (pairs.empty()) throw ShapeError("make_batch: empty batch");
  std::vector<const Image*> hr, lr;
  for (const ImagePair* p : pairs) {
    hr.push_back(&p->hr);
    lr.push_back(&p->lr);
  }
  TrainBatch<T> b;
  b.hr = stack_images<T>(hr);
  b.lr = stack_images<T>(lr);
  if (b.lr.dim(2) * kScaleFactor != b.hr.dim(2) || b.lr.dim(3) * kScaleFactor != b.hr.dim(3)) {
    throw ShapeError("make_batch: LR " + shape_str(b.lr.shape()) + " is not HR " +
                     shape_str(b.hr.shape()) + " / 4");
  }
  b.lr_up = bicubic_upsample(b.lr, kScaleFactor);
  return b;
}

template <typename T>
ParamSet<T> make_percep_probe(std::uint64_t seed) {
  ParamSet<T> p;
  p.add("probe.conv1.weight", Tensor<T>(Shape{16, 3, 3, 3}));
  p.add("probe.conv1.bias", Tensor<T>(Shape{16}));
  p.add("probe.conv2.weight", Tensor<T>(Shape{16, 16, 3, 3}));
  p.add("probe.conv2.bias", Tensor<T>(Shape{16}));
  for (std::size_t i = 0; i < p.size(); i += 2) {
    Tensor<T>& w = p[i];
    const double fan_in = static_cast<double>(w.dim(1) * w.dim(2) * w.dim(3));
    const double std = std::sqrt(2.0 / fan_in);
    Rng rng(derive_seed(seed, i));
    for (auto& v : w.data()) v = static_cast<T>(std * rng.normal());
  }
  return p;
}

namespace {

template <typename T>
std::pair<Var, Var> probe_features(Tape<T>& tape, std::span<const Var> probe, Var x) {
  Var f1 = ops::conv2d(tape, x, probe[0], 1, 1);
  f1 = ops::leaky_relu(tape, ops::bias_add(tape, f1, probe[1]));
  Var f2 = ops::conv2d(tape, f1, probe[2], 2, 1);
  f2 = ops::leaky_relu(tape, ops::bias_add(tape, f2, probe[3]));
  return {f1, f2};
}

template <typename T>
Var mean_sq_diff(Tape<T>& tape, Var a, Var b) {
  const Var d = ops::sub(tape, a, b);
  return ops::mean(tape, ops::mul(tape, d, d));
}

template <typename T>
Var mean_abs_diff(Tape<T>& tape, Var a, Var b) {
  const T inv = T{1} / static_cast<T>(tape.value(a).numel());
  return ops::scale(tape, ops::l1_distance(tape, a, b), inv);
}

template <typename T>
Tensor<T> generate_no_grad(const SrModels<T>& m, const Tensor<T>& lr, const Tensor<T>& lr_up) {
  Tape<T> tape;
  tape.set_check_finite(true);
  const auto g = m.gen.bind_frozen(tape);
  const Var out = generator_forward(tape, m.gen_spec, g, tape.constant(lr), tape.constant(lr_up));
  return tape.value(out);
}

template <typename T>
Var corrupt(Tape<T>& tape, Var x, const BatchCorruption<T>* plan) {
  if (!plan) return x;
  return ops::sample_affine(tape, x, plan->alphas, plan->offset);
}

}  // namespace

template <typename T>
Var percep_loss(Tape<T>& tape, std::span<const Var> probe, Var a, Var b) {
  if (probe.size() != 4) throw ConfigError("percep probe expects 4 tensors");
  const auto [a1, a2] = probe_features(tape, probe, a);
  const auto [b1, b2] = probe_features(tape, probe, b);
  const Var sum = ops::add(tape, mean_sq_diff(tape, a1, b1), mean_sq_diff(tape, a2, b2));
  return ops::scale(tape, sum, T{0.5});
}

template <typename T>
double percep_loss_surrogate(const Tensor<T>& a, const Tensor<T>& b, const ParamSet<T>& probe) {
  if (a.shape() != b.shape()) {
    throw ShapeError("percep loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tape<T> tape;
  const auto vars = probe.bind_frozen(tape);
  const Var l = percep_loss(tape, std::span<const Var>(vars), tape.constant(a), tape.constant(b));
  return static_cast<double>(tape.value(l)[0]);
}

template <typename T>
Var discriminator_loss(Tape<T>& tape, Var real_logits, Var fake_logits, SignConvention conv) {
  const T real_target = conv == SignConvention::kStandard ? T{1} : T{0};
  return ops::add(tape, ops::bce_with_logits(tape, real_logits, real_target),
                  ops::bce_with_logits(tape, fake_logits, T{1} - real_target));
}

template <typename T>
Var adversarial_loss(Tape<T>& tape, Var fake_logits, SignConvention conv) {
  return ops::bce_with_logits(tape, fake_logits,
                              conv == SignConvention::kStandard ? T{1} : T{0});
}

template <typename T>
double pretrain_step(SrModels<T>& m, const TrainBatch<T>& batch, const TrainConfig& cfg) {
  if (cfg.phase != Phase::kPretrain) throw ConfigError("pretrain_step needs a pretrain config");
  m.gen.zero_grad();
  Tape<T> tape;
  tape.set_check_finite(true);
  const auto g = m.gen.bind(tape);
  const Var sr = generator_forward(tape, m.gen_spec, g, tape.constant(batch.lr),
                                   tape.constant(batch.lr_up));
  const Var loss = mean_abs_diff(tape, sr, tape.constant(batch.hr));
  tape.backward(loss);
  adam_step(m.gen, m.gen_opt, cfg.adam);
  return static_cast<double>(tape.value(loss)[0]);
}

namespace {

template <typename T>
DiscStepResult disc_update(SrModels<T>& m, const TrainBatch<T>& batch, const Tensor<T>& fake,
                           const TrainConfig& cfg, Rng& rng) {
  const std::size_t n = batch.hr.dim(0);
  DiscStepResult out;
  std::optional<BatchCorruption<T>> real_plan, fake_plan;
  if (cfg.augment) {
    out.steps = draw_steps(n, *cfg.augment, rng);
    const std::vector<int> fake_steps =
        cfg.share_t_real_fake ? out.steps : draw_steps(n, *cfg.augment, rng);
    real_plan = plan_batch_corruption(batch.hr.shape(), &batch.lr_up,
                                      std::span<const int>(out.steps), *cfg.augment, rng);
    fake_plan = plan_batch_corruption(fake.shape(), &batch.lr_up,
                                      std::span<const int>(fake_steps), *cfg.augment, rng);
  }

  m.disc.zero_grad();
  Tape<T> tape;
  tape.set_check_finite(true);
  const auto d = m.disc.bind(tape);
  const Var xr = corrupt(tape, tape.constant(batch.hr), real_plan ? &*real_plan : nullptr);
  const Var xf = corrupt(tape, tape.constant(fake), fake_plan ? &*fake_plan : nullptr);
  const Var lr = discriminator_forward(tape, m.disc_spec, d, xr);
  const Var lf = discriminator_forward(tape, m.disc_spec, d, xf);
  const Var loss = discriminator_loss(tape, lr, lf, cfg.sign_convention);
  tape.backward(loss);
  adam_step(m.disc, m.disc_opt, cfg.adam);

  const double sign = cfg.sign_convention == SignConvention::kStandard ? 1.0 : -1.0;
  out.d_loss = static_cast<double>(tape.value(loss)[0]);
  out.records.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.records.push_back({sign * static_cast<double>(tape.value(lr)[i]), Label::kReal});
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.records.push_back({sign * static_cast<double>(tape.value(lf)[i]), Label::kFake});
  }
  return out;
}

// Finishes a generator step on a tape that already holds sr = G(lr).
template <typename T>
GenStepResult gen_update(SrModels<T>& m, const TrainBatch<T>& batch, const TrainConfig& cfg,
                         Rng& rng, const std::vector<int>* reuse_steps, Tape<T>& tape, Var sr) {
  const std::size_t n = batch.hr.dim(0);
  std::optional<BatchCorruption<T>> plan;
  if (cfg.augment) {
    std::vector<int> steps;
    if (reuse_steps) {
      if (reuse_steps->size() != n) throw ConfigError("reused steps do not match the batch");
      steps = *reuse_steps;
    } else {
      steps = draw_steps(n, *cfg.augment, rng);
    }
    plan = plan_batch_corruption(batch.hr.shape(), &batch.lr_up, std::span<const int>(steps),
                                 *cfg.augment, rng);
  }

  const Var hr = tape.constant(batch.hr);
  const Var pixel = mean_abs_diff(tape, sr, hr);
  Var total = pixel;

  GenStepResult out;
  if (cfg.lambda1 > 0.0) {
    const auto p = m.percep.bind_frozen(tape);
    const Var percep = percep_loss(tape, std::span<const Var>(p), sr, hr);
    total = ops::add(tape, total, ops::scale(tape, percep, static_cast<T>(cfg.lambda1)));
    out.percep_loss = static_cast<double>(tape.value(percep)[0]);
  } else {
    out.percep_loss = percep_loss_surrogate(tape.value(sr), batch.hr, m.percep);
  }

  if (cfg.lambda2 > 0.0) {
    const auto d = m.disc.bind_frozen(tape);
    const Var logits =
        discriminator_forward(tape, m.disc_spec, d, corrupt(tape, sr, plan ? &*plan : nullptr));
    const Var adv = adversarial_loss(tape, logits, cfg.sign_convention);
    total = ops::add(tape, total, ops::scale(tape, adv, static_cast<T>(cfg.lambda2)));
    out.adv_loss = static_cast<double>(tape.value(adv)[0]);
  } else {
    Tape<T> side;
    const auto d = m.disc.bind_frozen(side);
    const Var x = corrupt(side, side.constant(tape.value(sr)), plan ? &*plan : nullptr);
    const Var adv =
        adversarial_loss(side, discriminator_forward(side, m.disc_spec, d, x), cfg.sign_convention);
    out.adv_loss = static_cast<double>(side.value(adv)[0]);
  }

  tape.backward(total);
  adam_step(m.gen, m.gen_opt, cfg.adam);
  out.pixel_loss = static_cast<double>(tape.value(pixel)[0]);
  return out;
}

template <typename T>
Var tracked_generator(Tape<T>& tape, SrModels<T>& m, const TrainBatch<T>& batch) {
  m.gen.zero_grad();
  tape.set_check_finite(true);
  const auto g = m.gen.bind(tape);
  return generator_forward(tape, m.gen_spec, g, tape.constant(batch.lr),
                           tape.constant(batch.lr_up));
}

void require_adversarial(const TrainConfig& cfg, const char* what) {
  if (cfg.phase != Phase::kAdversarial) {
    throw ConfigError(std::string(what) + " needs an adversarial config");
  }
}

}  // namespace

template <typename T>
DiscStepResult discriminator_step(SrModels<T>& m, const TrainBatch<T>& batch,
                                  const TrainConfig& cfg, Rng& rng) {
  require_adversarial(cfg, "discriminator_step");
  return disc_update(m, batch, generate_no_grad(m, batch.lr, batch.lr_up), cfg, rng);
}

template <typename T>
GenStepResult generator_step(SrModels<T>& m, const TrainBatch<T>& batch, const TrainConfig& cfg,
                             Rng& rng, const std::vector<int>* reuse_steps) {
  require_adversarial(cfg, "generator_step");
  Tape<T> tape;
  const Var sr = tracked_generator(tape, m, batch);
  return gen_update(m, batch, cfg, rng, reuse_steps, tape, sr);
}

template <typename T>
AdversarialStepResult adversarial_step(SrModels<T>& m, const TrainBatch<T>& batch,
                                       const TrainConfig& cfg, Rng& disc_rng, Rng& gen_rng) {
  require_adversarial(cfg, "adversarial_step");
  Tape<T> tape;
  const Var sr = tracked_generator(tape, m, batch);
  AdversarialStepResult out;
  out.disc = disc_update(m, batch, tape.value(sr), cfg, disc_rng);
  out.gen = gen_update(m, batch, cfg, gen_rng, cfg.reuse_d_step_for_g ? &out.disc.steps : nullptr,
                       tape, sr);
  return out;
}

// ---------------------------------------------------------------------------
// History CSV

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_history_csv(const fs::path& path, std::span<const HistoryRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << kHistoryHeader << '\n';
  for (const HistoryRow& r : rows) {
    out << r.iter << ',' << to_string(r.phase) << ',' << fmt(r.pixel_loss) << ','
        << fmt(r.percep_loss) << ',' << fmt(r.adv_loss) << ',' << fmt(r.d_loss) << ','
        << fmt(r.val_psnr) << ',' << fmt(r.val_ssim) << ',' << fmt(r.ece) << ','
        << fmt(r.disc_acc) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<HistoryRow> read_history_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty history file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  const std::vector<std::string> required = split_csv(std::string(kHistoryHeader));
  for (const std::string& name : required) {
    if (!col.count(name)) {
      throw ParseError(path.string() + ": history CSV is missing column '" + name + "'");
    }
  }

  std::vector<HistoryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(cells.size()));
    }
    auto num = [&](const std::string& name) {
      const std::string& s = cells[col[name]];
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || *end != '\0') {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad " + name +
                         " value '" + s + "'");
      }
      return v;
    };
    HistoryRow r;
    const double iter = num("iter");
    if (iter < 0 || iter != std::floor(iter)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad iter");
    }
    r.iter = static_cast<std::size_t>(iter);
    try {
      r.phase = parse_phase(cells[col["phase"]]);
    } catch (const ConfigError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    r.pixel_loss = num("pixel_loss");
    r.percep_loss = num("percep_loss");
    r.adv_loss = num("adv_loss");
    r.d_loss = num("d_loss");
    r.val_psnr = num("val_psnr");
    r.val_ssim = num("val_ssim");
    r.ece = num("ece");
    r.disc_acc = num("disc_acc");
    rows.push_back(r);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Probes

ValidationSet make_validation_set(const Dataset& dataset) {
  if (dataset.val.empty()) throw ConfigError("dataset has no validation pairs");
  ValidationSet v;
  for (const ImagePair& p : dataset.val) {
    v.hr.push_back(to_tensor<float>(p.hr));
    v.lr.push_back(to_tensor<float>(p.lr));
    v.lr_up.push_back(bicubic_upsample(v.lr.back(), kScaleFactor));
  }
  return v;
}

namespace {

struct CropPos {
  std::size_t image = 0;
  std::size_t y = 0;
  std::size_t x = 0;
};

void copy_crop(const Tensor<float>& src, const CropPos& pos, std::size_t size, float* dst) {
  const std::size_t h = src.dim(1), w = src.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      const float* row = src.data().data() + (c * h + pos.y + y) * w + pos.x;
      std::copy(row, row + size, dst + (c * size + y) * size);
    }
  }
}

Tensor<float> stack_crops(const std::vector<Tensor<float>>& images,
                          std::span<const CropPos> positions, std::size_t size) {
  Tensor<float> out(Shape{positions.size(), 3, size, size});
  const std::size_t per = 3 * size * size;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    copy_crop(images[positions[i].image], positions[i], size, out.data().data() + i * per);
  }
  return out;
}

}  // namespace

ProbeResult run_probe(const SrModels<float>& models, const ValidationSet& val,
                      const ProbeOptions& opts) {
  if (val.hr.empty()) throw ConfigError("probe needs at least one validation image");
  if (opts.crops < 2) throw ConfigError("probe needs at least 2 crops");
  if (opts.eval_step && !opts.augment) {
    throw ConfigError("calib_eval_step requires an augmentation config");
  }
  const std::size_t n_val = val.hr.size();
  std::vector<Tensor<float>> sr(n_val);
  std::vector<double> psnrs(n_val), ssims(n_val);
  for (std::size_t i = 0; i < n_val; ++i) {
    sr[i] = generate_no_grad(models, val.lr[i], val.lr_up[i]);
    Image out = image_from_tensor(sr[i]);
    out.clamp();
    const Image ref = image_from_tensor(val.hr[i]);
    psnrs[i] = psnr(out, ref);
    ssims[i] = ssim(out, ref);
  }
  ProbeResult res;
  for (std::size_t i = 0; i < n_val; ++i) {
    res.val_psnr += psnrs[i] / static_cast<double>(n_val);
    res.val_ssim += ssims[i] / static_cast<double>(n_val);
  }

  const std::size_t size = opts.crop_size;
  const std::size_t h = val.hr[0].dim(1), w = val.hr[0].dim(2);
  if (size > h || size > w) {
    throw ConfigError("probe crop size " + std::to_string(size) + " exceeds validation image");
  }
  Rng rng(opts.seed);
  const std::size_t n_real = (opts.crops + 1) / 2;
  const std::size_t n_fake = opts.crops / 2;
  std::vector<CropPos> pos(n_real);
  for (CropPos& p : pos) {
    p.image = rng.uniform_int(n_val - 1);
    p.y = rng.uniform_int(h - size);
    p.x = rng.uniform_int(w - size);
  }

  const double sign = opts.sign_convention == SignConvention::kStandard ? 1.0 : -1.0;
  constexpr std::size_t kChunk = 50;
  auto score = [&](const std::vector<Tensor<float>>& source, std::size_t count, Label label) {
    for (std::size_t start = 0; start < count; start += kChunk) {
      const std::size_t len = std::min(kChunk, count - start);
      const std::span<const CropPos> chunk(pos.data() + start, len);
      Tensor<float> x = stack_crops(source, chunk, size);
      if (opts.eval_step) {
        const Tensor<float> up = stack_crops(val.lr_up, chunk, size);
        const std::vector<int> steps(len, *opts.eval_step);
        const BatchCorruption<float> plan = plan_batch_corruption(
            x.shape(), &up, std::span<const int>(steps), *opts.augment, rng);
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t per = x.numel() / len;
          for (std::size_t k = i * per; k < (i + 1) * per; ++k) {
            x[k] = plan.alphas[i] * x[k] + plan.offset[k];
          }
        }
      }
      const Tensor<float> logits = discriminate(models.disc_spec, models.disc, x);
      for (std::size_t i = 0; i < len; ++i) {
        res.records.push_back({sign * static_cast<double>(logits[i]), label});
      }
    }
  };
  score(val.hr, n_real, Label::kReal);
  score(sr, n_fake, Label::kFake);
  res.report = compute_ece(res.records, opts.bins);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

void RunOptions::validate() const {
  generator.validate();
  discriminator.validate();
  if (calib_bins == 0) throw ConfigError("calib_bins must be positive");
  if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be positive");
}

namespace {

json options_to_json(const RunOptions& o) {
  return {{"generator", to_json(o.generator)},
          {"discriminator", to_json(o.discriminator)},
          {"calib_bins", o.calib_bins},
          {"calib_eval_step", o.calib_eval_step ? json(*o.calib_eval_step) : json(nullptr)},
          {"checkpoint_interval", o.checkpoint_interval},
          {"probes_enabled", o.probes_enabled},
          {"experiment", o.experiment}};
}

RunOptions options_from_json(const json& j) {
  RunOptions o;
  o.generator = generator_spec_from_json(j.at("generator"));
  o.discriminator = discriminator_spec_from_json(j.at("discriminator"));
  o.calib_bins = j.at("calib_bins").get<std::size_t>();
  if (!j.at("calib_eval_step").is_null()) o.calib_eval_step = j.at("calib_eval_step").get<int>();
  o.checkpoint_interval = j.at("checkpoint_interval").get<std::size_t>();
  o.probes_enabled = j.at("probes_enabled").get<bool>();
  o.experiment = j.at("experiment");
  return o;
}

json stats_to_json(const IntervalStats& s) {
  return {{"pixel_sum", s.pixel_sum},   {"percep_sum", s.percep_sum}, {"adv_sum", s.adv_sum},
          {"d_sum", s.d_sum},           {"pixel_count", s.pixel_count},
          {"gen_count", s.gen_count},   {"disc_count", s.disc_count}};
}

IntervalStats stats_from_json(const json& j) {
  IntervalStats s;
  s.pixel_sum = j.at("pixel_sum").get<double>();
  s.percep_sum = j.at("percep_sum").get<double>();
  s.adv_sum = j.at("adv_sum").get<double>();
  s.d_sum = j.at("d_sum").get<double>();
  s.pixel_count = j.at("pixel_count").get<std::size_t>();
  s.gen_count = j.at("gen_count").get<std::size_t>();
  s.disc_count = j.at("disc_count").get<std::size_t>();
  return s;
}

json row_to_json(const HistoryRow& r) {
  return {{"iter", r.iter},         {"phase", std::string(to_string(r.phase))},
          {"pixel_loss", r.pixel_loss}, {"percep_loss", r.percep_loss},
          {"adv_loss", r.adv_loss}, {"d_loss", r.d_loss},
          {"val_psnr", r.val_psnr}, {"val_ssim", r.val_ssim},
          {"ece", r.ece},           {"disc_acc", r.disc_acc}};
}

HistoryRow row_from_json(const json& j) {
  HistoryRow r;
  r.iter = j.at("iter").get<std::size_t>();
  r.phase = parse_phase(j.at("phase").get<std::string>());
  r.pixel_loss = j.at("pixel_loss").get<double>();
  r.percep_loss = j.at("percep_loss").get<double>();
  r.adv_loss = j.at("adv_loss").get<double>();
  r.d_loss = j.at("d_loss").get<double>();
  r.val_psnr = j.at("val_psnr").get<double>();
  r.val_ssim = j.at("val_ssim").get<double>();
  r.ece = j.at("ece").get<double>();
  r.disc_acc = j.at("disc_acc").get<double>();
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());

  const json gen_meta = {{"generator", to_json(ck.models.gen_spec)}};
  const json disc_meta = {{"discriminator", to_json(ck.models.disc_spec)}};
  save_params(tmp / "gen.params", ck.models.gen, gen_meta);
  save_params(tmp / "disc.params", ck.models.disc, disc_meta);
  save_params(tmp / "gen_adam_m.params", ck.models.gen_opt.m);
  save_params(tmp / "gen_adam_v.params", ck.models.gen_opt.v);
  save_params(tmp / "disc_adam_m.params", ck.models.disc_opt.m);
  save_params(tmp / "disc_adam_v.params", ck.models.disc_opt.v);

  json state;
  state["version"] = kCheckpointFormatVersion;
  state["iteration"] = ck.iteration;
  state["pretrain"] = to_json(ck.pretrain);
  state["adversarial"] = to_json(ck.adversarial);
  state["options"] = options_to_json(ck.options);
  state["manifest"] = manifest_to_json(ck.manifest);
  state["generator"] = to_json(ck.models.gen_spec);
  state["discriminator"] = to_json(ck.models.disc_spec);
  state["gen_adam_step"] = ck.models.gen_opt.step;
  state["disc_adam_step"] = ck.models.disc_opt.step;
  state["rng"] = {{"data", ck.data_rng}, {"disc_augment", ck.disc_aug_rng},
                  {"gen_augment", ck.gen_aug_rng}};
  state["stats"] = stats_to_json(ck.stats);
  json hist = json::array();
  for (const HistoryRow& r : ck.history) hist.push_back(row_to_json(r));
  state["history"] = std::move(hist);
  write_text(tmp / "state.json", state.dump(2) + "\n");

  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const json state = read_json_file(dir / "state.json");
  try {
    if (state.at("version").get<std::string>() != kCheckpointFormatVersion) {
      throw ParseError(dir.string() + ": unsupported checkpoint version " +
                       state.at("version").dump());
    }
    Checkpoint ck;
    ck.iteration = state.at("iteration").get<std::size_t>();
    ck.pretrain = train_config_from_json(state.at("pretrain"));
    ck.adversarial = train_config_from_json(state.at("adversarial"));
    ck.options = options_from_json(state.at("options"));
    ck.manifest = manifest_from_json(state.at("manifest"));

    SrModels<float>& m = ck.models;
    m.gen_spec = generator_spec_from_json(state.at("generator"));
    m.disc_spec = discriminator_spec_from_json(state.at("discriminator"));
    m.gen = load_params<float>(dir / "gen.params").params;
    m.disc = load_params<float>(dir / "disc.params").params;
    check_generator_params(m.gen_spec, m.gen);
    check_discriminator_params(m.disc_spec, m.disc);
    m.gen.set_requires_grad(true);
    m.disc.set_requires_grad(true);
    m.gen_opt.m = load_params<float>(dir / "gen_adam_m.params").params;
    m.gen_opt.v = load_params<float>(dir / "gen_adam_v.params").params;
    m.disc_opt.m = load_params<float>(dir / "disc_adam_m.params").params;
    m.disc_opt.v = load_params<float>(dir / "disc_adam_v.params").params;
    m.gen_opt.step = state.at("gen_adam_step").get<std::int64_t>();
    m.disc_opt.step = state.at("disc_adam_step").get<std::int64_t>();
    m.percep = make_percep_probe<float>(stream_seed(ck.adversarial.seed, Stream::kPercep));

    const json& rng = state.at("rng");
    ck.data_rng = rng.at("data").get<std::string>();
    ck.disc_aug_rng = rng.at("disc_augment").get<std::string>();
    ck.gen_aug_rng = rng.at("gen_augment").get<std::string>();
    ck.stats = stats_from_json(state.at("stats"));
    for (const json& r : state.at("history")) ck.history.push_back(row_from_json(r));
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + "/state.json: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Experiment loop

namespace {

class Runner {
 public:
  Runner(Checkpoint state, const Dataset& dataset, fs::path out_dir, ProbeCallback on_probe)
      : s_(std::move(state)), out_(std::move(out_dir)), on_probe_(std::move(on_probe)) {
    if (dataset.train.empty()) throw ConfigError("dataset has no training pairs");
    for (const ImagePair& p : dataset.train) {
      hr_.push_back(to_tensor<float>(p.hr));
      lr_.push_back(to_tensor<float>(p.lr));
      up_.push_back(bicubic_upsample(lr_.back(), kScaleFactor));
    }
    if (s_.options.probes_enabled) val_ = make_validation_set(dataset);
    data_.set_state(s_.data_rng);
    disc_aug_.set_state(s_.disc_aug_rng);
    gen_aug_.set_state(s_.gen_aug_rng);
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create " + out_.string() + ": " + ec.message());
  }

  RunResult run() {
    const std::size_t p_iters = s_.pretrain.total_iters;
    const std::size_t total = p_iters + s_.adversarial.total_iters;
    write_run_json();
    if (s_.iteration == 0 && s_.history.empty() && s_.options.probes_enabled) {
      probe(0, Phase::kPretrain);
    }
    SrModels<float>& m = s_.models;
    while (s_.iteration < total) {
      const bool adversarial = s_.iteration >= p_iters;
      const TrainConfig& cfg = adversarial ? s_.adversarial : s_.pretrain;
      try {
        const TrainBatch<float> batch = sample_batch(cfg.batch_size);
        if (!adversarial) {
          s_.stats.pixel_sum += pretrain_step(m, batch, cfg);
          ++s_.stats.pixel_count;
        } else {
          if (s_.iteration == p_iters) m.gen_opt = make_adam_state(m.gen);
          const AdversarialStepResult step = adversarial_step(m, batch, cfg, disc_aug_, gen_aug_);
          const DiscStepResult& d = step.disc;
          const GenStepResult& g = step.gen;
          s_.stats.d_sum += d.d_loss;
          ++s_.stats.disc_count;
          s_.stats.pixel_sum += g.pixel_loss;
          ++s_.stats.pixel_count;
          s_.stats.percep_sum += g.percep_loss;
          s_.stats.adv_sum += g.adv_loss;
          ++s_.stats.gen_count;
        }
      } catch (const NumericError& e) {
        const fs::path diag = out_ / ("ckpt_" + std::to_string(s_.iteration) + "_nonfinite");
        save(diag);
        throw NumericError(std::string(e.what()) + " at iteration " +
                           std::to_string(s_.iteration) +
                           "; diagnostic checkpoint: " + diag.string());
      }
      ++s_.iteration;
      const std::size_t local = adversarial ? s_.iteration - p_iters : s_.iteration;
      const bool boundary = s_.iteration == p_iters || s_.iteration == total;
      if (s_.options.probes_enabled && (local % cfg.calib_probe_interval == 0 || boundary)) {
        probe(s_.iteration, cfg.phase);
      }
      if (s_.iteration % s_.options.checkpoint_interval == 0 || boundary) {
        save(out_ / ("ckpt_" + std::to_string(s_.iteration)));
      }
    }
    RunResult res;
    res.final_checkpoint = out_ / ("ckpt_" + std::to_string(s_.iteration));
    if (!fs::exists(res.final_checkpoint)) save(res.final_checkpoint);
    json fin = {{"iteration", s_.iteration},
                {"checkpoint", res.final_checkpoint.filename().string()}};
    if (!s_.history.empty()) fin["final"] = row_to_json(s_.history.back());
    write_text(out_ / "final.json", fin.dump(2) + "\n");
    sync_rng();
    res.final = std::move(s_);
    return res;
  }

 private:
  TrainBatch<float> sample_batch(std::size_t n) {
    const std::size_t count = hr_.size();
    const Shape& hs = hr_[0].shape();
    const Shape& ls = lr_[0].shape();
    TrainBatch<float> b;
    b.hr = Tensor<float>(Shape{n, hs[0], hs[1], hs[2]});
    b.lr = Tensor<float>(Shape{n, ls[0], ls[1], ls[2]});
    b.lr_up = Tensor<float>(Shape{n, hs[0], hs[1], hs[2]});
    const std::size_t hp = hr_[0].numel(), lp = lr_[0].numel();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = data_.uniform_int(count - 1);
      std::copy(hr_[k].data().begin(), hr_[k].data().end(), b.hr.data().begin() + i * hp);
      std::copy(lr_[k].data().begin(), lr_[k].data().end(), b.lr.data().begin() + i * lp);
      std::copy(up_[k].data().begin(), up_[k].data().end(), b.lr_up.data().begin() + i * hp);
    }
    return b;
  }

  void probe(std::size_t iter, Phase phase) {
    const TrainConfig& adv = s_.adversarial;
    ProbeOptions opts;
    opts.crops = adv.calib_probe_crops;
    opts.crop_size = hr_[0].dim(1);
    opts.bins = s_.options.calib_bins;
    opts.seed = stream_seed(adv.seed, Stream::kProbe);
    opts.sign_convention = adv.sign_convention;
    opts.eval_step = s_.options.calib_eval_step;
    opts.augment = adv.augment;
    const ProbeResult pr = run_probe(s_.models, val_, opts);

    const IntervalStats& st = s_.stats;
    auto mean = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
    HistoryRow row;
    row.iter = iter;
    row.phase = phase;
    row.pixel_loss = mean(st.pixel_sum, st.pixel_count);
    row.percep_loss = mean(st.percep_sum, st.gen_count);
    row.adv_loss = mean(st.adv_sum, st.gen_count);
    row.d_loss = mean(st.d_sum, st.disc_count);
    row.val_psnr = pr.val_psnr;
    row.val_ssim = pr.val_ssim;
    row.ece = pr.report.ece;
    row.disc_acc = pr.report.overall_accuracy;
    s_.stats = IntervalStats{};
    s_.history.push_back(row);

    const std::string stem = "calib_" + std::to_string(iter);
    reliability_export(pr.report, out_ / stem, "iteration " + std::to_string(iter));
    write_records_csv(out_ / (stem + "_records.csv"), pr.records);
    write_history_csv(out_ / "history.csv", s_.history);
    if (on_probe_) on_probe_(row);
  }

  void sync_rng() {
    s_.data_rng = data_.state();
    s_.disc_aug_rng = disc_aug_.state();
    s_.gen_aug_rng = gen_aug_.state();
  }

  void save(const fs::path& dir) {
    sync_rng();
    save_checkpoint(s_, dir);
  }

  void write_run_json() {
    json run = {{"pretrain", to_json(s_.pretrain)},
                {"adversarial", to_json(s_.adversarial)},
                {"options", options_to_json(s_.options)},
                {"manifest", manifest_to_json(s_.manifest)},
                {"generator", to_json(s_.models.gen_spec)},
                {"discriminator", to_json(s_.models.disc_spec)},
                {"precision", "float32"}};
    write_text(out_ / "run.json", run.dump(2) + "\n");
  }

  Checkpoint s_;
  fs::path out_;
  ProbeCallback on_probe_;
  std::vector<Tensor<float>> hr_, lr_, up_;
  ValidationSet val_;
  Rng data_, disc_aug_, gen_aug_;
};

void check_run_configs(const TrainConfig& pre, const TrainConfig& adv, const RunOptions& opts) {
  if (pre.phase != Phase::kPretrain) throw ConfigError("first phase config must be pretrain");
  if (adv.phase != Phase::kAdversarial) {
    throw ConfigError("second phase config must be adversarial");
  }
  pre.validate();
  adv.validate();
  opts.validate();
  if (pre.seed != adv.seed) throw ConfigError("pretrain and adversarial seeds differ");
  if (opts.calib_eval_step && !adv.augment) {
    throw ConfigError("calib_eval_step requires augmentation to be enabled");
  }
}

}  // namespace

RunResult run_experiment(const TrainConfig& cfg_pretrain, const TrainConfig& cfg_adversarial,
                         const Dataset& dataset, const fs::path& out_dir,
                         const RunOptions& options, const ProbeCallback& on_probe) {
  check_run_configs(cfg_pretrain, cfg_adversarial, options);
  const std::uint64_t seed = cfg_adversarial.seed;
  Checkpoint ck;
  ck.pretrain = cfg_pretrain;
  ck.adversarial = cfg_adversarial;
  ck.options = options;
  ck.manifest = dataset.manifest;
  ck.models = init_models<float>(options.generator, options.discriminator, seed);
  ck.data_rng = Rng(stream_seed(seed, Stream::kData)).state();
  ck.disc_aug_rng = Rng(stream_seed(seed, Stream::kDiscAugment)).state();
  ck.gen_aug_rng = Rng(stream_seed(seed, Stream::kGenAugment)).state();
  return Runner(std::move(ck), dataset, out_dir, on_probe).run();
}

RunResult resume_experiment(const fs::path& checkpoint_dir, const Dataset& dataset,
                            const fs::path& out_dir, const ProbeCallback& on_probe) {
  return resume_experiment(load_checkpoint(checkpoint_dir), dataset, out_dir, on_probe);
}

RunResult resume_experiment(Checkpoint ck, const Dataset& dataset, const fs::path& out_dir,
                            const ProbeCallback& on_probe) {
  if (!(ck.manifest == dataset.manifest)) {
    throw ConfigError("dataset does not match the checkpoint's dataset manifest");
  }
  check_run_configs(ck.pretrain, ck.adversarial, ck.options);
  return Runner(std::move(ck), dataset, out_dir, on_probe).run();
}

#define DIFAUG_INSTANTIATE_TRAINING(T)                                                        \
  template SrModels<T> init_models<T>(const GeneratorSpec&, const DiscriminatorSpec&,        \
                                      std::uint64_t);                                        \
  template TrainBatch<T> make_batch<T>(std::span<const ImagePair* const>);                   \
  template ParamSet<T> make_percep_probe<T>(std::uint64_t);                                  \
  template Var percep_loss<T>(Tape<T>&, std::span<const Var>, Var, Var);                     \
  template double percep_loss_surrogate<T>(const Tensor<T>&, const Tensor<T>&,               \
                                           const ParamSet<T>&);                              \
  template Var discriminator_loss<T>(Tape<T>&, Var, Var, SignConvention);                    \
  template Var adversarial_loss<T>(Tape<T>&, Var, SignConvention);                           \
  template double pretrain_step<T>(SrModels<T>&, const TrainBatch<T>&, const TrainConfig&);  \
  template DiscStepResult discriminator_step<T>(SrModels<T>&, const TrainBatch<T>&,          \
                                                const TrainConfig&, Rng&);                   \
  template GenStepResult generator_step<T>(SrModels<T>&, const TrainBatch<T>&,               \
                                           const TrainConfig&, Rng&, const std::vector<int>*); \
  template AdversarialStepResult adversarial_step<T>(SrModels<T>&, const TrainBatch<T>&,     \
                                                     const TrainConfig&, Rng&, Rng&);

DIFAUG_INSTANTIATE_TRAINING(float)
DIFAUG_INSTANTIATE_TRAINING(double)

}  // namespace difaug
