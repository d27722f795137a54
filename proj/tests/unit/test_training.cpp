#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "difaug/error.hpp"
#include "difaug/grad_check.hpp"
#include "difaug/ops.hpp"
#include "difaug/optim.hpp"
#include "difaug/rng.hpp"
#include "difaug/sr_models.hpp"
#include "difaug/synthetic.hpp"
#include "difaug/training.hpp"

using namespace difaug;
namespace fs = std::filesystem;

namespace {

const GeneratorSpec kGen{4, 1};
const DiscriminatorSpec kDisc{4, 2};

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

std::vector<ImagePair> random_pairs(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    TextureRecipe r{static_cast<TextureFamily>(i % kTextureFamilies), derive_seed(seed, i)};
    pairs.push_back(make_pair(render_texture(r, size)));
  }
  return pairs;
}

template <typename T>
TrainBatch<T> batch_of(const std::vector<ImagePair>& pairs) {
  std::vector<const ImagePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch<T>(ptrs);
}

TrainConfig adversarial_cfg(bool augment) {
  TrainConfig c;
  c.phase = Phase::kAdversarial;
  c.adam.lr = 1e-3;
  if (augment) c.augment = AugmentConfig{};
  return c;
}

template <typename T>
void randomize_head(SrModels<T>& m, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.disc.size(); ++i) {
    if (m.disc.name(i).find("head") == std::string::npos) continue;
    for (auto& v : m.disc[i].data()) v = static_cast<T>(0.5 * rng.normal());
  }
}

Dataset tiny_dataset(std::uint64_t seed) {
  return gen_synthetic_dataset(make_manifest(seed, 16, 12, 2, 32));
}

TrainConfig tiny_pretrain(std::size_t iters) {
  TrainConfig c;
  c.batch_size = 2;
  c.total_iters = iters;
  c.calib_probe_interval = 4;
  c.calib_probe_crops = 10;
  c.adam.lr = 1e-3;
  return c;
}

TrainConfig tiny_adversarial(std::size_t iters, bool augment) {
  TrainConfig c = tiny_pretrain(iters);
  c.phase = Phase::kAdversarial;
  if (augment) c.augment = AugmentConfig{};
  return c;
}

RunOptions tiny_options() {
  RunOptions o;
  o.generator = kGen;
  o.discriminator = kDisc;
  o.checkpoint_interval = 5;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("difaug_test_training_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("adam first step moves each coordinate by lr against the gradient sign") {
  ParamSet<double> p;
  p.add("w", random_tensor({5}, 1, -1, 1));
  p[0].set_requires_grad(true);
  const auto before = p[0].values();
  const auto g = random_tensor({5}, 2, -3, 3);
  std::ranges::copy(g.data(), p[0].ensure_grad().begin());
  AdamState<double> st = make_adam_state(p);
  AdamConfig cfg;
  cfg.lr = 0.01;
  adam_step(p, st, cfg);
  CHECK(st.step == 1);
  for (std::size_t i = 0; i < 5; ++i) {
    const double gi = g[i];
    const double expected = before[i] - cfg.lr * gi / (std::abs(gi) + cfg.eps);
    CHECK(p[0][i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("adam matches a hand-rolled reference over several steps") {
  ParamSet<double> p;
  p.add("w", random_tensor({3}, 3, -1, 1));
  p[0].set_requires_grad(true);
  std::vector<double> w = p[0].values(), m(3, 0.0), v(3, 0.0);
  AdamConfig cfg{0.05, 0.8, 0.99, 1e-6};
  AdamState<double> st = make_adam_state(p);
  for (int t = 1; t <= 6; ++t) {
    const auto g = random_tensor({3}, 10 + t, -1, 1);
    std::ranges::copy(g.data(), p[0].ensure_grad().begin());
    adam_step(p, st, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
      w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[0][i] == doctest::Approx(w[i]).epsilon(1e-12));
}

TEST_CASE("adam skips tensors without gradients and rejects a foreign state") {
  ParamSet<double> p;
  p.add("a", random_tensor({2}, 4));
  p.add("b", random_tensor({2}, 5));
  p[0].set_requires_grad(true);
  p[0].ensure_grad()[0] = 1.0;
  p[0].ensure_grad()[1] = -1.0;
  const auto b_before = p[1];
  AdamState<double> st = make_adam_state(p);
  adam_step(p, st, AdamConfig{});
  CHECK(p[1] == b_before);

  ParamSet<double> other;
  other.add("a", random_tensor({3}, 6));
  AdamState<double> wrong = make_adam_state(other);
  CHECK_THROWS_AS(adam_step(p, wrong, AdamConfig{}), ConfigError);
  CHECK_THROWS_AS(AdamConfig({-1.0}).validate(), ConfigError);
}

TEST_CASE("discriminator loss hand cases") {
  Tape<double> tape;
  const Var zeros = tape.constant(Tensor<double>({4}, std::vector<double>(4, 0.0)));
  for (auto conv : {SignConvention::kStandard, SignConvention::kPaperLiteral}) {
    const double d = tape.value(discriminator_loss(tape, zeros, zeros, conv))[0];
    CHECK(std::abs(d - 2.0 * std::numbers::ln2) < 1e-12);
    CHECK(std::abs(tape.value(adversarial_loss(tape, zeros, conv))[0] - std::numbers::ln2) <
          1e-12);
  }

  const Var pos = tape.constant(Tensor<double>({2}, {50.0, 50.0}));
  const Var neg = tape.constant(Tensor<double>({2}, {-50.0, -50.0}));
  CHECK(tape.value(discriminator_loss(tape, pos, neg, SignConvention::kStandard))[0] < 1e-20);
  CHECK(tape.value(discriminator_loss(tape, neg, pos, SignConvention::kStandard))[0] ==
        doctest::Approx(100.0));
  CHECK(tape.value(discriminator_loss(tape, neg, pos, SignConvention::kPaperLiteral))[0] < 1e-20);
  CHECK(tape.value(adversarial_loss(tape, pos, SignConvention::kStandard))[0] < 1e-20);
  CHECK(tape.value(adversarial_loss(tape, neg, SignConvention::kPaperLiteral))[0] < 1e-20);
}

TEST_CASE("percep surrogate is a symmetric differentiable distance") {
  const auto probe = make_percep_probe<double>(7);
  CHECK(probe.size() == 4);
  CHECK(probe.at("probe.conv1.weight").shape() == Shape{16, 3, 3, 3});
  CHECK(probe.at("probe.conv2.weight").shape() == Shape{16, 16, 3, 3});
  CHECK(make_percep_probe<double>(7) == probe);

  const auto a = random_tensor({1, 3, 8, 8}, 8);
  const auto b = random_tensor({1, 3, 8, 8}, 9);
  CHECK(percep_loss_surrogate(a, a, probe) == 0.0);
  CHECK(percep_loss_surrogate(a, b, probe) > 0.0);
  CHECK(percep_loss_surrogate(a, b, probe) == percep_loss_surrogate(b, a, probe));

  Tensor<double> x = a;
  Tensor<double>* params[] = {&x};
  const auto res = grad_check(
      [&](Tape<double>& tape, std::span<const Var> v) {
        const auto p = probe.bind_frozen(tape);
        return percep_loss(tape, std::span<const Var>(p), v[0], tape.constant(b));
      },
      params);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("adversarial step with zero loss weights degenerates to pretraining bit for bit") {
  const auto pairs = random_pairs(2, 16, 11);
  const auto batch = batch_of<float>(pairs);
  SrModels<float> a = init_models<float>(kGen, kDisc, 12);
  SrModels<float> b = a;

  TrainConfig pre;
  pre.adam.lr = 1e-3;
  TrainConfig adv = adversarial_cfg(true);
  adv.lambda1 = 0.0;
  adv.lambda2 = 0.0;
  Rng rng(13);
  for (int i = 0; i < 3; ++i) {
    const double lp = pretrain_step(a, batch, pre);
    const GenStepResult r = generator_step(b, batch, adv, rng);
    CHECK(lp == r.pixel_loss);
  }
  CHECK(a.gen == b.gen);
  CHECK(a.gen_opt.m == b.gen_opt.m);
  CHECK(a.gen_opt.v == b.gen_opt.v);
}

TEST_CASE("augmentation capped at step 0 matches the unaugmented discriminator step") {
  const auto pairs = random_pairs(3, 16, 14);
  const auto batch = batch_of<double>(pairs);
  SrModels<double> a = init_models<double>(kGen, kDisc, 15);
  randomize_head(a, 16);
  SrModels<double> b = a;

  TrainConfig plain = adversarial_cfg(false);
  TrainConfig capped = adversarial_cfg(true);
  capped.augment->policy = TSamplingPolicy{0};
  Rng r1(17), r2(17);
  const DiscStepResult x = discriminator_step(a, batch, plain, r1);
  const DiscStepResult y = discriminator_step(b, batch, capped, r2);
  CHECK(x.d_loss == y.d_loss);
  CHECK(y.steps == std::vector<int>(3, 0));
  CHECK(a.disc == b.disc);
  REQUIRE(x.records.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(x.records[i].logit == y.records[i].logit);
}

TEST_CASE("the adversarial term reaches the generator once the head is non-zero") {
  const auto pairs = random_pairs(2, 16, 18);
  const auto batch = batch_of<double>(pairs);
  SrModels<double> m = init_models<double>(kGen, kDisc, 19);

  auto adv_grad_norm = [&](SrModels<double>& models) {
    Tape<double> tape;
    models.gen.zero_grad();
    const auto g = models.gen.bind(tape);
    const Var sr = generator_forward(tape, models.gen_spec, std::span<const Var>(g),
                                     tape.constant(batch.lr), tape.constant(batch.lr_up));
    const auto d = models.disc.bind_frozen(tape);
    const Var logits = discriminator_forward(tape, models.disc_spec, std::span<const Var>(d), sr);
    tape.backward(adversarial_loss(tape, logits, SignConvention::kStandard));
    double s = 0.0;
    for (std::size_t i = 0; i < models.gen.size(); ++i)
      for (double v : models.gen[i].grad()) s += v * v;
    return std::sqrt(s);
  };

  CHECK(adv_grad_norm(m) == 0.0);
  randomize_head(m, 20);
  CHECK(adv_grad_norm(m) > 0.0);

  // A full step with the random head moves the generator differently from
  // pure pixel loss.
  SrModels<double> a = m, b = m;
  TrainConfig adv = adversarial_cfg(false);
  adv.lambda2 = 0.5;
  TrainConfig zero = adv;
  zero.lambda2 = 0.0;
  Rng r1(21), r2(21);
  generator_step(a, batch, adv, r1);
  generator_step(b, batch, zero, r2);
  CHECK_FALSE(a.gen == b.gen);
}

TEST_CASE("fused adversarial step equals separate discriminator and generator steps") {
  const auto pairs = random_pairs(2, 16, 22);
  const auto batch = batch_of<float>(pairs);
  for (bool reuse : {false, true}) {
    SrModels<float> a = init_models<float>(kGen, kDisc, 23);
    SrModels<float> b = a;
    TrainConfig cfg = adversarial_cfg(true);
    cfg.reuse_d_step_for_g = reuse;
    Rng da(24), ga(25), db(24), gb(25);
    for (int i = 0; i < 3; ++i) {
      const AdversarialStepResult f = adversarial_step(a, batch, cfg, da, ga);
      const DiscStepResult d = discriminator_step(b, batch, cfg, db);
      const GenStepResult g = generator_step(b, batch, cfg, gb, reuse ? &d.steps : nullptr);
      CHECK(f.disc.d_loss == d.d_loss);
      CHECK(f.disc.steps == d.steps);
      CHECK(f.gen.pixel_loss == g.pixel_loss);
      CHECK(f.gen.adv_loss == g.adv_loss);
    }
    CHECK(a.gen == b.gen);
    CHECK(a.disc == b.disc);
  }
}

TEST_CASE("paper-literal records are negated so that positive still means real") {
  const auto pairs = random_pairs(2, 16, 26);
  const auto batch = batch_of<double>(pairs);
  SrModels<double> a = init_models<double>(kGen, kDisc, 27);
  randomize_head(a, 28);
  SrModels<double> b = a;
  TrainConfig s = adversarial_cfg(false);
  TrainConfig p = s;
  p.sign_convention = SignConvention::kPaperLiteral;
  Rng r1(1), r2(1);
  const auto x = discriminator_step(a, batch, s, r1);
  const auto y = discriminator_step(b, batch, p, r2);
  for (std::size_t i = 0; i < x.records.size(); ++i) {
    CHECK(x.records[i].logit == -y.records[i].logit);
    CHECK(x.records[i].label == y.records[i].label);
  }
  CHECK(parse_sign_convention("paper-literal") == SignConvention::kPaperLiteral);
  CHECK(to_string(SignConvention::kStandard) == "standard");
  CHECK_THROWS_AS(parse_sign_convention("flipped"), ConfigError);
}

TEST_CASE("steps reject the wrong phase and configs validate") {
  const auto pairs = random_pairs(2, 16, 29);
  const auto batch = batch_of<double>(pairs);
  SrModels<double> m = init_models<double>(kGen, kDisc, 30);
  Rng rng(1);
  CHECK_THROWS_AS(pretrain_step(m, batch, adversarial_cfg(false)), ConfigError);
  CHECK_THROWS_AS(discriminator_step(m, batch, TrainConfig{}, rng), ConfigError);

  TrainConfig adv = adversarial_cfg(false);
  adv.lambda2 = 0.0;
  CHECK_THROWS_AS(adv.validate(), ConfigError);
  TrainConfig crops;
  crops.calib_probe_crops = 1;
  CHECK_THROWS_AS(crops.validate(), ConfigError);

  TrainConfig full = adversarial_cfg(true);
  full.lambda1 = 0.25;
  full.seed = 99;
  full.sign_convention = SignConvention::kPaperLiteral;
  const TrainConfig back = train_config_from_json(to_json(full));
  CHECK(to_json(back) == to_json(full));
}

TEST_CASE("history csv round trip and schema errors") {
  const fs::path dir = scratch("history");
  fs::create_directories(dir);
  std::vector<HistoryRow> rows = {{0, Phase::kPretrain, 0, 0, 0, 0, 12.5, 0.25, 0.0, 0.5},
                                  {10, Phase::kAdversarial, 0.1, 0.2, 0.693, 1.386, 20.125,
                                   0.75, 0.031, 0.62}};
  write_history_csv(dir / "h.csv", rows);
  CHECK(read_history_csv(dir / "h.csv") == rows);

  std::ofstream(dir / "missing.csv") << "iter,phase,pixel_loss,percep_loss,adv_loss,d_loss,"
                                        "val_psnr,val_ssim,disc_acc\n0,pretrain,0,0,0,0,1,1,1\n";
  try {
    read_history_csv(dir / "missing.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("missing column 'ece'") != std::string::npos);
  }
  std::ofstream(dir / "bad.csv") << kHistoryHeader << "\n0,pretrain,0,0,0,0,1,1,x,1\n";
  try {
    read_history_csv(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2: bad ece") != std::string::npos);
  }
  CHECK_THROWS_AS(read_history_csv(dir / "absent.csv"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("probe at iteration 0 sees a constant zero logit") {
  const Dataset ds = tiny_dataset(31);
  const SrModels<float> m = init_models<float>(kGen, kDisc, 32);
  ProbeOptions opts;
  opts.crops = 10;
  opts.crop_size = 16;
  const ProbeResult r = run_probe(m, make_validation_set(ds), opts);
  REQUIRE(r.records.size() == 10);
  for (const auto& rec : r.records) CHECK(rec.logit == 0.0);
  CHECK(r.report.overall_accuracy == 0.5);
  CHECK(r.report.ece == 0.0);
  CHECK(r.val_psnr > 0.0);

  opts.crops = 11;
  const ProbeResult odd = run_probe(m, make_validation_set(ds), opts);
  CHECK(std::count_if(odd.records.begin(), odd.records.end(),
                      [](const PredictionRecord& p) { return p.label == Label::kReal; }) == 6);

  const ProbeResult again = run_probe(m, make_validation_set(ds), opts);
  CHECK(again.val_psnr == odd.val_psnr);
  CHECK(again.val_ssim == odd.val_ssim);
}

TEST_CASE("run is deterministic, probes do not interfere and resume is exact") {
  const Dataset ds = tiny_dataset(33);
  const TrainConfig pre = tiny_pretrain(4);
  const TrainConfig adv = tiny_adversarial(6, true);

  const fs::path a = scratch("run_a"), b = scratch("run_b"), c = scratch("run_c"),
                 r = scratch("run_r");
  const RunResult ra = run_experiment(pre, adv, ds, a, tiny_options());
  const RunResult rb = run_experiment(pre, adv, ds, b, tiny_options());
  CHECK(slurp(a / "history.csv") == slurp(b / "history.csv"));
  CHECK(slurp(a / "ckpt_10" / "gen.params") == slurp(b / "ckpt_10" / "gen.params"));
  CHECK(slurp(a / "ckpt_10" / "state.json") == slurp(b / "ckpt_10" / "state.json"));
  CHECK(ra.final.iteration == 10);
  CHECK(ra.final.history.size() == 4);  // 0, 4 (interval and phase end), 8, 10
  CHECK(ra.final.models.gen_opt.step == 6);

  RunOptions quiet = tiny_options();
  quiet.probes_enabled = false;
  const RunResult rc = run_experiment(pre, adv, ds, c, quiet);
  CHECK(rc.final.models.gen == ra.final.models.gen);
  CHECK(rc.final.models.disc == ra.final.models.disc);
  CHECK(rc.final.history.empty());

  const RunResult rr = resume_experiment(a / "ckpt_5", ds, r);
  CHECK(rr.final.models.gen == ra.final.models.gen);
  CHECK(rr.final.models.disc == ra.final.models.disc);
  CHECK(rr.final.models.disc_opt.v == ra.final.models.disc_opt.v);
  CHECK(slurp(r / "history.csv") == slurp(a / "history.csv"));

  const Dataset other = tiny_dataset(34);
  CHECK_THROWS_AS(resume_experiment(a / "ckpt_5", other, scratch("run_x")), ConfigError);
  for (const auto& p : {a, b, c, r}) fs::remove_all(p);
  fs::remove_all(scratch("run_x"));
}

TEST_CASE("the end-of-pretraining checkpoint does not depend on the augment setting") {
  const Dataset ds = tiny_dataset(35);
  const TrainConfig pre = tiny_pretrain(4);
  const fs::path on = scratch("aug_on"), off = scratch("aug_off"), swap = scratch("aug_swap");
  const RunResult full = run_experiment(pre, tiny_adversarial(3, true), ds, on, tiny_options());
  run_experiment(pre, tiny_adversarial(3, false), ds, off, tiny_options());
  for (const char* f : {"gen.params", "disc.params", "gen_adam_m.params", "disc_adam_v.params"})
    CHECK(slurp(on / "ckpt_4" / f) == slurp(off / "ckpt_4" / f));

  // Switching the unaugmented run to augmentation at the boundary reproduces
  // the augmented run.
  Checkpoint ck = load_checkpoint(off / "ckpt_4");
  ck.adversarial = tiny_adversarial(3, true);
  const RunResult swapped = resume_experiment(std::move(ck), ds, swap);
  CHECK(swapped.final.models.gen == full.final.models.gen);
  CHECK(swapped.final.models.disc == full.final.models.disc);
  CHECK(slurp(swap / "history.csv") == slurp(on / "history.csv"));
  for (const auto& p : {on, off, swap}) fs::remove_all(p);
}

TEST_CASE("non-finite values abort with a diagnostic checkpoint") {
  const Dataset ds = tiny_dataset(36);
  TrainConfig pre = tiny_pretrain(3);
  pre.adam.lr = 1e300;
  const fs::path out = scratch("nan");
  try {
    run_experiment(pre, tiny_adversarial(2, false), ds, out, tiny_options());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("nonfinite") != std::string::npos);
  }
  bool found = false;
  for (const auto& entry : fs::directory_iterator(out))
    found |= entry.path().filename().string().ends_with("_nonfinite");
  CHECK(found);
  fs::remove_all(out);
}

TEST_CASE("pretraining lowers the pixel loss on gratings") {
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<ImagePair> pairs;
    for (std::size_t i = 0; i < 50; ++i)
      pairs.push_back(make_pair(
          render_texture(TextureRecipe{TextureFamily::kGrating, derive_seed(seed, i)}, 16)));
    SrModels<float> m = init_models<float>(kGen, kDisc, seed);
    TrainConfig cfg;
    cfg.adam.lr = 1e-3;
    Rng rng(seed);
    std::vector<double> losses;
    for (int it = 0; it < 200; ++it) {
      std::vector<const ImagePair*> pick;
      for (int k = 0; k < 4; ++k) pick.push_back(&pairs[rng.uniform_int(49)]);
      losses.push_back(pretrain_step(m, make_batch<float>(pick), cfg));
    }
    auto avg = [&](std::size_t from) {
      double s = 0.0;
      for (std::size_t i = from; i < from + 20; ++i) s += losses[i];
      return s / 20.0;
    };
    ratios.push_back(avg(180) / avg(0));
  }
  std::sort(ratios.begin(), ratios.end());
  CHECK(ratios[2] < 0.9);
}
