#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "difaug/error.hpp"
#include "difaug/grad_check.hpp"
#include "difaug/ops.hpp"
#include "difaug/resample.hpp"
#include "difaug/rng.hpp"
#include "difaug/sr_models.hpp"

using namespace difaug;

namespace {

Tensor<double> random_image(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

template <typename T>
void randomize(ParamSet<T>& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (auto& v : p[i].data()) v = static_cast<T>(scale * rng.normal());
}

}  // namespace

TEST_CASE("generator shape contract and zero-parameter identity") {
  const GeneratorSpec spec;
  const auto zero = generator_registry<double>(spec);
  const auto lr = random_image({3, 16, 16}, 1);
  const auto out = generate(spec, zero, lr);
  CHECK(out.shape() == Shape{3, 64, 64});
  CHECK(out == bicubic_upsample(lr, 4));

  const auto batch = random_image({2, 3, 5, 7}, 2);
  const auto params = init_generator<double>(spec, 3);
  CHECK(generate(spec, params, batch).shape() == Shape{2, 3, 20, 28});
}

TEST_CASE("generator is deterministic") {
  const GeneratorSpec spec{8, 2};
  const auto params = init_generator<float>(spec, 4);
  const auto lr = random_image({3, 8, 8}, 5).cast<float>();
  CHECK(generate(spec, params, lr) == generate(spec, params, lr));
  CHECK(init_generator<float>(spec, 4) == params);
}

TEST_CASE("parameter/spec mismatch rejected") {
  const auto params = init_generator<double>(GeneratorSpec{8, 2}, 1);
  CHECK_THROWS_AS(generate(GeneratorSpec{8, 3}, params, random_image({3, 4, 4}, 1)), ConfigError);
  CHECK_THROWS_AS(generate(GeneratorSpec{16, 2}, params, random_image({3, 4, 4}, 1)), ConfigError);
  const auto dparams = init_discriminator<double>(DiscriminatorSpec{8, 2}, 1);
  CHECK_THROWS_AS(discriminate(DiscriminatorSpec{8, 3}, dparams, random_image({3, 16, 16}, 1)), ConfigError);
  CHECK_THROWS_AS((GeneratorSpec{8, 2, 2}.validate()), ConfigError);
}

TEST_CASE("discriminator contract") {
  const DiscriminatorSpec spec;
  const auto params = init_discriminator<double>(spec, 6);
  const auto x = random_image({3, 64, 64}, 7);
  const auto logit = discriminate(spec, params, x);
  CHECK(logit.shape() == Shape{1});
  CHECK(std::isfinite(logit[0]));
  // Fresh init has a zero head, so the untrained logit is exactly 0.
  CHECK(logit[0] == 0.0);
  CHECK(discriminate(spec, discriminator_registry<double>(spec), x)[0] == 0.0);
  CHECK(discriminate(spec, params, random_image({4, 3, 64, 64}, 8)).shape() == Shape{4});
  CHECK_THROWS_AS(discriminate(spec, params, random_image({3, 60, 64}, 9)), ShapeError);
}

TEST_CASE("initializer statistics") {
  const auto g = init_generator<double>(GeneratorSpec{}, 11);
  const auto d = init_discriminator<double>(DiscriminatorSpec{}, 12);
  for (const ParamSet<double>* p : {&g, &d}) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const auto& t = (*p)[i];
      if (t.rank() == 1) {
        for (double v : t.data()) CHECK(v == 0.0);
        continue;
      }
      if (t.rank() != 4 || t.numel() < 256) continue;
      const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
      double s = 0.0, s2 = 0.0;
      for (double v : t.data()) {
        s += v;
        s2 += v * v;
      }
      const double n = static_cast<double>(t.numel());
      const double sd = std::sqrt((s2 - s * s / n) / (n - 1.0));
      CAPTURE(p->name(i));
      CHECK(std::abs(sd / std::sqrt(2.0 / fan_in) - 1.0) < 0.10);
    }
  }
  CHECK(init_generator<double>(GeneratorSpec{}, 11) == g);
  CHECK(g.total_elements() == generator_registry<double>(GeneratorSpec{}).total_elements());
}

TEST_CASE("full discriminator passes a finite-difference check") {
  const DiscriminatorSpec spec{4, 2};
  auto params = init_discriminator<double>(spec, 13);
  randomize(params, 14, 0.4);
  std::vector<Tensor<double>*> ptrs;
  for (std::size_t i = 0; i < params.size(); ++i) ptrs.push_back(&params[i]);
  Tensor<double> x = random_image({2, 3, 8, 8}, 15);
  ptrs.push_back(&x);
  const auto res = grad_check([&](Tape<double>& tape, std::span<const Var> v) {
    const Var logits = discriminator_forward(tape, spec, v.first(v.size() - 1), v.back());
    return ops::bce_with_logits(tape, logits, 1.0);
  }, ptrs);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("full generator passes a finite-difference check") {
  const GeneratorSpec spec{3, 1};
  auto params = init_generator<double>(spec, 16);
  randomize(params, 17, 0.3);
  std::vector<Tensor<double>*> ptrs;
  for (std::size_t i = 0; i < params.size(); ++i) ptrs.push_back(&params[i]);
  // The bicubic residual is data, not a differentiable path, so only the
  // parameters are perturbed.
  const Tensor<double> lr = random_image({2, 3, 3, 3}, 18);
  const Tensor<double> hr = random_image({2, 3, 12, 12}, 19);
  const auto res = grad_check([&](Tape<double>& tape, std::span<const Var> v) {
    const Var u = tape.constant(bicubic_upsample(lr, 4));
    const Var sr = generator_forward(tape, spec, v, tape.constant(lr), u);
    const Var d = ops::sub(tape, sr, tape.constant(hr));
    return ops::mean(tape, ops::mul(tape, d, d));
  }, ptrs);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("discriminator is sensitive to pixel permutations") {
  const DiscriminatorSpec spec{8, 3};
  int changed = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    auto params = init_discriminator<double>(spec, trial);
    randomize(params, 1000 + trial, 0.3);
    const auto x = random_image({3, 32, 32}, 2000 + trial);
    std::vector<std::size_t> perm(32 * 32);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(3000 + trial);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i - 1)]);
    Tensor<double> shuffled(x.shape());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < perm.size(); ++i) shuffled[c * 1024 + i] = x[c * 1024 + perm[i]];
    if (discriminate(spec, params, x)[0] != discriminate(spec, params, shuffled)[0]) ++changed;
  }
  CHECK(changed >= 95);
}

TEST_CASE("spec json round trip") {
  const GeneratorSpec g{16, 3};
  const DiscriminatorSpec d{8, 2};
  CHECK(generator_spec_from_json(to_json(g)) == g);
  CHECK(discriminator_spec_from_json(to_json(d)) == d);
}
