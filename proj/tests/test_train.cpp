#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "driftalign/drift_sim.hpp"
#include "driftalign/error.hpp"
#include "driftalign/train.hpp"
#include "helpers.hpp"

using namespace driftalign;

namespace {

StereoPair grid_pair(std::size_t n, std::uint32_t fs = 8000) {
  StereoPair p;
  p.id = "p";
  p.ch0 = AudioBuffer(std::vector<double>(n * fs, 0.0), fs);
  p.ch1 = p.ch0;
  p.keypoints = KeypointSet::grid(n);
  for (auto& e : p.keypoints.entries) e.t1 = e.t0 + 0.25;
  return p;
}

StereoPair synth(std::uint64_t seed, double dur) {
  SynthSpec s;
  s.duration_s = dur;
  s.n_keypoints = static_cast<std::size_t>(dur);
  s.seed = seed;
  const auto d = make_drift({DriftSpec::Kind::random_affine}, dur, seed + 1);
  auto sp = synth_pair(s, d);
  return {"s" + std::to_string(seed), sp.ch0, sp.ch1, sp.truth};
}

AugSample tone_sample() {
  AugSample s;
  for (Segment* seg : {&s.seg0, &s.seg1}) {
    seg->sample_rate_hz = 16000;
    seg->samples.resize(4000);
  }
  for (std::size_t k = 0; k < 4000; ++k) {
    s.seg0.samples[k] = std::sin(0.01 * k);
    s.seg1.samples[k] = 0.5 * std::cos(0.03 * k);
  }
  return s;
}

}  // namespace

TEST_CASE("keypoint striding") {
  const std::vector<StereoPair> pairs{grid_pair(100)};
  const auto pts = sample_training_pairs(pairs, 20, 0.5, 5.0, 1);
  REQUIRE(pts.size() == 10);
  for (std::size_t j = 0; j < 5; ++j) {
    const auto& pos = pts[2 * j];
    const auto& neg = pts[2 * j + 1];
    CHECK(pos.keypoint == 20 * j);
    CHECK(pos.label == 1.0);
    CHECK(pos.t1 == pos.t0 + 0.25);
    CHECK(neg.keypoint == 20 * j);
    CHECK(neg.label == 0.0);
    CHECK(neg.t0 == pos.t0);
  }
  CHECK(sample_training_pairs(pairs, 1, 0.5, 5.0, 1).size() == 200);
  CHECK(sample_training_pairs(pairs, 100, 0.5, 5.0, 1).size() == 2);
  CHECK_THROWS_AS(sample_training_pairs(pairs, 0, 0.5, 5.0, 1), ConfigError);
}

TEST_CASE("negatives avoid the dead zone") {
  const std::vector<StereoPair> pairs{grid_pair(50)};
  std::size_t below = 0, above = 0, n = 0;
  for (std::uint64_t seed = 0; n < 10000; ++seed) {
    for (const auto& p : sample_training_pairs(pairs, 1, 0.5, 5.0, seed)) {
      if (p.label != 0.0) continue;
      const double off = p.t1 - (p.t0 + 0.25);
      REQUIRE(std::abs(off) >= 0.5);
      REQUIRE(std::abs(off) <= 5.0);
      (off < 0 ? below : above) += 1;
      ++n;
    }
  }
  // Both signs occur with roughly equal frequency.
  CHECK(below > 4500);
  CHECK(above > 4500);
}

TEST_CASE("augmentation examples") {
  const AugSample s = tone_sample();
  const auto same = apply_augmentation(s, 1.0, std::numeric_limits<double>::infinity(), 3);
  CHECK(same.seg0.samples == s.seg0.samples);
  CHECK(same.seg1.samples == s.seg1.samples);
  CHECK(same.augmented);

  const auto loud = apply_augmentation(s, 1.1, std::numeric_limits<double>::infinity(), 3);
  auto peak = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
  };
  CHECK(peak(loud.seg0.samples) == doctest::Approx(1.1 * peak(s.seg0.samples)).epsilon(1e-15));
  CHECK(peak(loud.seg1.samples) == doctest::Approx(1.1 * peak(s.seg1.samples)).epsilon(1e-15));
  CHECK(loud.amp == 1.1);

  AugSample unit;
  for (Segment* seg : {&unit.seg0, &unit.seg1}) {
    seg->samples.assign(20000, 0.0);
    for (std::size_t k = 0; k < 20000; ++k) seg->samples[k] = k % 2 ? 1.0 : -1.0;
  }
  const auto noisy = apply_augmentation(unit, 1.0, 40.0, 9);
  CHECK(noisy.noise_variance == doctest::Approx(1e-4).epsilon(1e-12));
  double var = 0.0;
  for (const Segment* seg : {&noisy.seg0, &noisy.seg1}) {
    for (std::size_t k = 0; k < 20000; ++k) {
      const double d = seg->samples[k] - unit.seg0.samples[k];
      var += d * d;
    }
  }
  var /= 40000.0;
  CHECK(var == doctest::Approx(1e-4).epsilon(0.05));
  // Same seed, same noise.
  CHECK(apply_augmentation(unit, 1.0, 40.0, 9).seg1.samples == noisy.seg1.samples);
  CHECK(apply_augmentation(unit, 1.0, 40.0, 10).seg1.samples != noisy.seg1.samples);
}

TEST_CASE("augment keeps labels and draws from the configured ranges") {
  TrainConfig cfg;
  Rng rng(4);
  std::size_t hit = 0;
  for (int i = 0; i < 2000; ++i) {
    AugSample s = tone_sample();
    s.label = i % 2;
    const auto out = augment(s, cfg, rng);
    CHECK(out.label == s.label);
    if (out.augmented) {
      ++hit;
      CHECK(out.amp >= 0.9);
      CHECK(out.amp <= 1.1);
      CHECK(out.snr_db >= 40.0);
      CHECK(out.snr_db <= 50.0);
      // Both channels were scaled by the same factor: the noise-free part of
      // each channel is alpha times the input.
      const auto clean = apply_augmentation(s, out.amp,
                                            std::numeric_limits<double>::infinity(), 0);
      const double sd = std::sqrt(out.noise_variance);
      for (std::size_t k = 0; k < 4000; k += 97) {
        CHECK(std::abs(out.seg0.samples[k] - clean.seg0.samples[k]) < 8 * sd);
        CHECK(std::abs(out.seg1.samples[k] - clean.seg1.samples[k]) < 8 * sd);
      }
    } else {
      CHECK(out.seg0.samples == s.seg0.samples);
    }
  }
  CHECK(hit > 500);
  CHECK(hit < 700);
  AugSample done = tone_sample();
  done.augmented = true;
  CHECK_THROWS_AS(augment(done, cfg, rng), ConfigError);
}

TEST_CASE("plateau schedule") {
  PlateauScheduler s(2e-4, 0.7, 3);
  for (int i = 0; i < 4; ++i) s.step(1.0);
  CHECK(s.lr() == doctest::Approx(2e-4 * 0.7));
  CHECK(s.epochs_since_best() == 3);
  for (int i = 0; i < 3; ++i) s.step(1.0);
  CHECK(s.lr() == doctest::Approx(2e-4 * 0.49));
  CHECK(s.step(0.5));
  CHECK(s.epochs_since_best() == 0);
  CHECK(s.lr() == doctest::Approx(2e-4 * 0.49));
  s.step(0.6);
  s.step(0.6);
  CHECK(s.lr() == doctest::Approx(2e-4 * 0.49));
}

TEST_CASE("AdamW matches a scalar reference") {
  ModelConfig c;
  c.input_dim = 2;
  c.embed_dim = 2;
  c.n_heads = 1;
  c.h1 = 2;
  c.mlp = MlpKind::plain;
  c.attention = false;
  ModelParams p = make_params(c);
  p.b4.v[0] = 0.8;
  p.in_mean.v[0] = 3.0;
  ModelParams g = zeros_like(p);
  const double grads[3] = {0.5, -0.2, 0.9};
  AdamW opt(p, 0.01);
  // Reference for one scalar.
  double x = 0.8, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    g.b4.v[0] = grads[t - 1];
    g.in_mean.v[0] = 100.0;
    opt.step(p, g, 1e-2);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    x = x - 1e-2 * 0.01 * x;
    x = x - 1e-2 * (m / (1 - std::pow(0.9, t))) /
                (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(p.b4.v[0] == doctest::Approx(x).epsilon(1e-14));
  }
  CHECK(p.in_mean.v[0] == 3.0);
  CHECK(opt.steps() == 3);
}

TEST_CASE("training is deterministic and logs every epoch") {
  const std::vector<StereoPair> tr{synth(1, 8), synth(2, 8)};
  const std::vector<StereoPair> va{synth(3, 8)};
  ModelConfig mc;
  mc.embed_dim = 8;
  mc.n_heads = 2;
  mc.h1 = 8;
  mc.h2 = 8;
  mc.h3 = 4;
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.keypoint_stride = 2;
  tc.lr = 1e-3;
  std::ostringstream progress;
  const auto a = train(tr, va, mc, FeatureConfig{}, tc, &progress);
  const auto b = train(tr, va, mc, FeatureConfig{}, tc);
  REQUIRE(a.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(a.log[e].epoch == e + 1);
    CHECK(a.log[e].train_loss == b.log[e].train_loss);
    CHECK(a.log[e].val_loss == b.log[e].val_loss);
    CHECK(std::isfinite(a.log[e].train_loss));
  }
  CHECK(a.best_val_loss == b.best_val_loss);
  CHECK(a.best_epoch >= 1);
  CHECK(a.log[a.best_epoch - 1].val_loss == a.best_val_loss);
  std::vector<double> pa, pb;
  a.model.params.visit([&](const char*, const Tensor& t, bool) {
    pa.insert(pa.end(), t.v.begin(), t.v.end());
  });
  b.model.params.visit([&](const char*, const Tensor& t, bool) {
    pb.insert(pb.end(), t.v.begin(), t.v.end());
  });
  CHECK(pa == pb);
  for (double v : pa) REQUIRE(static_cast<double>(static_cast<float>(v)) == v);
  CHECK(progress.str().rfind("epoch 1 train_loss ", 0) == 0);

  testing::TempDir dir;
  write_training_log(a.log, dir / "log.csv");
  std::ifstream f(dir / "log.csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,val_loss,lr");
  std::size_t rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 3);

  auto tc2 = tc;
  tc2.seed = 1;
  CHECK(train(tr, va, mc, FeatureConfig{}, tc2).log[0].train_loss !=
        a.log[0].train_loss);
}

TEST_CASE("training input checks") {
  const std::vector<StereoPair> tr{synth(1, 6)};
  ModelConfig mc;
  mc.input_dim = 10;
  CHECK_THROWS_AS(train(tr, tr, mc, FeatureConfig{}, TrainConfig{}), ConfigError);
  CHECK_THROWS_AS(train(tr, {}, ModelConfig{}, FeatureConfig{}, TrainConfig{}),
                  ConfigError);
  TrainConfig bad;
  bad.plateau_factor = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.augment_prob = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
