#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "driftalign/error.hpp"
#include "driftalign/features.hpp"
#include "driftalign/rng.hpp"

using namespace driftalign;

namespace {

AudioBuffer ramp(std::size_t n, std::uint32_t fs) {
  std::vector<double> x(n);
  for (std::size_t k = 0; k < n; ++k) x[k] = static_cast<double>(k + 1);
  return AudioBuffer(std::move(x), fs);
}

AudioBuffer noise(std::size_t n, std::uint32_t fs, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal(0.0, 0.3);
  return AudioBuffer(std::move(x), fs);
}

}  // namespace

TEST_CASE("segment extraction indexing") {
  const FeatureConfig cfg;
  const AudioBuffer buf = ramp(16000 * 6, 16000);
  const Segment s = extract_segment(buf, 3.0, cfg, 1);
  REQUIRE(s.samples.size() == 32000);
  CHECK(s.samples.front() == 48001.0);
  CHECK(s.samples.back() == 80000.0);
  CHECK(s.channel == 1);
  CHECK(s.origin_t == 3.0);

  const Segment neg = extract_segment(buf, -1.0, cfg);
  for (std::size_t k = 0; k < 16000; ++k) REQUIRE(neg.samples[k] == 0.0);
  CHECK(neg.samples[16000] == 1.0);

  const Segment tail = extract_segment(buf, 5.0, cfg);
  CHECK(tail.samples[15999] == 96000.0);
  CHECK(tail.samples[16000] == 0.0);

  FeatureConfig coarse;
  coarse.segment_s = 1.0;
  coarse.n_fft = 4;
  coarse.hop = 2;
  coarse.n_mels = 1;
  const AudioBuffer ten = ramp(30, 10);
  const Segment f = extract_segment(ten, 0.999999, coarse);
  CHECK(f.samples.size() == 10);
  CHECK(f.samples.front() == 10.0);  // sample index 9 holds 10

  CHECK_THROWS_AS(extract_segment(buf, std::nan(""), cfg), ConfigError);
}

TEST_CASE("extraction is translation consistent") {
  const FeatureConfig cfg;
  const AudioBuffer buf = noise(16000 * 5, 16000, 2);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 250 * (rng.next_u64() % 40);
    std::vector<double> delayed(d, 0.0);
    delayed.insert(delayed.end(), buf.samples().begin(), buf.samples().end());
    const AudioBuffer shifted(std::move(delayed), 16000);
    const double t = static_cast<double>(rng.next_u64() % 300) / 64.0 - 1.0;
    const double dt = static_cast<double>(d) / 16000.0;
    CHECK(extract_segment(buf, t, cfg).samples ==
          extract_segment(shifted, t + dt, cfg).samples);
  }
}

TEST_CASE("log-mel frame count and silence") {
  const FeatureConfig cfg;
  CHECK(cfg.frames_per_segment(16000) == 198);
  Segment s;
  s.samples.assign(32000, 0.0);
  s.sample_rate_hz = 16000;
  const auto fm = log_mel(s, cfg);
  CHECK(fm.frames == 198);
  CHECK(fm.n_mels == 40);
  for (double v : fm.values) REQUIRE(v == std::log(1e-10));

  s.samples.resize(31999);
  CHECK_THROWS_AS(log_mel(s, cfg), ConfigError);
}

TEST_CASE("mel centres follow the HTK formula") {
  const FeatureConfig cfg;
  const auto c = mel_center_frequencies(cfg, 16000);
  REQUIRE(c.size() == 40);
  const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  for (std::size_t m = 0; m < 40; ++m) {
    const double mel = top * static_cast<double>(m + 1) / 41.0;
    const double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    CHECK(c[m] == doctest::Approx(hz).epsilon(1e-12));
  }
}

TEST_CASE("a pure tone peaks in the nearest mel band") {
  const FeatureConfig cfg;
  for (double f0 : {1000.0, 440.0, 3000.0}) {
    Segment s;
    s.sample_rate_hz = 16000;
    s.samples.resize(32000);
    for (std::size_t k = 0; k < s.samples.size(); ++k) {
      s.samples[k] = 0.5 * std::sin(2.0 * std::numbers::pi * f0 * k / 16000.0);
    }
    const auto fm = log_mel(s, cfg);
    const auto pooled = pool_features(fm);
    const auto best = std::max_element(pooled.begin(), pooled.begin() + 40) -
                      pooled.begin();
    // Independent centre computation.
    const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
    std::size_t nearest = 0;
    double gap = 1e300;
    for (std::size_t m = 0; m < 40; ++m) {
      const double hz =
          700.0 * (std::pow(10.0, top * (m + 1) / 41.0 / 2595.0) - 1.0);
      if (std::abs(hz - f0) < gap) {
        gap = std::abs(hz - f0);
        nearest = m;
      }
    }
    CHECK(static_cast<std::size_t>(best) == nearest);
  }
}

TEST_CASE("log-mel stays finite") {
  const FeatureConfig cfg;
  Segment s;
  s.sample_rate_hz = 16000;
  s.samples.assign(32000, 0.0);
  s.samples[100] = 1e6;
  s.samples[200] = -1e-300;
  for (double v : log_mel(s, cfg).values) REQUIRE(std::isfinite(v));
}

TEST_CASE("pooling examples") {
  FeatureMatrix c{3, 2, {4, 4, 4, 4, 4, 4}};
  CHECK(pool_features(c) == std::vector<double>{4, 4, 0, 0});
  FeatureMatrix one{1, 3, {1, -2, 7}};
  CHECK(pool_features(one) == std::vector<double>{1, -2, 7, 0, 0, 0});
  FeatureMatrix sq{2, 2, {0, 2, 2, 0}};
  CHECK(pool_features(sq) == std::vector<double>{1, 1, 1, 1});
  CHECK_THROWS_AS(pool_features(FeatureMatrix{}), ConfigError);
}

TEST_CASE("frame snapping") {
  CHECK(snap_to_frame(0.0, 16000, 160) == 0);
  CHECK(snap_to_frame(0.01, 16000, 160) == 1);
  CHECK(snap_to_frame(0.0049, 16000, 160) == 0);   // sample 78
  CHECK(snap_to_frame(0.00501, 16000, 160) == 1);  // sample 80 rounds up
  CHECK(snap_to_frame(0.00499, 16000, 160) == 0);
  CHECK(snap_to_frame(-0.01, 16000, 160) == -1);
  CHECK(snap_to_frame(-0.0051, 16000, 160) == -1);
  CHECK(frame_to_time(150, 16000, 160) == 1.5);
}

TEST_CASE("frame grid matches the exact path on hop-aligned starts") {
  const FeatureConfig cfg;
  const AudioBuffer buf = noise(16000 * 4, 16000, 6);
  const FrameGrid grid(buf, cfg, -120, 400);
  for (std::int64_t q : {-120L, -50L, 0L, 1L, 77L, 250L, 399L, 400L}) {
    const double t = frame_to_time(q, 16000, 160);
    const auto exact = pool_features(log_mel(extract_segment(buf, t, cfg), cfg));
    const auto fast = grid.pooled(q);
    REQUIRE(fast.size() == exact.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < fast.size(); ++k) {
      worst = std::max(worst, std::abs(fast[k] - exact[k]));
    }
    CHECK(worst <= 1e-9);
  }
  CHECK_THROWS_AS(grid.pooled(401), ConfigError);
}

TEST_CASE("feature config validation") {
  FeatureConfig c;
  c.hop = 500;
  CHECK_THROWS_AS(c.validate(16000), ConfigError);
  c = FeatureConfig{};
  c.fmax_hz = 9000;
  CHECK_THROWS_AS(c.validate(16000), ConfigError);
  c = FeatureConfig{};
  c.n_mels = 0;
  CHECK_THROWS_AS(c.validate(16000), ConfigError);
  CHECK_NOTHROW(FeatureConfig{}.validate(16000));
}
