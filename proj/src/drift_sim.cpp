#include "driftalign/drift_sim.hpp"

#include <cmath>
#include <numbers>

#include "driftalign/error.hpp"
#include "driftalign/rng.hpp"

namespace driftalign {

namespace {

constexpr std::uint64_t kStreamEvents = 0;
constexpr std::uint64_t kStreamNoise0 = 1;
constexpr std::uint64_t kStreamNoise1 = 2;

struct EventParams {
  double f_start = 1000.0;
  double f_end = 1000.0;
  double gain = 1.0;
};

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

EventParams event_params(const SynthSpec& spec, std::size_t i) {
  Rng rng(mix_seed(mix_seed(spec.seed, kStreamEvents), i));
  const double nyq = 0.5 * spec.sample_rate_hz;
  EventParams p;
  if (spec.event_kind == EventKind::click) {
    p.f_start = log_uniform(rng, 400.0, 0.8 * nyq);
    p.f_end = p.f_start;
  } else {
    p.f_start = log_uniform(rng, 150.0, 0.9 * nyq);
    p.f_end = log_uniform(rng, 150.0, 0.9 * nyq);
  }
  p.gain = rng.uniform(0.6, 1.0);
  return p;
}

}  // namespace

std::string to_string(EventKind k) {
  return k == EventKind::click ? "click" : "chirp";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "click") return EventKind::click;
  if (s == "chirp") return EventKind::chirp;
  throw ConfigError("unknown event kind '" + s + "'");
}

void SynthSpec::validate() const {
  if (sample_rate_hz < 8000) {
    throw ConfigError("synthetic sample rate must be >= 8000 Hz");
  }
  if (!(duration_s >= static_cast<double>(n_keypoints))) {
    throw ConfigError("duration must cover one 1-second slot per keypoint");
  }
  if (n_keypoints == 0) throw ConfigError("need at least one keypoint");
  const double d = event_duration();
  if (!(d > 0.0 && d <= 1.0)) {
    throw ConfigError("event duration must be in (0, 1] s");
  }
  if (std::isnan(event_snr_db)) throw ConfigError("event SNR is NaN");
}

double SynthSpec::event_duration() const {
  if (event_duration_s) return *event_duration_s;
  return event_kind == EventKind::click ? 0.010 : 0.9;
}

std::vector<double> event_template(const SynthSpec& spec, std::size_t i) {
  const EventParams p = event_params(spec, i);
  const double fs = spec.sample_rate_hz;
  const double dur = spec.event_duration();
  const auto n = static_cast<std::size_t>(std::floor(dur * fs));
  std::vector<double> out(n);
  const double amp = spec.event_amplitude * p.gain;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (spec.event_kind == EventKind::click) {
    // Damped cosine: maximum magnitude at the onset sample.
    const double tau = dur / 5.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = k / fs;
      out[k] = amp * std::exp(-t / tau) * std::cos(two_pi * p.f_start * t);
    }
  } else {
    const double fade = std::min(0.01, dur / 4.0);
    const double sweep = (p.f_end - p.f_start) / dur;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = k / fs;
      double env = 1.0;
      if (t < fade) {
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * t / fade);
      } else if (t > dur - fade) {
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * (dur - t) / fade);
      }
      const double phase = two_pi * (p.f_start * t + 0.5 * sweep * t * t);
      out[k] = amp * env * std::sin(phase);
    }
  }
  return out;
}

BaseSignal synth_base(const SynthSpec& spec) {
  spec.validate();
  const std::uint32_t fs = spec.sample_rate_hz;
  const auto len = static_cast<std::size_t>(std::floor(spec.duration_s * fs));
  std::vector<double> clean(len, 0.0);
  double energy = 0.0;
  std::size_t event_samples = 0;
  for (std::size_t i = 0; i < spec.n_keypoints; ++i) {
    const auto tpl = event_template(spec, i);
    const std::size_t start = i * fs;
    for (std::size_t k = 0; k < tpl.size() && start + k < len; ++k) {
      clean[start + k] += tpl[k];
    }
    for (double v : tpl) energy += v * v;
    event_samples += tpl.size();
  }
  BaseSignal b;
  b.noise_stddev = 0.0;
  if (std::isfinite(spec.event_snr_db) && event_samples > 0) {
    const double event_power = energy / static_cast<double>(event_samples);
    b.noise_stddev =
        std::sqrt(event_power / std::pow(10.0, spec.event_snr_db / 10.0));
  }
  std::vector<double> noisy = clean;
  if (b.noise_stddev > 0.0) {
    Rng rng(mix_seed(spec.seed, kStreamNoise0));
    for (double& v : noisy) v += rng.normal(0.0, b.noise_stddev);
  }
  b.clean = AudioBuffer(std::move(clean), fs);
  b.noisy = AudioBuffer(std::move(noisy), fs);
  b.keypoints = KeypointSet::grid(spec.n_keypoints);
  for (auto& k : b.keypoints.entries) k.t1 = k.t0;
  return b;
}

std::pair<AudioBuffer, KeypointSet> synth_base_signal(const SynthSpec& spec) {
  BaseSignal b = synth_base(spec);
  return {std::move(b.noisy), std::move(b.keypoints)};
}

DriftSpec parse_drift_spec(const std::string& text) {
  DriftSpec d;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string args =
      colon == std::string::npos ? std::string{} : text.substr(colon + 1);
  try {
    if (kind == "affine") {
      const auto comma = args.find(',');
      if (comma == std::string::npos) throw ConfigError("");
      std::size_t used = 0;
      d.kind = DriftSpec::Kind::affine;
      d.alpha = std::stod(args.substr(0, comma), &used);
      if (used != comma) throw ConfigError("");
      const std::string b = args.substr(comma + 1);
      d.beta = std::stod(b, &used);
      if (used != b.size()) throw ConfigError("");
      return d;
    }
    if (kind == "piecewise") {
      std::size_t used = 0;
      d.kind = DriftSpec::Kind::piecewise;
      const long k = std::stol(args, &used);
      if (used != args.size() || k < 1) throw ConfigError("");
      d.n_knots = static_cast<std::size_t>(k);
      return d;
    }
    if (kind == "random-affine" && args.empty()) {
      d.kind = DriftSpec::Kind::random_affine;
      return d;
    }
  } catch (const std::logic_error&) {
    // std::stod / std::stol failures fall through to the error below.
  } catch (const ConfigError&) {
  }
  throw ConfigError("bad drift spec '" + text +
                    "' (expected affine:A,B | piecewise:K | random-affine)");
}

DriftTrace make_drift(const DriftSpec& spec, double duration_s,
                      std::uint64_t seed, double delta_max) {
  switch (spec.kind) {
    case DriftSpec::Kind::affine:
      return DriftTrace::affine(spec.alpha, spec.beta, duration_s, delta_max);
    case DriftSpec::Kind::random_affine: {
      Rng rng(seed);
      const double span = delta_max / duration_s;
      for (int attempt = 0; attempt < 10000; ++attempt) {
        const double alpha = rng.uniform(1.0 - span, 1.0 + span);
        const double beta = rng.uniform(-delta_max, delta_max);
        if (alpha > 0.0 &&
            std::abs((alpha - 1.0) * duration_s + beta) <= delta_max) {
          return DriftTrace::affine(alpha, beta, duration_s, delta_max);
        }
      }
      throw ConstraintError("could not sample a feasible affine drift");
    }
    case DriftSpec::Kind::piecewise: {
      Rng rng(seed);
      const std::size_t k = spec.n_knots;
      for (int attempt = 0; attempt < 10000; ++attempt) {
        std::vector<DriftTrace::Knot> knots(k);
        for (std::size_t j = 0; j < k; ++j) {
          knots[j].t = k == 1 ? 0.0 : duration_s * j / (k - 1);
          knots[j].offset = rng.uniform(-delta_max, delta_max);
        }
        bool monotone = true;
        for (std::size_t j = 1; j < k; ++j) {
          const double slope = (knots[j].offset - knots[j - 1].offset) /
                               (knots[j].t - knots[j - 1].t);
          monotone = monotone && slope > -1.0;
        }
        if (monotone) {
          return DriftTrace::piecewise(std::move(knots), duration_s, delta_max);
        }
      }
      throw ConstraintError("could not sample a monotone piecewise drift");
    }
  }
  throw ConfigError("unknown drift kind");
}

AudioBuffer apply_drift(const AudioBuffer& buffer, const DriftTrace& drift) {
  const auto& in = buffer.samples();
  const double fs = buffer.sample_rate_hz();
  const std::size_t n = in.size();
  std::vector<double> out(n, 0.0);
  const bool affine = drift.kind() == DriftTrace::Kind::affine;
  for (std::size_t j = 0; j < n; ++j) {
    // Affine inverse is taken in sample units so the identity is exact.
    const double src =
        affine ? (static_cast<double>(j) - drift.beta() * fs) / drift.alpha()
               : drift.inverse(j / fs) * fs;
    if (!(src > -1.0 && src < static_cast<double>(n))) continue;
    const double base = std::floor(src);
    const double w = src - base;
    const auto i0 = static_cast<long long>(base);
    const double a = i0 >= 0 ? in[static_cast<std::size_t>(i0)] : 0.0;
    const double b = i0 + 1 < static_cast<long long>(n)
                         ? in[static_cast<std::size_t>(i0 + 1)]
                         : 0.0;
    out[j] = a + w * (b - a);
  }
  return AudioBuffer(std::move(out), buffer.sample_rate_hz());
}

SynthPair synth_pair(const SynthSpec& spec, const DriftTrace& drift) {
  BaseSignal base = synth_base(spec);
  AudioBuffer warped = apply_drift(base.clean, drift);
  if (base.noise_stddev > 0.0) {
    Rng rng(mix_seed(spec.seed, kStreamNoise1));
    for (double& v : warped.mutable_samples()) {
      v += rng.normal(0.0, base.noise_stddev);
    }
  }
  SynthPair p;
  p.ch0 = std::move(base.noisy);
  p.ch1 = std::move(warped);
  p.truth = KeypointSet::grid(spec.n_keypoints);
  for (auto& k : p.truth.entries) k.t1 = drift(k.t0);
  validate_keypoints(p.truth, drift.delta_max());
  return p;
}

}  // namespace driftalign
