#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftalign/types.hpp"

namespace driftalign {

enum class EventKind { click, chirp };

std::string to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

// Synthetic recording: one distinctive event (random frequency content) at
// every integer second i < n_keypoints over Gaussian background noise.
struct SynthSpec {
  double duration_s = 60.0;
  std::uint32_t sample_rate_hz = 16000;
  std::size_t n_keypoints = 60;
  EventKind event_kind = EventKind::chirp;
  // Event power over noise power. +inf disables the noise.
  double event_snr_db = 30.0;
  std::uint64_t seed = 0;
  // Defaults: 10 ms for clicks, 0.9 s for chirps.
  std::optional<double> event_duration_s;
  double event_amplitude = 0.5;

  void validate() const;
  double event_duration() const;
};

// Clean waveform of event i (starts at sample 0 of the returned vector).
std::vector<double> event_template(const SynthSpec& spec, std::size_t i);

struct BaseSignal {
  AudioBuffer clean;  // events only
  AudioBuffer noisy;  // events + channel-0 noise
  KeypointSet keypoints;
  double noise_stddev = 0.0;
};

BaseSignal synth_base(const SynthSpec& spec);

// Noisy base buffer plus the canonical grid with t1 = t0.
std::pair<AudioBuffer, KeypointSet> synth_base_signal(const SynthSpec& spec);

struct DriftSpec {
  enum class Kind { affine, piecewise, random_affine };
  Kind kind = Kind::affine;
  double alpha = 1.0;
  double beta = 0.0;
  std::size_t n_knots = 4;
};

// "affine:A,B", "piecewise:K" or "random-affine".
DriftSpec parse_drift_spec(const std::string& text);

// Affine: D(t) = alpha t + beta (throws if infeasible on [0, duration]).
// Piecewise: K evenly spaced knots, offsets uniform in [-dmax, dmax],
// rejection-sampled until monotone. Random affine: (alpha, beta) uniform over
// the candidate box, rejection-sampled until feasible on [0, duration].
DriftTrace make_drift(const DriftSpec& spec, double duration_s,
                      std::uint64_t seed, double delta_max = kDefaultDeltaMax);

// Output sample at time u is the input at D^-1(u), linearly interpolated;
// samples that map outside the input are zero.
AudioBuffer apply_drift(const AudioBuffer& buffer, const DriftTrace& drift);

struct SynthPair {
  AudioBuffer ch0;
  AudioBuffer ch1;
  KeypointSet truth;
};

// ch0 = base signal; ch1 = warped clean events plus independently seeded
// noise; truth.t1[i] = D(i).
SynthPair synth_pair(const SynthSpec& spec, const DriftTrace& drift);

}  // namespace driftalign
