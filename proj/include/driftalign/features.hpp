#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "driftalign/types.hpp"

namespace driftalign {

struct FeatureConfig {
  double segment_s = 2.0;
  std::size_t n_fft = 400;
  std::size_t hop = 160;
  std::size_t n_mels = 40;
  double fmin_hz = 0.0;
  // Unset means Nyquist.
  std::optional<double> fmax_hz;
  double log_floor = 1e-10;

  void validate(std::uint32_t sample_rate_hz) const;
  double fmax(std::uint32_t sample_rate_hz) const;
  std::size_t segment_samples(std::uint32_t sample_rate_hz) const;
  std::size_t frames_per_segment(std::uint32_t sample_rate_hz) const;
  std::size_t pooled_dim() const { return 2 * n_mels; }
  bool operator==(const FeatureConfig&) const = default;
};

struct Segment {
  std::vector<double> samples;
  double origin_t = 0.0;
  int channel = 0;
  std::uint32_t sample_rate_hz = 1;
};

// samples [floor(t fs), floor(t fs) + floor(tau fs)); zero outside the buffer.
Segment extract_segment(const AudioBuffer& buf, double t,
                        const FeatureConfig& cfg, int channel = 0);

// Row-major frames x n_mels.
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;

  double at(std::size_t f, std::size_t m) const {
    return values[f * n_mels + m];
  }
};

// HTK-mel triangular filter centres in Hz.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg,
                                           std::uint32_t sample_rate_hz);

// Hann-windowed power spectrum -> mel energies -> ln(max(E, log_floor)).
// Owns FFT scratch space; one instance per thread.
class LogMelExtractor {
 public:
  LogMelExtractor(const FeatureConfig& cfg, std::uint32_t sample_rate_hz);
  ~LogMelExtractor();
  LogMelExtractor(const LogMelExtractor&) = delete;
  LogMelExtractor& operator=(const LogMelExtractor&) = delete;

  const FeatureConfig& config() const { return cfg_; }
  std::uint32_t sample_rate_hz() const { return sample_rate_; }

  // frame must hold n_fft samples; writes n_mels values.
  void frame(const double* frame, double* out);
  FeatureMatrix compute(std::span<const double> samples);

 private:
  struct Impl;
  FeatureConfig cfg_;
  std::uint32_t sample_rate_;
  std::unique_ptr<Impl> impl_;
};

FeatureMatrix log_mel(const Segment& seg, const FeatureConfig& cfg);

// Per-mel mean followed by per-mel population standard deviation.
std::vector<double> pool_features(const FeatureMatrix& fm);
void pool_rows(const double* rows, std::size_t frames, std::size_t n_mels,
               double* out);

// Start sample floor(t fs) rounded to the nearest multiple of hop, in hops.
std::int64_t snap_to_frame(double t, std::uint32_t sample_rate_hz,
                           std::size_t hop);
double frame_to_time(std::int64_t q, std::uint32_t sample_rate_hz,
                     std::size_t hop);

// Log-mel frames of a whole (zero-extended) recording on the hop grid.
// pooled(q) equals pool_features(log_mel(extract_segment(buf, t))) for any
// t whose start sample is q * hop.
class FrameGrid {
 public:
  FrameGrid(const AudioBuffer& buf, const FeatureConfig& cfg,
            std::int64_t q_first, std::int64_t q_last);

  std::int64_t q_first() const { return q_first_; }
  std::int64_t q_last() const { return q_last_; }
  bool contains(std::int64_t q) const {
    return q >= q_first_ && q <= q_last_;
  }
  std::vector<double> pooled(std::int64_t q) const;

 private:
  std::int64_t q_first_;
  std::int64_t q_last_;
  std::size_t frames_per_segment_;
  std::size_t n_mels_;
  std::vector<double> frames_;  // (q_last - q_first + F) x n_mels
};

}  // namespace driftalign
