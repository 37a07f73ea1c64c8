#include "driftalign/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "driftalign/error.hpp"
#include "fft.hpp"

namespace driftalign {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// n_mels + 2 edge frequencies, evenly spaced on the mel scale.
std::vector<double> mel_edges(const FeatureConfig& cfg,
                              std::uint32_t sample_rate_hz) {
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax(sample_rate_hz));
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t m = 0; m < edges.size(); ++m) {
    edges[m] = mel_to_hz(lo + (hi - lo) * m / (cfg.n_mels + 1));
  }
  return edges;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

void FeatureConfig::validate(std::uint32_t sample_rate_hz) const {
  if (hop == 0 || n_fft < hop) {
    throw ConfigError("feature config needs n_fft >= hop > 0");
  }
  if (n_mels < 1) throw ConfigError("feature config needs n_mels >= 1");
  if (!(segment_s > 0.0)) throw ConfigError("segment duration must be > 0");
  if (!(log_floor > 0.0)) throw ConfigError("log floor must be positive");
  const double nyq = 0.5 * sample_rate_hz;
  if (fmax_hz && *fmax_hz > nyq) {
    throw ConfigError("fmax exceeds Nyquist frequency");
  }
  if (!(fmin_hz >= 0.0 && fmin_hz < fmax(sample_rate_hz))) {
    throw ConfigError("feature config needs 0 <= fmin < fmax");
  }
  if (segment_samples(sample_rate_hz) < n_fft) {
    throw ConfigError("segment shorter than one FFT frame");
  }
}

double FeatureConfig::fmax(std::uint32_t sample_rate_hz) const {
  return fmax_hz ? *fmax_hz : 0.5 * sample_rate_hz;
}

std::size_t FeatureConfig::segment_samples(std::uint32_t sample_rate_hz) const {
  return static_cast<std::size_t>(std::floor(segment_s * sample_rate_hz));
}

std::size_t FeatureConfig::frames_per_segment(
    std::uint32_t sample_rate_hz) const {
  const std::size_t len = segment_samples(sample_rate_hz);
  if (len < n_fft) return 0;
  return 1 + (len - n_fft) / hop;
}

Segment extract_segment(const AudioBuffer& buf, double t,
                        const FeatureConfig& cfg, int channel) {
  if (!std::isfinite(t)) throw ConfigError("segment time must be finite");
  const std::uint32_t fs = buf.sample_rate_hz();
  const auto start =
      static_cast<std::int64_t>(std::floor(t * static_cast<double>(fs)));
  const std::size_t len = cfg.segment_samples(fs);
  Segment seg;
  seg.samples.assign(len, 0.0);
  seg.origin_t = t;
  seg.channel = channel;
  seg.sample_rate_hz = fs;
  const auto n = static_cast<std::int64_t>(buf.size());
  const std::int64_t lo = std::max<std::int64_t>(start, 0);
  const std::int64_t hi =
      std::min<std::int64_t>(start + static_cast<std::int64_t>(len), n);
  for (std::int64_t s = lo; s < hi; ++s) {
    seg.samples[static_cast<std::size_t>(s - start)] =
        buf.samples()[static_cast<std::size_t>(s)];
  }
  return seg;
}

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg,
                                           std::uint32_t sample_rate_hz) {
  const auto edges = mel_edges(cfg, sample_rate_hz);
  return {edges.begin() + 1, edges.end() - 1};
}

struct LogMelExtractor::Impl {
  detail::RealFft fft;
  std::vector<double> window;
  // Sparse triangular filters: first bin and weights per mel band.
  std::vector<std::size_t> first_bin;
  std::vector<std::vector<double>> weights;
  std::vector<double> power;

  explicit Impl(std::size_t n) : fft(n) {}
};

LogMelExtractor::LogMelExtractor(const FeatureConfig& cfg,
                                 std::uint32_t sample_rate_hz)
    : cfg_(cfg), sample_rate_(sample_rate_hz) {
  cfg_.validate(sample_rate_hz);
  impl_ = std::make_unique<Impl>(cfg_.n_fft);
  const std::size_t n = cfg_.n_fft;
  impl_->window.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    impl_->window[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * k / n);
  }
  const auto edges = mel_edges(cfg_, sample_rate_hz);
  const std::size_t bins = impl_->fft.bins();
  impl_->power.resize(bins);
  for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
    const double left = edges[m];
    const double centre = edges[m + 1];
    const double right = edges[m + 2];
    std::vector<double> w;
    std::size_t first = bins;
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate_hz / n;
      double v = 0.0;
      if (f > left && f <= centre) {
        v = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        v = (right - f) / (right - centre);
      }
      if (v > 0.0) {
        if (first == bins) first = b;
        w.resize(b - first + 1, 0.0);
        w[b - first] = v;
      }
    }
    impl_->first_bin.push_back(first == bins ? 0 : first);
    impl_->weights.push_back(std::move(w));
  }
}

LogMelExtractor::~LogMelExtractor() = default;

void LogMelExtractor::frame(const double* frame, double* out) {
  const std::size_t n = cfg_.n_fft;
  double* t = impl_->fft.time();
  for (std::size_t k = 0; k < n; ++k) t[k] = frame[k] * impl_->window[k];
  impl_->fft.forward();
  const std::complex<double>* f = impl_->fft.freq();
  for (std::size_t b = 0; b < impl_->fft.bins(); ++b) {
    impl_->power[b] = std::norm(f[b]);
  }
  for (std::size_t m = 0; m < cfg_.n_mels; ++m) {
    const auto& w = impl_->weights[m];
    const double* p = impl_->power.data() + impl_->first_bin[m];
    double e = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) e += w[j] * p[j];
    out[m] = std::log(std::max(e, cfg_.log_floor));
  }
}

FeatureMatrix LogMelExtractor::compute(std::span<const double> samples) {
  if (samples.size() < cfg_.n_fft) {
    throw ConfigError("segment shorter than one FFT frame");
  }
  FeatureMatrix fm;
  fm.n_mels = cfg_.n_mels;
  fm.frames = 1 + (samples.size() - cfg_.n_fft) / cfg_.hop;
  fm.values.resize(fm.frames * fm.n_mels);
  for (std::size_t fr = 0; fr < fm.frames; ++fr) {
    frame(samples.data() + fr * cfg_.hop, fm.values.data() + fr * fm.n_mels);
  }
  return fm;
}

FeatureMatrix log_mel(const Segment& seg, const FeatureConfig& cfg) {
  if (seg.samples.size() != cfg.segment_samples(seg.sample_rate_hz)) {
    throw ConfigError("segment length " + std::to_string(seg.samples.size()) +
                      " does not match feature config (" +
                      std::to_string(cfg.segment_samples(seg.sample_rate_hz)) +
                      ")");
  }
  LogMelExtractor ex(cfg, seg.sample_rate_hz);
  return ex.compute(seg.samples);
}

void pool_rows(const double* rows, std::size_t frames, std::size_t n_mels,
               double* out) {
  const double inv = 1.0 / static_cast<double>(frames);
  for (std::size_t m = 0; m < n_mels; ++m) {
    double sum = 0.0;
    for (std::size_t f = 0; f < frames; ++f) sum += rows[f * n_mels + m];
    const double mean = sum * inv;
    double ss = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      const double d = rows[f * n_mels + m] - mean;
      ss += d * d;
    }
    out[m] = mean;
    out[n_mels + m] = std::sqrt(ss * inv);
  }
}

std::vector<double> pool_features(const FeatureMatrix& fm) {
  if (fm.frames == 0 || fm.n_mels == 0) {
    throw ConfigError("cannot pool an empty feature matrix");
  }
  std::vector<double> out(2 * fm.n_mels);
  pool_rows(fm.values.data(), fm.frames, fm.n_mels, out.data());
  return out;
}

std::int64_t snap_to_frame(double t, std::uint32_t sample_rate_hz,
                           std::size_t hop) {
  const auto s = static_cast<std::int64_t>(
      std::floor(t * static_cast<double>(sample_rate_hz)));
  const auto h = static_cast<std::int64_t>(hop);
  return floor_div(2 * s + h, 2 * h);
}

double frame_to_time(std::int64_t q, std::uint32_t sample_rate_hz,
                     std::size_t hop) {
  return static_cast<double>(q * static_cast<std::int64_t>(hop)) /
         sample_rate_hz;
}

FrameGrid::FrameGrid(const AudioBuffer& buf, const FeatureConfig& cfg,
                     std::int64_t q_first, std::int64_t q_last)
    : q_first_(q_first),
      q_last_(q_last),
      frames_per_segment_(cfg.frames_per_segment(buf.sample_rate_hz())),
      n_mels_(cfg.n_mels) {
  if (q_last < q_first) throw ConfigError("empty frame grid range");
  LogMelExtractor ex(cfg, buf.sample_rate_hz());
  const std::size_t total =
      static_cast<std::size_t>(q_last - q_first) + frames_per_segment_;
  frames_.resize(total * n_mels_);
  const auto hop = static_cast<std::int64_t>(cfg.hop);
  const auto n = static_cast<std::int64_t>(buf.size());
  const auto nfft = static_cast<std::int64_t>(cfg.n_fft);
  std::vector<double> scratch(cfg.n_fft);
  for (std::size_t g = 0; g < total; ++g) {
    const std::int64_t start = (q_first + static_cast<std::int64_t>(g)) * hop;
    std::fill(scratch.begin(), scratch.end(), 0.0);
    const std::int64_t lo = std::max<std::int64_t>(start, 0);
    const std::int64_t hi = std::min<std::int64_t>(start + nfft, n);
    for (std::int64_t s = lo; s < hi; ++s) {
      scratch[static_cast<std::size_t>(s - start)] =
          buf.samples()[static_cast<std::size_t>(s)];
    }
    ex.frame(scratch.data(), frames_.data() + g * n_mels_);
  }
}

std::vector<double> FrameGrid::pooled(std::int64_t q) const {
  if (!contains(q)) throw ConfigError("frame index outside grid range");
  std::vector<double> out(2 * n_mels_);
  const std::size_t offset = static_cast<std::size_t>(q - q_first_) * n_mels_;
  pool_rows(frames_.data() + offset, frames_per_segment_, n_mels_, out.data());
  return out;
}

}  // namespace driftalign
