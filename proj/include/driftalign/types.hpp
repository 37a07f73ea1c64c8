#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace driftalign {

inline constexpr double kDefaultDeltaMax = 5.0;

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Mono waveform. Amplitudes are nominally in [-1, 1].
class AudioBuffer {
 public:
  AudioBuffer() = default;
  AudioBuffer(std::vector<double> samples, std::uint32_t sample_rate_hz);

  const std::vector<double>& samples() const { return samples_; }
  std::vector<double>& mutable_samples() { return samples_; }
  std::uint32_t sample_rate_hz() const { return sample_rate_hz_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  double duration_seconds() const {
    return static_cast<double>(samples_.size()) / sample_rate_hz_;
  }

 private:
  std::vector<double> samples_;
  std::uint32_t sample_rate_hz_ = 1;
};

struct Keypoint {
  std::size_t index = 0;
  double t0 = 0.0;
  std::optional<double> t1;
};

// Ordered keypoints. `canonical_grid` is explicit: when set, t0 must equal the
// index exactly.
struct KeypointSet {
  std::vector<Keypoint> entries;
  bool canonical_grid = true;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool has_truth() const;
  std::vector<double> t0() const;
  // Throws if any entry lacks t1.
  std::vector<double> t1() const;

  static KeypointSet grid(std::size_t n);
};

// Returns `k` unchanged if t0 is strictly increasing, the grid flag holds and
// every present t1 is within delta_max of its t0. Otherwise throws
// ConstraintError naming the first offending index.
const KeypointSet& validate_keypoints(const KeypointSet& k, double delta_max);

// Channel-0 -> channel-1 time map. Piecewise traces hold their first/last
// offset outside the knot range.
class DriftTrace {
 public:
  enum class Kind { affine, piecewise_linear };

  struct Knot {
    double t = 0.0;
    double offset = 0.0;
  };

  static DriftTrace affine(double alpha, double beta, double domain_end_s,
                           double delta_max = kDefaultDeltaMax);
  static DriftTrace piecewise(std::vector<Knot> knots, double domain_end_s,
                              double delta_max = kDefaultDeltaMax);
  static DriftTrace identity(double domain_end_s) {
    return affine(1.0, 0.0, domain_end_s);
  }

  Kind kind() const { return kind_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  const std::vector<Knot>& knots() const { return knots_; }
  double delta_max() const { return delta_max_; }
  double domain_end() const { return domain_end_; }

  double operator()(double t) const;
  // D^-1(u); D is strictly increasing so the inverse is unique.
  double inverse(double u) const;

 private:
  DriftTrace() = default;
  double offset_at(double t) const;

  Kind kind_ = Kind::affine;
  double alpha_ = 1.0;
  double beta_ = 0.0;
  std::vector<Knot> knots_;
  double delta_max_ = kDefaultDeltaMax;
  double domain_end_ = 0.0;
};

struct AffineCandidate {
  double alpha = 1.0;
  double beta = 0.0;

  // Validates alpha in [1 - dmax/T, 1 + dmax/T] and beta in [-dmax, dmax].
  static AffineCandidate make(double alpha, double beta, double duration_s,
                              double delta_max = kDefaultDeltaMax);

  double predict(double t0) const { return alpha * t0 + beta; }
  bool operator==(const AffineCandidate&) const = default;
};

// Per-keypoint scorer outputs for one candidate.
struct PredictionSet {
  std::vector<double> logits;
  std::vector<double> probs;
  AffineCandidate candidate;

  static PredictionSet from_logits(std::vector<double> logits,
                                   AffineCandidate candidate = {});
  // Logits are recovered through the logit function; probs must be in (0,1).
  static PredictionSet from_probs(std::vector<double> probs,
                                  AffineCandidate candidate = {});
  std::size_t size() const { return probs.size(); }
};

struct ScoringWeights {
  double w_pos = 0.4;
  double w_top = 0.3;
  double w_sig = 0.2;
  double w_exp = 0.1;

  // Throws ConfigError on negative, non-finite or all-zero weights.
  void validate() const;
  bool operator==(const ScoringWeights&) const = default;
};

struct AlignmentResult {
  AffineCandidate chosen;
  std::vector<double> predicted_t1;
  double score = 0.0;
  std::optional<std::vector<std::pair<AffineCandidate, double>>>
      per_candidate_scores;
};

struct EvalReport {
  std::map<std::string, double> per_file_mse;
  double dataset_mse = 0.0;
  std::optional<double> combined;
};

}  // namespace driftalign
