#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftalign/audio_io.hpp"
#include "driftalign/neural.hpp"
#include "driftalign/scoring.hpp"
#include "driftalign/types.hpp"

namespace driftalign {

enum class ScorerKind { confidence, binary, crosscorr, nosync };
std::string to_string(ScorerKind k);
ScorerKind scorer_kind_from_string(const std::string& s);

enum class SamplingKind { random_uniform, grid };

enum class CrosscorrMode { plain, phat };
std::string to_string(CrosscorrMode m);
CrosscorrMode crosscorr_mode_from_string(const std::string& s);

struct AlignConfig {
  double delta_max = kDefaultDeltaMax;
  // Random sampling only.
  std::size_t n_candidates = 100;
  SamplingKind sampling = SamplingKind::random_uniform;
  std::size_t grid_alpha = 1;
  std::size_t grid_beta = 1;
  std::uint64_t seed = 0;
  ScorerKind scorer = ScorerKind::confidence;
  ScoringWeights weights;
  CrosscorrMode crosscorr_mode = CrosscorrMode::phat;
  // Drop candidates with |(alpha - 1) h + beta| > delta_max at the horizon h
  // (the last keypoint). Random sampling redraws instead of dropping.
  bool trajectory_filter = true;

  void validate() const;
};

// "M" (random, M draws) or "grid:GxH" (G alpha values by H beta values).
void parse_candidates_spec(const std::string& text, AlignConfig& cfg);

// alpha in [1 - dmax/T, 1 + dmax/T], beta in [-dmax, dmax]. Grid order is
// alpha-major. The identity (1, 0) is always appended last.
std::vector<AffineCandidate> generate_candidates(
    double duration_s, const AlignConfig& cfg,
    std::optional<double> horizon_s = std::nullopt);

// t[i] = alpha * i + beta.
std::vector<double> predict_timestamps(const AffineCandidate& c, std::size_t n);
std::vector<double> predict_timestamps(const AffineCandidate& c,
                                       std::span<const double> t0);

// Scorer outputs for every candidate at every keypoint. Segment starts are
// snapped to the nearest hop boundary; all candidates share one feature and
// logit table per pair.
std::vector<PredictionSet> predict_candidates(
    const StereoPair& pair, std::span<const double> t0,
    std::span<const AffineCandidate> candidates, const ScorerModel& model);

// Score of one candidate from its predictions: S_conf total for confidence,
// positive count for binary, 0 for nosync.
double candidate_score(const PredictionSet& p, ScorerKind kind,
                       const ScoringWeights& w);

struct CandidateScore {
  double score = 0.0;
  PredictionSet predictions;
  ScoreBreakdown breakdown;
};

// Reference path: segments are cut at the exact (unsnapped) times.
CandidateScore score_candidate(const StereoPair& pair,
                               std::span<const double> t0,
                               const AffineCandidate& c,
                               const ScorerModel& model, ScorerKind kind,
                               const ScoringWeights& w = {});

// Highest score; ties go to smaller |beta|, then smaller |alpha - 1|, then the
// earlier candidate.
std::size_t select_best(std::span<const AffineCandidate> candidates,
                        std::span<const double> scores);

// Lag (seconds) of ch1 relative to ch0 maximising the cross-correlation within
// +-max_lag_s. Positive when ch1 is delayed.
double crosscorr_delay(const AudioBuffer& ch0, const AudioBuffer& ch1,
                       double max_lag_s, CrosscorrMode mode);

struct ScoredCandidate {
  AffineCandidate candidate;
  double score = 0.0;
  std::optional<ScoreBreakdown> breakdown;
};

struct AlignmentDetail {
  AlignmentResult result;
  // Generation order.
  std::vector<ScoredCandidate> candidates;
  std::size_t chosen_index = 0;
  std::optional<double> crosscorr_lag;
};

// Model scorers require `model`.
AlignmentDetail align(const StereoPair& pair, std::span<const double> t0,
                      const AlignConfig& cfg,
                      const ScorerModel* model = nullptr);

// Candidate list align() would use for this pair.
std::vector<AffineCandidate> candidates_for(const StereoPair& pair,
                                            std::span<const double> t0,
                                            const AlignConfig& cfg);

}  // namespace driftalign
