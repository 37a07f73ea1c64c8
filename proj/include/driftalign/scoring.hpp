#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "driftalign/types.hpp"

namespace driftalign {

struct ScoreBreakdown {
  double mu_pos = 0.0;
  double r_pos = 0.0;
  // sum of positive p / N, the same quantity as mu_pos * r_pos.
  double pos_term = 0.0;
  double mu_top = 0.0;
  double sig_cov = 0.0;
  double e_exp = 0.0;
  double total = 0.0;
};

// All take probabilities and throw ConfigError when empty.
// (mean of p > 0.5, fraction of p > 0.5); mean is 0 with no positives.
std::pair<double, double> component_pos(std::span<const double> probs);
// Mean of the max(1, ceil(N/4)) largest values.
double component_top_quartile(std::span<const double> probs);
// Mean of logistic(p).
double component_sigmoid_coverage(std::span<const double> probs);
// Mean over all N of exp(4(p - 0.5)) / e^2, counting only p > 0.5.
double component_exp(std::span<const double> probs);

double combine_components(double pos_term, double mu_top, double sig_cov,
                          double e_exp, const ScoringWeights& w);

ScoreBreakdown confidence_score(std::span<const double> probs,
                                const ScoringWeights& w = {});
ScoreBreakdown confidence_score(const PredictionSet& p,
                                const ScoringWeights& w = {});

// Number of logits strictly above zero.
std::size_t binary_count_score(std::span<const double> logits);

}  // namespace driftalign
