#include "driftalign/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>
#include <vector>

#include "driftalign/error.hpp"

namespace driftalign {

namespace {

void require_nonempty(std::span<const double> p) {
  if (p.empty()) throw ConfigError("prediction set is empty");
}

double positive_sum(std::span<const double> p, std::size_t& count) {
  double sum = 0.0;
  count = 0;
  for (double v : p) {
    if (v > 0.5) {
      sum += v;
      ++count;
    }
  }
  return sum;
}

}  // namespace

std::pair<double, double> component_pos(std::span<const double> probs) {
  require_nonempty(probs);
  std::size_t n = 0;
  const double sum = positive_sum(probs, n);
  if (n == 0) return {0.0, 0.0};
  return {sum / static_cast<double>(n),
          static_cast<double>(n) / static_cast<double>(probs.size())};
}

double component_top_quartile(std::span<const double> probs) {
  require_nonempty(probs);
  const std::size_t k = std::max<std::size_t>(1, (probs.size() + 3) / 4);
  std::vector<double> v(probs.begin(), probs.end());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k),
                    v.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) sum += v[i];
  return sum / static_cast<double>(k);
}

double component_sigmoid_coverage(std::span<const double> probs) {
  require_nonempty(probs);
  double sum = 0.0;
  for (double v : probs) sum += logistic(v);
  return sum / static_cast<double>(probs.size());
}

double component_exp(std::span<const double> probs) {
  require_nonempty(probs);
  const double inv_e2 = std::exp(-2.0);
  double sum = 0.0;
  for (double v : probs) {
    if (v > 0.5) sum += std::exp(4.0 * (v - 0.5)) * inv_e2;
  }
  return sum / static_cast<double>(probs.size());
}

double combine_components(double pos_term, double mu_top, double sig_cov,
                          double e_exp, const ScoringWeights& w) {
  return w.w_pos * pos_term + w.w_top * mu_top + w.w_sig * sig_cov +
         w.w_exp * e_exp;
}

ScoreBreakdown confidence_score(std::span<const double> probs,
                                const ScoringWeights& w) {
  require_nonempty(probs);
  ScoreBreakdown b;
  std::tie(b.mu_pos, b.r_pos) = component_pos(probs);
  std::size_t n = 0;
  b.pos_term = positive_sum(probs, n) / static_cast<double>(probs.size());
  b.mu_top = component_top_quartile(probs);
  b.sig_cov = component_sigmoid_coverage(probs);
  b.e_exp = component_exp(probs);
  b.total = combine_components(b.pos_term, b.mu_top, b.sig_cov, b.e_exp, w);
  return b;
}

ScoreBreakdown confidence_score(const PredictionSet& p,
                                const ScoringWeights& w) {
  return confidence_score(p.probs, w);
}

std::size_t binary_count_score(std::span<const double> logits) {
  require_nonempty(logits);
  return static_cast<std::size_t>(
      std::count_if(logits.begin(), logits.end(), [](double y) { return y > 0.0; }));
}

}  // namespace driftalign
