#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "driftalign/align.hpp"
#include "driftalign/audio_io.hpp"
#include "driftalign/neural.hpp"
#include "driftalign/types.hpp"

namespace driftalign {

// Mean squared difference; throws on length mismatch or empty input.
double mse(std::span<const double> pred, std::span<const double> truth);

// dataset_mse = mean of per-file MSEs.
EvalReport dataset_score(const std::map<std::string, double>& per_file_mse);
// Mean of exactly two dataset MSEs.
double combined_score(std::span<const double> dataset_mses);
// Per-dataset reports plus the combined mean when there are two.
std::vector<EvalReport> dataset_scores(
    const std::vector<std::map<std::string, double>>& datasets,
    bool want_combined);

struct WeightConfig {
  std::string name;
  ScoringWeights weights;
};

// The six rows of the weight ablation, in table order.
std::vector<WeightConfig> weight_ablation_configs();

struct AblationRow {
  std::string name;
  ScoringWeights weights;
  ScorerKind scorer = ScorerKind::confidence;
  std::map<std::string, double> per_file_mse;
  double dataset_mse = 0.0;
};

// One prediction pass per pair; every config re-ranks the same predictions.
// Pairs need ground truth.
std::vector<AblationRow> ablate_weights(std::span<const StereoPair> pairs,
                                        const ScorerModel& model,
                                        std::span<const WeightConfig> configs,
                                        const AlignConfig& cfg);

struct ComponentModels {
  const ScorerModel* baseline = nullptr;   // no attention, plain MLP
  const ScorerModel* enhanced = nullptr;   // no attention, enhanced MLP
  const ScorerModel* attention = nullptr;  // attention, enhanced MLP
};

// Rows: Original Baseline, + Enhanced MLP, + Cross-Attention (all binary
// counting) and + Confidence Scoring (attention model, confidence scoring on
// the same predictions as the row above).
std::vector<AblationRow> ablate_components(std::span<const StereoPair> pairs,
                                           const ComponentModels& models,
                                           const AlignConfig& cfg);

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace driftalign
