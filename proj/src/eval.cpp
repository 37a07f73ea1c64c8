#include "driftalign/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "driftalign/error.hpp"

namespace driftalign {

double mse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw ConfigError("prediction length " + std::to_string(pred.size()) +
                      " does not match truth length " +
                      std::to_string(truth.size()));
  }
  if (pred.empty()) throw ConfigError("cannot compute MSE of empty lists");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = truth[i] - pred[i];
    s += e * e;
  }
  return s / static_cast<double>(pred.size());
}

EvalReport dataset_score(const std::map<std::string, double>& per_file_mse) {
  if (per_file_mse.empty()) throw ConfigError("dataset has no files");
  EvalReport r;
  r.per_file_mse = per_file_mse;
  double s = 0.0;
  for (const auto& [id, v] : per_file_mse) s += v;
  r.dataset_mse = s / static_cast<double>(per_file_mse.size());
  return r;
}

double combined_score(std::span<const double> dataset_mses) {
  if (dataset_mses.size() != 2) {
    throw ConfigError("combined score needs exactly two datasets, got " +
                      std::to_string(dataset_mses.size()));
  }
  return 0.5 * (dataset_mses[0] + dataset_mses[1]);
}

std::vector<EvalReport> dataset_scores(
    const std::vector<std::map<std::string, double>>& datasets,
    bool want_combined) {
  std::vector<EvalReport> out;
  std::vector<double> m;
  for (const auto& d : datasets) {
    out.push_back(dataset_score(d));
    m.push_back(out.back().dataset_mse);
  }
  if (want_combined) {
    const double c = combined_score(m);
    for (auto& r : out) r.combined = c;
  }
  return out;
}

std::vector<WeightConfig> weight_ablation_configs() {
  return {
      {"Proposed", {0.4, 0.3, 0.2, 0.1}},
      {"Mean+Top", {0.5, 0.5, 0.0, 0.0}},
      {"Mean only", {1.0, 0.0, 0.0, 0.0}},
      {"Equal weights", {0.25, 0.25, 0.25, 0.25}},
      {"Sigmoid+Exp", {0.0, 0.0, 0.5, 0.5}},
      {"Top only", {0.0, 1.0, 0.0, 0.0}},
  };
}

namespace {

struct PairPass {
  std::vector<AffineCandidate> candidates;
  std::vector<PredictionSet> predictions;
  std::vector<double> t0;
  std::vector<double> truth;
};

PairPass predict_pair(const StereoPair& pair, const ScorerModel& model,
                      const AlignConfig& cfg) {
  PairPass p;
  p.t0 = pair.keypoints.t0();
  p.truth = pair.keypoints.t1();
  p.candidates = candidates_for(pair, p.t0, cfg);
  p.predictions = predict_candidates(pair, p.t0, p.candidates, model);
  return p;
}

double rerank_mse(const PairPass& p, ScorerKind kind, const ScoringWeights& w) {
  std::vector<double> scores;
  scores.reserve(p.predictions.size());
  for (const auto& ps : p.predictions) scores.push_back(candidate_score(ps, kind, w));
  const std::size_t best = select_best(p.candidates, scores);
  return mse(predict_timestamps(p.candidates[best], p.t0), p.truth);
}

void finish(AblationRow& r) {
  r.dataset_mse = dataset_score(r.per_file_mse).dataset_mse;
}

}  // namespace

std::vector<AblationRow> ablate_weights(std::span<const StereoPair> pairs,
                                        const ScorerModel& model,
                                        std::span<const WeightConfig> configs,
                                        const AlignConfig& cfg) {
  if (pairs.empty()) throw ConfigError("no pairs to evaluate");
  for (const auto& c : configs) c.weights.validate();
  std::vector<AblationRow> rows;
  for (const auto& c : configs) {
    rows.push_back({c.name, c.weights, ScorerKind::confidence, {}, 0.0});
  }
  for (const auto& pair : pairs) {
    const PairPass p = predict_pair(pair, model, cfg);
    for (auto& r : rows) {
      r.per_file_mse[pair.id] = rerank_mse(p, ScorerKind::confidence, r.weights);
    }
  }
  for (auto& r : rows) finish(r);
  return rows;
}

std::vector<AblationRow> ablate_components(std::span<const StereoPair> pairs,
                                           const ComponentModels& models,
                                           const AlignConfig& cfg) {
  if (pairs.empty()) throw ConfigError("no pairs to evaluate");
  auto check = [](const ScorerModel* m, const char* what, bool attention,
                  MlpKind mlp) {
    if (m == nullptr) throw ConfigError(std::string("missing model for ") + what);
    if (m->config.attention != attention || m->config.mlp != mlp) {
      throw ConfigError(std::string("model given for ") + what +
                        " has attention=" + (m->config.attention ? "on" : "off") +
                        " mlp=" + to_string(m->config.mlp));
    }
  };
  check(models.baseline, "the baseline row", false, MlpKind::plain);
  check(models.enhanced, "the enhanced-MLP row", false, MlpKind::enhanced);
  check(models.attention, "the cross-attention row", true, MlpKind::enhanced);
  cfg.weights.validate();

  std::vector<AblationRow> rows = {
      {"Original Baseline", cfg.weights, ScorerKind::binary, {}, 0.0},
      {"+ Enhanced MLP", cfg.weights, ScorerKind::binary, {}, 0.0},
      {"+ Cross-Attention", cfg.weights, ScorerKind::binary, {}, 0.0},
      {"+ Confidence Scoring", cfg.weights, ScorerKind::confidence, {}, 0.0},
  };
  for (const auto& pair : pairs) {
    const PairPass b = predict_pair(pair, *models.baseline, cfg);
    rows[0].per_file_mse[pair.id] = rerank_mse(b, ScorerKind::binary, cfg.weights);
    const PairPass e = predict_pair(pair, *models.enhanced, cfg);
    rows[1].per_file_mse[pair.id] = rerank_mse(e, ScorerKind::binary, cfg.weights);
    const PairPass a = predict_pair(pair, *models.attention, cfg);
    rows[2].per_file_mse[pair.id] = rerank_mse(a, ScorerKind::binary, cfg.weights);
    rows[3].per_file_mse[pair.id] =
        rerank_mse(a, ScorerKind::confidence, cfg.weights);
  }
  for (auto& r : rows) finish(r);
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "config,scorer,w_pos,w_top,w_sig,w_exp,n_files,mse\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%s,%.4g,%.4g,%.4g,%.4g,%zu,%.9g\n",
                  r.name.c_str(), to_string(r.scorer).c_str(), r.weights.w_pos,
                  r.weights.w_top, r.weights.w_sig, r.weights.w_exp,
                  r.per_file_mse.size(), r.dataset_mse);
    out += line;
  }
  return out;
}

void write_ablation_csv(const std::vector<AblationRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << ablation_csv(rows);
  if (!f) throw FormatError("write failed for " + path.string());
}

}  // namespace driftalign
