#include "driftalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "driftalign/error.hpp"
#include "driftalign/features.hpp"
#include "driftalign/parallel.hpp"
#include "driftalign/rng.hpp"
#include "fft.hpp"

namespace driftalign {

std::string to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::confidence:
      return "confidence";
    case ScorerKind::binary:
      return "binary";
    case ScorerKind::crosscorr:
      return "crosscorr";
    case ScorerKind::nosync:
      return "nosync";
  }
  return "?";
}

ScorerKind scorer_kind_from_string(const std::string& s) {
  for (auto k : {ScorerKind::confidence, ScorerKind::binary,
                 ScorerKind::crosscorr, ScorerKind::nosync}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown scorer '" + s +
                    "' (expected confidence, binary, crosscorr or nosync)");
}

std::string to_string(CrosscorrMode m) {
  return m == CrosscorrMode::plain ? "plain" : "phat";
}

CrosscorrMode crosscorr_mode_from_string(const std::string& s) {
  if (s == "plain") return CrosscorrMode::plain;
  if (s == "phat") return CrosscorrMode::phat;
  throw ConfigError("unknown cross-correlation mode '" + s + "'");
}

void AlignConfig::validate() const {
  if (!(delta_max > 0.0) || !std::isfinite(delta_max)) {
    throw ConfigError("delta_max must be positive");
  }
  if (sampling == SamplingKind::random_uniform && n_candidates < 1) {
    throw ConfigError("need at least one candidate");
  }
  if (sampling == SamplingKind::grid && (grid_alpha < 1 || grid_beta < 1)) {
    throw ConfigError("grid dimensions must be >= 1");
  }
  if (scorer == ScorerKind::confidence) weights.validate();
}

void parse_candidates_spec(const std::string& text, AlignConfig& cfg) {
  auto parse_count = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || s.empty() || v < 1) {
      throw ConfigError("bad candidate spec '" + text +
                        "' (expected M or grid:GxH with positive integers)");
    }
    return static_cast<std::size_t>(v);
  };
  if (text.rfind("grid:", 0) == 0) {
    const std::string body = text.substr(5);
    const auto x = body.find('x');
    if (x == std::string::npos) {
      throw ConfigError("bad candidate spec '" + text + "' (expected grid:GxH)");
    }
    cfg.sampling = SamplingKind::grid;
    cfg.grid_alpha = parse_count(body.substr(0, x));
    cfg.grid_beta = parse_count(body.substr(x + 1));
    return;
  }
  cfg.sampling = SamplingKind::random_uniform;
  cfg.n_candidates = parse_count(text);
}

std::vector<AffineCandidate> generate_candidates(
    double duration_s, const AlignConfig& cfg,
    std::optional<double> horizon_s) {
  if (!(duration_s > 0.0)) throw ConfigError("duration must be > 0");
  cfg.validate();
  const double d = cfg.delta_max;
  const double a_lo = 1.0 - d / duration_s;
  const double a_hi = 1.0 + d / duration_s;
  const bool filter = cfg.trajectory_filter && horizon_s.has_value();
  auto feasible = [&](double a, double b) {
    return !filter || std::abs((a - 1.0) * *horizon_s + b) <= d + 1e-12;
  };
  std::vector<AffineCandidate> out;
  if (cfg.sampling == SamplingKind::grid) {
    auto axis = [](double lo, double hi, std::size_t n, double centre) {
      std::vector<double> v;
      if (n == 1) return std::vector<double>{centre};
      for (std::size_t k = 0; k < n; ++k) {
        v.push_back(k + 1 == n ? hi : lo + (hi - lo) * k / (n - 1));
      }
      return v;
    };
    for (double a : axis(a_lo, a_hi, cfg.grid_alpha, 1.0)) {
      for (double b : axis(-d, d, cfg.grid_beta, 0.0)) {
        if (feasible(a, b)) out.push_back({a, b});
      }
    }
  } else {
    Rng rng(mix_seed(cfg.seed, 7));
    const std::size_t max_draws = 1000 * cfg.n_candidates;
    for (std::size_t draws = 0;
         out.size() < cfg.n_candidates && draws < max_draws; ++draws) {
      const double a = rng.uniform(a_lo, a_hi);
      const double b = rng.uniform(-d, d);
      if (feasible(a, b)) out.push_back({a, b});
    }
  }
  out.push_back({1.0, 0.0});
  return out;
}

std::vector<double> predict_timestamps(const AffineCandidate& c,
                                       std::size_t n) {
  if (n < 1) throw ConfigError("need at least one keypoint");
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = c.alpha * static_cast<double>(i) + c.beta;
  return t;
}

std::vector<double> predict_timestamps(const AffineCandidate& c,
                                       std::span<const double> t0) {
  std::vector<double> t(t0.size());
  for (std::size_t i = 0; i < t0.size(); ++i) t[i] = c.predict(t0[i]);
  return t;
}

namespace {

void check_pair(const StereoPair& pair, const ScorerModel& model,
                std::span<const double> t0) {
  if (pair.ch0.empty() || pair.ch1.empty()) {
    throw ConfigError("pair '" + pair.id + "' has an empty channel");
  }
  if (pair.ch0.sample_rate_hz() != pair.ch1.sample_rate_hz()) {
    throw ConfigError("pair '" + pair.id + "' channels differ in sample rate");
  }
  if (t0.empty()) throw ConfigError("no keypoints to score");
  model.features.validate(pair.ch0.sample_rate_hz());
  if (model.features.pooled_dim() != model.config.input_dim) {
    throw ConfigError("model input size does not match its feature config");
  }
}

}  // namespace

std::vector<PredictionSet> predict_candidates(
    const StereoPair& pair, std::span<const double> t0,
    std::span<const AffineCandidate> candidates, const ScorerModel& model) {
  check_pair(pair, model, t0);
  const std::uint32_t sr = pair.ch0.sample_rate_hz();
  const std::size_t hop = model.features.hop;
  const std::size_t n = t0.size();
  const std::size_t m = candidates.size();

  std::vector<std::int64_t> q0(n);
  for (std::size_t i = 0; i < n; ++i) q0[i] = snap_to_frame(t0[i], sr, hop);
  // q1[j * n + i]
  std::vector<std::int64_t> q1(m * n);
  std::vector<std::int64_t> lo(n, std::numeric_limits<std::int64_t>::max());
  std::vector<std::int64_t> hi(n, std::numeric_limits<std::int64_t>::min());
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t q =
          snap_to_frame(candidates[j].predict(t0[i]), sr, hop);
      q1[j * n + i] = q;
      lo[i] = std::min(lo[i], q);
      hi[i] = std::max(hi[i], q);
    }
  }
  const std::int64_t qmin = *std::min_element(lo.begin(), lo.end());
  const std::int64_t qmax = *std::max_element(hi.begin(), hi.end());

  const FrameGrid g0(pair.ch0, model.features,
                     *std::min_element(q0.begin(), q0.end()),
                     *std::max_element(q0.begin(), q0.end()));
  const FrameGrid g1(pair.ch1, model.features, qmin, qmax);

  // needed[i][q - lo[i]]
  std::vector<std::vector<char>> needed(n);
  for (std::size_t i = 0; i < n; ++i) {
    needed[i].assign(static_cast<std::size_t>(hi[i] - lo[i] + 1), 0);
  }
  std::vector<char> need_token(static_cast<std::size_t>(qmax - qmin + 1), 0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t q = q1[j * n + i];
      needed[i][static_cast<std::size_t>(q - lo[i])] = 1;
      need_token[static_cast<std::size_t>(q - qmin)] = 1;
    }
  }

  std::vector<TokenState> tok0(n);
  parallel_for(n, [&](std::size_t i, std::size_t) {
    tok0[i] = make_token(g0.pooled(q0[i]), model);
  });
  std::vector<std::int64_t> token_qs;
  for (std::size_t k = 0; k < need_token.size(); ++k) {
    if (need_token[k]) token_qs.push_back(qmin + static_cast<std::int64_t>(k));
  }
  std::vector<TokenState> tok1(need_token.size());
  parallel_for(token_qs.size(), [&](std::size_t k, std::size_t) {
    const std::int64_t q = token_qs[k];
    tok1[static_cast<std::size_t>(q - qmin)] = make_token(g1.pooled(q), model);
  });

  std::vector<std::vector<double>> table(n);
  parallel_for(n, [&](std::size_t i, std::size_t) {
    table[i].assign(needed[i].size(), 0.0);
    for (std::size_t k = 0; k < needed[i].size(); ++k) {
      if (!needed[i][k]) continue;
      const std::int64_t q = lo[i] + static_cast<std::int64_t>(k);
      const double y = logit_from_tokens(
          tok0[i], tok1[static_cast<std::size_t>(q - qmin)], model);
      if (!std::isfinite(y)) throw NumericError("non-finite scorer logit");
      table[i][k] = y;
    }
  });

  std::vector<PredictionSet> out;
  out.reserve(m);
  std::vector<double> logits(n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      logits[i] = table[i][static_cast<std::size_t>(q1[j * n + i] - lo[i])];
    }
    out.push_back(PredictionSet::from_logits(logits, candidates[j]));
  }
  return out;
}

double candidate_score(const PredictionSet& p, ScorerKind kind,
                       const ScoringWeights& w) {
  switch (kind) {
    case ScorerKind::confidence:
      return confidence_score(p, w).total;
    case ScorerKind::binary:
      return static_cast<double>(binary_count_score(p.logits));
    case ScorerKind::nosync:
      return 0.0;
    case ScorerKind::crosscorr:
      break;
  }
  throw ConfigError("cross-correlation does not score prediction sets");
}

CandidateScore score_candidate(const StereoPair& pair,
                               std::span<const double> t0,
                               const AffineCandidate& c,
                               const ScorerModel& model, ScorerKind kind,
                               const ScoringWeights& w) {
  check_pair(pair, model, t0);
  LogMelExtractor ex(model.features, pair.ch0.sample_rate_hz());
  std::vector<double> logits(t0.size());
  for (std::size_t i = 0; i < t0.size(); ++i) {
    const Segment s0 = extract_segment(pair.ch0, t0[i], model.features, 0);
    const Segment s1 =
        extract_segment(pair.ch1, c.predict(t0[i]), model.features, 1);
    logits[i] = forward(pool_features(ex.compute(s0.samples)),
                        pool_features(ex.compute(s1.samples)), model)
                    .logit;
  }
  CandidateScore out;
  out.predictions = PredictionSet::from_logits(std::move(logits), c);
  out.breakdown = confidence_score(out.predictions, w);
  out.score = candidate_score(out.predictions, kind, w);
  return out;
}

std::size_t select_best(std::span<const AffineCandidate> candidates,
                        std::span<const double> scores) {
  if (candidates.empty() || candidates.size() != scores.size()) {
    throw ConfigError("candidate and score lists must be non-empty and equal");
  }
  auto key = [&](std::size_t j) {
    const double s = std::isnan(scores[j])
                         ? -std::numeric_limits<double>::infinity()
                         : scores[j];
    return s;
  };
  std::size_t best = 0;
  for (std::size_t j = 1; j < candidates.size(); ++j) {
    const double sj = key(j);
    const double sb = key(best);
    if (sj > sb) {
      best = j;
    } else if (sj == sb) {
      const double bj = std::abs(candidates[j].beta);
      const double bb = std::abs(candidates[best].beta);
      if (bj < bb || (bj == bb && std::abs(candidates[j].alpha - 1.0) <
                                      std::abs(candidates[best].alpha - 1.0))) {
        best = j;
      }
    }
  }
  return best;
}

double crosscorr_delay(const AudioBuffer& ch0, const AudioBuffer& ch1,
                       double max_lag_s, CrosscorrMode mode) {
  if (ch0.sample_rate_hz() != ch1.sample_rate_hz()) {
    throw ConfigError("channels differ in sample rate");
  }
  if (!(max_lag_s >= 0.0)) throw ConfigError("max lag must be >= 0");
  auto all_zero = [](const AudioBuffer& b) {
    return std::all_of(b.samples().begin(), b.samples().end(),
                       [](double x) { return x == 0.0; });
  };
  if (ch0.empty() || ch1.empty() || all_zero(ch0) || all_zero(ch1)) {
    throw NumericError("cross-correlation of an all-zero channel");
  }
  std::size_t n = 1;
  while (n < ch0.size() + ch1.size()) n <<= 1;
  detail::RealFft fft(n);
  const std::size_t bins = fft.bins();

  auto load = [&](const AudioBuffer& b) {
    double* t = fft.time();
    std::fill(t, t + n, 0.0);
    std::copy(b.samples().begin(), b.samples().end(), t);
    fft.forward();
  };
  load(ch0);
  std::vector<std::complex<double>> x0(fft.freq(), fft.freq() + bins);
  load(ch1);
  std::complex<double>* r = fft.freq();
  for (std::size_t k = 0; k < bins; ++k) {
    r[k] *= std::conj(x0[k]);
    if (mode == CrosscorrMode::phat) r[k] /= std::max(std::abs(r[k]), 1e-12);
  }
  fft.inverse();
  const double* c = fft.time();

  const auto sr = static_cast<double>(ch0.sample_rate_hz());
  const auto lim = static_cast<std::int64_t>(std::min<double>(
      std::floor(max_lag_s * sr), static_cast<double>(n / 2 - 1)));
  const auto nn = static_cast<std::int64_t>(n);
  std::int64_t best_lag = 0;
  double best = c[0];
  for (std::int64_t lag = -lim; lag <= lim; ++lag) {
    const double v = c[static_cast<std::size_t>(lag >= 0 ? lag : nn + lag)];
    if (v > best || (v == best && std::abs(lag) < std::abs(best_lag))) {
      best = v;
      best_lag = lag;
    }
  }
  if (!std::isfinite(best)) throw NumericError("non-finite cross-correlation");
  return static_cast<double>(best_lag) / sr;
}

std::vector<AffineCandidate> candidates_for(const StereoPair& pair,
                                            std::span<const double> t0,
                                            const AlignConfig& cfg) {
  if (t0.empty()) throw ConfigError("no keypoints to align");
  return generate_candidates(pair.ch0.duration_seconds(), cfg, t0.back());
}

AlignmentDetail align(const StereoPair& pair, std::span<const double> t0,
                      const AlignConfig& cfg, const ScorerModel* model) {
  cfg.validate();
  std::vector<AffineCandidate> cands = candidates_for(pair, t0, cfg);
  AlignmentDetail out;
  std::vector<double> scores;

  switch (cfg.scorer) {
    case ScorerKind::nosync:
      scores.assign(cands.size(), 0.0);
      break;
    case ScorerKind::crosscorr: {
      const double lag =
          crosscorr_delay(pair.ch0, pair.ch1, cfg.delta_max, cfg.crosscorr_mode);
      out.crosscorr_lag = lag;
      cands.push_back(
          {1.0, std::clamp(lag, -cfg.delta_max, cfg.delta_max)});
      for (const auto& c : cands) {
        double s = 0.0;
        for (double t : t0) {
          const double e = c.predict(t) - (t + lag);
          s += e * e;
        }
        scores.push_back(-s / static_cast<double>(t0.size()));
      }
      break;
    }
    case ScorerKind::confidence:
    case ScorerKind::binary: {
      if (model == nullptr) {
        throw ConfigError("scorer '" + to_string(cfg.scorer) +
                          "' needs a trained model");
      }
      const auto preds = predict_candidates(pair, t0, cands, *model);
      for (std::size_t j = 0; j < cands.size(); ++j) {
        const ScoreBreakdown b = confidence_score(preds[j], cfg.weights);
        scores.push_back(cfg.scorer == ScorerKind::confidence
                             ? b.total
                             : candidate_score(preds[j], cfg.scorer,
                                               cfg.weights));
        out.candidates.push_back({cands[j], scores.back(), b});
      }
      break;
    }
  }
  if (out.candidates.empty()) {
    for (std::size_t j = 0; j < cands.size(); ++j) {
      out.candidates.push_back({cands[j], scores[j], std::nullopt});
    }
  }
  out.chosen_index = select_best(cands, scores);
  out.result.chosen = cands[out.chosen_index];
  out.result.score = scores[out.chosen_index];
  out.result.predicted_t1 = predict_timestamps(out.result.chosen, t0);
  std::vector<std::pair<AffineCandidate, double>> all;
  for (std::size_t j = 0; j < cands.size(); ++j) all.push_back({cands[j], scores[j]});
  out.result.per_candidate_scores = std::move(all);
  return out;
}

}  // namespace driftalign
