#include "driftalign/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>

#include "driftalign/error.hpp"
#include "driftalign/parallel.hpp"

namespace driftalign {

namespace {

struct AugDraw {
  double alpha = 1.0;
  double snr_db = 0.0;
  std::uint64_t noise_seed = 0;
};

std::optional<AugDraw> draw_augmentation(const TrainConfig& cfg, Rng& rng) {
  if (!rng.bernoulli(cfg.augment_prob)) return std::nullopt;
  AugDraw d;
  d.alpha = rng.uniform(cfg.amp_lo, cfg.amp_hi);
  d.snr_db = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
  d.noise_seed = rng.next_u64();
  return d;
}

std::vector<double> pooled(LogMelExtractor& ex, const Segment& s) {
  return pool_features(ex.compute(s.samples));
}

std::uint32_t common_rate(std::span<const StereoPair> pairs) {
  if (pairs.empty()) throw ConfigError("no training pairs");
  const std::uint32_t sr = pairs.front().ch0.sample_rate_hz();
  for (const auto& p : pairs) {
    if (p.ch0.sample_rate_hz() != sr || p.ch1.sample_rate_hz() != sr) {
      throw ConfigError("all training pairs must share one sample rate");
    }
  }
  return sr;
}

void fit_standardisation(std::span<const TrainingExample> ex,
                         ModelParams& p) {
  const std::size_t dim = p.in_mean.rows;
  std::vector<double> mean(dim, 0.0);
  std::vector<double> sq(dim, 0.0);
  const double n = 2.0 * static_cast<double>(ex.size());
  for (const auto& e : ex) {
    for (std::size_t i = 0; i < dim; ++i) mean[i] += e.pooled0[i] + e.pooled1[i];
  }
  for (double& m : mean) m /= n;
  for (const auto& e : ex) {
    for (std::size_t i = 0; i < dim; ++i) {
      sq[i] += (e.pooled0[i] - mean[i]) * (e.pooled0[i] - mean[i]) +
               (e.pooled1[i] - mean[i]) * (e.pooled1[i] - mean[i]);
    }
  }
  for (std::size_t i = 0; i < dim; ++i) {
    const double sd = std::sqrt(sq[i] / n);
    p.in_mean.v[i] = mean[i];
    p.in_scale.v[i] = sd > 1e-6 ? sd : 1.0;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw ConfigError("plateau factor must be in (0, 1)");
  }
  if (keypoint_stride < 1) throw ConfigError("keypoint stride must be >= 1");
  if (!(augment_prob >= 0.0 && augment_prob <= 1.0)) {
    throw ConfigError("augment probability must be in [0, 1]");
  }
  if (!(amp_lo > 0.0 && amp_lo <= amp_hi)) {
    throw ConfigError("amplitude range must satisfy 0 < lo <= hi");
  }
  if (!(snr_lo_db <= snr_hi_db)) throw ConfigError("SNR range is inverted");
  if (!(neg_offset_min > 0.0 && neg_offset_min <= neg_offset_max)) {
    throw ConfigError("negative offset range must satisfy 0 < min <= max");
  }
}

std::vector<SamplePoint> sample_training_pairs(std::span<const StereoPair> pairs,
                                               std::size_t stride,
                                               double neg_min, double neg_max,
                                               std::uint64_t seed) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (!(neg_min > 0.0 && neg_min <= neg_max)) {
    throw ConfigError("bad negative offset range");
  }
  Rng rng(seed);
  std::vector<SamplePoint> out;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const KeypointSet& k = pairs[p].keypoints;
    if (k.empty()) {
      throw ConfigError("pair '" + pairs[p].id + "' has no keypoints");
    }
    for (std::size_t i = 0; i < k.size(); i += stride) {
      const Keypoint& kp = k.entries[i];
      if (!kp.t1) {
        throw ConfigError("pair '" + pairs[p].id + "' keypoint " +
                          std::to_string(kp.index) + " has no t1");
      }
      out.push_back({p, i, kp.t0, *kp.t1, 1.0});
      const double mag = rng.uniform(neg_min, neg_max);
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      out.push_back({p, i, kp.t0, *kp.t1 + sign * mag, 0.0});
    }
  }
  if (out.empty()) throw ConfigError("empty keypoint set");
  return out;
}

AugSample materialize(const StereoPair& pair, const SamplePoint& point,
                      const FeatureConfig& cfg) {
  AugSample s;
  s.seg0 = extract_segment(pair.ch0, point.t0, cfg, 0);
  s.seg1 = extract_segment(pair.ch1, point.t1, cfg, 1);
  s.label = point.label;
  return s;
}

AugSample apply_augmentation(AugSample s, double alpha, double snr_db,
                             std::uint64_t noise_seed) {
  double power = 0.0;
  std::size_t n = 0;
  for (Segment* seg : {&s.seg0, &s.seg1}) {
    for (double& x : seg->samples) {
      x *= alpha;
      power += x * x;
    }
    n += seg->samples.size();
  }
  power = n > 0 ? power / static_cast<double>(n) : 0.0;
  s.augmented = true;
  s.amp = alpha;
  s.snr_db = snr_db;
  s.noise_variance = 0.0;
  if (std::isfinite(snr_db) && power > 0.0) {
    s.noise_variance = power / std::pow(10.0, snr_db / 10.0);
    const double sd = std::sqrt(s.noise_variance);
    Rng rng(noise_seed);
    for (Segment* seg : {&s.seg0, &s.seg1}) {
      for (double& x : seg->samples) x += rng.normal(0.0, sd);
    }
  }
  return s;
}

AugSample augment(AugSample s, const TrainConfig& cfg, Rng& rng) {
  if (s.augmented) throw ConfigError("sample is already augmented");
  const auto d = draw_augmentation(cfg, rng);
  if (!d) return s;
  return apply_augmentation(std::move(s), d->alpha, d->snr_db, d->noise_seed);
}

AdamW::AdamW(const ModelParams& shape, double weight_decay, double beta1,
             double beta2, double eps)
    : m_(zeros_like(shape)),
      v_(zeros_like(shape)),
      wd_(weight_decay),
      b1_(beta1),
      b2_(beta2),
      eps_(eps) {}

void AdamW::step(ModelParams& params, const ModelParams& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  std::vector<Tensor*> p, m, v;
  std::vector<const Tensor*> g;
  params.visit([&](const char*, Tensor& t, bool tr) { if (tr) p.push_back(&t); });
  grads.visit(
      [&](const char*, const Tensor& t, bool tr) { if (tr) g.push_back(&t); });
  m_.visit([&](const char*, Tensor& t, bool tr) { if (tr) m.push_back(&t); });
  v_.visit([&](const char*, Tensor& t, bool tr) { if (tr) v.push_back(&t); });
  if (p.size() != g.size() || p.size() != m.size()) {
    throw ConfigError("optimizer state does not match parameters");
  }
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& pv = p[k]->v;
    const auto& gv = g[k]->v;
    auto& mv = m[k]->v;
    auto& vv = v[k]->v;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1_ * mv[i] + (1.0 - b1_) * gv[i];
      vv[i] = b2_ * vv[i] + (1.0 - b2_) * gv[i] * gv[i];
      pv[i] *= 1.0 - lr * wd_;
      pv[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps_);
    }
  }
}

bool PlateauScheduler::step(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_ = 0;
    since_best_ = 0;
    return true;
  }
  ++bad_;
  ++since_best_;
  if (bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return false;
}

std::vector<TrainingExample> build_examples(std::span<const StereoPair> pairs,
                                            std::span<const SamplePoint> points,
                                            const FeatureConfig& cfg) {
  const std::uint32_t sr = common_rate(pairs);
  const std::size_t workers = worker_count();
  std::vector<std::unique_ptr<LogMelExtractor>> ex(workers);
  std::vector<TrainingExample> out(points.size());
  parallel_for(
      points.size(),
      [&](std::size_t i, std::size_t w) {
        if (!ex[w]) ex[w] = std::make_unique<LogMelExtractor>(cfg, sr);
        const AugSample s = materialize(pairs[points[i].pair], points[i], cfg);
        out[i] = {pooled(*ex[w], s.seg0), pooled(*ex[w], s.seg1), s.label};
      },
      workers);
  return out;
}

double accuracy(std::span<const TrainingExample> examples,
                const ScorerModel& model) {
  if (examples.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& e : examples) {
    const bool yes = forward(e.pooled0, e.pooled1, model).prob > 0.5;
    if (yes == (e.label > 0.5)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(examples.size());
}

TrainResult train(std::span<const StereoPair> train_pairs,
                  std::span<const StereoPair> val_pairs,
                  const ModelConfig& model_cfg, const FeatureConfig& feat_cfg,
                  const TrainConfig& cfg, std::ostream* progress) {
  cfg.validate();
  model_cfg.validate();
  const std::uint32_t sr = common_rate(train_pairs);
  if (val_pairs.empty()) throw ConfigError("no validation pairs");
  if (common_rate(val_pairs) != sr) {
    throw ConfigError("validation pairs use a different sample rate");
  }
  feat_cfg.validate(sr);
  if (model_cfg.input_dim != feat_cfg.pooled_dim()) {
    throw ConfigError("model input_dim " + std::to_string(model_cfg.input_dim) +
                      " does not match pooled feature size " +
                      std::to_string(feat_cfg.pooled_dim()));
  }

  ScorerModel model{model_cfg, feat_cfg, init_params(model_cfg)};

  const auto val_points =
      sample_training_pairs(val_pairs, cfg.keypoint_stride, cfg.neg_offset_min,
                            cfg.neg_offset_max, mix_seed(cfg.seed, 1));
  const auto val_ex = build_examples(val_pairs, val_points, feat_cfg);

  // Standardisation is fitted once on unaugmented epoch-0 training points.
  {
    const auto pts = sample_training_pairs(
        train_pairs, cfg.keypoint_stride, cfg.neg_offset_min,
        cfg.neg_offset_max, mix_seed(cfg.seed, 1000));
    fit_standardisation(build_examples(train_pairs, pts, feat_cfg),
                        model.params);
  }

  AdamW opt(model.params, cfg.weight_decay);
  PlateauScheduler sched(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
  Rng order_rng(mix_seed(cfg.seed, 2));
  TrainResult result;
  ModelParams best = model.params;
  double best_val = std::numeric_limits<double>::infinity();

  const std::size_t workers = worker_count();
  std::vector<std::unique_ptr<LogMelExtractor>> extractors(workers);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto points = sample_training_pairs(
        train_pairs, cfg.keypoint_stride, cfg.neg_offset_min,
        cfg.neg_offset_max, mix_seed(cfg.seed, 1000 + epoch));
    Rng aug_rng(mix_seed(cfg.seed, 1'000'000 + epoch));
    std::vector<std::optional<AugDraw>> draws(points.size());
    for (auto& d : draws) d = draw_augmentation(cfg, aug_rng);

    std::vector<TrainingExample> ex(points.size());
    parallel_for(
        points.size(),
        [&](std::size_t i, std::size_t w) {
          if (!extractors[w]) {
            extractors[w] = std::make_unique<LogMelExtractor>(feat_cfg, sr);
          }
          AugSample s =
              materialize(train_pairs[points[i].pair], points[i], feat_cfg);
          if (draws[i]) {
            s = apply_augmentation(std::move(s), draws[i]->alpha,
                                   draws[i]->snr_db, draws[i]->noise_seed);
          }
          ex[i] = {pooled(*extractors[w], s.seg0),
                   pooled(*extractors[w], s.seg1), s.label};
        },
        workers);

    std::vector<std::size_t> order(ex.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng.engine());

    const double lr = sched.lr();
    double loss_sum = 0.0;
    std::vector<TrainingExample> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t j = start; j < end; ++j) batch.push_back(ex[order[j]]);
      LossAndGrads lg;
      try {
        lg = loss_and_grads(batch, model);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(start / cfg.batch_size) + ": " +
                           e.what());
      }
      loss_sum += lg.loss * static_cast<double>(batch.size());
      opt.step(model.params, lg.grads, lr);
      if (!model.params.all_finite()) {
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch) +
                           ": non-finite parameters after update");
      }
    }
    const double train_loss = loss_sum / static_cast<double>(ex.size());
    const double val_loss = batch_loss(val_ex, model);
    if (!std::isfinite(val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": validation loss is not finite");
    }
    result.log.push_back({epoch, train_loss, val_loss, lr});
    if (progress != nullptr) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %zu train_loss %.6f val_loss %.6f lr %.3g\n", epoch,
                    train_loss, val_loss, lr);
      *progress << line << std::flush;
    }
    if (sched.step(val_loss)) {
      best_val = val_loss;
      best = model.params;
      result.best_epoch = epoch;
    }
    if (sched.epochs_since_best() >= cfg.early_stop_patience) break;
  }

  model.params = std::move(best);
  round_to_float32(model.params);
  result.best_val_loss = best_val;
  result.val_accuracy = accuracy(val_ex, model);
  result.model = std::move(model);
  return result;
}

TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const FeatureConfig& feat_cfg, const TrainConfig& cfg,
                  std::ostream* progress) {
  auto load = [&](Split s) {
    std::vector<StereoPair> out;
    for (const auto& e : manifest.select(s)) out.push_back(load_pair(e));
    return out;
  };
  const auto tr = load(Split::train);
  const auto va = load(Split::val);
  if (tr.empty()) throw ConfigError("manifest has no train split entries");
  if (va.empty()) throw ConfigError("manifest has no val split entries");
  return train(tr, va, model_cfg, feat_cfg, cfg, progress);
}

void write_training_log(const std::vector<EpochLog>& log,
                        const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << "epoch,train_loss,val_loss,lr\n";
  char line[128];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", e.epoch,
                  e.train_loss, e.val_loss, e.lr);
    f << line;
  }
  if (!f) throw FormatError("write failed for " + path.string());
}

}  // namespace driftalign
