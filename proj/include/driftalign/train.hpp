#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "driftalign/audio_io.hpp"
#include "driftalign/features.hpp"
#include "driftalign/neural.hpp"
#include "driftalign/rng.hpp"

namespace driftalign {

struct TrainConfig {
  double lr = 2e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t early_stop_patience = 25;
  double plateau_factor = 0.7;
  std::size_t plateau_patience = 3;
  double augment_prob = 0.3;
  double amp_lo = 0.9;
  double amp_hi = 1.1;
  double snr_lo_db = 40.0;
  double snr_hi_db = 50.0;
  std::size_t keypoint_stride = 20;
  // Negative offsets are drawn from +-[neg_offset_min, neg_offset_max].
  double neg_offset_min = 0.5;
  double neg_offset_max = kDefaultDeltaMax;
  std::uint64_t seed = 0;

  void validate() const;
};

// Where a training example comes from; segments are cut on demand.
struct SamplePoint {
  std::size_t pair = 0;
  std::size_t keypoint = 0;
  double t0 = 0.0;
  double t1 = 0.0;
  double label = 1.0;
};

// Positives at keypoints 0, stride, 2*stride, ...; each followed by one
// negative whose t1 is moved by a signed offset with magnitude in
// [neg_min, neg_max].
std::vector<SamplePoint> sample_training_pairs(std::span<const StereoPair> pairs,
                                               std::size_t stride,
                                               double neg_min, double neg_max,
                                               std::uint64_t seed);

struct AugSample {
  Segment seg0;
  Segment seg1;
  double label = 1.0;
  bool augmented = false;
  double amp = 1.0;
  double snr_db = std::numeric_limits<double>::infinity();
  double noise_variance = 0.0;
};

AugSample materialize(const StereoPair& pair, const SamplePoint& point,
                      const FeatureConfig& cfg);

// Scales both segments by alpha, then adds N(0, sigma^2) noise to each, where
// sigma^2 = mean power of the two scaled segments / 10^(snr/10). Channel 0
// draws first from Rng(noise_seed), channel 1 continues the same stream.
// snr_db = +inf adds no noise.
AugSample apply_augmentation(AugSample s, double alpha, double snr_db,
                             std::uint64_t noise_seed);

// With probability cfg.augment_prob applies apply_augmentation with amp and
// SNR drawn from the config ranges. Throws if `s` is already augmented.
AugSample augment(AugSample s, const TrainConfig& cfg, Rng& rng);

// Decoupled weight decay; frozen tensors are never touched.
class AdamW {
 public:
  AdamW(const ModelParams& shape, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);
  void step(ModelParams& params, const ModelParams& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  ModelParams m_, v_;
  double wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

// lr *= factor once `patience` consecutive epochs fail to improve on the best
// validation loss; the counter then restarts.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, std::size_t patience)
      : lr_(lr), factor_(factor), patience_(patience) {}
  // Returns true if the loss improved on the best so far.
  bool step(double val_loss);
  double lr() const { return lr_; }
  std::size_t epochs_since_best() const { return since_best_; }

 private:
  double lr_, factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
  std::size_t since_best_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ScorerModel model;  // best validation epoch, rounded to float32
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  // Fraction of fixed validation examples classified correctly (p > 0.5).
  double val_accuracy = 0.0;
};

TrainResult train(std::span<const StereoPair> train_pairs,
                  std::span<const StereoPair> val_pairs,
                  const ModelConfig& model_cfg, const FeatureConfig& feat_cfg,
                  const TrainConfig& cfg, std::ostream* progress = nullptr);

// Uses the train and val splits of the manifest.
TrainResult train(const DatasetManifest& manifest, const ModelConfig& model_cfg,
                  const FeatureConfig& feat_cfg, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

// Pooled features for every point, cut with the exact segment path.
std::vector<TrainingExample> build_examples(std::span<const StereoPair> pairs,
                                            std::span<const SamplePoint> points,
                                            const FeatureConfig& cfg);

// Fraction of examples with (p > 0.5) == (label > 0.5).
double accuracy(std::span<const TrainingExample> examples,
                const ScorerModel& model);

void write_training_log(const std::vector<EpochLog>& log,
                        const std::filesystem::path& path);

}  // namespace driftalign
