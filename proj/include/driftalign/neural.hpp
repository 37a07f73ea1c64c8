#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "driftalign/features.hpp"

namespace driftalign {

enum class MlpKind { enhanced, plain };

std::string to_string(MlpKind k);
MlpKind mlp_kind_from_string(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 80;
  std::size_t embed_dim = 64;
  std::size_t n_heads = 4;
  std::size_t h1 = 64;
  std::size_t h2 = 32;
  std::size_t h3 = 16;
  // Off: encoder embeddings feed the MLP directly.
  bool attention = true;
  // Plain: one GELU hidden layer of width h1.
  MlpKind mlp = MlpKind::enhanced;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t head_dim() const { return embed_dim / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// Dense row-major matrix; vectors are rows x 1.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), v(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return v[r * cols + c];
  }
  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
};

// Tensors not used by a configuration are left empty and skipped by visit().
struct ModelParams {
  // Frozen input standardisation, fitted on training features.
  Tensor in_mean, in_scale;
  Tensor enc_w, enc_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor w1, b1, ln1_g, ln1_b;
  Tensor w2, b2, ln2_g, ln2_b, skip_w;
  Tensor w3, b3, ln3_g, ln3_b;
  Tensor w4, b4;

  // f(name, tensor, trainable) in declaration order.
  template <class Self, class F>
  static void visit_impl(Self& p, F&& f) {
    auto go = [&](const char* name, auto& t, bool trainable) {
      if (!t.empty()) f(name, t, trainable);
    };
    go("in_mean", p.in_mean, false);
    go("in_scale", p.in_scale, false);
    go("enc_w", p.enc_w, true);
    go("enc_b", p.enc_b, true);
    go("wq", p.wq, true);
    go("bq", p.bq, true);
    go("wk", p.wk, true);
    go("bk", p.bk, true);
    go("wv", p.wv, true);
    go("bv", p.bv, true);
    go("wo", p.wo, true);
    go("bo", p.bo, true);
    go("w1", p.w1, true);
    go("b1", p.b1, true);
    go("ln1_g", p.ln1_g, true);
    go("ln1_b", p.ln1_b, true);
    go("w2", p.w2, true);
    go("b2", p.b2, true);
    go("ln2_g", p.ln2_g, true);
    go("ln2_b", p.ln2_b, true);
    go("skip_w", p.skip_w, true);
    go("w3", p.w3, true);
    go("b3", p.b3, true);
    go("ln3_g", p.ln3_g, true);
    go("ln3_b", p.ln3_b, true);
    go("w4", p.w4, true);
    go("b4", p.b4, true);
  }
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t trainable_count() const;
  bool all_finite() const;
};

// Correct shapes, all zeros except in_scale = 1 and layer-norm gains = 1.
ModelParams make_params(const ModelConfig& cfg);
// Uniform in +-1/sqrt(fan_in) from cfg.seed; layer norms at (1, 0).
ModelParams init_params(const ModelConfig& cfg);
// Same shapes as p, zero-filled (gradient buffers).
ModelParams zeros_like(const ModelParams& p);
void round_to_float32(ModelParams& p);

struct ScorerModel {
  ModelConfig config;
  FeatureConfig features;
  ModelParams params;
};

double gelu(double x);
double gelu_grad(double x);

// e = GELU(W_enc standardise(x) + b_enc).
std::vector<double> encode(std::span<const double> pooled,
                           const ModelParams& p);

struct AttentionOutput {
  std::vector<double> e0;
  std::vector<double> e1;
  // weights[h][t][s]: attention of token t on token s in head h.
  std::vector<std::array<std::array<double, 2>, 2>> weights;
};

// Two-token multi-head attention over E = [e0; e1], heads projected by W_O.
// No residual path.
AttentionOutput cross_attention(std::span<const double> e0,
                                std::span<const double> e1,
                                const ModelParams& p, std::size_t n_heads);

// Logit from attended tokens; concatenation order is [e0'; e1'].
double mlp_head(std::span<const double> e0, std::span<const double> e1,
                const ModelParams& p, const ModelConfig& cfg);

struct Prediction {
  double logit = 0.0;
  double prob = 0.5;
};

// Pooled features of both segments -> logit.
Prediction forward(std::span<const double> pooled0,
                   std::span<const double> pooled1, const ScorerModel& model);
// Full path: log_mel -> pool -> forward.
Prediction forward(const Segment& seg0, const Segment& seg1,
                   const ScorerModel& model);

// Per-token state cached at inference: embedding plus its Q/K/V projections.
struct TokenState {
  std::vector<double> e;
  std::vector<double> q, k, v;
};

TokenState make_token(std::span<const double> pooled, const ScorerModel& model);
double logit_from_tokens(const TokenState& t0, const TokenState& t1,
                         const ScorerModel& model);

struct TrainingExample {
  std::vector<double> pooled0;
  std::vector<double> pooled1;
  double label = 0.0;
};

// Mean binary cross-entropy over the batch (computed from logits) and its
// gradient for every trainable tensor.
struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
};

LossAndGrads loss_and_grads(std::span<const TrainingExample> batch,
                            const ScorerModel& model);
double batch_loss(std::span<const TrainingExample> batch,
                  const ScorerModel& model);

// Binary checkpoint: magic "DRFTMDL1", length-prefixed config fields, then
// named tensors in declaration order as little-endian float32.
inline constexpr char kModelMagic[9] = "DRFTMDL1";
void save_model(const ScorerModel& model, const std::filesystem::path& path);
ScorerModel load_model(const std::filesystem::path& path);

}  // namespace driftalign
