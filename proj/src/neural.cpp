#include "driftalign/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <sstream>

#include "driftalign/error.hpp"
#include "driftalign/rng.hpp"

namespace driftalign {

namespace {

constexpr double kLayerNormEps = 1e-5;

using Vec = std::vector<double>;

// y = W x + b (b may be empty).
void affine(const Tensor& w, const Tensor& b, const double* x, double* y) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.v.data() + r * w.cols;
    double acc = b.empty() ? 0.0 : b.v[r];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
}

// dx += W^T dy
void affine_input_grad(const Tensor& w, const double* dy, double* dx) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.v.data() + r * w.cols;
    const double g = dy[r];
    for (std::size_t c = 0; c < w.cols; ++c) dx[c] += row[c] * g;
  }
}

// dW += dy x^T, db += dy
void affine_param_grad(const double* dy, const double* x, Tensor& dw,
                       Tensor* db) {
  for (std::size_t r = 0; r < dw.rows; ++r) {
    double* row = dw.v.data() + r * dw.cols;
    const double g = dy[r];
    for (std::size_t c = 0; c < dw.cols; ++c) row[c] += g * x[c];
    if (db != nullptr) db->v[r] += g;
  }
}

struct LayerNormTrace {
  Vec pre;   // input to the norm
  Vec xhat;  // standardised
  Vec out;   // gain * xhat + bias
  double inv_std = 0.0;
};

void layer_norm(const Vec& a, const Tensor& g, const Tensor& b,
                LayerNormTrace& tr) {
  const std::size_t n = a.size();
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  tr.pre = a;
  tr.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
  tr.xhat.resize(n);
  tr.out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    tr.xhat[i] = (a[i] - mean) * tr.inv_std;
    tr.out[i] = g.v[i] * tr.xhat[i] + b.v[i];
  }
}

// Returns d(pre) given d(out); accumulates gain/bias grads.
Vec layer_norm_backward(const LayerNormTrace& tr, const Vec& dout,
                        const Tensor& g, Tensor& dg, Tensor& db) {
  const std::size_t n = dout.size();
  Vec dxhat(n);
  double mean_d = 0.0;
  double mean_dx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dg.v[i] += dout[i] * tr.xhat[i];
    db.v[i] += dout[i];
    dxhat[i] = dout[i] * g.v[i];
    mean_d += dxhat[i];
    mean_dx += dxhat[i] * tr.xhat[i];
  }
  mean_d /= static_cast<double>(n);
  mean_dx /= static_cast<double>(n);
  Vec da(n);
  for (std::size_t i = 0; i < n; ++i) {
    da[i] = tr.inv_std * (dxhat[i] - mean_d - tr.xhat[i] * mean_dx);
  }
  return da;
}

struct TokenTrace {
  Vec xn;  // standardised input
  Vec u;   // encoder pre-activation
  TokenState state;
};

struct AttentionTrace {
  std::vector<std::array<std::array<double, 2>, 2>> weights;
  std::array<Vec, 2> o;    // concatenated head outputs
  std::array<Vec, 2> out;  // after W_O
};

struct MlpTrace {
  Vec z;
  LayerNormTrace ln1, ln2, ln3;
  Vec h1, g2, h2, h3;
  Vec plain_pre, plain_h;
  double y = 0.0;
};

struct ForwardTrace {
  std::array<TokenTrace, 2> tok;
  AttentionTrace att;
  MlpTrace mlp;
};

void make_token_traced(std::span<const double> x, const ScorerModel& model,
                       TokenTrace& tr) {
  const ModelParams& p = model.params;
  const ModelConfig& cfg = model.config;
  if (x.size() != cfg.input_dim) {
    throw ConfigError("encoder input has " + std::to_string(x.size()) +
                      " values, model expects " +
                      std::to_string(cfg.input_dim));
  }
  tr.xn.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    tr.xn[i] = (x[i] - p.in_mean.v[i]) / p.in_scale.v[i];
  }
  tr.u.resize(cfg.embed_dim);
  affine(p.enc_w, p.enc_b, tr.xn.data(), tr.u.data());
  TokenState& s = tr.state;
  s.e.resize(cfg.embed_dim);
  for (std::size_t i = 0; i < cfg.embed_dim; ++i) s.e[i] = gelu(tr.u[i]);
  if (cfg.attention) {
    s.q.resize(cfg.embed_dim);
    s.k.resize(cfg.embed_dim);
    s.v.resize(cfg.embed_dim);
    affine(p.wq, p.bq, s.e.data(), s.q.data());
    affine(p.wk, p.bk, s.e.data(), s.k.data());
    affine(p.wv, p.bv, s.e.data(), s.v.data());
  } else {
    s.q.clear();
    s.k.clear();
    s.v.clear();
  }
}

void attend(const TokenState& t0, const TokenState& t1, const ModelParams& p,
            std::size_t n_heads, AttentionTrace& tr) {
  const std::size_t d = t0.e.size();
  const std::size_t dk = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const TokenState* toks[2] = {&t0, &t1};
  tr.weights.assign(n_heads, {});
  for (auto& o : tr.o) o.assign(d, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * dk;
    for (std::size_t t = 0; t < 2; ++t) {
      double s[2];
      for (std::size_t u = 0; u < 2; ++u) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dk; ++j) {
          acc += toks[t]->q[off + j] * toks[u]->k[off + j];
        }
        s[u] = acc * scale;
      }
      const double m = std::max(s[0], s[1]);
      const double a0 = std::exp(s[0] - m);
      const double a1 = std::exp(s[1] - m);
      const double inv = 1.0 / (a0 + a1);
      tr.weights[h][t] = {a0 * inv, a1 * inv};
      for (std::size_t j = 0; j < dk; ++j) {
        tr.o[t][off + j] = tr.weights[h][t][0] * t0.v[off + j] +
                           tr.weights[h][t][1] * t1.v[off + j];
      }
    }
  }
  for (std::size_t t = 0; t < 2; ++t) {
    tr.out[t].resize(d);
    affine(p.wo, p.bo, tr.o[t].data(), tr.out[t].data());
  }
}

double mlp_forward(const Vec& e0, const Vec& e1, const ModelParams& p,
                   const ModelConfig& cfg, MlpTrace& tr) {
  tr.z.resize(e0.size() + e1.size());
  std::copy(e0.begin(), e0.end(), tr.z.begin());
  std::copy(e1.begin(), e1.end(), tr.z.begin() + e0.size());
  if (tr.z.size() != p.w1.cols) {
    throw ConfigError("MLP input size mismatch");
  }
  double y = 0.0;
  if (cfg.mlp == MlpKind::plain) {
    tr.plain_pre.resize(cfg.h1);
    affine(p.w1, p.b1, tr.z.data(), tr.plain_pre.data());
    tr.plain_h.resize(cfg.h1);
    for (std::size_t i = 0; i < cfg.h1; ++i) {
      tr.plain_h[i] = gelu(tr.plain_pre[i]);
    }
    affine(p.w4, p.b4, tr.plain_h.data(), &y);
    tr.y = y;
    return y;
  }
  Vec a(cfg.h1);
  affine(p.w1, p.b1, tr.z.data(), a.data());
  layer_norm(a, p.ln1_g, p.ln1_b, tr.ln1);
  tr.h1.resize(cfg.h1);
  for (std::size_t i = 0; i < cfg.h1; ++i) tr.h1[i] = gelu(tr.ln1.out[i]);

  a.assign(cfg.h2, 0.0);
  affine(p.w2, p.b2, tr.h1.data(), a.data());
  layer_norm(a, p.ln2_g, p.ln2_b, tr.ln2);
  tr.g2.resize(cfg.h2);
  tr.h2.resize(cfg.h2);
  Vec skip(cfg.h2);
  if (p.skip_w.empty()) {
    skip = tr.h1;
  } else {
    affine(p.skip_w, Tensor{}, tr.h1.data(), skip.data());
  }
  for (std::size_t i = 0; i < cfg.h2; ++i) {
    tr.g2[i] = gelu(tr.ln2.out[i]);
    tr.h2[i] = tr.g2[i] + skip[i];
  }

  a.assign(cfg.h3, 0.0);
  affine(p.w3, p.b3, tr.h2.data(), a.data());
  layer_norm(a, p.ln3_g, p.ln3_b, tr.ln3);
  tr.h3.resize(cfg.h3);
  for (std::size_t i = 0; i < cfg.h3; ++i) tr.h3[i] = gelu(tr.ln3.out[i]);
  affine(p.w4, p.b4, tr.h3.data(), &y);
  tr.y = y;
  return y;
}

double forward_traced(std::span<const double> x0, std::span<const double> x1,
                      const ScorerModel& model, ForwardTrace& tr) {
  make_token_traced(x0, model, tr.tok[0]);
  make_token_traced(x1, model, tr.tok[1]);
  if (model.config.attention) {
    attend(tr.tok[0].state, tr.tok[1].state, model.params,
           model.config.n_heads, tr.att);
    return mlp_forward(tr.att.out[0], tr.att.out[1], model.params,
                       model.config, tr.mlp);
  }
  return mlp_forward(tr.tok[0].state.e, tr.tok[1].state.e, model.params,
                     model.config, tr.mlp);
}

// Accumulates d(logit)/d(theta) * dy into g.
void backward(const ForwardTrace& tr, double dy, const ScorerModel& model,
              ModelParams& g) {
  const ModelParams& p = model.params;
  const ModelConfig& cfg = model.config;
  const MlpTrace& m = tr.mlp;
  Vec dz(m.z.size(), 0.0);

  if (cfg.mlp == MlpKind::plain) {
    affine_param_grad(&dy, m.plain_h.data(), g.w4, &g.b4);
    Vec dh(cfg.h1, 0.0);
    affine_input_grad(p.w4, &dy, dh.data());
    for (std::size_t i = 0; i < cfg.h1; ++i) dh[i] *= gelu_grad(m.plain_pre[i]);
    affine_param_grad(dh.data(), m.z.data(), g.w1, &g.b1);
    affine_input_grad(p.w1, dh.data(), dz.data());
  } else {
    affine_param_grad(&dy, m.h3.data(), g.w4, &g.b4);
    Vec dh3(cfg.h3, 0.0);
    affine_input_grad(p.w4, &dy, dh3.data());
    for (std::size_t i = 0; i < cfg.h3; ++i) {
      dh3[i] *= gelu_grad(m.ln3.out[i]);
    }
    Vec da3 = layer_norm_backward(m.ln3, dh3, p.ln3_g, g.ln3_g, g.ln3_b);
    affine_param_grad(da3.data(), m.h2.data(), g.w3, &g.b3);
    Vec dh2(cfg.h2, 0.0);
    affine_input_grad(p.w3, da3.data(), dh2.data());

    Vec dn2(cfg.h2);
    for (std::size_t i = 0; i < cfg.h2; ++i) {
      dn2[i] = dh2[i] * gelu_grad(m.ln2.out[i]);
    }
    Vec da2 = layer_norm_backward(m.ln2, dn2, p.ln2_g, g.ln2_g, g.ln2_b);
    affine_param_grad(da2.data(), m.h1.data(), g.w2, &g.b2);
    Vec dh1(cfg.h1, 0.0);
    affine_input_grad(p.w2, da2.data(), dh1.data());
    if (p.skip_w.empty()) {
      for (std::size_t i = 0; i < cfg.h1; ++i) dh1[i] += dh2[i];
    } else {
      affine_param_grad(dh2.data(), m.h1.data(), g.skip_w, nullptr);
      affine_input_grad(p.skip_w, dh2.data(), dh1.data());
    }
    for (std::size_t i = 0; i < cfg.h1; ++i) {
      dh1[i] *= gelu_grad(m.ln1.out[i]);
    }
    Vec da1 = layer_norm_backward(m.ln1, dh1, p.ln1_g, g.ln1_g, g.ln1_b);
    affine_param_grad(da1.data(), m.z.data(), g.w1, &g.b1);
    affine_input_grad(p.w1, da1.data(), dz.data());
  }

  const std::size_t d = cfg.embed_dim;
  std::array<Vec, 2> de = {Vec(d, 0.0), Vec(d, 0.0)};
  if (!cfg.attention) {
    for (std::size_t i = 0; i < d; ++i) {
      de[0][i] = dz[i];
      de[1][i] = dz[d + i];
    }
  } else {
    const AttentionTrace& at = tr.att;
    const std::size_t dk = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const TokenState* toks[2] = {&tr.tok[0].state, &tr.tok[1].state};
    std::array<Vec, 2> dq = {Vec(d, 0.0), Vec(d, 0.0)};
    std::array<Vec, 2> dk_ = {Vec(d, 0.0), Vec(d, 0.0)};
    std::array<Vec, 2> dv = {Vec(d, 0.0), Vec(d, 0.0)};
    std::array<Vec, 2> dout = {Vec(dz.begin(), dz.begin() + d),
                               Vec(dz.begin() + d, dz.end())};
    std::array<Vec, 2> d_o = {Vec(d, 0.0), Vec(d, 0.0)};
    for (std::size_t t = 0; t < 2; ++t) {
      affine_param_grad(dout[t].data(), at.o[t].data(), g.wo, &g.bo);
      affine_input_grad(p.wo, dout[t].data(), d_o[t].data());
    }
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const std::size_t off = h * dk;
      for (std::size_t t = 0; t < 2; ++t) {
        const auto& a = at.weights[h][t];
        double da[2];
        for (std::size_t u = 0; u < 2; ++u) {
          double acc = 0.0;
          for (std::size_t j = 0; j < dk; ++j) {
            acc += d_o[t][off + j] * toks[u]->v[off + j];
            dv[u][off + j] += a[u] * d_o[t][off + j];
          }
          da[u] = acc;
        }
        const double dot = a[0] * da[0] + a[1] * da[1];
        for (std::size_t u = 0; u < 2; ++u) {
          const double ds = a[u] * (da[u] - dot) * scale;
          for (std::size_t j = 0; j < dk; ++j) {
            dq[t][off + j] += ds * toks[u]->k[off + j];
            dk_[u][off + j] += ds * toks[t]->q[off + j];
          }
        }
      }
    }
    for (std::size_t t = 0; t < 2; ++t) {
      const Vec& e = toks[t]->e;
      affine_param_grad(dq[t].data(), e.data(), g.wq, &g.bq);
      affine_param_grad(dk_[t].data(), e.data(), g.wk, &g.bk);
      affine_param_grad(dv[t].data(), e.data(), g.wv, &g.bv);
      affine_input_grad(p.wq, dq[t].data(), de[t].data());
      affine_input_grad(p.wk, dk_[t].data(), de[t].data());
      affine_input_grad(p.wv, dv[t].data(), de[t].data());
    }
  }

  for (std::size_t t = 0; t < 2; ++t) {
    const TokenTrace& tk = tr.tok[t];
    Vec du(d);
    for (std::size_t i = 0; i < d; ++i) du[i] = de[t][i] * gelu_grad(tk.u[i]);
    affine_param_grad(du.data(), tk.xn.data(), g.enc_w, &g.enc_b);
  }
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

std::string to_string(MlpKind k) {
  return k == MlpKind::plain ? "plain" : "enhanced";
}

MlpKind mlp_kind_from_string(const std::string& s) {
  if (s == "plain") return MlpKind::plain;
  if (s == "enhanced") return MlpKind::enhanced;
  throw ConfigError("unknown MLP kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_dim < 1 || embed_dim < 1 || n_heads < 1 || h1 < 1 ||
      (mlp == MlpKind::enhanced && (h2 < 1 || h3 < 1))) {
    throw ConfigError("model dimensions must all be >= 1");
  }
  if (attention && embed_dim % n_heads != 0) {
    throw ConfigError("embed_dim must be divisible by n_heads");
  }
}

std::size_t ModelParams::trainable_count() const {
  std::size_t n = 0;
  visit([&](const char*, const Tensor& t, bool trainable) {
    if (trainable) n += t.size();
  });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const char*, const Tensor& t, bool) {
    for (double v : t.v) ok = ok && std::isfinite(v);
  });
  return ok;
}

ModelParams make_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim;
  ModelParams p;
  p.in_mean = Tensor(cfg.input_dim, 1, 0.0);
  p.in_scale = Tensor(cfg.input_dim, 1, 1.0);
  p.enc_w = Tensor(d, cfg.input_dim);
  p.enc_b = Tensor(d, 1);
  if (cfg.attention) {
    for (Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo}) *w = Tensor(d, d);
    for (Tensor* b : {&p.bq, &p.bk, &p.bv, &p.bo}) *b = Tensor(d, 1);
  }
  p.w1 = Tensor(cfg.h1, 2 * d);
  p.b1 = Tensor(cfg.h1, 1);
  if (cfg.mlp == MlpKind::plain) {
    p.w4 = Tensor(1, cfg.h1);
    p.b4 = Tensor(1, 1);
    return p;
  }
  p.ln1_g = Tensor(cfg.h1, 1, 1.0);
  p.ln1_b = Tensor(cfg.h1, 1);
  p.w2 = Tensor(cfg.h2, cfg.h1);
  p.b2 = Tensor(cfg.h2, 1);
  p.ln2_g = Tensor(cfg.h2, 1, 1.0);
  p.ln2_b = Tensor(cfg.h2, 1);
  if (cfg.h2 != cfg.h1) p.skip_w = Tensor(cfg.h2, cfg.h1);
  p.w3 = Tensor(cfg.h3, cfg.h2);
  p.b3 = Tensor(cfg.h3, 1);
  p.ln3_g = Tensor(cfg.h3, 1, 1.0);
  p.ln3_b = Tensor(cfg.h3, 1);
  p.w4 = Tensor(1, cfg.h3);
  p.b4 = Tensor(1, 1);
  return p;
}

ModelParams init_params(const ModelConfig& cfg) {
  ModelParams p = make_params(cfg);
  Rng rng(mix_seed(cfg.seed, 0x1e17));
  // Each weight and its bias share the weight's fan-in.
  auto fill = [&](Tensor& w, Tensor* b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    for (double& v : w.v) v = rng.uniform(-bound, bound);
    if (b != nullptr) {
      for (double& v : b->v) v = rng.uniform(-bound, bound);
    }
  };
  fill(p.enc_w, &p.enc_b);
  if (cfg.attention) {
    fill(p.wq, &p.bq);
    fill(p.wk, &p.bk);
    fill(p.wv, &p.bv);
    fill(p.wo, &p.bo);
  }
  fill(p.w1, &p.b1);
  if (cfg.mlp == MlpKind::enhanced) {
    fill(p.w2, &p.b2);
    if (!p.skip_w.empty()) fill(p.skip_w, nullptr);
    fill(p.w3, &p.b3);
  }
  fill(p.w4, &p.b4);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.visit([](const char*, Tensor& t, bool) {
    std::fill(t.v.begin(), t.v.end(), 0.0);
  });
  return z;
}

void round_to_float32(ModelParams& p) {
  p.visit([](const char*, Tensor& t, bool) {
    for (double& v : t.v) v = static_cast<double>(static_cast<float>(v));
  });
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf =
      std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

std::vector<double> encode(std::span<const double> pooled,
                           const ModelParams& p) {
  if (pooled.size() != p.enc_w.cols) {
    throw ConfigError("encoder input size mismatch");
  }
  Vec xn(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    xn[i] = (pooled[i] - p.in_mean.v[i]) / p.in_scale.v[i];
  }
  Vec e(p.enc_w.rows);
  affine(p.enc_w, p.enc_b, xn.data(), e.data());
  for (double& v : e) v = gelu(v);
  return e;
}

AttentionOutput cross_attention(std::span<const double> e0,
                                std::span<const double> e1,
                                const ModelParams& p, std::size_t n_heads) {
  const std::size_t d = p.wq.rows;
  if (e0.size() != d || e1.size() != d) {
    throw ConfigError("attention input size mismatch");
  }
  TokenState t0, t1;
  for (auto [src, dst] : {std::pair{e0, &t0}, std::pair{e1, &t1}}) {
    dst->e.assign(src.begin(), src.end());
    dst->q.resize(d);
    dst->k.resize(d);
    dst->v.resize(d);
    affine(p.wq, p.bq, dst->e.data(), dst->q.data());
    affine(p.wk, p.bk, dst->e.data(), dst->k.data());
    affine(p.wv, p.bv, dst->e.data(), dst->v.data());
  }
  AttentionTrace tr;
  attend(t0, t1, p, n_heads, tr);
  for (const auto& v : tr.out) {
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError("non-finite attention output");
    }
  }
  return {std::move(tr.out[0]), std::move(tr.out[1]), std::move(tr.weights)};
}

double mlp_head(std::span<const double> e0, std::span<const double> e1,
                const ModelParams& p, const ModelConfig& cfg) {
  MlpTrace tr;
  return mlp_forward(Vec(e0.begin(), e0.end()), Vec(e1.begin(), e1.end()), p,
                     cfg, tr);
}

TokenState make_token(std::span<const double> pooled,
                      const ScorerModel& model) {
  TokenTrace tr;
  make_token_traced(pooled, model, tr);
  return std::move(tr.state);
}

double logit_from_tokens(const TokenState& t0, const TokenState& t1,
                         const ScorerModel& model) {
  MlpTrace mt;
  if (!model.config.attention) {
    return mlp_forward(t0.e, t1.e, model.params, model.config, mt);
  }
  AttentionTrace at;
  attend(t0, t1, model.params, model.config.n_heads, at);
  return mlp_forward(at.out[0], at.out[1], model.params, model.config, mt);
}

Prediction forward(std::span<const double> pooled0,
                   std::span<const double> pooled1, const ScorerModel& model) {
  ForwardTrace tr;
  const double y = forward_traced(pooled0, pooled1, model, tr);
  if (!std::isfinite(y)) throw NumericError("non-finite logit");
  return {y, logistic(y)};
}

Prediction forward(const Segment& seg0, const Segment& seg1,
                   const ScorerModel& model) {
  const auto x0 = pool_features(log_mel(seg0, model.features));
  const auto x1 = pool_features(log_mel(seg1, model.features));
  return forward(x0, x1, model);
}

LossAndGrads loss_and_grads(std::span<const TrainingExample> batch,
                            const ScorerModel& model) {
  if (batch.empty()) throw ConfigError("empty training batch");
  LossAndGrads out;
  out.grads = zeros_like(model.params);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ForwardTrace tr;
  for (const auto& ex : batch) {
    const double y = forward_traced(ex.pooled0, ex.pooled1, model, tr);
    out.loss += (softplus(y) - ex.label * y) * inv_b;
    backward(tr, (logistic(y) - ex.label) * inv_b, model, out.grads);
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite training loss");
  return out;
}

double batch_loss(std::span<const TrainingExample> batch,
                  const ScorerModel& model) {
  if (batch.empty()) throw ConfigError("empty batch");
  double loss = 0.0;
  ForwardTrace tr;
  for (const auto& ex : batch) {
    const double y = forward_traced(ex.pooled0, ex.pooled1, model, tr);
    loss += softplus(y) - ex.label * y;
  }
  return loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>(v >> s));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class Reader {
 public:
  Reader(std::string data, std::string where)
      : data_(std::move(data)), where_(std::move(where)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(
               data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw FormatError(where_ + ": truncated model checkpoint");
    }
  }
  std::string data_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> config_fields(const ScorerModel& m) {
  const ModelConfig& c = m.config;
  const FeatureConfig& f = m.features;
  return {
      {"input_dim", std::to_string(c.input_dim)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"n_heads", std::to_string(c.n_heads)},
      {"h1", std::to_string(c.h1)},
      {"h2", std::to_string(c.h2)},
      {"h3", std::to_string(c.h3)},
      {"attention", c.attention ? "1" : "0"},
      {"mlp", to_string(c.mlp)},
      {"seed", std::to_string(c.seed)},
      {"segment_s", fmt_real(f.segment_s)},
      {"n_fft", std::to_string(f.n_fft)},
      {"hop", std::to_string(f.hop)},
      {"n_mels", std::to_string(f.n_mels)},
      {"fmin_hz", fmt_real(f.fmin_hz)},
      {"fmax_hz", f.fmax_hz ? fmt_real(*f.fmax_hz) : std::string{}},
      {"log_floor", fmt_real(f.log_floor)},
  };
}

}  // namespace

void save_model(const ScorerModel& model, const std::filesystem::path& path) {
  std::string out(kModelMagic, 8);
  const auto fields = config_fields(model);
  put_u32(out, static_cast<std::uint32_t>(fields.size()));
  for (const auto& [k, v] : fields) {
    put_str(out, k);
    put_str(out, v);
  }
  std::uint32_t n_tensors = 0;
  model.params.visit([&](const char*, const Tensor&, bool) { ++n_tensors; });
  put_u32(out, n_tensors);
  model.params.visit([&](const char* name, const Tensor& t, bool) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rows));
    put_u32(out, static_cast<std::uint32_t>(t.cols));
    for (double v : t.v) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  });
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("write failed for " + path.string());
}

ScorerModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open model " + path.string());
  std::string data{std::istreambuf_iterator<char>(f),
                   std::istreambuf_iterator<char>()};
  Reader r(std::move(data), path.string());
  if (r.bytes(8) != std::string(kModelMagic, 8)) {
    throw FormatError(path.string() + ": bad model magic");
  }
  std::map<std::string, std::string> fields;
  const std::uint32_t n_fields = r.u32();
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    std::string k = r.str();
    fields[k] = r.str();
  }
  auto get = [&](const char* k) -> const std::string& {
    auto it = fields.find(k);
    if (it == fields.end()) {
      throw FormatError(path.string() + ": checkpoint missing field " + k);
    }
    return it->second;
  };
  ScorerModel m;
  try {
    m.config.input_dim = std::stoull(get("input_dim"));
    m.config.embed_dim = std::stoull(get("embed_dim"));
    m.config.n_heads = std::stoull(get("n_heads"));
    m.config.h1 = std::stoull(get("h1"));
    m.config.h2 = std::stoull(get("h2"));
    m.config.h3 = std::stoull(get("h3"));
    m.config.attention = get("attention") == "1";
    m.config.mlp = mlp_kind_from_string(get("mlp"));
    m.config.seed = std::stoull(get("seed"));
    m.features.segment_s = std::stod(get("segment_s"));
    m.features.n_fft = std::stoull(get("n_fft"));
    m.features.hop = std::stoull(get("hop"));
    m.features.n_mels = std::stoull(get("n_mels"));
    m.features.fmin_hz = std::stod(get("fmin_hz"));
    if (!get("fmax_hz").empty()) m.features.fmax_hz = std::stod(get("fmax_hz"));
    m.features.log_floor = std::stod(get("log_floor"));
  } catch (const std::logic_error& e) {
    throw FormatError(path.string() + ": bad checkpoint field (" + e.what() +
                      ")");
  }
  m.params = make_params(m.config);
  std::map<std::string, Tensor*> slots;
  m.params.visit(
      [&](const char* name, Tensor& t, bool) { slots[name] = &t; });
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != slots.size()) {
    throw FormatError(path.string() + ": tensor count does not match config");
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    auto it = slots.find(name);
    if (it == slots.end() || it->second->rows != rows ||
        it->second->cols != cols) {
      throw FormatError(path.string() + ": unexpected tensor " + name);
    }
    for (double& v : it->second->v) {
      v = static_cast<double>(std::bit_cast<float>(r.u32()));
    }
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes");
  return m;
}

}  // namespace driftalign
