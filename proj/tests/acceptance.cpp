// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Tolerances are fixed here.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "driftalign/align.hpp"
#include "driftalign/audio_io.hpp"
#include "driftalign/drift_sim.hpp"
#include "driftalign/eval.hpp"
#include "driftalign/neural.hpp"
#include "driftalign/rng.hpp"
#include "driftalign/scoring.hpp"
#include "driftalign/train.hpp"
#include "helpers.hpp"

using namespace driftalign;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass,
            const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Runs `body`, turning an exception into a failed criterion.
void guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

StereoPair simulated(std::uint64_t seed, const DriftTrace& d, SynthSpec s = {}) {
  s.seed = seed;
  auto p = synth_pair(s, d);
  return {"pair" + std::to_string(seed), std::move(p.ch0), std::move(p.ch1),
          std::move(p.truth)};
}

StereoPair random_affine_pair(std::uint64_t seed) {
  const SynthSpec s;
  const auto d = make_drift({DriftSpec::Kind::random_affine}, s.duration_s,
                            mix_seed(seed, 99));
  return simulated(seed, d, s);
}

// ---------------------------------------------------------------------------

void worked_example() {
  const double total = combine_components(0.434, 0.885, 0.593, 0.220, {});
  report(1, "worked-example confidence arithmetic",
         std::abs(total - 0.580) <= 0.0005, "total " + fmt("%.6f", total));
}

void combined_scores() {
  const std::vector<double> a{0.14, 0.45}, b{0.099, 0.521};
  const double ca = combined_score(a), cb = combined_score(b);
  const bool ok = std::abs(ca - 0.295) <= 1e-12 && std::abs(cb - 0.310) <= 1e-12 &&
                  std::abs(ca - 0.30) <= 0.005;
  report(2, "dataset combination arithmetic", ok,
         "combined " + fmt("%.6f", ca) + " and " + fmt("%.6f", cb));
}

void gradients() {
  const auto t = Clock::now();
  ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_heads = 2;
  cfg.h1 = 16;
  cfg.h2 = 8;
  cfg.h3 = 8;
  const double h = 1e-5;
  // Relative error |a - n| / max(|a|, |n|, floor); the floor keeps partials
  // that are zero up to rounding from dominating.
  const double floor = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t point = 0; point < 10; ++point) {
    cfg.seed = point;
    ScorerModel m;
    m.config = cfg;
    m.params = init_params(cfg);
    Rng rng(mix_seed(point, 5));
    for (double& v : m.params.in_mean.v) v = rng.uniform(-1, 1);
    for (double& v : m.params.in_scale.v) v = rng.uniform(0.5, 2);
    for (Tensor* g : {&m.params.ln1_g, &m.params.ln2_g, &m.params.ln3_g}) {
      for (double& v : g->v) v = rng.uniform(0.5, 1.5);
    }
    for (Tensor* b : {&m.params.ln1_b, &m.params.ln2_b, &m.params.ln3_b}) {
      for (double& v : b->v) v = rng.uniform(-0.3, 0.3);
    }
    std::vector<TrainingExample> batch(8);
    for (auto& ex : batch) {
      ex.pooled0.resize(cfg.input_dim);
      ex.pooled1.resize(cfg.input_dim);
      for (double& v : ex.pooled0) v = rng.normal();
      for (double& v : ex.pooled1) v = rng.normal();
      ex.label = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    const ModelParams grads = loss_and_grads(batch, m).grads;
    std::vector<const Tensor*> g;
    grads.visit([&](const char*, const Tensor& x, bool tr) {
      if (tr) g.push_back(&x);
    });
    std::size_t k = 0;
    m.params.visit([&](const char*, Tensor& x, bool tr) {
      if (!tr) return;
      const Tensor& gx = *g[k++];
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.v[i];
        x.v[i] = keep + h;
        const double up = batch_loss(batch, m);
        x.v[i] = keep - h;
        const double down = batch_loss(batch, m);
        x.v[i] = keep;
        const double num = (up - down) / (2 * h);
        const double rel = std::abs(num - gx.v[i]) /
                           std::max({std::abs(num), std::abs(gx.v[i]), floor});
        worst = std::max(worst, rel);
        ++checked;
      }
    });
  }
  const double el = seconds_since(t);
  report(3, "gradient check", worst <= 1e-4 && el < 30.0,
         std::to_string(checked) + " partials, worst rel err " +
             fmt("%.3g", worst) + ", " + fmt("%.1f s", el));
}

void scoring_properties() {
  const auto t = Clock::now();
  Rng rng(31337);
  std::size_t mono = 0, perm = 0, bounds = 0;
  double lo = 1e9, hi = -1e9;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 512;
    std::vector<double> p(n);
    for (double& x : p) {
      const double u = rng.uniform(0, 1);
      x = u < 0.05 ? 0.5 : (u < 0.1 ? 1.0 : (u < 0.15 ? 0.0 : rng.uniform(0, 1)));
    }
    const double s = confidence_score(p).total;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
    if (s < 0.1 - 1e-12 || s > 0.95) ++bounds;
    auto q = p;
    std::shuffle(q.begin(), q.end(), rng.engine());
    if (std::abs(confidence_score(q).total - s) > 1e-12) ++perm;
    auto r = p;
    const std::size_t i = rng.next_u64() % n;
    r[i] = rng.uniform(r[i], 1.0);
    if (confidence_score(r).total < s - 1e-12) ++mono;
  }
  const std::vector<double> a{0.99, 0.99, 0.4}, b{0.51, 0.51, 0.4};
  auto count = [](const std::vector<double>& p) {
    std::vector<double> l;
    for (double x : p) l.push_back(std::log(x / (1 - x)));
    return binary_count_score(l);
  };
  const bool witness = count(a) == count(b) &&
                       confidence_score(a).total > confidence_score(b).total;
  const double el = seconds_since(t);
  report(4, "scoring properties",
         mono == 0 && perm == 0 && bounds == 0 && witness && el < 10.0,
         "violations mono/perm/bounds " + std::to_string(mono) + "/" +
             std::to_string(perm) + "/" + std::to_string(bounds) +
             ", range [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) +
             "], tie witness " + (witness ? "ok" : "broken") + ", " +
             fmt("%.1f s", el));
}

void offset_recovery() {
  const auto t = Clock::now();
  const SynthSpec s;
  const auto p = simulated(4242, DriftTrace::affine(1.0, 2.3, s.duration_s), s);
  AlignConfig cfg;
  cfg.scorer = ScorerKind::crosscorr;
  cfg.sampling = SamplingKind::grid;
  cfg.grid_alpha = 1;
  cfg.grid_beta = 201;
  const auto d = align(p, p.keypoints.t0(), cfg);
  const double m = mse(d.result.predicted_t1, p.keypoints.t1());
  const double el = seconds_since(t);
  const double err = std::abs(d.result.chosen.beta - 2.3);
  report(5, "offset recovery without learning",
         err <= 0.05 && m <= 0.01 && el < 10.0,
         "chosen beta " + fmt("%.4f", d.result.chosen.beta) + ", mse " +
             fmt("%.3g", m) + ", " + fmt("%.1f s", el));
}

struct LearnedSetup {
  ScorerModel model;
  double train_seconds = 0.0;
  std::size_t epochs = 0;
  double val_accuracy = 0.0;
};

LearnedSetup train_toy_model() {
  std::vector<StereoPair> tr, va;
  for (std::uint64_t k = 0; k < 10; ++k) tr.push_back(random_affine_pair(100 + k));
  for (std::uint64_t k = 0; k < 2; ++k) va.push_back(random_affine_pair(200 + k));
  TrainConfig tc;
  tc.keypoint_stride = 1;
  tc.max_epochs = 40;
  const auto t = Clock::now();
  auto r = train(tr, va, ModelConfig{}, FeatureConfig{}, tc);
  return {std::move(r.model), seconds_since(t), r.log.size(), r.val_accuracy};
}

AlignConfig dense_grid(ScorerKind k) {
  AlignConfig cfg;
  cfg.sampling = SamplingKind::grid;
  cfg.grid_alpha = 21;
  cfg.grid_beta = 201;
  cfg.scorer = k;
  return cfg;
}

void affine_recovery(const LearnedSetup& s) {
  const auto t = Clock::now();
  const auto cfg = dense_grid(ScorerKind::confidence);
  std::size_t good = 0;
  std::string mses;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const auto p = random_affine_pair(300 + k);
    const auto d = align(p, p.keypoints.t0(), cfg, &s.model);
    const double m = mse(d.result.predicted_t1, p.keypoints.t1());
    if (m <= 0.05) ++good;
    mses += (k ? " " : "") + fmt("%.4f", m);
  }
  const double el = s.train_seconds + seconds_since(t);
  report(6, "affine recovery with the learned scorer", good >= 4 && el <= 300.0,
         std::to_string(good) + "/5 pairs with mse <= 0.05 (" + mses +
             "), train " + std::to_string(s.epochs) + " epochs, val acc " +
             fmt("%.3f", s.val_accuracy) + ", total " + fmt("%.1f s", el));
}

void confidence_vs_binary(const LearnedSetup& s) {
  const auto t = Clock::now();
  const auto cfg = dense_grid(ScorerKind::confidence);
  const auto weights = weight_ablation_configs();
  std::size_t wins = 0, proposed_best = 0;
  double sum_conf = 0.0, sum_bin = 0.0;
  const std::size_t seeds = 20;
  for (std::uint64_t k = 0; k < seeds; ++k) {
    const auto p = random_affine_pair(1000 + k);
    const auto t0 = p.keypoints.t0();
    const auto truth = p.keypoints.t1();
    const auto cands = candidates_for(p, t0, cfg);
    const auto preds = predict_candidates(p, t0, cands, s.model);
    auto mse_for = [&](ScorerKind kind, const ScoringWeights& w) {
      std::vector<double> sc;
      for (const auto& ps : preds) sc.push_back(candidate_score(ps, kind, w));
      const auto best = select_best(cands, sc);
      return mse(predict_timestamps(cands[best], t0), truth);
    };
    const double mc = mse_for(ScorerKind::confidence, cfg.weights);
    const double mb = mse_for(ScorerKind::binary, cfg.weights);
    if (mc <= mb) ++wins;
    sum_conf += mc;
    sum_bin += mb;
    bool best = true;
    for (const auto& w : weights) best = best && mc <= mse_for(ScorerKind::confidence, w.weights);
    if (best) ++proposed_best;
  }
  const double el = s.train_seconds + seconds_since(t);
  const double frac = static_cast<double>(wins) / seeds;
  report(7, "confidence vs binary selection",
         frac >= 0.6 && sum_conf <= sum_bin && el <= 900.0,
         std::to_string(wins) + "/" + std::to_string(seeds) +
             " seeds with confidence mse <= binary, mean mse " +
             fmt("%.4f", sum_conf / seeds) + " vs " + fmt("%.4f", sum_bin / seeds) +
             ", " + fmt("%.1f s", el));
  std::printf("INFO proposed weights best of six configs in %zu/%zu seeds\n",
              proposed_best, seeds);
}

// ---------------------------------------------------------------------------
// CLI checks

std::string cli() { return DRIFTALIGN_CLI; }

int run(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" + cli() + "' " + args;
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw std::runtime_error("command failed (" + std::to_string(rc) + "): " + args);
  return rc;
}

// Every command in the session, relative paths only.
const std::vector<std::string>& session() {
  static const std::vector<std::string> cmds = {
      "simulate --out data --n-pairs 5 --duration 12 --n-val 1 --n-test 2 "
      "--seed 11 > simulate.out",
      "train --manifest data/manifest.json --out att.bin --max-epochs 3 "
      "--stride 2 --embed-dim 8 --heads 2 --h1 8 --h2 8 --h3 4 --lr 1e-3 "
      "--quiet > train_att.out",
      "train --manifest data/manifest.json --out enh.bin --max-epochs 3 "
      "--stride 2 --embed-dim 8 --h1 8 --h2 8 --h3 4 --lr 1e-3 "
      "--no-attention --quiet > train_enh.out",
      "train --manifest data/manifest.json --out base.bin --max-epochs 3 "
      "--stride 2 --embed-dim 8 --h1 8 --lr 1e-3 --no-attention "
      "--mlp plain --quiet > train_base.out",
      "align --manifest data/manifest.json --split test --out-dir aligned "
      "--model att.bin --candidates grid:5x41 --explain > align.out",
      "align --manifest data/manifest.json --split test --out-dir aligned_rand "
      "--model att.bin --candidates 50 --seed 4 --scorer binary > align_rand.out",
      "align --manifest data/manifest.json --split test --out-dir aligned_xc "
      "--scorer crosscorr --candidates grid:1x41 > align_xc.out",
      "evaluate --manifest data/manifest.json --manifest data/manifest.json "
      "--model att.bin --candidates grid:3x21 --json eval.json > evaluate.out",
      "evaluate --pred aligned/pair_003.csv --truth data/pair_003.csv "
      "> evaluate_file.out",
      "ablate --mode weights --manifest data/manifest.json --model att.bin "
      "--candidates grid:3x21 --out weights.csv > ablate_w.out",
      "ablate --mode components --manifest data/manifest.json "
      "--baseline-model base.bin --enhanced-model enh.bin "
      "--attention-model att.bin --candidates grid:3x21 --out components.csv "
      "> ablate_c.out",
      "explain --pair data/pair_003.wav --keypoints data/pair_003.csv "
      "--model att.bin --alpha 1.0 --beta 0.5 > explain.out",
  };
  return cmds;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::ifstream f(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void cli_session(const fs::path& a, const fs::path& b) {
  const auto t = Clock::now();
  for (const auto& dir : {a, b}) {
    fs::create_directories(dir);
    for (const auto& c : session()) run(dir, c);
  }
  const double el = seconds_since(t) / 2.0;

  // Ablation shapes.
  const auto w = read_csv_rows(a / "weights.csv");
  const auto c = read_csv_rows(a / "components.csv");
  auto finite_mse = [](const std::vector<std::vector<std::string>>& rows) {
    for (std::size_t k = 1; k < rows.size(); ++k) {
      if (rows[k].size() != 8 || !std::isfinite(std::stod(rows[k][7]))) return false;
    }
    return rows.size() > 1;
  };
  const std::vector<std::string> wnames{"Proposed", "Mean+Top", "Mean only",
                                        "Equal weights", "Sigmoid+Exp", "Top only"};
  const std::vector<std::string> cnames{"Original Baseline", "+ Enhanced MLP",
                                        "+ Cross-Attention", "+ Confidence Scoring"};
  bool names_ok = w.size() == 7 && c.size() == 5;
  for (std::size_t k = 0; names_ok && k < 6; ++k) names_ok = w[k + 1][0] == wnames[k];
  for (std::size_t k = 0; names_ok && k < 4; ++k) names_ok = c[k + 1][0] == cnames[k];
  report(8, "ablation harness shape",
         names_ok && finite_mse(w) && finite_mse(c) && el <= 600.0,
         std::to_string(w.size() - 1) + " weight rows, " +
             std::to_string(c.size() - 1) + " component rows, session " +
             fmt("%.1f s", el));

  // Byte-identical outputs across the two runs.
  std::size_t files = 0;
  std::vector<std::string> diffs;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      diffs.push_back(rel.string());
    }
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) {
      diffs.push_back(fs::relative(e.path(), b).string());
    }
  }
  std::string detail = std::to_string(files) + " files from " +
                       std::to_string(session().size()) + " commands";
  if (!diffs.empty()) detail += ", differing: " + diffs.front();
  report(9, "CLI determinism", diffs.empty() && files > 20, detail);
}

void io_round_trips(const fs::path& dir) {
  fs::create_directories(dir);
  Rng rng(808);
  std::size_t wav_bad = 0, csv_bad = 0, emb_bad = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng.next_u64() % 4000;
    const std::size_t ch = 1 + rng.next_u64() % 2;
    const auto rate = static_cast<std::uint32_t>(8000 + rng.next_u64() % 40000);
    std::vector<AudioBuffer> in;
    for (std::size_t c = 0; c < ch; ++c) {
      std::vector<double> x(n);
      for (double& v : x) v = static_cast<float>(rng.uniform(-1, 1));
      in.emplace_back(std::move(x), rate);
    }
    write_wav(in, dir / "a.wav", WavEncoding::float32);
    const auto f = read_wav(dir / "a.wav");
    write_wav(in, dir / "b.wav", WavEncoding::pcm16);
    const auto q = read_wav(dir / "b.wav");
    bool ok = f.size() == ch && q.size() == ch;
    for (std::size_t c = 0; ok && c < ch; ++c) {
      ok = f[c].samples() == in[c].samples() && f[c].sample_rate_hz() == rate &&
           q[c].size() == n;
      for (std::size_t k = 0; ok && k < n; ++k) {
        ok = std::abs(q[c].samples()[k] - in[c].samples()[k]) <= 1.0 / 32768.0;
      }
    }
    if (!ok) ++wav_bad;

    const std::size_t m = 1 + rng.next_u64() % 300;
    KeypointSet k = KeypointSet::grid(m);
    for (auto& e : k.entries) {
      if (!rng.bernoulli(0.1)) e.t1 = e.t0 + rng.uniform(-5, 5);
    }
    write_keypoints(k, dir / "k.csv");
    const auto back = read_keypoints(dir / "k.csv");
    bool kok = back.size() == m;
    for (std::size_t i = 0; kok && i < m; ++i) {
      const auto& x = k.entries[i];
      const auto& y = back.entries[i];
      kok = x.t0 == y.t0 && x.t1.has_value() == y.t1.has_value() &&
            (!x.t1 || std::abs(*x.t1 - *y.t1) <= 5e-10);
    }
    if (!kok) ++csv_bad;

    EmbeddingMatrix e;
    e.count = static_cast<std::uint32_t>(rng.next_u64() % 40);
    e.dim = 1 + static_cast<std::uint32_t>(rng.next_u64() % 100);
    for (std::size_t i = 0; i < std::size_t{e.count} * e.dim; ++i) {
      float v;
      do {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
      } while (!std::isfinite(v));
      e.values.push_back(v);
    }
    write_embeddings(e, dir / "e.bin");
    const auto eb = read_embeddings(dir / "e.bin");
    if (eb.count != e.count || eb.dim != e.dim ||
        std::memcmp(eb.values.data(), e.values.data(),
                    e.values.size() * sizeof(float)) != 0) {
      ++emb_bad;
    }
  }
  report(10, "I/O round-trips", wav_bad + csv_bad + emb_bad == 0,
         std::to_string(trials) + " random instances each, failures wav/csv/emb " +
             std::to_string(wav_bad) + "/" + std::to_string(csv_bad) + "/" +
             std::to_string(emb_bad));
}

}  // namespace

int main() {
  setenv("DRIFTALIGN_THREADS", "1", 1);
  testing::TempDir dir;
  guarded(1, "worked-example confidence arithmetic", worked_example);
  guarded(2, "dataset combination arithmetic", combined_scores);
  guarded(3, "gradient check", gradients);
  guarded(4, "scoring properties", scoring_properties);
  guarded(5, "offset recovery without learning", offset_recovery);
  std::optional<LearnedSetup> learned;
  guarded(6, "affine recovery with the learned scorer", [&] {
    learned = train_toy_model();
    affine_recovery(*learned);
  });
  guarded(7, "confidence vs binary selection", [&] {
    if (!learned) throw std::runtime_error("no trained model");
    confidence_vs_binary(*learned);
  });
  try {
    cli_session(dir / "run1", dir / "run2");
  } catch (const std::exception& e) {
    report(8, "ablation harness shape", false, std::string("exception: ") + e.what());
    report(9, "CLI determinism", false, "session did not complete");
  }
  guarded(10, "I/O round-trips", [&] { io_round_trips(dir / "io"); });
  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED",
              failures);
  return failures == 0 ? 0 : 1;
}
