// driftalign: simulate, train, align, evaluate, ablate, explain, embeddings.
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "driftalign/align.hpp"
#include "driftalign/audio_io.hpp"
#include "driftalign/drift_sim.hpp"
#include "driftalign/error.hpp"
#include "driftalign/eval.hpp"
#include "driftalign/features.hpp"
#include "driftalign/neural.hpp"
#include "driftalign/rng.hpp"
#include "driftalign/scoring.hpp"
#include "driftalign/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace driftalign;

namespace {

// Bad flag values found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class F>
auto as_usage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const driftalign::Error& e) {
    throw UsageError(e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
  if (!f) throw FormatError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

ScoringWeights parse_weights(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size()) {
      throw UsageError("bad weight '" + item + "' in --weights");
    }
    v.push_back(x);
  }
  if (v.size() != 4) {
    throw UsageError("--weights needs four comma-separated values");
  }
  ScoringWeights w{v[0], v[1], v[2], v[3]};
  as_usage([&] {
    w.validate();
    return 0;
  });
  return w;
}

json breakdown_json(const ScoreBreakdown& b) {
  return json{{"mu_pos", b.mu_pos}, {"r_pos", b.r_pos},
              {"pos_term", b.pos_term}, {"mu_top", b.mu_top},
              {"sig_cov", b.sig_cov},   {"e_exp", b.e_exp},
              {"total", b.total}};
}

json candidate_json(const AffineCandidate& c) {
  return json{{"alpha", c.alpha}, {"beta", c.beta}};
}

// ---------------------------------------------------------------------------
// Shared option groups

struct FeatureFlags {
  FeatureConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--segment", cfg.segment_s, "Segment length in seconds");
    app->add_option("--n-fft", cfg.n_fft, "FFT size in samples");
    app->add_option("--hop", cfg.hop, "Frame hop in samples");
    app->add_option("--n-mels", cfg.n_mels, "Mel bands");
  }
};

struct AlignFlags {
  AlignConfig cfg;
  std::string scorer = "confidence";
  std::string candidates = "100";
  std::string weights = "0.4,0.3,0.2,0.1";
  std::string xcorr = "phat";
  bool no_filter = false;
  std::string model_path;

  void add(CLI::App* app, bool with_model = true) {
    app->add_option("--scorer", scorer,
                    "confidence | binary | crosscorr | nosync")
        ->check(CLI::IsMember({"confidence", "binary", "crosscorr", "nosync"}));
    app->add_option("--candidates", candidates,
                    "M random candidates, or grid:GxH (alpha x beta)");
    app->add_option("--weights", weights,
                    "Confidence weights w_pos,w_top,w_sig,w_exp");
    app->add_option("--delta-max", cfg.delta_max, "Drift bound in seconds");
    app->add_option("--seed", cfg.seed, "Candidate sampling seed");
    app->add_option("--crosscorr-mode", xcorr, "plain | phat")
        ->check(CLI::IsMember({"plain", "phat"}));
    app->add_flag("--no-trajectory-filter", no_filter,
                  "Keep candidates that leave the drift bound before the "
                  "last keypoint");
    if (with_model) {
      app->add_option("--model", model_path, "Model checkpoint");
    }
  }

  void resolve() {
    cfg.scorer = as_usage([&] { return scorer_kind_from_string(scorer); });
    as_usage([&] {
      parse_candidates_spec(candidates, cfg);
      return 0;
    });
    cfg.weights = parse_weights(weights);
    cfg.crosscorr_mode =
        as_usage([&] { return crosscorr_mode_from_string(xcorr); });
    cfg.trajectory_filter = !no_filter;
    as_usage([&] {
      cfg.validate();
      return 0;
    });
    if (needs_model() && model_path.empty()) {
      throw UsageError("--scorer " + scorer + " requires --model");
    }
  }

  bool needs_model() const {
    return cfg.scorer == ScorerKind::confidence ||
           cfg.scorer == ScorerKind::binary;
  }

  std::optional<ScorerModel> load() const {
    if (!needs_model()) return std::nullopt;
    return load_model(model_path);
  }
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateCmd {
  std::string out;
  std::size_t n_pairs = 1;
  double duration = 60.0;
  std::string drift = "random-affine";
  std::uint64_t seed = 0;
  std::uint32_t sample_rate = 16000;
  std::optional<std::size_t> n_keypoints;
  std::string event = "chirp";
  double snr_db = 30.0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::string dataset = "synthetic";
  std::string encoding = "float32";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("simulate",
                                  "Write synthetic stereo pairs with known drift");
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--n-pairs", n_pairs, "Number of pairs")
        ->check(CLI::PositiveNumber);
    c->add_option("--duration", duration, "Duration per pair in seconds");
    c->add_option("--drift", drift,
                  "affine:ALPHA,BETA | piecewise:K | random-affine");
    c->add_option("--seed", seed, "Master seed");
    c->add_option("--sample-rate", sample_rate, "Sample rate in Hz");
    c->add_option("--n-keypoints", n_keypoints,
                  "Keypoints at 0,1,2,... seconds (default: floor(duration))");
    c->add_option("--event", event, "click | chirp")
        ->check(CLI::IsMember({"click", "chirp"}));
    c->add_option("--snr-db", snr_db, "Event-to-noise ratio in dB (inf: none)");
    c->add_option("--n-val", n_val, "Pairs assigned to the val split");
    c->add_option("--n-test", n_test, "Pairs assigned to the test split");
    c->add_option("--dataset-name", dataset, "Manifest dataset name");
    c->add_option("--encoding", encoding, "float32 | pcm16")
        ->check(CLI::IsMember({"float32", "pcm16"}));
    c->callback([this] { run(); });
  }

  void run() {
    if (n_val + n_test > n_pairs) {
      throw UsageError("--n-val plus --n-test exceeds --n-pairs");
    }
    SynthSpec spec;
    spec.duration_s = duration;
    spec.sample_rate_hz = sample_rate;
    spec.n_keypoints = n_keypoints.value_or(
        static_cast<std::size_t>(std::floor(duration)));
    spec.event_kind = as_usage([&] { return event_kind_from_string(event); });
    spec.event_snr_db = snr_db;
    as_usage([&] {
      spec.validate();
      return 0;
    });
    const DriftSpec ds = as_usage([&] { return parse_drift_spec(drift); });
    // Fixed drifts are checked before anything is written.
    if (ds.kind == DriftSpec::Kind::affine) {
      as_usage([&] { return make_drift(ds, duration, seed); });
    }
    fs::create_directories(out);
    DatasetManifest m;
    m.dataset_name = dataset;
    const WavEncoding enc =
        encoding == "pcm16" ? WavEncoding::pcm16 : WavEncoding::float32;
    for (std::size_t k = 0; k < n_pairs; ++k) {
      SynthSpec s = spec;
      s.seed = mix_seed(seed, k);
      const DriftTrace d = make_drift(ds, duration, mix_seed(seed, 1000 + k));
      const SynthPair p = synth_pair(s, d);
      char id[32];
      std::snprintf(id, sizeof id, "pair_%03zu", k);
      const fs::path wav = fs::path(out) / (std::string(id) + ".wav");
      const fs::path csv = fs::path(out) / (std::string(id) + ".csv");
      write_wav({p.ch0, p.ch1}, wav, enc);
      write_keypoints(p.truth, csv);
      const Split split = k < n_pairs - n_val - n_test ? Split::train
                          : k < n_pairs - n_test       ? Split::val
                                                       : Split::test;
      m.entries.push_back({id, wav, csv, split});
    }
    write_manifest(m, fs::path(out) / "manifest.json");
    std::cout << "wrote " << n_pairs << " pairs to " << out << "\n";
  }
};

// ---------------------------------------------------------------------------
// train

struct TrainCmd {
  std::string manifest;
  std::string out;
  std::string log_path;
  TrainConfig tcfg;
  ModelConfig mcfg;
  FeatureFlags feat;
  bool no_attention = false;
  std::string mlp = "enhanced";
  bool quiet = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("train", "Train the pair scorer");
    c->add_option("--manifest", manifest, "Dataset manifest (train/val splits)")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--out", out, "Checkpoint path")->required();
    c->add_option("--log", log_path,
                  "Training log CSV (default: <out>.log.csv)");
    c->add_option("--lr", tcfg.lr, "AdamW learning rate");
    c->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay");
    c->add_option("--batch", tcfg.batch_size, "Batch size");
    c->add_option("--max-epochs", tcfg.max_epochs, "Epoch limit");
    c->add_option("--patience", tcfg.early_stop_patience,
                  "Early-stop patience in epochs");
    c->add_option("--plateau-factor", tcfg.plateau_factor,
                  "LR multiplier on plateau");
    c->add_option("--plateau-patience", tcfg.plateau_patience,
                  "Epochs without improvement before the LR drops");
    c->add_option("--augment-prob", tcfg.augment_prob,
                  "Fraction of samples augmented");
    c->add_option("--stride", tcfg.keypoint_stride, "Keypoint stride");
    c->add_option("--seed", tcfg.seed, "Training seed (also parameter init)");
    c->add_option("--embed-dim", mcfg.embed_dim, "Embedding size d");
    c->add_option("--heads", mcfg.n_heads, "Attention heads");
    c->add_option("--h1", mcfg.h1, "MLP layer 1 width");
    c->add_option("--h2", mcfg.h2, "MLP layer 2 width");
    c->add_option("--h3", mcfg.h3, "MLP layer 3 width");
    c->add_flag("--no-attention", no_attention,
                "Feed encoder embeddings straight to the MLP");
    c->add_option("--mlp", mlp, "enhanced | plain")
        ->check(CLI::IsMember({"enhanced", "plain"}));
    c->add_flag("--quiet", quiet, "No per-epoch lines on stderr");
    feat.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    mcfg.attention = !no_attention;
    mcfg.mlp = as_usage([&] { return mlp_kind_from_string(mlp); });
    mcfg.seed = tcfg.seed;
    mcfg.input_dim = feat.cfg.pooled_dim();
    as_usage([&] {
      tcfg.validate();
      mcfg.validate();
      return 0;
    });
    const DatasetManifest m = read_manifest(manifest);
    const TrainResult r =
        train(m, mcfg, feat.cfg, tcfg, quiet ? nullptr : &std::cerr);
    save_model(r.model, out);
    write_training_log(r.log, log_path.empty() ? out + ".log.csv" : log_path);
    std::cout << "epochs " << r.log.size() << "\n"
              << "best_epoch " << r.best_epoch << "\n"
              << "best_val_loss " << fmt("%.6f", r.best_val_loss) << "\n"
              << "val_accuracy " << fmt("%.4f", r.val_accuracy) << "\n";
  }
};

// ---------------------------------------------------------------------------
// align

json align_sidecar(const StereoPair& pair, const AlignmentDetail& d,
                   const AlignConfig& cfg, bool explain) {
  json j;
  j["pair_id"] = pair.id;
  j["scorer"] = to_string(cfg.scorer);
  j["chosen"] = candidate_json(d.result.chosen);
  j["score"] = d.result.score;
  j["n_candidates"] = d.candidates.size();
  const auto& chosen = d.candidates[d.chosen_index];
  if (chosen.breakdown) j["breakdown"] = breakdown_json(*chosen.breakdown);
  if (d.crosscorr_lag) j["crosscorr_lag"] = *d.crosscorr_lag;
  if (pair.keypoints.has_truth()) {
    j["mse"] = mse(d.result.predicted_t1, pair.keypoints.t1());
  }
  if (explain) {
    // Same ranking as selection, applied repeatedly.
    std::vector<std::size_t> top;
    std::vector<AffineCandidate> cs;
    std::vector<double> ss;
    for (const auto& c : d.candidates) {
      cs.push_back(c.candidate);
      ss.push_back(c.score);
    }
    for (std::size_t r = 0; r < std::min<std::size_t>(5, cs.size()); ++r) {
      const std::size_t b = select_best(cs, ss);
      top.push_back(b);
      ss[b] = -std::numeric_limits<double>::infinity();
    }
    json arr = json::array();
    for (std::size_t k : top) {
      json e;
      e["rank"] = arr.size() + 1;
      e["candidate"] = candidate_json(d.candidates[k].candidate);
      e["score"] = d.candidates[k].score;
      if (d.candidates[k].breakdown) {
        e["breakdown"] = breakdown_json(*d.candidates[k].breakdown);
      }
      arr.push_back(e);
    }
    j["top_candidates"] = arr;
  }
  return j;
}

struct AlignCmd {
  std::string pair_wav;
  std::string keypoints;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string out_dir;
  bool explain = false;
  AlignFlags flags;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("align", "Estimate drift and predict t1");
    auto* pw = c->add_option("--pair", pair_wav, "Stereo WAV")
                   ->check(CLI::ExistingFile);
    auto* kp = c->add_option("--keypoints", keypoints, "Keypoint CSV")
                   ->check(CLI::ExistingFile);
    auto* mf = c->add_option("--manifest", manifest, "Align every pair of a split")
                   ->check(CLI::ExistingFile);
    c->add_option("--split", split, "Manifest split (train|val|test|all)");
    c->add_option("--out", out,
                  "Prediction CSV for --pair (JSON sidecar next to it)");
    c->add_option("--out-dir", out_dir, "Output directory for --manifest");
    c->add_flag("--explain", explain, "Add the top-5 candidates to the sidecar");
    pw->needs(kp);
    kp->needs(pw);
    mf->excludes(pw);
    flags.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    flags.resolve();
    if (manifest.empty() && pair_wav.empty()) {
      throw UsageError("align needs --pair/--keypoints or --manifest");
    }
    if (!manifest.empty() && out_dir.empty()) {
      throw UsageError("--manifest requires --out-dir");
    }
    if (manifest.empty() && out.empty()) {
      throw UsageError("--pair requires --out");
    }
    const auto model = flags.load();
    const ScorerModel* mp = model ? &*model : nullptr;

    auto one = [&](const StereoPair& p, const fs::path& csv) {
      const auto t0 = p.keypoints.t0();
      const AlignmentDetail d = align(p, t0, flags.cfg, mp);
      write_predictions(t0, d.result.predicted_t1, csv);
      write_json(fs::path(csv).replace_extension(".json"),
                 align_sidecar(p, d, flags.cfg, explain));
      std::cout << p.id << " alpha " << fmt("%.9f", d.result.chosen.alpha)
                << " beta " << fmt("%.6f", d.result.chosen.beta) << " score "
                << fmt("%.6f", d.result.score) << "\n";
    };

    if (!manifest.empty()) {
      const DatasetManifest m = read_manifest(manifest);
      std::vector<ManifestEntry> entries =
          split == "all" ? m.entries
                         : m.select(as_usage([&] { return split_from_string(split); }));
      std::sort(entries.begin(), entries.end(),
                [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
      fs::create_directories(out_dir);
      for (const auto& e : entries) {
        one(load_pair(e, flags.cfg.delta_max),
            fs::path(out_dir) / (e.pair_id + ".csv"));
      }
      return;
    }
    StereoPair p = load_pair(pair_wav, keypoints, flags.cfg.delta_max);
    p.id = fs::path(pair_wav).stem().string();
    one(p, out);
  }
};

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateCmd {
  std::string pred;
  std::string truth;
  std::vector<std::string> manifests;
  std::string split = "test";
  std::string json_out;
  AlignFlags flags;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand(
        "evaluate", "MSE of predictions, or of aligning manifest pairs");
    auto* p = c->add_option("--pred", pred, "Prediction CSV (index,t0,t1_pred)")
                  ->check(CLI::ExistingFile);
    auto* t = c->add_option("--truth", truth, "Keypoint CSV with t1")
                  ->check(CLI::ExistingFile);
    auto* m = c->add_option("--manifest", manifests,
                            "One or two datasets; two also print the combined "
                            "mean")
                  ->check(CLI::ExistingFile);
    c->add_option("--split", split, "Manifest split (train|val|test|all)");
    c->add_option("--json", json_out, "JSON summary path");
    p->needs(t);
    t->needs(p);
    m->excludes(p);
    flags.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    if (!pred.empty()) {
      const KeypointSet pk = read_predictions(pred);
      const KeypointSet tk = read_keypoints(truth, flags.cfg.delta_max);
      std::vector<double> pv;
      for (const auto& e : pk.entries) pv.push_back(*e.t1);
      const double v = mse(pv, tk.t1());
      std::cout << "mse " << fmt("%.9f", v) << "\n";
      if (!json_out.empty()) write_json(json_out, json{{"mse", v}});
      return;
    }
    if (manifests.empty()) {
      throw UsageError("evaluate needs --pred/--truth or --manifest");
    }
    if (manifests.size() > 2) throw UsageError("at most two --manifest values");
    flags.resolve();
    const auto model = flags.load();
    const ScorerModel* mp = model ? &*model : nullptr;

    std::vector<std::map<std::string, double>> per_dataset;
    std::vector<std::string> names;
    for (const auto& path : manifests) {
      const DatasetManifest m = read_manifest(path);
      auto entries =
          split == "all" ? m.entries
                         : m.select(as_usage([&] { return split_from_string(split); }));
      if (entries.empty()) {
        throw ConfigError(path + ": no entries in split '" + split + "'");
      }
      std::map<std::string, double> files;
      for (const auto& e : entries) {
        const StereoPair p = load_pair(e, flags.cfg.delta_max);
        const auto t0 = p.keypoints.t0();
        const auto d = align(p, t0, flags.cfg, mp);
        files[e.pair_id] = mse(d.result.predicted_t1, p.keypoints.t1());
      }
      per_dataset.push_back(files);
      names.push_back(m.dataset_name);
    }
    const auto reports = dataset_scores(per_dataset, per_dataset.size() == 2);
    json summary;
    summary["scorer"] = to_string(flags.cfg.scorer);
    json ds = json::array();
    std::cout << "dataset,pair_id,mse\n";
    for (std::size_t k = 0; k < reports.size(); ++k) {
      json files = json::object();
      for (const auto& [id, v] : reports[k].per_file_mse) {
        std::cout << names[k] << "," << id << "," << fmt("%.9f", v) << "\n";
        files[id] = v;
      }
      std::cout << names[k] << ",ALL," << fmt("%.9f", reports[k].dataset_mse)
                << "\n";
      ds.push_back(json{{"dataset", names[k]},
                        {"mse", reports[k].dataset_mse},
                        {"per_file_mse", files}});
    }
    summary["datasets"] = ds;
    if (reports.size() == 2) {
      std::cout << "combined,ALL," << fmt("%.9f", *reports[0].combined) << "\n";
      summary["combined"] = *reports[0].combined;
    }
    if (!json_out.empty()) write_json(json_out, summary);
  }
};

// ---------------------------------------------------------------------------
// ablate

struct AblateCmd {
  std::string mode;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string baseline_model, enhanced_model, attention_model;
  AlignFlags flags;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("ablate", "Weight or component ablation tables");
    c->add_option("--mode", mode, "weights | components")
        ->required()
        ->check(CLI::IsMember({"weights", "components"}));
    c->add_option("--manifest", manifest, "Pairs with ground truth")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--split", split, "Manifest split (train|val|test|all)");
    c->add_option("--out", out, "CSV path (default: stdout)");
    c->add_option("--baseline-model", baseline_model,
                  "components: no attention, plain MLP");
    c->add_option("--enhanced-model", enhanced_model,
                  "components: no attention, enhanced MLP");
    c->add_option("--attention-model", attention_model,
                  "components: attention, enhanced MLP");
    flags.add(c);
    c->callback([this] { run(); });
  }

  void run() {
    if (mode == "weights" && flags.model_path.empty()) {
      throw UsageError("--mode weights requires --model");
    }
    if (mode == "components" &&
        (baseline_model.empty() || enhanced_model.empty() ||
         attention_model.empty())) {
      throw UsageError(
          "--mode components requires --baseline-model, --enhanced-model and "
          "--attention-model");
    }
    std::string keep = flags.scorer;
    flags.scorer = "nosync";  // scorer choice is fixed by the table
    flags.resolve();
    flags.scorer = keep;

    const DatasetManifest m = read_manifest(manifest);
    auto entries =
        split == "all" ? m.entries
                       : m.select(as_usage([&] { return split_from_string(split); }));
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
    if (entries.empty()) throw ConfigError("no entries in split '" + split + "'");
    std::vector<StereoPair> pairs;
    for (const auto& e : entries) pairs.push_back(load_pair(e, flags.cfg.delta_max));

    std::vector<AblationRow> rows;
    if (mode == "weights") {
      const ScorerModel model = load_model(flags.model_path);
      const auto configs = weight_ablation_configs();
      rows = ablate_weights(pairs, model, configs, flags.cfg);
    } else {
      const ScorerModel a = load_model(baseline_model);
      const ScorerModel b = load_model(enhanced_model);
      const ScorerModel c = load_model(attention_model);
      rows = ablate_components(pairs, {&a, &b, &c}, flags.cfg);
    }
    const std::string csv = ablation_csv(rows);
    if (out.empty()) {
      std::cout << csv;
    } else {
      write_text(out, csv);
    }
  }
};

// ---------------------------------------------------------------------------
// explain

struct ExplainCmd {
  std::string pair_wav, keypoints, model_path;
  double alpha = 1.0;
  double beta = 0.0;
  std::string weights = "0.4,0.3,0.2,0.1";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand(
        "explain", "Score breakdown and per-keypoint probabilities of one candidate");
    c->add_option("--pair", pair_wav, "Stereo WAV")->required()->check(CLI::ExistingFile);
    c->add_option("--keypoints", keypoints, "Keypoint CSV")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--model", model_path, "Model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--alpha", alpha, "Candidate drift rate");
    c->add_option("--beta", beta, "Candidate offset in seconds");
    c->add_option("--weights", weights, "Confidence weights");
    c->callback([this] { run(); });
  }

  void run() {
    const ScoringWeights w = parse_weights(weights);
    const StereoPair p = load_pair(pair_wav, keypoints);
    const AffineCandidate c = as_usage([&] {
      return AffineCandidate::make(alpha, beta, p.ch0.duration_seconds());
    });
    const ScorerModel model = load_model(model_path);
    const auto t0 = p.keypoints.t0();
    const std::vector<AffineCandidate> one{c};
    const PredictionSet ps = predict_candidates(p, t0, one, model).front();
    json j;
    j["candidate"] = candidate_json(c);
    j["breakdown"] = breakdown_json(confidence_score(ps, w));
    j["binary_count"] = binary_count_score(ps.logits);
    j["n_keypoints"] = ps.size();
    json kp = json::array();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      kp.push_back(json{{"index", i},
                        {"t0", t0[i]},
                        {"t1_pred", c.predict(t0[i])},
                        {"logit", ps.logits[i]},
                        {"prob", ps.probs[i]}});
    }
    j["keypoints"] = kp;
    std::cout << j.dump(2) << "\n";
  }
};

// ---------------------------------------------------------------------------
// embeddings

struct EmbeddingsCmd {
  std::string path;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("embeddings",
                                  "Check an embedding file and print its shape");
    c->add_option("file", path, "Embedding file")->required()->check(CLI::ExistingFile);
    c->callback([this] { run(); });
  }

  void run() {
    const EmbeddingMatrix m = read_embeddings(path);
    std::size_t bad = 0;
    for (float v : m.values) {
      if (!std::isfinite(v)) ++bad;
    }
    std::cout << "count " << m.count << "\ndim " << m.dim << "\nnon_finite "
              << bad << "\n";
    if (bad > 0) throw NumericError(path + ": embedding file has non-finite values");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Drift estimation and alignment of stereo recordings"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SimulateCmd simulate;
  TrainCmd train_cmd;
  AlignCmd align_cmd;
  EvaluateCmd evaluate;
  AblateCmd ablate;
  ExplainCmd explain;
  EmbeddingsCmd embeddings;
  simulate.add(app);
  train_cmd.add(app);
  align_cmd.add(app);
  evaluate.add(app);
  ablate.add(app);
  explain.add(app);
  embeddings.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
