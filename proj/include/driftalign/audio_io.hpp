#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "driftalign/types.hpp"

namespace driftalign {

enum class WavEncoding { pcm16, float32 };

// RIFF/WAVE, PCM16 or IEEE float32, mono or stereo. Returns one buffer per
// channel; 16-bit samples are scaled by 1/32768.
std::vector<AudioBuffer> read_wav(const std::filesystem::path& path);

void write_wav(const std::vector<AudioBuffer>& channels,
               const std::filesystem::path& path,
               WavEncoding encoding = WavEncoding::float32);

// CSV with header `index,t0,t1`; t1 may be empty. The grid flag is set when
// every t0 equals its index.
KeypointSet read_keypoints(const std::filesystem::path& path,
                           double delta_max = kDefaultDeltaMax);
KeypointSet parse_keypoints(const std::string& text,
                            double delta_max = kDefaultDeltaMax);
void write_keypoints(const KeypointSet& k, const std::filesystem::path& path);

// Alignment output `index,t0,t1_pred`; t1 holds the prediction. No drift bound
// is enforced on read.
KeypointSet read_predictions(const std::filesystem::path& path);
void write_predictions(std::span<const double> t0,
                       std::span<const double> t1_pred,
                       const std::filesystem::path& path);

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string pair_id;
  std::filesystem::path wav_path;
  std::filesystem::path keypoints_path;
  Split split = Split::train;
};

struct DatasetManifest {
  std::string dataset_name;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split s) const;
};

// Paths in the file are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
// Paths are written relative to the manifest directory when they live under
// it.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// count x dim, row-major.
struct EmbeddingMatrix {
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  float at(std::uint32_t row, std::uint32_t col) const {
    return values[static_cast<std::size_t>(row) * dim + col];
  }
};

inline constexpr char kEmbeddingMagic[9] = "DRFTEMB1";

EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& m,
                      const std::filesystem::path& path);

struct StereoPair {
  std::string id;
  AudioBuffer ch0;
  AudioBuffer ch1;
  KeypointSet keypoints;
};

StereoPair load_pair(const ManifestEntry& entry,
                     double delta_max = kDefaultDeltaMax);
StereoPair load_pair(const std::filesystem::path& wav,
                     const std::filesystem::path& keypoints,
                     double delta_max = kDefaultDeltaMax);

}  // namespace driftalign
