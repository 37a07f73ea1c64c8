#include "driftalign/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include "driftalign/error.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace driftalign {

namespace {

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
  }
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

float get_f32(const std::uint8_t* p) {
  return std::bit_cast<float>(get_u32(p));
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

bool tag_is(const std::uint8_t* p, const char* tag) {
  return std::memcmp(p, tag, 4) == 0;
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' ||
                        s.back() == '\t')) {
    s.pop_back();
  }
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

double parse_double_field(const std::string& field, std::size_t line,
                          const char* name) {
  const std::string f = trim(field);
  if (f.empty()) {
    throw FormatError("keypoints line " + std::to_string(line) + ": empty " +
                      name);
  }
  char* end = nullptr;
  const double v = std::strtod(f.c_str(), &end);
  if (end != f.c_str() + f.size() || !std::isfinite(v)) {
    throw FormatError("keypoints line " + std::to_string(line) + ": bad " +
                      name + " '" + f + "'");
  }
  return v;
}

}  // namespace

std::vector<AudioBuffer> read_wav(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string where = path.string();
  if (bytes.size() < 12 || !tag_is(bytes.data(), "RIFF") ||
      !tag_is(bytes.data() + 8, "WAVE")) {
    throw FormatError(where + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = get_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (tag_is(hdr, "fmt ")) {
      if (size < 16 || body + size > bytes.size()) {
        throw FormatError(where + ": truncated fmt chunk");
      }
      format = get_u16(bytes.data() + body);
      channels = get_u16(bytes.data() + body + 2);
      sample_rate = get_u32(bytes.data() + body + 4);
      bits = get_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 26) throw FormatError(where + ": truncated fmt chunk");
        format = get_u16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (tag_is(hdr, "data")) {
      if (body + size > bytes.size()) {
        throw FormatError(where + ": truncated data chunk (" +
                          std::to_string(size) + " bytes declared, " +
                          std::to_string(bytes.size() - body) + " present)");
      }
      data = bytes.data() + body;
      data_size = size;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw FormatError(where + ": missing fmt chunk");
  if (data == nullptr) throw FormatError(where + ": missing data chunk");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError(where + ": unsupported encoding (format tag " +
                      std::to_string(format) + ", " + std::to_string(bits) +
                      " bits)");
  }
  if (channels < 1 || channels > 2) {
    throw FormatError(where + ": unsupported channel count " +
                      std::to_string(channels));
  }
  if (sample_rate == 0) throw FormatError(where + ": zero sample rate");
  const std::size_t frame_bytes = channels * (bits / 8u);
  if (data_size % frame_bytes != 0) {
    throw FormatError(where + ": truncated sample frame");
  }
  const std::size_t frames = data_size / frame_bytes;
  std::vector<std::vector<double>> out(channels,
                                       std::vector<double>(frames));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + f * frame_bytes + c * (bits / 8u);
      out[c][f] = pcm16
                      ? static_cast<std::int16_t>(get_u16(p)) / 32768.0
                      : static_cast<double>(get_f32(p));
    }
  }
  std::vector<AudioBuffer> result;
  for (auto& ch : out) result.emplace_back(std::move(ch), sample_rate);
  return result;
}

void write_wav(const std::vector<AudioBuffer>& channels, const fs::path& path,
               WavEncoding encoding) {
  if (channels.empty() || channels.size() > 2) {
    throw ConfigError("write_wav expects 1 or 2 channels");
  }
  const std::size_t frames = channels[0].size();
  const std::uint32_t rate = channels[0].sample_rate_hz();
  for (const auto& c : channels) {
    if (c.size() != frames) {
      throw ConfigError("channel length mismatch: " +
                        std::to_string(channels[0].size()) + " vs " +
                        std::to_string(c.size()));
    }
    if (c.sample_rate_hz() != rate) {
      throw ConfigError("channel sample rate mismatch");
    }
  }
  const std::uint16_t nch = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t block = nch * (bits / 8u);
  const std::uint32_t data_size = static_cast<std::uint32_t>(frames * block);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, encoding == WavEncoding::pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, nch);
  put_u32(out, rate);
  put_u32(out, rate * block);
  put_u16(out, static_cast<std::uint16_t>(block));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (std::size_t f = 0; f < frames; ++f) {
    for (const auto& c : channels) {
      const double x = c.samples()[f];
      if (encoding == WavEncoding::pcm16) {
        const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        put_f32(out, static_cast<float>(x));
      }
    }
  }
  write_file_bytes(path, out);
}

namespace {

KeypointSet parse_rows(const std::string& text, double delta_max,
                       const std::string& header) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  KeypointSet k;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line == header) continue;
      // Headerless files are accepted when the first row is numeric.
      if (line.find_first_not_of("0123456789") == 0) {
        throw FormatError("keypoints line 1: expected header '" + header +
                          "'");
      }
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() == 2) fields.emplace_back();
    if (fields.size() != 3) {
      throw FormatError("keypoints line " + std::to_string(lineno) +
                        ": expected 3 fields, got " +
                        std::to_string(fields.size()));
    }
    const std::string idx = trim(fields[0]);
    if (idx.empty() ||
        idx.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("keypoints line " + std::to_string(lineno) +
                        ": bad index '" + idx + "'");
    }
    Keypoint kp;
    kp.index = std::stoull(idx);
    kp.t0 = parse_double_field(fields[1], lineno, "t0");
    if (!trim(fields[2]).empty()) {
      kp.t1 = parse_double_field(fields[2], lineno, "t1");
    }
    k.entries.push_back(kp);
  }
  k.canonical_grid = std::all_of(
      k.entries.begin(), k.entries.end(), [](const Keypoint& e) {
        return e.t0 == static_cast<double>(e.index);
      });
  validate_keypoints(k, delta_max);
  return k;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

KeypointSet parse_keypoints(const std::string& text, double delta_max) {
  return parse_rows(text, delta_max, "index,t0,t1");
}

KeypointSet read_predictions(const fs::path& path) {
  try {
    return parse_rows(slurp(path), std::numeric_limits<double>::infinity(),
                      "index,t0,t1_pred");
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_predictions(std::span<const double> t0,
                       std::span<const double> t1_pred,
                       const fs::path& path) {
  if (t0.size() != t1_pred.size()) {
    throw ConfigError("t0 and prediction lengths differ");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "index,t0,t1_pred\n";
  char buf[96];
  for (std::size_t i = 0; i < t0.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", i, t0[i], t1_pred[i]);
    out << buf;
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

KeypointSet read_keypoints(const fs::path& path, double delta_max) {
  const std::string text = slurp(path);
  try {
    return parse_keypoints(text, delta_max);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_keypoints(const KeypointSet& k, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "index,t0,t1\n";
  char buf[96];
  for (const auto& e : k.entries) {
    if (e.t1) {
      std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", e.index, e.t0, *e.t1);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.9f,\n", e.index, e.t0);
    }
    out << buf;
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

std::vector<ManifestEntry> DatasetManifest::select(Split s) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(e);
  }
  return out;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  DatasetManifest m;
  std::set<std::string> seen;
  try {
    m.dataset_name = j.value("dataset_name", std::string{});
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.pair_id = je.at("pair_id").get<std::string>();
      if (!seen.insert(e.pair_id).second) {
        throw FormatError("duplicate pair_id '" + e.pair_id + "'");
      }
      e.wav_path = base / je.at("wav_path").get<std::string>();
      e.keypoints_path = base / je.at("keypoints_path").get<std::string>();
      e.split = split_from_string(je.value("split", std::string{"train"}));
      for (const auto& p : {e.wav_path, e.keypoints_path}) {
        if (!fs::exists(p)) {
          throw FormatError("manifest entry '" + e.pair_id +
                            "' references missing file " + p.string());
        }
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  const fs::path base = path.parent_path().empty() ? fs::path(".")
                                                   : path.parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path r = p.lexically_relative(base);
    if (r.empty() || *r.begin() == "..") return p.generic_string();
    return r.generic_string();
  };
  nlohmann::json j;
  j["dataset_name"] = m.dataset_name;
  j["entries"] = nlohmann::json::array();
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.pair_id).second) {
      throw FormatError("duplicate pair_id '" + e.pair_id + "'");
    }
    j["entries"].push_back({{"pair_id", e.pair_id},
                            {"wav_path", rel(e.wav_path)},
                            {"keypoints_path", rel(e.keypoints_path)},
                            {"split", to_string(e.split)}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

EmbeddingMatrix read_embeddings(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 16) {
    throw FormatError(path.string() + ": size mismatch (file shorter than "
                                      "16-byte header)");
  }
  if (std::memcmp(bytes.data(), kEmbeddingMagic, 8) != 0) {
    throw FormatError(path.string() + ": bad magic");
  }
  EmbeddingMatrix m;
  m.count = get_u32(bytes.data() + 8);
  m.dim = get_u32(bytes.data() + 12);
  if (m.dim == 0) throw FormatError(path.string() + ": dim must be > 0");
  const std::uint64_t expected =
      static_cast<std::uint64_t>(m.count) * m.dim * 4u;
  if (bytes.size() - 16 != expected) {
    throw FormatError(path.string() + ": size mismatch (header " +
                      std::to_string(m.count) + "x" + std::to_string(m.dim) +
                      " needs " + std::to_string(expected) +
                      " payload bytes, found " +
                      std::to_string(bytes.size() - 16) + ")");
  }
  m.values.resize(static_cast<std::size_t>(m.count) * m.dim);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = get_f32(bytes.data() + 16 + 4 * i);
  }
  return m;
}

void write_embeddings(const EmbeddingMatrix& m, const fs::path& path) {
  if (m.dim == 0) throw ConfigError("embedding dim must be > 0");
  if (m.values.size() != static_cast<std::size_t>(m.count) * m.dim) {
    throw ConfigError("embedding payload does not match count x dim");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * m.values.size());
  out.insert(out.end(), kEmbeddingMagic, kEmbeddingMagic + 8);
  put_u32(out, m.count);
  put_u32(out, m.dim);
  for (float v : m.values) put_f32(out, v);
  write_file_bytes(path, out);
}

StereoPair load_pair(const fs::path& wav, const fs::path& keypoints,
                     double delta_max) {
  auto channels = read_wav(wav);
  if (channels.size() != 2) {
    throw FormatError(wav.string() + ": expected a stereo file");
  }
  StereoPair p;
  p.id = wav.stem().string();
  p.ch0 = std::move(channels[0]);
  p.ch1 = std::move(channels[1]);
  p.keypoints = read_keypoints(keypoints, delta_max);
  return p;
}

StereoPair load_pair(const ManifestEntry& entry, double delta_max) {
  StereoPair p = load_pair(entry.wav_path, entry.keypoints_path, delta_max);
  p.id = entry.pair_id;
  return p;
}

}  // namespace driftalign
