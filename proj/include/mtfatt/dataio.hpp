#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtfatt/training.hpp"
#include "mtfatt/wav.hpp"

// Datasets on disk (song directories of stem WAVs plus a split manifest),
// the synthetic band-separated benchmark, and binary checkpoints.
namespace mtfatt {

template <typename S>
struct StemSet {
  std::string name;
  int sample_rate = 0;
  std::array<Tensor<S>, 4> stems;  // kStemNames order, each [N x 2]

  Tensor<S> mixture() const {
    auto mix = Tensor<S>::zeros(stems[0].shape());
    S* pm = mix.mutable_data();
    for (const auto& s : stems) {
      const S* ps = s.data();
      for (int64_t i = 0; i < numel(mix.shape()); ++i) pm[i] += ps[i];
    }
    return mix;
  }
};

// Interleaved WAV -> [N x 2] tensor, duplicating mono into both channels.
template <typename S>
Tensor<S> wav_to_stereo(const WavData& w) {
  auto out = Tensor<S>::zeros({static_cast<int>(w.frames()), 2});
  S* p = out.mutable_data();
  for (int64_t i = 0; i < w.frames(); ++i) {
    if (w.channels == 1) {
      p[i * 2 + 0] = p[i * 2 + 1] = static_cast<S>(w.samples[static_cast<size_t>(i)]);
    } else {
      p[i * 2 + 0] = static_cast<S>(w.samples[static_cast<size_t>(i * 2 + 0)]);
      p[i * 2 + 1] = static_cast<S>(w.samples[static_cast<size_t>(i * 2 + 1)]);
    }
  }
  return out;
}

// Loads <dir>/{vocals,bass,drums,other}.wav; if mixture.wav exists it is
// checked against the stem sum and a mismatch beyond 1e-3 warns.
template <typename S>
StemSet<S> read_song_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  StemSet<S> song;
  song.name = fs::path(dir).filename().string();
  for (int s = 0; s < 4; ++s) {
    const std::string path = (fs::path(dir) / (std::string(kStemNames[static_cast<size_t>(s)]) + ".wav")).string();
    auto w = read_wav(path);
    if (song.sample_rate == 0) song.sample_rate = w.sample_rate;
    if (w.sample_rate != song.sample_rate)
      throw WavError("song " + dir + ": stem sample rates disagree");
    song.stems[static_cast<size_t>(s)] = wav_to_stereo<S>(w);
    if (song.stems[static_cast<size_t>(s)].dim(0) != song.stems[0].dim(0))
      throw WavError("song " + dir + ": stem lengths disagree");
  }
  const std::string mix_path = (fs::path(dir) / "mixture.wav").string();
  if (fs::exists(mix_path)) {
    auto mix = wav_to_stereo<S>(read_wav(mix_path));
    auto sum = song.mixture();
    double worst = 0;
    const int64_t n = std::min(numel(mix.shape()), numel(sum.shape()));
    for (int64_t i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(static_cast<double>(mix.data()[i] - sum.data()[i])));
    if (mix.dim(0) != sum.dim(0) || worst > 1e-3)
      std::cerr << "song " << dir << ": mixture.wav deviates from stem sum by " << worst
                << "; using the stem sum\n";
  }
  return song;
}

template <typename S>
void write_song_dir(const std::string& dir, const StemSet<S>& song) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto write_one = [&](const std::string& name, const Tensor<S>& t) {
    std::vector<float> inter(static_cast<size_t>(numel(t.shape())));
    for (size_t i = 0; i < inter.size(); ++i) inter[i] = static_cast<float>(t.data()[i]);
    write_wav_float32((fs::path(dir) / (name + ".wav")).string(), inter.data(), t.dim(0), 2,
                      song.sample_rate);
  };
  for (int s = 0; s < 4; ++s)
    write_one(kStemNames[static_cast<size_t>(s)], song.stems[static_cast<size_t>(s)]);
  write_one("mixture", song.mixture());
}

// Manifest: one "<split>\t<song-dir>" line per song, paths relative to the
// manifest's directory unless absolute.
template <typename S>
std::vector<StemSet<S>> load_split(const std::string& manifest_path, const std::string& split) {
  namespace fs = std::filesystem;
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot open manifest " + manifest_path);
  const auto base = fs::path(manifest_path).parent_path();
  std::vector<StemSet<S>> songs;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("manifest " + manifest_path + ":" + std::to_string(lineno) +
                               ": expected <split>\\t<song-dir>");
    if (line.substr(0, tab) != split) continue;
    fs::path dir(line.substr(tab + 1));
    if (dir.is_relative()) dir = base / dir;
    songs.push_back(read_song_dir<S>(dir.string()));
  }
  return songs;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark: four stems in disjoint frequency bands so ideal
// separation is well defined. All content stays inside each band (smooth
// envelopes only), mixtures are exact stem sums, and generation is fully
// determined by the seed.

struct SynthSpec {
  int sample_rate = 8000;
  double duration = 20.0;
  // band edges per stem, kStemNames order
  double lo[4] = {500, 60, 2000, 3100};
  double hi[4] = {1500, 250, 2700, 3700};
};

template <typename S>
StemSet<S> synth_song(Rng& rng, const SynthSpec& spec, const std::string& name) {
  const auto n = static_cast<int64_t>(spec.duration * spec.sample_rate);
  const double dt = 1.0 / spec.sample_rate;
  StemSet<S> song;
  song.name = name;
  song.sample_rate = spec.sample_rate;
  for (auto& t : song.stems) t = Tensor<S>::zeros({static_cast<int>(n), 2});

  auto add_tone = [&](Tensor<S>& stem, double freq, double amp, double pan, double phase,
                      double vib_hz, double vib_dev, double am_hz, double click_hz,
                      double click_sharp) {
    S* p = stem.mutable_data();
    const double al = amp * std::cos(pan), ar = amp * std::sin(pan);
    double ph = phase;
    for (int64_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      const double f = freq + (vib_dev > 0 ? vib_dev * std::sin(2 * M_PI * vib_hz * t) : 0.0);
      ph += 2 * M_PI * f * dt;
      double env = 1.0;
      if (am_hz > 0) env *= 0.6 + 0.4 * std::sin(2 * M_PI * am_hz * t + phase);
      if (click_hz > 0) env *= std::exp(click_sharp * (std::cos(2 * M_PI * click_hz * t) - 1.0));
      const double v = env * std::sin(ph);
      p[i * 2 + 0] += static_cast<S>(al * v);
      p[i * 2 + 1] += static_cast<S>(ar * v);
    }
  };

  auto pick = [&](int stem, double margin) {
    return rng.uniform(spec.lo[stem] + margin, spec.hi[stem] - margin);
  };
  auto pan = [&] { return rng.uniform(0.3, M_PI / 2 - 0.3); };
  auto phase = [&] { return rng.uniform(0.0, 2 * M_PI); };

  // vocals: slow-vibrato tone complexes with gentle AM
  for (int k = 0; k < 3; ++k)
    add_tone(song.stems[0], pick(0, 60), 0.10, pan(), phase(), rng.uniform(3.0, 5.0), 8.0,
             rng.uniform(0.2, 0.5), 0, 0);
  // bass: steady low tones
  for (int k = 0; k < 2; ++k)
    add_tone(song.stems[1], pick(1, 20), 0.15, pan(), phase(), 0, 0, rng.uniform(0.1, 0.3), 0, 0);
  // drums: periodic smooth clicks on in-band carriers
  for (int k = 0; k < 3; ++k)
    add_tone(song.stems[2], pick(2, 80), 0.15, pan(), phase(), 0, 0, 0, rng.uniform(2.0, 3.0),
             5.0);
  // other: dense random sinusoids, i.e. band-limited noise
  for (int k = 0; k < 24; ++k)
    add_tone(song.stems[3], pick(3, 10), 0.02, pan(), phase(), 0, 0, 0, 0, 0);
  return song;
}

template <typename S>
std::vector<StemSet<S>> synth_dataset(int n_songs, const SynthSpec& spec, uint64_t seed) {
  Rng rng(seed);
  std::vector<StemSet<S>> out;
  out.reserve(static_cast<size_t>(n_songs));
  for (int i = 0; i < n_songs; ++i)
    out.push_back(synth_song<S>(rng, spec, "synth" + std::to_string(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints. Layout (all little-endian):
//   "MTFA" | u32 version | u64 config digest | u32 entry count |
//   entries sorted by name: u32 name_len | name | u32 rank | u32 dims[] |
//   f32 values[]
// Parameters and running BN statistics are both stored.

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointFormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointDigestError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};

inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_raw(std::string& s, T v) {
  s.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

template <typename S>
void save_checkpoint(const SeparationModel<S>& model, const std::string& path) {
  std::vector<std::pair<std::string, const Tensor<S>*>> entries;
  for (const auto& [name, t] : model.store.params) entries.emplace_back(name, &t);
  for (const auto& [name, t] : model.store.buffers) entries.emplace_back(name, &t);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string body = "MTFA";
  detail::put_raw(body, kCheckpointVersion);
  detail::put_raw(body, model.config.digest());
  detail::put_raw(body, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::put_raw(body, static_cast<uint32_t>(name.size()));
    body += name;
    detail::put_raw(body, static_cast<uint32_t>(t->ndim()));
    for (int d = 0; d < t->ndim(); ++d) detail::put_raw(body, static_cast<uint32_t>(t->dim(d)));
    for (int64_t i = 0; i < numel(t->shape()); ++i)
      detail::put_raw(body, static_cast<float>(t->data()[i]));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!os) throw CheckpointError("checkpoint: short write to " + path);
}

template <typename S>
void load_checkpoint(SeparationModel<S>& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  size_t pos = 0;
  auto need = [&](size_t n, const char* what) {
    if (pos + n > buf.size())
      throw CheckpointTruncatedError("checkpoint: " + path + " truncated while reading " + what);
  };
  auto rd_u32 = [&](const char* what) {
    need(4, what);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  };

  need(4, "magic");
  if (std::memcmp(buf.data(), "MTFA", 4) != 0)
    throw CheckpointFormatError("checkpoint: " + path + " has wrong magic bytes");
  pos = 4;
  const uint32_t version = rd_u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint: " + path + " has version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  need(8, "config digest");
  uint64_t digest;
  std::memcpy(&digest, buf.data() + pos, 8);
  pos += 8;
  if (digest != model.config.digest())
    throw CheckpointDigestError("checkpoint: " + path +
                                " was written for a different model configuration");
  const uint32_t count = rd_u32("entry count");

  auto find_target = [&](const std::string& name) -> Tensor<S>* {
    auto it = model.store.params.find(name);
    if (it != model.store.params.end()) return &it->second;
    auto bt = model.store.buffers.find(name);
    if (bt != model.store.buffers.end()) return &bt->second;
    return nullptr;
  };

  size_t applied = 0;
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t name_len = rd_u32("entry name length");
    need(name_len, "entry name");
    std::string name(buf.data() + pos, name_len);
    pos += name_len;
    const uint32_t rank = rd_u32("entry rank");
    if (rank > 8) throw CheckpointFormatError("checkpoint: entry '" + name + "' has rank " +
                                              std::to_string(rank));
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(rd_u32("entry dims")));
    const int64_t n = numel(shape);
    need(static_cast<size_t>(n) * 4, ("values of '" + name + "'").c_str());
    Tensor<S>* target = find_target(name);
    if (!target)
      throw CheckpointFormatError("checkpoint: entry '" + name + "' does not exist in the model");
    if (target->shape() != shape)
      throw CheckpointFormatError("checkpoint: entry '" + name + "' has shape " +
                                  shape_str(shape) + ", model expects " +
                                  shape_str(target->shape()));
    S* dst = target->mutable_data();
    for (int64_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, buf.data() + pos + static_cast<size_t>(i) * 4, 4);
      dst[i] = static_cast<S>(v);
    }
    pos += static_cast<size_t>(n) * 4;
    ++applied;
  }
  const size_t expected = model.store.params.size() + model.store.buffers.size();
  if (applied != expected)
    throw CheckpointFormatError("checkpoint: " + path + " holds " + std::to_string(applied) +
                                " entries, model has " + std::to_string(expected));
}

}  // namespace mtfatt
