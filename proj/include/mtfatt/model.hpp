#pragma once

#include <cinttypes>
#include <cstdio>
#include <iostream>

#include "mtfatt/attention.hpp"
#include "mtfatt/signal.hpp"

// Model assembly: configuration, encoder -> separator -> decoder wiring,
// whole-segment forward, and stitched long-audio inference.
namespace mtfatt {

struct ModelConfig {
  int sample_rate = 44100;
  int n_fft = 8192;
  int hop = 1024;
  int k_bands = 4;
  int segment_frames = 240;
  ChannelSchedule ch{32, 64, 64};
  Variant variant = Variant::MTFAtt;
  std::vector<int> p_schedule{1, 2, 4, 8};
  double expansion = 2.0;
  NormConfig norm{};
  uint64_t seed = 1234;

  int bins() const { return n_fft / 2; }
  int sub_bins() const { return bins() / k_bands; }
  int mask_channels() const { return 4 * k_bands; }
  int64_t segment_samples() const { return static_cast<int64_t>(segment_frames) * hop; }
  // post-encoder dims: time halved once, frequency quartered
  int t_prime() const { return (segment_frames + 1) / 2; }
  int f_prime() const { return (sub_bins() + 3) / 4; }

  void validate() const {
    if (n_fft < 8 || (n_fft & (n_fft - 1)) != 0) fail_dim("config: n_fft must be a power of two >= 8");
    if (hop <= 0 || n_fft % hop != 0 || (n_fft - hop) % 2 != 0)
      fail_dim("config: hop must divide n_fft with even n_fft - hop");
    if (sample_rate <= 0) fail_dim("config: sample_rate must be positive");
    if (k_bands <= 0 || bins() % k_bands != 0)
      fail_dim("config: K=" + std::to_string(k_bands) + " must divide F=" + std::to_string(bins()));
    if (segment_frames < 2) fail_dim("config: segment_frames must be >= 2");
    if (sub_bins() < 4) fail_dim("config: F/K must be >= 4");
    if (ch.c1 < 1 || ch.c2 < 1 || ch.c3 < 1) fail_dim("config: channel widths must be positive");
    if (ch.c3 % 2 != 0) fail_dim("config: stage-3 channels must be even for attention");
    if (expansion <= 0) fail_dim("config: mask expansion must be positive");
    if (norm.eps <= 0 || norm.momentum < 0 || norm.momentum >= 1)
      fail_dim("config: invalid batchnorm constants");
    if (variant == Variant::MTFAtt) {
      if (p_schedule.empty()) fail_dim("config: empty segment schedule");
      for (int p : p_schedule)
        if (p <= 0 || t_prime() % p != 0 || f_prime() % p != 0)
          fail_dim("config: P=" + std::to_string(p) + " must divide T'=" +
                   std::to_string(t_prime()) + " and F'=" + std::to_string(f_prime()));
    }
  }

  // Digest over every architecture-shaping field; the training seed is
  // excluded so a checkpoint can reload regardless of how it was
  // initialized.
  uint64_t digest() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "v1|%d|%d|%d|%d|%d|%d,%d,%d|%s|%.17g|%.17g|%.17g|",
                  sample_rate, n_fft, hop, k_bands, segment_frames, ch.c1, ch.c2, ch.c3,
                  variant_name(variant), expansion, norm.eps, norm.momentum);
    std::string s(buf);
    for (int p : p_schedule) s += std::to_string(p) + ",";
    uint64_t h = 1469598103934665603ull;  // FNV-1a 64
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static ModelConfig full_scale() { return ModelConfig{}; }

  static ModelConfig desk_scale() {
    ModelConfig c;
    c.sample_rate = 8000;
    c.n_fft = 512;
    c.hop = 64;
    c.segment_frames = 64;
    c.ch = {8, 16, 16};
    return c;
  }

  // Smallest config that exercises every code path; for unit tests.
  static ModelConfig micro() {
    ModelConfig c;
    c.sample_rate = 4000;
    c.n_fft = 64;
    c.hop = 8;
    c.k_bands = 2;
    c.segment_frames = 16;
    c.ch = {4, 4, 4};
    c.variant = Variant::TFAtt;
    c.p_schedule = {1};
    return c;
  }
};

// Analytic per-stage shape walk, no tensors involved.
struct StageShape {
  std::string name;
  int t, f, c;
};

inline std::vector<StageShape> shape_ledger(const ModelConfig& cfg) {
  auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
  const int t0 = cfg.segment_frames, f0 = cfg.sub_bins(), m = cfg.mask_channels();
  const int t1 = t0, f1 = f0;                            // EB1 stride (1,1)
  const int t2 = ceil_div(t1, 2), f2 = ceil_div(f1, 2);  // EB2 stride (2,2)
  const int t3 = t2, f3 = ceil_div(f2, 2);               // EB3 stride (1,2)
  return {
      {"input", t0, f0, m},
      {"eb1", t1, f1, cfg.ch.c1},
      {"eb2", t2, f2, cfg.ch.c2},
      {"eb3", t3, f3, cfg.ch.c3},
      {"separator", t3, f3, cfg.ch.c3},
      {"db1", t2, f2, cfg.ch.c3},
      {"db2", t1, f1, cfg.ch.c2},
      {"db3", t0, f0, cfg.ch.c1},
      {"mask", t0, f0, m},
  };
}

// Closed-form parameter counts, for the variant-ladder assertion. A conv
// block holds kh*kw*cin*cout weights, cout bias, and 2*cout BN affine.
inline int64_t conv_block_params(int64_t kh, int64_t kw, int64_t cin, int64_t cout) {
  return kh * kw * cin * cout + 3 * cout;
}

inline int64_t separator_param_ledger(const ModelConfig& cfg) {
  const int64_t c = cfg.ch.c3;
  const int64_t res = 2 * conv_block_params(3, 3, c, c);
  const int64_t att = 3 * conv_block_params(1, 1, c, c / 2) + conv_block_params(1, 1, c / 2, c);
  const bool use_t = cfg.variant != Variant::NoAtt && cfg.variant != Variant::FAtt;
  const bool use_f = cfg.variant != Variant::NoAtt && cfg.variant != Variant::TAtt;
  const int64_t arity = 1 + (use_t ? 1 : 0) + (use_f ? 1 : 0);
  const int64_t ra = 2 * res + (use_t ? att : 0) + (use_f ? att : 0) +
                     conv_block_params(1, 1, arity * c, c);
  if (cfg.variant == Variant::MTFAtt)
    return 2 * static_cast<int64_t>(cfg.p_schedule.size()) * ra +
           conv_block_params(1, 1, 2 * c, c);
  return 4 * ra;
}

template <typename S>
struct SeparationModel {
  ModelConfig config;
  ParamStore<S> store;
  Encoder<S> enc;
  Separator<S> sep;
  Decoder<S> dec;

  // encoder -> separator -> decoder on a packed subband feature
  // ([B x] T x F/K x 4K), producing the packed mask of the same shape.
  Tensor<S> mask_packed(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    auto e = enc.forward(tape, x, mode);
    auto s = sep.forward(tape, e.bottleneck, mode);
    return dec.forward(tape, e, s, mode);
  }
};

template <typename S>
SeparationModel<S> build(const ModelConfig& cfg) {
  cfg.validate();
  SeparationModel<S> m;
  m.config = cfg;
  Rng rng(cfg.seed);
  m.enc = Encoder<S>(m.store, "enc", cfg.mask_channels(), cfg.ch, cfg.norm, rng);
  m.sep = Separator<S>(m.store, "sep", cfg.ch.c3, cfg.variant, cfg.p_schedule, cfg.norm, rng);
  m.dec = Decoder<S>(m.store, "dec", cfg.mask_channels(), cfg.ch,
                     static_cast<S>(cfg.expansion), cfg.norm, rng);
  return m;
}

template <typename S>
struct ForwardResult {
  Tensor<S> estimate;               // samples, same length as the input
  ComplexSpectrogram<S> est_spec;   // masked spectrogram (for the loss)
  Tensor<S> mask_re, mask_im;       // unpacked complex mask (diagnostics)
};

// Whole pipeline on one segment of samples [N x 2], N = segment length.
template <typename S>
ForwardResult<S> forward(SeparationModel<S>& model, Tape<S>& tape, const Tensor<S>& mix,
                         Mode mode) {
  const auto& cfg = model.config;
  if (mix.ndim() != 2 || mix.dim(1) != 2 || mix.dim(0) != cfg.segment_samples())
    fail_dim("forward: expected " + std::to_string(cfg.segment_samples()) +
             " x 2 samples, got " + shape_str(mix.shape()));
  auto spec = stft(mix, cfg.n_fft, cfg.hop, cfg.sample_rate);
  auto packed = pack_subbands(tape, spec.re, spec.im, cfg.k_bands);
  auto mask = model.mask_packed(tape, packed, mode);
  auto [mre, mim] = unpack_mask(tape, mask, cfg.k_bands);
  ForwardResult<S> out;
  out.mask_re = mre;
  out.mask_im = mim;
  out.est_spec = apply_cirm(tape, spec, mre, mim);
  out.estimate = istft(tape, out.est_spec, mix.dim(0));
  return out;
}

// Arbitrary-length inference: 50% overlapping segments, trapezoid-weighted
// crossfade normalized by the accumulated weight. A single-segment input
// returns the plain forward output unchanged.
template <typename S>
Tensor<S> separate_long(SeparationModel<S>& model, const Tensor<S>& audio) {
  const int64_t seg = model.config.segment_samples();
  if (audio.ndim() != 2 || audio.dim(1) != 2)
    fail_dim("separate_long: audio must be N x 2, got " + shape_str(audio.shape()));
  const int64_t n = audio.dim(0);
  auto run = [&](const Tensor<S>& piece) {
    auto tape = inference_tape<S>();
    return forward(model, tape, piece, Mode::Infer).estimate;
  };
  if (n < seg) {
    std::cerr << "separate_long: input of " << n << " samples shorter than one segment of "
              << seg << "; zero-padding\n";
    auto padded = Tensor<S>::zeros({static_cast<int>(seg), 2});
    std::copy(audio.data(), audio.data() + n * 2, padded.mutable_data());
    auto est = run(padded);
    auto out = Tensor<S>::zeros({static_cast<int>(n), 2});
    std::copy(est.data(), est.data() + n * 2, out.mutable_data());
    return out;
  }
  std::vector<int64_t> starts;
  for (int64_t s = 0; s + seg < n; s += seg / 2) starts.push_back(s);
  starts.push_back(n - seg);
  if (starts.size() >= 2 && starts[starts.size() - 2] == starts.back()) starts.pop_back();
  if (starts.size() == 1) return run(audio);
  std::vector<S> weight(static_cast<size_t>(seg));
  for (int64_t k = 0; k < seg; ++k)
    weight[static_cast<size_t>(k)] = static_cast<S>(std::min(k + 1, seg - k));
  auto out = Tensor<S>::zeros({static_cast<int>(n), 2});
  std::vector<S> den(static_cast<size_t>(n), S(0));
  S* po = out.mutable_data();
  for (int64_t s : starts) {
    auto piece = Tensor<S>::zeros({static_cast<int>(seg), 2});
    std::copy(audio.data() + s * 2, audio.data() + (s + seg) * 2, piece.mutable_data());
    auto est = run(piece);
    const S* pe = est.data();
    for (int64_t k = 0; k < seg; ++k) {
      const S w = weight[static_cast<size_t>(k)];
      po[(s + k) * 2 + 0] += w * pe[k * 2 + 0];
      po[(s + k) * 2 + 1] += w * pe[k * 2 + 1];
      den[static_cast<size_t>(s + k)] += w;
    }
  }
  for (int64_t i = 0; i < n; ++i) {
    po[i * 2 + 0] /= den[static_cast<size_t>(i)];
    po[i * 2 + 1] /= den[static_cast<size_t>(i)];
  }
  return out;
}

}  // namespace mtfatt
