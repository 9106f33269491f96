#pragma once

#include <utility>

#include "mtfatt/fft.hpp"
#include "mtfatt/ops.hpp"

// Time-frequency front end: forward STFT (plain function, applied to fixed
// audio), inverse STFT built from linear tape ops (the time-domain loss
// backpropagates through it), channel-wise subband packing, and complex
// ratio mask application.
namespace mtfatt {

// T x F x channels complex spectrogram. F = n_fft/2: the Nyquist bin is
// dropped to make F a power of two and reconstructed as zero on synthesis.
template <typename S>
struct ComplexSpectrogram {
  Tensor<S> re, im;
  int sample_rate = 0;
  int n_fft = 0;
  int hop = 0;

  int frames() const { return re.dim(0); }
  int bins() const { return re.dim(1); }
  int channels() const { return re.dim(2); }
};

template <typename S>
std::vector<S> hann_periodic(int n) {
  std::vector<S> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k)
    w[static_cast<size_t>(k)] = static_cast<S>(0.5 - 0.5 * std::cos(2.0 * M_PI * k / n));
  return w;
}

namespace detail {

// Reflection index without edge repetition: ...2,1,[0..n-1],n-2,n-3...
inline int64_t reflect_index(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

inline int stft_pad(int n_fft, int hop) { return (n_fft - hop) / 2; }

inline void check_stft_config(int n_fft, int hop) {
  if (n_fft < 2 || (n_fft & (n_fft - 1)) != 0) fail_dim("stft: n_fft must be a power of two");
  if (hop <= 0 || n_fft % hop != 0) fail_dim("stft: hop must divide n_fft");
  if ((n_fft - hop) % 2 != 0) fail_dim("stft: n_fft - hop must be even");
}

}  // namespace detail

// Windowed STFT of fixed audio [N x ch]. Reflection padding of
// (n_fft - hop)/2 per side makes T = ceil(N/hop); with hop | N, a segment of
// T*hop samples yields exactly T frames. Not differentiable: only constants
// (mixtures, targets) pass through it.
template <typename S>
ComplexSpectrogram<S> stft(const Tensor<S>& audio, int n_fft, int hop, int sample_rate) {
  detail::check_stft_config(n_fft, hop);
  if (audio.ndim() != 2) fail_dim("stft: audio must be N x channels, got " + shape_str(audio.shape()));
  const int64_t n = audio.dim(0);
  const int ch = audio.dim(1);
  if (n < n_fft)
    fail_dim("stft: audio length " + std::to_string(n) + " shorter than one frame of " +
             std::to_string(n_fft));
  const int pad = detail::stft_pad(n_fft, hop);
  const int64_t t_frames = (n + 2 * pad - n_fft) / hop + 1;
  const int f_bins = n_fft / 2;
  const auto w = hann_periodic<S>(n_fft);
  ComplexSpectrogram<S> spec;
  spec.re = Tensor<S>::zeros({static_cast<int>(t_frames), f_bins, ch});
  spec.im = Tensor<S>::zeros({static_cast<int>(t_frames), f_bins, ch});
  spec.sample_rate = sample_rate;
  spec.n_fft = n_fft;
  spec.hop = hop;
  const Fft<S> fft(n_fft);
  const S* pa = audio.data();
  S* pre = spec.re.mutable_data();
  S* pim = spec.im.mutable_data();
  const int64_t jobs = t_frames * ch;
#pragma omp parallel
  {
    std::vector<S> bre(static_cast<size_t>(n_fft)), bim(static_cast<size_t>(n_fft));
#pragma omp for schedule(static)
    for (int64_t job = 0; job < jobs; ++job) {
      const int64_t t = job / ch;
      const int c = static_cast<int>(job % ch);
      for (int k = 0; k < n_fft; ++k) {
        const int64_t src = detail::reflect_index(t * hop - pad + k, n);
        bre[static_cast<size_t>(k)] = pa[src * ch + c] * w[static_cast<size_t>(k)];
        bim[static_cast<size_t>(k)] = S(0);
      }
      fft.forward(bre.data(), bim.data());
      for (int f = 0; f < f_bins; ++f) {
        pre[(t * f_bins + f) * ch + c] = bre[static_cast<size_t>(f)];
        pim[(t * f_bins + f) * ch + c] = bim[static_cast<size_t>(f)];
      }
    }
  }
  return spec;
}

// Inverse real FFT of each frame's half spectrum (Nyquist treated as zero).
// Input re/im are T x F x ch with F = n_fft/2; output frames T x n_fft x ch.
// Linear; the adjoint of a length-n synthesis is a forward FFT of the
// incoming gradient with weights 1/n (DC), 2/n (other bins), 0 (imag DC —
// the real synthesis discards it).
template <typename S>
Tensor<S> irfft_frames(Tape<S>& tape, const Tensor<S>& re, const Tensor<S>& im, int n_fft) {
  check_same_shape(re, im, "irfft_frames");
  if (re.ndim() != 3 || re.dim(1) != n_fft / 2)
    fail_dim("irfft_frames: expected T x " + std::to_string(n_fft / 2) + " x ch, got " +
             shape_str(re.shape()));
  const int64_t t_frames = re.dim(0);
  const int f_bins = re.dim(1);
  const int ch = re.dim(2);
  auto out = Tensor<S>::zeros({static_cast<int>(t_frames), n_fft, ch});
  const Fft<S> fft(n_fft);
  {
    const S* pre = re.data();
    const S* pim = im.data();
    S* po = out.mutable_data();
    const int64_t jobs = t_frames * ch;
#pragma omp parallel
    {
      std::vector<S> bre(static_cast<size_t>(n_fft)), bim(static_cast<size_t>(n_fft));
#pragma omp for schedule(static)
      for (int64_t job = 0; job < jobs; ++job) {
        const int64_t t = job / ch;
        const int c = static_cast<int>(job % ch);
        bre[0] = pre[(t * f_bins) * ch + c];
        bim[0] = S(0);  // imag DC cannot appear in a real signal
        for (int f = 1; f < f_bins; ++f) {
          const S vr = pre[(t * f_bins + f) * ch + c];
          const S vi = pim[(t * f_bins + f) * ch + c];
          bre[static_cast<size_t>(f)] = vr;
          bim[static_cast<size_t>(f)] = vi;
          bre[static_cast<size_t>(n_fft - f)] = vr;
          bim[static_cast<size_t>(n_fft - f)] = -vi;
        }
        bre[static_cast<size_t>(f_bins)] = S(0);  // Nyquist reconstructed as zero
        bim[static_cast<size_t>(f_bins)] = S(0);
        fft.inverse(bre.data(), bim.data());
        for (int k = 0; k < n_fft; ++k) po[(t * n_fft + k) * ch + c] = bre[static_cast<size_t>(k)];
      }
    }
  }
  if (detail::wants_grad(tape, {&re, &im})) {
    out.set_requires_grad(true);
    tape.record([re, im, out, n_fft, t_frames, f_bins, ch]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* dre = re.requires_grad() ? re.grad_accum() : nullptr;
      S* dim = im.requires_grad() ? im.grad_accum() : nullptr;
      const Fft<S> fft2(n_fft);
      const S inv_n = S(1) / S(n_fft);
      const int64_t jobs = t_frames * ch;
#pragma omp parallel
      {
        std::vector<S> bre(static_cast<size_t>(n_fft)), bim(static_cast<size_t>(n_fft));
#pragma omp for schedule(static)
        for (int64_t job = 0; job < jobs; ++job) {
          const int64_t t = job / ch;
          const int c = static_cast<int>(job % ch);
          for (int k = 0; k < n_fft; ++k) {
            bre[static_cast<size_t>(k)] = g[(t * n_fft + k) * ch + c];
            bim[static_cast<size_t>(k)] = S(0);
          }
          fft2.forward(bre.data(), bim.data());
          if (dre) {
            dre[(t * f_bins) * ch + c] += inv_n * bre[0];
            for (int f = 1; f < f_bins; ++f)
              dre[(t * f_bins + f) * ch + c] += S(2) * inv_n * bre[static_cast<size_t>(f)];
          }
          if (dim)
            for (int f = 1; f < f_bins; ++f)
              dim[(t * f_bins + f) * ch + c] += S(2) * inv_n * bim[static_cast<size_t>(f)];
        }
      }
    });
  }
  return out;
}

// Overlap-add of frames [T x n x ch] at the given hop into [len x ch].
// Adjoint is the frame gather: each frame element reads one output cell.
template <typename S>
Tensor<S> overlap_add(Tape<S>& tape, const Tensor<S>& frames, int hop, int64_t len) {
  if (frames.ndim() != 3) fail_dim("overlap_add: frames must be T x n x ch");
  const int64_t t_frames = frames.dim(0);
  const int n = frames.dim(1);
  const int ch = frames.dim(2);
  if (len < (t_frames - 1) * hop + n)
    fail_dim("overlap_add: output length " + std::to_string(len) + " shorter than frame span");
  auto out = Tensor<S>::zeros({static_cast<int>(len), ch});
  {
    const S* pf = frames.data();
    S* po = out.mutable_data();
    // serial over frames: overlapping writes must not race
    for (int64_t t = 0; t < t_frames; ++t)
      for (int k = 0; k < n; ++k) {
        const int64_t dst = t * hop + k;
        for (int c = 0; c < ch; ++c) po[dst * ch + c] += pf[(t * n + k) * ch + c];
      }
  }
  if (detail::wants_grad(tape, {&frames})) {
    out.set_requires_grad(true);
    tape.record([frames, out, t_frames, n, ch, hop]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* df = frames.grad_accum();
      const int64_t jobs = t_frames;
#pragma omp parallel for schedule(static) if (jobs > 8)
      for (int64_t t = 0; t < jobs; ++t)
        for (int k = 0; k < n; ++k) {
          const int64_t src = t * hop + k;
          for (int c = 0; c < ch; ++c) df[(t * n + k) * ch + c] += g[src * ch + c];
        }
    });
  }
  return out;
}

// Inverse STFT: per-frame real synthesis, synthesis window, overlap-add,
// squared-window normalization, crop of the reflection-padding margin.
// Differentiable through the mask path (re/im may carry gradients).
template <typename S>
Tensor<S> istft(Tape<S>& tape, const ComplexSpectrogram<S>& spec, int64_t n_samples) {
  detail::check_stft_config(spec.n_fft, spec.hop);
  const int n_fft = spec.n_fft;
  const int hop = spec.hop;
  const int pad = detail::stft_pad(n_fft, hop);
  const int64_t t_frames = spec.frames();
  const int ch = spec.channels();
  const int64_t total = (t_frames - 1) * hop + n_fft;
  if (pad + n_samples > total)
    fail_dim("istft: " + std::to_string(n_samples) + " samples not covered by " +
             std::to_string(t_frames) + " frames");
  const auto w = hann_periodic<S>(n_fft);
  // synthesis window, tiled over frames and channels
  auto win = Tensor<S>::zeros(Shape{static_cast<int>(t_frames), n_fft, ch});
  {
    S* pw = win.mutable_data();
    for (int64_t t = 0; t < t_frames; ++t)
      for (int k = 0; k < n_fft; ++k)
        for (int c = 0; c < ch; ++c) pw[(t * n_fft + k) * ch + c] = w[static_cast<size_t>(k)];
  }
  // squared-window overlap sum and its reciprocal over the kept range
  std::vector<S> wsum(static_cast<size_t>(total), S(0));
  for (int64_t t = 0; t < t_frames; ++t)
    for (int k = 0; k < n_fft; ++k)
      wsum[static_cast<size_t>(t * hop + k)] += w[static_cast<size_t>(k)] * w[static_cast<size_t>(k)];
  auto inv_wsum = Tensor<S>::zeros(Shape{static_cast<int>(total), ch});
  {
    S* pi = inv_wsum.mutable_data();
    for (int64_t i = 0; i < total; ++i) {
      const bool kept = i >= pad && i < pad + n_samples;
      if (kept && wsum[static_cast<size_t>(i)] < S(1e-8))
        throw std::runtime_error("istft: window overlap sum below 1e-8 at sample " +
                                 std::to_string(i) + "; n_fft/hop configuration cannot reconstruct");
      const S inv = kept ? S(1) / wsum[static_cast<size_t>(i)] : S(0);
      for (int c = 0; c < ch; ++c) pi[i * ch + c] = inv;
    }
  }
  auto frames = irfft_frames(tape, spec.re, spec.im, n_fft);
  auto windowed = mul(tape, frames, win);
  auto added = overlap_add(tape, windowed, hop, total);
  auto normed = mul(tape, added, inv_wsum);
  return slice(tape, normed, 0, pad, static_cast<int>(n_samples));
}

// ---- subband packing ----------------------------------------------------

// T x F x 2 complex planes -> T x F/K x 4K real feature. Frequency axis is
// split into K contiguous bands; each band contributes channels
// (re-L, im-L, re-R, im-R) at band*4 + plane. Pure index permutation.
template <typename S>
Tensor<S> pack_subbands(Tape<S>& tape, const Tensor<S>& re, const Tensor<S>& im, int k_bands) {
  check_same_shape(re, im, "pack_subbands");
  if (re.ndim() != 3 || re.dim(2) != 2)
    fail_dim("pack_subbands: expected T x F x 2, got " + shape_str(re.shape()));
  const int t_frames = re.dim(0);
  const int f_bins = re.dim(1);
  if (k_bands <= 0 || f_bins % k_bands != 0)
    fail_dim("pack_subbands: K=" + std::to_string(k_bands) + " does not divide F=" +
             std::to_string(f_bins));
  const int fk = f_bins / k_bands;
  auto out = Tensor<S>::zeros({t_frames, fk, 4 * k_bands});
  {
    const S* pre = re.data();
    const S* pim = im.data();
    S* po = out.mutable_data();
    for (int t = 0; t < t_frames; ++t)
      for (int band = 0; band < k_bands; ++band)
        for (int f = 0; f < fk; ++f) {
          const int64_t src = (static_cast<int64_t>(t) * f_bins + band * fk + f) * 2;
          S* dst = po + (static_cast<int64_t>(t) * fk + f) * 4 * k_bands + band * 4;
          dst[0] = pre[src + 0];
          dst[1] = pim[src + 0];
          dst[2] = pre[src + 1];
          dst[3] = pim[src + 1];
        }
  }
  if (detail::wants_grad(tape, {&re, &im})) {
    out.set_requires_grad(true);
    tape.record([re, im, out, t_frames, f_bins, fk, k_bands]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* dre = re.requires_grad() ? re.grad_accum() : nullptr;
      S* dim = im.requires_grad() ? im.grad_accum() : nullptr;
      for (int t = 0; t < t_frames; ++t)
        for (int band = 0; band < k_bands; ++band)
          for (int f = 0; f < fk; ++f) {
            const int64_t dst = (static_cast<int64_t>(t) * f_bins + band * fk + f) * 2;
            const S* src = g + (static_cast<int64_t>(t) * fk + f) * 4 * k_bands + band * 4;
            if (dre) {
              dre[dst + 0] += src[0];
              dre[dst + 1] += src[2];
            }
            if (dim) {
              dim[dst + 0] += src[1];
              dim[dst + 1] += src[3];
            }
          }
    });
  }
  return out;
}

// Inverse of pack_subbands: T x F/K x 4K -> complex T x F x 2 planes.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> unpack_mask(Tape<S>& tape, const Tensor<S>& m, int k_bands) {
  if (m.ndim() != 3 || m.dim(2) != 4 * k_bands)
    fail_dim("unpack_mask: expected T x F/K x " + std::to_string(4 * k_bands) + ", got " +
             shape_str(m.shape()));
  const int t_frames = m.dim(0);
  const int fk = m.dim(1);
  const int f_bins = fk * k_bands;
  auto re = Tensor<S>::zeros({t_frames, f_bins, 2});
  auto im = Tensor<S>::zeros({t_frames, f_bins, 2});
  {
    const S* pm = m.data();
    S* pre = re.mutable_data();
    S* pim = im.mutable_data();
    for (int t = 0; t < t_frames; ++t)
      for (int band = 0; band < k_bands; ++band)
        for (int f = 0; f < fk; ++f) {
          const S* src = pm + (static_cast<int64_t>(t) * fk + f) * 4 * k_bands + band * 4;
          const int64_t dst = (static_cast<int64_t>(t) * f_bins + band * fk + f) * 2;
          pre[dst + 0] = src[0];
          pim[dst + 0] = src[1];
          pre[dst + 1] = src[2];
          pim[dst + 1] = src[3];
        }
  }
  if (detail::wants_grad(tape, {&m})) {
    re.set_requires_grad(true);
    im.set_requires_grad(true);
    tape.record([m, re, im, t_frames, f_bins, fk, k_bands]() mutable {
      const bool gr = re.has_grad();
      const bool gi = im.has_grad();
      if (!gr && !gi) return;
      const S* pre = gr ? re.grad().data() : nullptr;
      const S* pim = gi ? im.grad().data() : nullptr;
      S* dm = m.grad_accum();
      for (int t = 0; t < t_frames; ++t)
        for (int band = 0; band < k_bands; ++band)
          for (int f = 0; f < fk; ++f) {
            S* dst = dm + (static_cast<int64_t>(t) * fk + f) * 4 * k_bands + band * 4;
            const int64_t src = (static_cast<int64_t>(t) * f_bins + band * fk + f) * 2;
            if (pre) {
              dst[0] += pre[src + 0];
              dst[2] += pre[src + 1];
            }
            if (pim) {
              dst[1] += pim[src + 0];
              dst[3] += pim[src + 1];
            }
          }
    });
  }
  return {re, im};
}

// Complex ratio mask application: estimate = mask * mixture, elementwise
// complex product per stereo channel. Differentiable through the mask.
template <typename S>
ComplexSpectrogram<S> apply_cirm(Tape<S>& tape, const ComplexSpectrogram<S>& mix,
                                 const Tensor<S>& mask_re, const Tensor<S>& mask_im) {
  check_same_shape(mix.re, mask_re, "apply_cirm");
  check_same_shape(mix.im, mask_im, "apply_cirm");
  ComplexSpectrogram<S> est;
  est.sample_rate = mix.sample_rate;
  est.n_fft = mix.n_fft;
  est.hop = mix.hop;
  est.re = sub(tape, mul(tape, mask_re, mix.re), mul(tape, mask_im, mix.im));
  est.im = add(tape, mul(tape, mask_re, mix.im), mul(tape, mask_im, mix.re));
  return est;
}

}  // namespace mtfatt
