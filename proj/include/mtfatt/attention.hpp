#pragma once

#include <optional>

#include "mtfatt/layers.hpp"

// Temporal and frequency self-attention, their segment-wise variants, the
// residual attention (RA) block, and the single-/multi-scale separators.
namespace mtfatt {

enum class Variant { NoAtt, TAtt, FAtt, TFAtt, MTFAtt };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::NoAtt: return "noAtt";
    case Variant::TAtt: return "TAtt";
    case Variant::FAtt: return "FAtt";
    case Variant::TFAtt: return "TFAtt";
    default: return "MTFAtt";
  }
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::NoAtt, Variant::TAtt, Variant::FAtt, Variant::TFAtt,
                    Variant::MTFAtt})
    if (s == variant_name(v)) return v;
  fail_dim("unknown separator variant '" + s + "' (valid: noAtt, TAtt, FAtt, TFAtt, MTFAtt)");
}

// Self-test fault injection: multiplies the softmax scale inside every
// attention layer. 1.0 in normal operation (exact no-op).
inline double attention_scale_fudge = 1.0;

// Scaled dot-product self-attention over one axis of a T' x F' x C map.
// Q/K/V come from (1,1) conv blocks with C/2 channels; the attended axis
// stays as rows while channel and the other axis fold channel-major into
// the embedding; the output conv block restores C and the input is added
// back. Axis 0 attends over time, axis 1 over frequency; one layer's
// weights serve either axis, which the transpose-duality test relies on.
template <typename S>
struct SelfAttentionLayer {
  ConvBlock<S> q, k, v, o;

  SelfAttentionLayer() = default;
  SelfAttentionLayer(ParamStore<S>& store, const std::string& prefix, int c,
                     const NormConfig& norm, Rng& rng)
      : q(store, prefix + ".q", 1, 1, c, c / 2, 1, 1, Act::Elu, norm, rng),
        k(store, prefix + ".k", 1, 1, c, c / 2, 1, 1, Act::Elu, norm, rng),
        v(store, prefix + ".v", 1, 1, c, c / 2, 1, 1, Act::Elu, norm, rng),
        o(store, prefix + ".o", 1, 1, c / 2, c, 1, 1, Act::Elu, norm, rng) {
    if (c % 2 != 0) fail_dim("self-attention channel count must be even, got " + std::to_string(c));
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode, int axis) {
    if (x.ndim() == 4) return per_example(tape, x, [&](const Tensor<S>& e) {
      return forward(tape, e, mode, axis);
    });
    if (x.ndim() != 3) fail_dim("self-attention input must be T x F x C, got " + shape_str(x.shape()));
    if (axis != 0 && axis != 1) fail_dim("self-attention axis must be 0 (time) or 1 (frequency)");
    const int rows = x.dim(axis);
    const int other = x.dim(1 - axis);
    const int c2 = q.w.dim(3);
    auto qm = fold(tape, q.forward(tape, x, mode), axis, rows, other, c2);
    auto km = fold(tape, k.forward(tape, x, mode), axis, rows, other, c2);
    auto vm = fold(tape, v.forward(tape, x, mode), axis, rows, other, c2);
    const S scale = static_cast<S>(std::sqrt(static_cast<double>(c2) * other) *
                                   attention_scale_fudge);
    auto att = softmax_rows(tape, matmul(tape, qm, transpose(tape, km, {1, 0})), scale);
    auto sa = unfold(tape, matmul(tape, att, vm), axis, rows, other, c2);
    return add(tape, x, o.forward(tape, sa, mode));
  }

  // The attended axis is cut into P contiguous segments of the *other*
  // spatial axis; attention runs per segment with these same weights and
  // the segments are concatenated back in order.
  Tensor<S> forward_segmented(Tape<S>& tape, const Tensor<S>& x, Mode mode, int axis, int p) {
    if (x.ndim() == 4) return per_example(tape, x, [&](const Tensor<S>& e) {
      return forward_segmented(tape, e, mode, axis, p);
    });
    const int cut = 1 - axis;  // TSA slices frequency, FSA slices time
    const int len = x.dim(cut);
    if (p <= 0 || len % p != 0)
      fail_dim("segment count " + std::to_string(p) + " does not divide axis length " +
               std::to_string(len));
    std::vector<Tensor<S>> parts;
    parts.reserve(static_cast<size_t>(p));
    const int seg = len / p;
    for (int i = 0; i < p; ++i)
      parts.push_back(forward(tape, slice(tape, x, cut, i * seg, seg), mode, axis));
    return concat(tape, parts, cut);
  }

 private:
  template <typename F>
  Tensor<S> per_example(Tape<S>& tape, const Tensor<S>& x, F&& fn) {
    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<size_t>(x.dim(0)));
    for (int bi = 0; bi < x.dim(0); ++bi) {
      auto e = slice(tape, x, 0, bi, 1);
      Shape s(e.shape().begin() + 1, e.shape().end());
      outs.push_back(fn(reshape(tape, e, s)));
    }
    return stack0(tape, outs);
  }

  // T x F x C2 -> rows x (C2 * other), channel-major embedding.
  Tensor<S> fold(Tape<S>& tape, const Tensor<S>& m, int axis, int rows, int other, int c2) {
    auto t = axis == 0 ? transpose(tape, m, {0, 2, 1}) : transpose(tape, m, {1, 2, 0});
    return reshape(tape, t, {rows, c2 * other});
  }

  Tensor<S> unfold(Tape<S>& tape, const Tensor<S>& m, int axis, int rows, int other, int c2) {
    auto t = reshape(tape, m, {rows, c2, other});
    return axis == 0 ? transpose(tape, t, {0, 2, 1}) : transpose(tape, t, {2, 0, 1});
  }
};

// Residual attention block: two residual blocks, then segmented TSA and FSA
// in parallel (as the variant allows), concatenated with the residual
// feature and fused by a (1,1) conv block back to C channels.
template <typename S>
struct RaBlock {
  ResidualBlock<S> res1, res2;
  std::optional<SelfAttentionLayer<S>> att_t, att_f;
  ConvBlock<S> fuse;
  int segments = 1;

  RaBlock() = default;
  RaBlock(ParamStore<S>& store, const std::string& prefix, int c, bool use_t, bool use_f, int p,
          const NormConfig& norm, Rng& rng)
      : res1(store, prefix + ".res1", c, norm, rng),
        res2(store, prefix + ".res2", c, norm, rng),
        segments(p) {
    if (use_t) att_t.emplace(store, prefix + ".tsa", c, norm, rng);
    if (use_f) att_f.emplace(store, prefix + ".fsa", c, norm, rng);
    const int arity = 1 + (use_t ? 1 : 0) + (use_f ? 1 : 0);
    fuse = ConvBlock<S>(store, prefix + ".fuse", 1, 1, arity * c, c, 1, 1, Act::Elu, norm, rng);
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    auto r = res2.forward(tape, res1.forward(tape, x, mode), mode);
    std::vector<Tensor<S>> parts;
    if (att_t) parts.push_back(att_t->forward_segmented(tape, r, mode, 0, segments));
    if (att_f) parts.push_back(att_f->forward_segmented(tape, r, mode, 1, segments));
    parts.push_back(r);
    return fuse.forward(tape, concat(tape, parts, r.ndim() - 1), mode);
  }
};

// Single scale: four RA blocks in sequence with P = 1. Multi scale: two
// parallel chains, one with ascending and one with descending P, joined by
// channel concatenation and a (1,1) conv block.
template <typename S>
struct Separator {
  std::vector<RaBlock<S>> chain_a, chain_b;
  std::optional<ConvBlock<S>> fuse;

  Separator() = default;
  Separator(ParamStore<S>& store, const std::string& prefix, int c, Variant variant,
            const std::vector<int>& p_schedule, const NormConfig& norm, Rng& rng) {
    const bool use_t = variant == Variant::TAtt || variant == Variant::TFAtt ||
                       variant == Variant::MTFAtt;
    const bool use_f = variant == Variant::FAtt || variant == Variant::TFAtt ||
                       variant == Variant::MTFAtt;
    if (variant == Variant::MTFAtt) {
      for (size_t i = 0; i < p_schedule.size(); ++i)
        chain_a.emplace_back(store, prefix + ".a" + std::to_string(i), c, use_t, use_f,
                             p_schedule[i], norm, rng);
      for (size_t i = 0; i < p_schedule.size(); ++i)
        chain_b.emplace_back(store, prefix + ".b" + std::to_string(i), c, use_t, use_f,
                             p_schedule[p_schedule.size() - 1 - i], norm, rng);
      fuse.emplace(store, prefix + ".fuse", 1, 1, 2 * c, c, 1, 1, Act::Elu, norm, rng);
    } else {
      for (int i = 0; i < 4; ++i)
        chain_a.emplace_back(store, prefix + ".a" + std::to_string(i), c, use_t, use_f, 1, norm,
                             rng);
    }
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    auto ya = x;
    for (auto& blk : chain_a) ya = blk.forward(tape, ya, mode);
    if (!fuse) return ya;
    auto yb = x;
    for (auto& blk : chain_b) yb = blk.forward(tape, yb, mode);
    return fuse->forward(tape, concat<S>(tape, {ya, yb}, ya.ndim() - 1), mode);
  }
};

}  // namespace mtfatt
