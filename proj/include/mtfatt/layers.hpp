#pragma once

#include <map>
#include <string>

#include "mtfatt/ops.hpp"

// Composite building blocks: Conv2D block (conv + BN + activation), DenseNet
// block, gated decoder block, and the three-stage encoder/decoder. Layers
// register their tensors in a ParamStore at construction; the store is the
// single source of truth for the optimizer and checkpointing.
namespace mtfatt {

enum class Act { None, Elu, Sigmoid, Tanh };

template <typename S>
struct ParamStore {
  std::map<std::string, Tensor<S>> params;   // trainable
  std::map<std::string, Tensor<S>> buffers;  // BN running statistics

  // Uniform Kaiming-style fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
  // Draw order follows construction order, so equal seeds give equal nets.
  Tensor<S> add_param(const std::string& name, Shape shape, Rng& rng, int64_t fan_in) {
    auto t = Tensor<S>::zeros(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    S* p = t.mutable_data();
    for (int64_t i = 0; i < t.size(); ++i)
      p[i] = static_cast<S>(rng.uniform(-bound, bound));
    insert(params, name, t);
    t.set_requires_grad(true);
    return t;
  }

  Tensor<S> add_const_param(const std::string& name, Shape shape, S value) {
    auto t = Tensor<S>::filled(std::move(shape), value);
    insert(params, name, t);
    t.set_requires_grad(true);
    return t;
  }

  Tensor<S> add_buffer(const std::string& name, Shape shape, S value) {
    auto t = Tensor<S>::filled(std::move(shape), value);
    insert(buffers, name, t);
    return t;
  }

  void zero_grads() {
    for (auto& [name, t] : params) t.zero_grad();
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }

 private:
  static void insert(std::map<std::string, Tensor<S>>& m, const std::string& name,
                     const Tensor<S>& t) {
    if (!m.emplace(name, t).second)
      throw std::logic_error("duplicate parameter name: " + name);
  }
};

// Shared BN constants, threaded through every block.
struct NormConfig {
  double eps = 1e-5;
  double momentum = 0.99;
};

template <typename S>
Tensor<S> apply_act(Tape<S>& tape, const Tensor<S>& x, Act act) {
  switch (act) {
    case Act::Elu: return elu(tape, x);
    case Act::Sigmoid: return sigmoid(tape, x);
    case Act::Tanh: return tanh_act(tape, x);
    default: return x;
  }
}

// Conv2D -> BatchNorm -> activation.
template <typename S>
struct ConvBlock {
  Tensor<S> w, b, gamma, beta, rmean, rvar;
  int st = 1, sf = 1;
  Act act = Act::Elu;
  NormConfig norm;

  ConvBlock() = default;
  ConvBlock(ParamStore<S>& store, const std::string& prefix, int kh, int kw, int cin, int cout,
            int st_, int sf_, Act act_, const NormConfig& norm_, Rng& rng)
      : st(st_), sf(sf_), act(act_), norm(norm_) {
    w = store.add_param(prefix + ".w", {kh, kw, cin, cout}, rng,
                        static_cast<int64_t>(kh) * kw * cin);
    b = store.add_const_param(prefix + ".b", {cout}, S(0));
    gamma = store.add_const_param(prefix + ".gamma", {cout}, S(1));
    beta = store.add_const_param(prefix + ".beta", {cout}, S(0));
    rmean = store.add_buffer(prefix + ".running_mean", {cout}, S(0));
    rvar = store.add_buffer(prefix + ".running_var", {cout}, S(1));
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    auto y = conv2d(tape, x, w, b, st, sf);
    y = batchnorm(tape, y, gamma, beta, rmean, rvar, mode, static_cast<S>(norm.eps),
                  static_cast<S>(norm.momentum));
    return apply_act(tape, y, act);
  }
};

// Plain conv + activation, no BN (the tanh mask head).
template <typename S>
struct Conv2dLayer {
  Tensor<S> w, b;
  Act act = Act::None;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<S>& store, const std::string& prefix, int kh, int kw, int cin, int cout,
              Act act_, Rng& rng)
      : act(act_) {
    w = store.add_param(prefix + ".w", {kh, kw, cin, cout}, rng,
                        static_cast<int64_t>(kh) * kw * cin);
    b = store.add_const_param(prefix + ".b", {cout}, S(0));
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) {
    return apply_act(tape, conv2d(tape, x, w, b, 1, 1), act);
  }
};

template <typename S>
struct ConvTransposeLayer {
  Tensor<S> w, b;  // w: kh x kw x cout x cin
  int st = 1, sf = 1;

  ConvTransposeLayer() = default;
  ConvTransposeLayer(ParamStore<S>& store, const std::string& prefix, int kh, int kw, int cin,
                     int cout, int st_, int sf_, Rng& rng)
      : st(st_), sf(sf_) {
    w = store.add_param(prefix + ".w", {kh, kw, cout, cin}, rng,
                        static_cast<int64_t>(kh) * kw * cin);
    b = store.add_const_param(prefix + ".b", {cout}, S(0));
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, int target_t, int target_f) {
    return conv2d_transpose(tape, x, w, b, st, sf, target_t, target_f);
  }
};

// Four Conv2D blocks; block i sees the concatenation of the input and all
// previous block outputs (growth = output channel count). The block's
// output is the fourth conv block's output.
template <typename S>
struct DenseNetBlock {
  std::vector<ConvBlock<S>> blocks;

  DenseNetBlock() = default;
  DenseNetBlock(ParamStore<S>& store, const std::string& prefix, int cin, int cout,
                const NormConfig& norm, Rng& rng) {
    for (int i = 0; i < 4; ++i)
      blocks.emplace_back(store, prefix + ".b" + std::to_string(i), 3, 3, cin + i * cout, cout,
                          1, 1, Act::Elu, norm, rng);
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    auto cat = x;
    Tensor<S> y;
    for (auto& blk : blocks) {
      y = blk.forward(tape, cat, mode);
      if (&blk != &blocks.back()) cat = concat<S>(tape, {cat, y}, cat.ndim() - 1);
    }
    return y;
  }
};

// Two (3,3) conv blocks with an identity shortcut added after the second
// block's activation.
template <typename S>
struct ResidualBlock {
  ConvBlock<S> cb1, cb2;

  ResidualBlock() = default;
  ResidualBlock(ParamStore<S>& store, const std::string& prefix, int c, const NormConfig& norm,
                Rng& rng)
      : cb1(store, prefix + ".cb1", 3, 3, c, c, 1, 1, Act::Elu, norm, rng),
        cb2(store, prefix + ".cb2", 3, 3, c, c, 1, 1, Act::Elu, norm, rng) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    return add(tape, x, cb2.forward(tape, cb1.forward(tape, x, mode), mode));
  }
};

// Decoder gate: upsample the decoder feature to the skip's spatial shape,
// derive a [0,1] mask from it, scale the skip, concatenate, and fuse with
// the (1,1) conv block down to the stage's channel count.
template <typename S>
struct GatedBlock {
  ConvTransposeLayer<S> up;
  ConvBlock<S> gate1, gate2, fuse;

  GatedBlock() = default;
  GatedBlock(ParamStore<S>& store, const std::string& prefix, int cin, int up_ch, int skip_ch,
             int cout, int st, int sf, const NormConfig& norm, Rng& rng)
      : up(store, prefix + ".up", 3, 3, cin, up_ch, st, sf, rng),
        gate1(store, prefix + ".gate1", 1, 1, up_ch, up_ch, 1, 1, Act::Elu, norm, rng),
        gate2(store, prefix + ".gate2", 1, 1, up_ch, skip_ch, 1, 1, Act::Sigmoid, norm, rng),
        fuse(store, prefix + ".fuse", 1, 1, up_ch + skip_ch, cout, 1, 1, Act::Elu, norm, rng) {}

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& skip, Mode mode) {
    const bool batched = skip.ndim() == 4;
    const int tt = skip.dim(batched ? 1 : 0);
    const int tf = skip.dim(batched ? 2 : 1);
    auto u = up.forward(tape, x, tt, tf);
    auto g = gate2.forward(tape, gate1.forward(tape, u, mode), mode);
    auto gated = mul(tape, skip, g);
    auto cat = concat<S>(tape, {u, gated}, u.ndim() - 1);
    return fuse.forward(tape, cat, mode);
  }
};

// Per-stage channel widths: stage1/2/3 of Table 1 (full scale 32, 64, 64).
struct ChannelSchedule {
  int c1 = 32, c2 = 64, c3 = 64;
};

template <typename S>
struct EncoderOut {
  Tensor<S> input, eb1, eb2, bottleneck;
};

// Three encoder blocks, each a DenseNet block then a Conv2D block; strides
// (1,1), (2,2), (1,2). Skips retain the input and the first two outputs.
template <typename S>
struct Encoder {
  DenseNetBlock<S> d1, d2, d3;
  ConvBlock<S> c1, c2, c3;

  Encoder() = default;
  Encoder(ParamStore<S>& store, const std::string& prefix, int cin, const ChannelSchedule& ch,
          const NormConfig& norm, Rng& rng)
      : d1(store, prefix + ".eb1.dense", cin, ch.c1, norm, rng),
        d2(store, prefix + ".eb2.dense", ch.c1, ch.c2, norm, rng),
        d3(store, prefix + ".eb3.dense", ch.c2, ch.c3, norm, rng) {
    c1 = ConvBlock<S>(store, prefix + ".eb1.conv", 3, 3, ch.c1, ch.c1, 1, 1, Act::Elu, norm, rng);
    c2 = ConvBlock<S>(store, prefix + ".eb2.conv", 3, 3, ch.c2, ch.c2, 2, 2, Act::Elu, norm, rng);
    c3 = ConvBlock<S>(store, prefix + ".eb3.conv", 3, 3, ch.c3, ch.c3, 1, 2, Act::Elu, norm, rng);
  }

  EncoderOut<S> forward(Tape<S>& tape, const Tensor<S>& x, Mode mode) {
    EncoderOut<S> out;
    out.input = x;
    out.eb1 = c1.forward(tape, d1.forward(tape, x, mode), mode);
    out.eb2 = c2.forward(tape, d2.forward(tape, out.eb1, mode), mode);
    out.bottleneck = c3.forward(tape, d3.forward(tape, out.eb2, mode), mode);
    return out;
  }
};

// Three decoder blocks (gated block then DenseNet) mirroring the encoder
// strides in reverse, then the (1,1) conv block to 4K channels and the
// per-position tanh head scaled by the mask expansion factor.
template <typename S>
struct Decoder {
  GatedBlock<S> g1, g2, g3;
  DenseNetBlock<S> d1, d2, d3;
  ConvBlock<S> head_conv;
  Conv2dLayer<S> head_out;
  S expansion = S(2);

  Decoder() = default;
  Decoder(ParamStore<S>& store, const std::string& prefix, int mask_ch,
          const ChannelSchedule& ch, S expansion_, const NormConfig& norm, Rng& rng)
      : g1(store, prefix + ".db1.gate", ch.c3, ch.c3, ch.c2, ch.c3, 1, 2, norm, rng),
        g2(store, prefix + ".db2.gate", ch.c3, ch.c3, ch.c1, ch.c2, 2, 2, norm, rng),
        g3(store, prefix + ".db3.gate", ch.c2, ch.c1, mask_ch, ch.c1, 1, 1, norm, rng),
        d1(store, prefix + ".db1.dense", ch.c3, ch.c3, norm, rng),
        d2(store, prefix + ".db2.dense", ch.c2, ch.c2, norm, rng),
        d3(store, prefix + ".db3.dense", ch.c1, ch.c1, norm, rng),
        expansion(expansion_) {
    head_conv =
        ConvBlock<S>(store, prefix + ".head.conv", 1, 1, ch.c1, mask_ch, 1, 1, Act::Elu, norm, rng);
    head_out = Conv2dLayer<S>(store, prefix + ".head.out", 1, 1, mask_ch, mask_ch, Act::Tanh, rng);
  }

  Tensor<S> forward(Tape<S>& tape, const EncoderOut<S>& enc, const Tensor<S>& sep, Mode mode) {
    auto y = d1.forward(tape, g1.forward(tape, sep, enc.eb2, mode), mode);
    y = d2.forward(tape, g2.forward(tape, y, enc.eb1, mode), mode);
    y = d3.forward(tape, g3.forward(tape, y, enc.input, mode), mode);
    y = head_conv.forward(tape, y, mode);
    y = head_out.forward(tape, y);
    return scale(tape, y, expansion);
  }
};

}  // namespace mtfatt
