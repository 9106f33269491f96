#pragma once

#include "mtfatt/kernels.hpp"
#include "mtfatt/tensor.hpp"

// Serial reference implementations. These mirror the parallel kernels with
// the most literal loop nests available and exist for oracle tests and the
// kernel benchmark; nothing in the production path calls them.
namespace mtfatt::ref {

using kernels::ConvGeom;
using std::int64_t;

template <typename S>
void matmul_serial(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      S acc = S(0);
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

template <typename S>
void softmax_serial(const S* a, S* y, int64_t m, int64_t n, S scale) {
  for (int64_t i = 0; i < m; ++i) {
    S mx = a[i * n] / scale;
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, a[i * n + j] / scale);
    S sum = S(0);
    for (int64_t j = 0; j < n; ++j) {
      y[i * n + j] = std::exp(a[i * n + j] / scale - mx);
      sum += y[i * n + j];
    }
    for (int64_t j = 0; j < n; ++j) y[i * n + j] /= sum;
  }
}

// Six nested loops over one example: output position, output channel, taps.
template <typename S>
void conv2d_serial(const S* x, const S* w, const S* b, S* out, const ConvGeom& g) {
  for (int64_t n = 0; n < g.batch; ++n) {
    const S* xn = x + n * g.in_t * g.in_f * g.cin;
    S* on = out + n * g.out_t * g.out_f * g.cout;
    for (int64_t to = 0; to < g.out_t; ++to)
      for (int64_t fo = 0; fo < g.out_f; ++fo)
        for (int64_t co = 0; co < g.cout; ++co) {
          S acc = b ? b[co] : S(0);
          for (int64_t kh = 0; kh < g.kh; ++kh)
            for (int64_t kw = 0; kw < g.kw; ++kw)
              for (int64_t ci = 0; ci < g.cin; ++ci) {
                const int64_t ti = to * g.st - g.pad_t + kh;
                const int64_t fi = fo * g.sf - g.pad_f + kw;
                if (ti < 0 || ti >= g.in_t || fi < 0 || fi >= g.in_f) continue;
                acc += xn[(ti * g.in_f + fi) * g.cin + ci] *
                       w[((kh * g.kw + kw) * g.cin + ci) * g.cout + co];
              }
          on[(to * g.out_f + fo) * g.cout + co] = acc;
        }
  }
}

template <typename S>
void conv2d_dgrad_serial(const S* gout, const S* w, S* dx, const ConvGeom& g) {
  for (int64_t n = 0; n < g.batch; ++n) {
    const S* gn = gout + n * g.out_t * g.out_f * g.cout;
    S* dn = dx + n * g.in_t * g.in_f * g.cin;
    for (int64_t to = 0; to < g.out_t; ++to)
      for (int64_t fo = 0; fo < g.out_f; ++fo)
        for (int64_t co = 0; co < g.cout; ++co) {
          const S gv = gn[(to * g.out_f + fo) * g.cout + co];
          for (int64_t kh = 0; kh < g.kh; ++kh)
            for (int64_t kw = 0; kw < g.kw; ++kw) {
              const int64_t ti = to * g.st - g.pad_t + kh;
              const int64_t fi = fo * g.sf - g.pad_f + kw;
              if (ti < 0 || ti >= g.in_t || fi < 0 || fi >= g.in_f) continue;
              for (int64_t ci = 0; ci < g.cin; ++ci)
                dn[(ti * g.in_f + fi) * g.cin + ci] +=
                    gv * w[((kh * g.kw + kw) * g.cin + ci) * g.cout + co];
            }
        }
  }
}

template <typename S>
void conv2d_wgrad_serial(const S* x, const S* gout, S* dw, const ConvGeom& g) {
  for (int64_t n = 0; n < g.batch; ++n) {
    const S* xn = x + n * g.in_t * g.in_f * g.cin;
    const S* gn = gout + n * g.out_t * g.out_f * g.cout;
    for (int64_t to = 0; to < g.out_t; ++to)
      for (int64_t fo = 0; fo < g.out_f; ++fo)
        for (int64_t kh = 0; kh < g.kh; ++kh)
          for (int64_t kw = 0; kw < g.kw; ++kw) {
            const int64_t ti = to * g.st - g.pad_t + kh;
            const int64_t fi = fo * g.sf - g.pad_f + kw;
            if (ti < 0 || ti >= g.in_t || fi < 0 || fi >= g.in_f) continue;
            for (int64_t ci = 0; ci < g.cin; ++ci)
              for (int64_t co = 0; co < g.cout; ++co)
                dw[((kh * g.kw + kw) * g.cin + ci) * g.cout + co] +=
                    xn[(ti * g.in_f + fi) * g.cin + ci] *
                    gn[(to * g.out_f + fo) * g.cout + co];
          }
  }
}

// ---- naive attention oracle ---------------------------------------------

// Parameters of one Conv2D block in inference mode, copied out of a layer.
template <typename S>
struct ConvBlockRef {
  Tensor<S> w, b, gamma, beta, mean, var;  // mean/var: running statistics
  S eps;
  int act;  // 0 linear, 1 elu, 2 sigmoid, 3 tanh
};

template <typename S>
Tensor<S> conv_block_apply(const Tensor<S>& x, const ConvBlockRef<S>& blk, int st = 1,
                           int sf = 1) {
  const auto g = ConvGeom::same(1, x.dim(0), x.dim(1), x.dim(2), blk.w.dim(0), blk.w.dim(1),
                                blk.w.dim(3), st, sf);
  auto y = Tensor<S>::zeros({static_cast<int>(g.out_t), static_cast<int>(g.out_f),
                             static_cast<int>(g.cout)});
  conv2d_serial(x.data(), blk.w.data(), blk.b.data(), y.mutable_data(), g);
  S* py = y.mutable_data();
  const int64_t positions = g.out_t * g.out_f;
  for (int64_t p = 0; p < positions; ++p)
    for (int64_t c = 0; c < g.cout; ++c) {
      S v = py[p * g.cout + c];
      v = blk.gamma.at(c) * (v - blk.mean.at(c)) / std::sqrt(blk.var.at(c) + blk.eps) +
          blk.beta.at(c);
      switch (blk.act) {
        case 1: v = v >= S(0) ? v : std::exp(v) - S(1); break;
        case 2: v = S(1) / (S(1) + std::exp(-v)); break;
        case 3: v = std::tanh(v); break;
        default: break;
      }
      py[p * g.cout + c] = v;
    }
  return y;
}

// Self-attention over x[T' x F' x C] with the explicit attention matrix,
// inference-mode statistics. axis 0 attends over time (embedding folds
// channel-major over frequency, scale sqrt(C/2*F')); axis 1 attends over
// frequency (embedding folds channel-major over time, scale sqrt(C/2*T')).
template <typename S>
Tensor<S> self_attention_naive(const Tensor<S>& x, const ConvBlockRef<S>& q,
                               const ConvBlockRef<S>& k, const ConvBlockRef<S>& v,
                               const ConvBlockRef<S>& o, int axis) {
  const int t_dim = x.dim(0), f_dim = x.dim(1);
  const int c2 = q.w.dim(3);
  auto qm = conv_block_apply(x, q);
  auto km = conv_block_apply(x, k);
  auto vm = conv_block_apply(x, v);
  const int rows = axis == 0 ? t_dim : f_dim;
  const int other = axis == 0 ? f_dim : t_dim;
  const int64_t d_emb = static_cast<int64_t>(c2) * other;
  const S scale = std::sqrt(static_cast<S>(d_emb));
  auto emb = [&](const Tensor<S>& m, int row, int64_t d) {
    const int c = static_cast<int>(d / other);
    const int j = static_cast<int>(d % other);
    const int t = axis == 0 ? row : j;
    const int f = axis == 0 ? j : row;
    return m.at((static_cast<int64_t>(t) * f_dim + f) * c2 + c);
  };
  std::vector<S> att(static_cast<size_t>(rows) * rows);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < rows; ++j) {
      S acc = S(0);
      for (int64_t d = 0; d < d_emb; ++d) acc += emb(qm, i, d) * emb(km, j, d);
      att[static_cast<size_t>(i) * rows + j] = acc / scale;
    }
    S mx = att[static_cast<size_t>(i) * rows];
    for (int j = 1; j < rows; ++j) mx = std::max(mx, att[static_cast<size_t>(i) * rows + j]);
    S sum = S(0);
    for (int j = 0; j < rows; ++j) {
      S& a = att[static_cast<size_t>(i) * rows + j];
      a = std::exp(a - mx);
      sum += a;
    }
    for (int j = 0; j < rows; ++j) att[static_cast<size_t>(i) * rows + j] /= sum;
  }
  auto sa = Tensor<S>::zeros({t_dim, f_dim, c2});
  {
    S* ps = sa.mutable_data();
    for (int i = 0; i < rows; ++i)
      for (int64_t d = 0; d < d_emb; ++d) {
        S acc = S(0);
        for (int j = 0; j < rows; ++j)
          acc += att[static_cast<size_t>(i) * rows + j] * emb(vm, j, d);
        const int c = static_cast<int>(d / other);
        const int jj = static_cast<int>(d % other);
        const int t = axis == 0 ? i : jj;
        const int f = axis == 0 ? jj : i;
        ps[(static_cast<int64_t>(t) * f_dim + f) * c2 + c] = acc;
      }
  }
  auto y = conv_block_apply(sa, o);
  auto out = Tensor<S>::zeros(x.shape());
  S* po = out.mutable_data();
  const S* px = x.data();
  const S* py = y.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] + py[i];
  return out;
}

}  // namespace mtfatt::ref
