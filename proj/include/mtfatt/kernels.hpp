#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "mtfatt/common.hpp"

// Parallel compute kernels. Every loop that carries an OpenMP pragma
// partitions *output* elements: each element is written by exactly one
// thread and its inner reduction runs in a fixed order, so results are
// bit-identical for any thread count. A serial mirror of the interesting
// kernels lives in reference.hpp for oracle tests and the benchmark.
namespace mtfatt::kernels {

using std::int64_t;

// ---- dense matmul -------------------------------------------------------

// C = A[m,k] * B[k,n]
template <typename S>
void matmul(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = S(0);
    for (int64_t p = 0; p < k; ++p) {
      const S av = a[i * k + p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A[m,k] * B[n,k]^T   (i.e. C[i,j] += sum_p A[i,p] B[j,p])
template <typename S>
void matmul_nt_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const S* arow = a + i * k;
      const S* brow = b + j * k;
      S acc = S(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C += A[k,m]^T * B[k,n]   (i.e. C[i,j] += sum_p A[p,i] B[p,j])
template <typename S>
void matmul_tn_acc(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = a[p * m + i];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// ---- softmax ------------------------------------------------------------

// Row-wise softmax of a[m,n]/scale, stabilized by row-max subtraction.
template <typename S>
void softmax_rows(const S* a, S* y, int64_t m, int64_t n, S scale) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const S* row = a + i * n;
    S* out = y + i * n;
    S mx = row[0] / scale;
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j] / scale);
    S sum = S(0);
    for (int64_t j = 0; j < n; ++j) {
      out[j] = std::exp(row[j] / scale - mx);
      sum += out[j];
    }
    const S inv = S(1) / sum;
    for (int64_t j = 0; j < n; ++j) out[j] *= inv;
  }
}

// da += softmax backward: da_j = (1/scale) * y_j * (g_j - sum_k g_k y_k)
template <typename S>
void softmax_rows_grad(const S* y, const S* g, S* da, int64_t m, int64_t n, S scale) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const S* yrow = y + i * n;
    const S* grow = g + i * n;
    S* drow = da + i * n;
    S dot = S(0);
    for (int64_t j = 0; j < n; ++j) dot += grow[j] * yrow[j];
    const S inv = S(1) / scale;
    for (int64_t j = 0; j < n; ++j) drow[j] += inv * yrow[j] * (grow[j] - dot);
  }
}

// ---- 2-d convolution (channels-last) ------------------------------------

struct ConvGeom {
  int64_t batch = 1;
  int64_t in_t = 0, in_f = 0, cin = 0;
  int64_t kh = 0, kw = 0, cout = 0;
  int64_t st = 1, sf = 1;
  int64_t out_t = 0, out_f = 0;
  int64_t pad_t = 0, pad_f = 0;  // leading pad; trailing pad absorbs the remainder

  // "same" geometry: out = ceil(in/stride), zeros split with the extra
  // zero on the trailing side.
  static ConvGeom same(int64_t batch, int64_t in_t, int64_t in_f, int64_t cin, int64_t kh,
                       int64_t kw, int64_t cout, int64_t st, int64_t sf) {
    ConvGeom g;
    g.batch = batch;
    g.in_t = in_t;
    g.in_f = in_f;
    g.cin = cin;
    g.kh = kh;
    g.kw = kw;
    g.cout = cout;
    g.st = st;
    g.sf = sf;
    g.out_t = (in_t + st - 1) / st;
    g.out_f = (in_f + sf - 1) / sf;
    const int64_t tot_t = std::max<int64_t>(0, (g.out_t - 1) * st + kh - in_t);
    const int64_t tot_f = std::max<int64_t>(0, (g.out_f - 1) * sf + kw - in_f);
    g.pad_t = tot_t / 2;
    g.pad_f = tot_f / 2;
    return g;
  }
};

// out[n,to,fo,co] = b[co] + sum_{kh,kw,ci} x[n, to*st-pt+kh, fo*sf-pf+kw, ci] * w[kh,kw,ci,co]
template <typename S>
void conv2d_forward(const S* x, const S* w, const S* b, S* out, const ConvGeom& g) {
  const int64_t rows = g.batch * g.out_t;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / g.out_t;
    const int64_t to = r % g.out_t;
    const S* xn = x + n * g.in_t * g.in_f * g.cin;
    S* orow = out + (r * g.out_f) * g.cout;
    for (int64_t fo = 0; fo < g.out_f; ++fo) {
      S* o = orow + fo * g.cout;
      for (int64_t co = 0; co < g.cout; ++co) o[co] = b ? b[co] : S(0);
      for (int64_t kh = 0; kh < g.kh; ++kh) {
        const int64_t ti = to * g.st - g.pad_t + kh;
        if (ti < 0 || ti >= g.in_t) continue;
        for (int64_t kw = 0; kw < g.kw; ++kw) {
          const int64_t fi = fo * g.sf - g.pad_f + kw;
          if (fi < 0 || fi >= g.in_f) continue;
          const S* xp = xn + (ti * g.in_f + fi) * g.cin;
          const S* wp = w + (kh * g.kw + kw) * g.cin * g.cout;
          for (int64_t ci = 0; ci < g.cin; ++ci) {
            const S xv = xp[ci];
            const S* wrow = wp + ci * g.cout;
            for (int64_t co = 0; co < g.cout; ++co) o[co] += xv * wrow[co];
          }
        }
      }
    }
  }
}

// dx[n,ti,fi,ci] += sum_{kh,kw,co} gout[n,to,fo,co] * w[kh,kw,ci,co]
// where to*st-pt+kh == ti etc. Parallel over input rows: each dx element
// has a single owner.
template <typename S>
void conv2d_dgrad(const S* gout, const S* w, S* dx, const ConvGeom& g) {
  const int64_t rows = g.batch * g.in_t;
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t n = r / g.in_t;
    const int64_t ti = r % g.in_t;
    const S* gn = gout + n * g.out_t * g.out_f * g.cout;
    S* drow = dx + (r * g.in_f) * g.cin;
    for (int64_t fi = 0; fi < g.in_f; ++fi) {
      S* d = drow + fi * g.cin;
      for (int64_t kh = 0; kh < g.kh; ++kh) {
        const int64_t tnum = ti + g.pad_t - kh;
        if (tnum < 0 || tnum % g.st != 0) continue;
        const int64_t to = tnum / g.st;
        if (to >= g.out_t) continue;
        for (int64_t kw = 0; kw < g.kw; ++kw) {
          const int64_t fnum = fi + g.pad_f - kw;
          if (fnum < 0 || fnum % g.sf != 0) continue;
          const int64_t fo = fnum / g.sf;
          if (fo >= g.out_f) continue;
          const S* gp = gn + (to * g.out_f + fo) * g.cout;
          const S* wp = w + (kh * g.kw + kw) * g.cin * g.cout;
          for (int64_t ci = 0; ci < g.cin; ++ci) {
            const S* wrow = wp + ci * g.cout;
            S acc = S(0);
            for (int64_t co = 0; co < g.cout; ++co) acc += gp[co] * wrow[co];
            d[ci] += acc;
          }
        }
      }
    }
  }
}

// dw[kh,kw,ci,co] += sum_{n,to,fo} x[n,ti,fi,ci] * gout[n,to,fo,co]
template <typename S>
void conv2d_wgrad(const S* x, const S* gout, S* dw, const ConvGeom& g) {
  const int64_t taps = g.kh * g.kw * g.cin;
#pragma omp parallel for schedule(static)
  for (int64_t tap = 0; tap < taps; ++tap) {
    const int64_t kh = tap / (g.kw * g.cin);
    const int64_t kw = (tap / g.cin) % g.kw;
    const int64_t ci = tap % g.cin;
    S* drow = dw + tap * g.cout;
    for (int64_t n = 0; n < g.batch; ++n) {
      const S* xn = x + n * g.in_t * g.in_f * g.cin;
      const S* gn = gout + n * g.out_t * g.out_f * g.cout;
      for (int64_t to = 0; to < g.out_t; ++to) {
        const int64_t ti = to * g.st - g.pad_t + kh;
        if (ti < 0 || ti >= g.in_t) continue;
        for (int64_t fo = 0; fo < g.out_f; ++fo) {
          const int64_t fi = fo * g.sf - g.pad_f + kw;
          if (fi < 0 || fi >= g.in_f) continue;
          const S xv = xn[(ti * g.in_f + fi) * g.cin + ci];
          const S* gp = gn + (to * g.out_f + fo) * g.cout;
          for (int64_t co = 0; co < g.cout; ++co) drow[co] += xv * gp[co];
        }
      }
    }
  }
}

// db[co] += sum over all positions of gout
template <typename S>
void conv2d_bgrad(const S* gout, S* db, int64_t positions, int64_t cout) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    S acc = S(0);
    for (int64_t p = 0; p < positions; ++p) acc += gout[p * cout + co];
    db[co] += acc;
  }
}

// ---- batch normalization (channel = last axis) --------------------------

// Per-channel mean and biased variance over the n leading positions.
template <typename S>
void channel_stats(const S* x, int64_t positions, int64_t c, S* mean, S* var) {
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    S m = S(0);
    for (int64_t p = 0; p < positions; ++p) m += x[p * c + ch];
    m /= S(positions);
    S v = S(0);
    for (int64_t p = 0; p < positions; ++p) {
      const S d = x[p * c + ch] - m;
      v += d * d;
    }
    mean[ch] = m;
    var[ch] = v / S(positions);
  }
}

template <typename S>
void bn_apply(const S* x, S* y, int64_t positions, int64_t c, const S* mean, const S* var,
              const S* gamma, const S* beta, S eps) {
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < positions; ++p) {
    const S* xr = x + p * c;
    S* yr = y + p * c;
    for (int64_t ch = 0; ch < c; ++ch) {
      const S inv = S(1) / std::sqrt(var[ch] + eps);
      yr[ch] = gamma[ch] * (xr[ch] - mean[ch]) * inv + beta[ch];
    }
  }
}

}  // namespace mtfatt::kernels
