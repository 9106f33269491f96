#pragma once

#include <algorithm>
#include <array>

#include "mtfatt/kernels.hpp"
#include "mtfatt/tensor.hpp"

// Differentiable tensor operations. Each op computes its result eagerly and,
// when the tape is recording and an operand wants gradients, pushes one
// backward closure. Closures accumulate (+=) into operand grad buffers, so a
// tensor consumed by several ops collects the sum of its contributions. A
// closure whose output never received a gradient is a no-op.
namespace mtfatt {

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (a.shape() != b.shape())
    fail_dim(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
}

namespace detail {

template <typename S>
inline bool wants_grad(const Tape<S>& tape, std::initializer_list<const Tensor<S>*> ins) {
  if (!tape.recording()) return false;
  for (const auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

}  // namespace detail

// ---- elementwise --------------------------------------------------------

template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "add");
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const int64_t n2 = out.size();
      if (a.requires_grad()) {
        S* da = a.grad_accum();
        for (int64_t i = 0; i < n2; ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        S* db = b.grad_accum();
        for (int64_t i = 0; i < n2; ++i) db[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "sub");
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const int64_t n2 = out.size();
      if (a.requires_grad()) {
        S* da = a.grad_accum();
        for (int64_t i = 0; i < n2; ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        S* db = b.grad_accum();
        for (int64_t i = 0; i < n2; ++i) db[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "mul");
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const int64_t n2 = out.size();
      if (a.requires_grad()) {
        S* da = a.grad_accum();
        const S* pb2 = b.data();
        for (int64_t i = 0; i < n2; ++i) da[i] += g[i] * pb2[i];
      }
      if (b.requires_grad()) {
        S* db = b.grad_accum();
        const S* pa2 = a.data();
        for (int64_t i = 0; i < n2; ++i) db[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& a, S c) {
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out, c]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) da[i] += c * g[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> abs_val(Tape<S>& tape, const Tensor<S>& a) {
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.mutable_data();
  for (int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const S* pa2 = a.data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
      // subgradient 0 at ties
      for (int64_t i = 0; i < n2; ++i)
        da[i] += pa2[i] > S(0) ? g[i] : (pa2[i] < S(0) ? -g[i] : S(0));
    });
  }
  return out;
}

// ---- activations --------------------------------------------------------

template <typename S>
Tensor<S> elu(Tape<S>& tape, const Tensor<S>& a, S alpha = S(1)) {
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i)
    po[i] = pa[i] >= S(0) ? pa[i] : alpha * (std::exp(pa[i]) - S(1));
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out, alpha]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const S* pa2 = a.data();
      const S* py = out.data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i)
        da[i] += g[i] * (pa2[i] >= S(0) ? S(1) : py[i] + alpha);
    });
  }
  return out;
}

template <typename S>
Tensor<S> tanh_act(Tape<S>& tape, const Tensor<S>& a) {
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const S* py = out.data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) da[i] += g[i] * (S(1) - py[i] * py[i]);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(Tape<S>& tape, const Tensor<S>& a) {
  const int64_t n = a.size();
  auto out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) po[i] = S(1) / (S(1) + std::exp(-pa[i]));
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const S* py = out.data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
      for (int64_t i = 0; i < n2; ++i) da[i] += g[i] * py[i] * (S(1) - py[i]);
    });
  }
  return out;
}

// ---- reductions ---------------------------------------------------------

template <typename S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& a) {
  const int64_t n = a.size();
  const S* pa = a.data();
  S acc = S(0);
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  auto out = Tensor<S>::scalar(acc);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S g = out.grad()[0];
      S* da = a.grad_accum();
      const int64_t n2 = a.size();
      for (int64_t i = 0; i < n2; ++i) da[i] += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(Tape<S>& tape, const Tensor<S>& a) {
  const int64_t n = a.size();
  const S* pa = a.data();
  S acc = S(0);
  for (int64_t i = 0; i < n; ++i) acc += pa[i];
  auto out = Tensor<S>::scalar(acc / S(n));
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S g = out.grad()[0] / S(a.size());
      S* da = a.grad_accum();
      const int64_t n2 = a.size();
      for (int64_t i = 0; i < n2; ++i) da[i] += g;
    });
  }
  return out;
}

// ---- structural ---------------------------------------------------------

template <typename S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.size())
    fail_dim("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto out = Tensor<S>::from(std::move(shape), a.values());
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* da = a.grad_accum();
      const int64_t n = a.size();
      for (int64_t i = 0; i < n; ++i) da[i] += g[i];
    });
  }
  return out;
}

// out axis d takes input axis perm[d]; out[i0,..] = in[j] with j[perm[d]] = i_d.
template <typename S>
Tensor<S> transpose(Tape<S>& tape, const Tensor<S>& a, const std::vector<int>& perm) {
  const int nd = a.ndim();
  if (static_cast<int>(perm.size()) != nd) fail_dim("transpose: permutation rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  Shape oshape(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d) {
    const int p = perm[static_cast<size_t>(d)];
    if (p < 0 || p >= nd || seen[static_cast<size_t>(p)]) fail_dim("transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    oshape[static_cast<size_t>(d)] = a.dim(p);
  }
  const auto istrides = detail::row_major_strides(a.shape());
  std::vector<int64_t> map_stride(static_cast<size_t>(nd));
  for (int d = 0; d < nd; ++d)
    map_stride[static_cast<size_t>(d)] = istrides[static_cast<size_t>(perm[static_cast<size_t>(d)])];
  auto out = Tensor<S>::zeros(oshape);
  const auto ostrides = detail::row_major_strides(oshape);
  const int64_t n = a.size();
  const S* pa = a.data();
  S* po = out.mutable_data();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t o = 0; o < n; ++o) {
    int64_t rem = o, src = 0;
    for (int d = 0; d < nd; ++d) {
      const int64_t idx = rem / ostrides[static_cast<size_t>(d)];
      rem -= idx * ostrides[static_cast<size_t>(d)];
      src += idx * map_stride[static_cast<size_t>(d)];
    }
    po[o] = pa[src];
  }
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out, ostrides, map_stride, nd]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* da = a.grad_accum();
      const int64_t n2 = out.size();
#pragma omp parallel for schedule(static) if (n2 > 16384)
      for (int64_t o = 0; o < n2; ++o) {
        int64_t rem = o, src = 0;
        for (int d = 0; d < nd; ++d) {
          const int64_t idx = rem / ostrides[static_cast<size_t>(d)];
          rem -= idx * ostrides[static_cast<size_t>(d)];
          src += idx * map_stride[static_cast<size_t>(d)];
        }
        da[src] += g[o];  // bijection: each source cell written once
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(Tape<S>& tape, const Tensor<S>& a, int axis, int start, int len) {
  const int nd = a.ndim();
  if (axis < 0 || axis >= nd) fail_dim("slice: axis " + std::to_string(axis) + " out of range");
  if (start < 0 || len <= 0 || start + len > a.dim(axis))
    fail_dim("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
             ") exceeds axis size " + std::to_string(a.dim(axis)));
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= a.dim(d);
  const int64_t in_axis = a.dim(axis);
  auto out = Tensor<S>::zeros(oshape);
  const S* pa = a.data();
  S* po = out.mutable_data();
  for (int64_t ou = 0; ou < outer; ++ou)
    std::copy(pa + (ou * in_axis + start) * inner, pa + (ou * in_axis + start + len) * inner,
              po + ou * len * inner);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out, outer, inner, in_axis, start, len]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      S* da = a.grad_accum();
      for (int64_t ou = 0; ou < outer; ++ou) {
        S* dst = da + (ou * in_axis + start) * inner;
        const S* src = g + ou * len * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(Tape<S>& tape, const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) fail_dim("concat: no inputs");
  const int nd = parts[0].ndim();
  if (axis < 0 || axis >= nd) fail_dim("concat: axis " + std::to_string(axis) + " out of range");
  Shape oshape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) fail_dim("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && p.dim(d) != oshape[static_cast<size_t>(d)])
        fail_dim("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                 shape_str(parts[0].shape()) + " on axis " + std::to_string(d));
    axis_total += p.dim(axis);
  }
  oshape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= parts[0].dim(d);
  for (int d = axis + 1; d < nd; ++d) inner *= parts[0].dim(d);
  auto out = Tensor<S>::zeros(oshape);
  S* po = out.mutable_data();
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t alen = p.dim(axis);
    const S* pp = p.data();
    for (int64_t ou = 0; ou < outer; ++ou)
      std::copy(pp + ou * alen * inner, pp + (ou + 1) * alen * inner,
                po + (ou * axis_total + off) * inner);
    off += alen;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    tape.record([parts, out, outer, inner, axis_total, axis]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      int64_t off2 = 0;
      for (auto& p : parts) {
        const int64_t alen = p.dim(axis);
        if (p.requires_grad()) {
          S* da = p.grad_accum();
          for (int64_t ou = 0; ou < outer; ++ou) {
            const S* src = g + (ou * axis_total + off2) * inner;
            S* dst = da + ou * alen * inner;
            for (int64_t i = 0; i < alen * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += alen;
      }
    });
  }
  return out;
}

// Stack equal-shape tensors along a new leading axis.
template <typename S>
Tensor<S> stack0(Tape<S>& tape, const std::vector<Tensor<S>>& parts) {
  std::vector<Tensor<S>> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(tape, p, s));
  }
  return concat(tape, lifted, 0);
}

// ---- matmul / softmax ---------------------------------------------------

template <typename S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    fail_dim("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<S>::zeros({static_cast<int>(m), static_cast<int>(n)});
  kernels::matmul(a.data(), b.data(), out.mutable_data(), m, k, n);
  if (detail::wants_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape.record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      if (a.requires_grad()) kernels::matmul_nt_acc(g, b.data(), a.grad_accum(), m, n, k);
      if (b.requires_grad()) kernels::matmul_tn_acc(a.data(), g, b.grad_accum(), k, m, n);
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax_rows(Tape<S>& tape, const Tensor<S>& a, S scale_div) {
  if (a.ndim() != 2) fail_dim("softmax_rows: expected 2-d input, got " + shape_str(a.shape()));
  if (!(scale_div > S(0))) fail_dim("softmax_rows: scale must be positive");
  const int64_t m = a.dim(0), n = a.dim(1);
  auto out = Tensor<S>::zeros(a.shape());
  kernels::softmax_rows(a.data(), out.mutable_data(), m, n, scale_div);
  if (detail::wants_grad(tape, {&a})) {
    out.set_requires_grad(true);
    tape.record([a, out, m, n, scale_div]() mutable {
      if (!out.has_grad()) return;
      kernels::softmax_rows_grad(out.data(), out.grad().data(), a.grad_accum(), m, n, scale_div);
    });
  }
  return out;
}

// ---- convolution --------------------------------------------------------

namespace detail {

template <typename S>
inline kernels::ConvGeom conv_geom(const Tensor<S>& x, const Tensor<S>& w, int st, int sf,
                                   const char* what) {
  if (x.ndim() != 3 && x.ndim() != 4)
    fail_dim(std::string(what) + ": input must be T x F x C or B x T x F x C, got " +
             shape_str(x.shape()));
  if (w.ndim() != 4) fail_dim(std::string(what) + ": weight must be kh x kw x Cin x Cout");
  const bool batched = x.ndim() == 4;
  const int64_t batch = batched ? x.dim(0) : 1;
  const int64_t in_t = x.dim(batched ? 1 : 0);
  const int64_t in_f = x.dim(batched ? 2 : 1);
  const int64_t cin = x.dim(batched ? 3 : 2);
  if (w.dim(0) % 2 == 0 || w.dim(1) % 2 == 0)
    fail_dim(std::string(what) + ": kernel dims must be odd, got " + shape_str(w.shape()));
  if (w.dim(2) != cin)
    fail_dim(std::string(what) + ": channel mismatch, input " + shape_str(x.shape()) +
             " vs weight " + shape_str(w.shape()));
  if (st <= 0 || sf <= 0) fail_dim(std::string(what) + ": stride must be positive");
  return kernels::ConvGeom::same(batch, in_t, in_f, cin, w.dim(0), w.dim(1), w.dim(3), st, sf);
}

}  // namespace detail

// Cross-correlation with "same" zero padding: out spatial = ceil(in/stride).
template <typename S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int st, int sf) {
  const auto g = detail::conv_geom(x, w, st, sf, "conv2d");
  if (b.ndim() != 1 || b.dim(0) != w.dim(3))
    fail_dim("conv2d: bias shape " + shape_str(b.shape()) + " does not match Cout " +
             std::to_string(w.dim(3)));
  Shape oshape = x.ndim() == 4
                     ? Shape{static_cast<int>(g.batch), static_cast<int>(g.out_t),
                             static_cast<int>(g.out_f), static_cast<int>(g.cout)}
                     : Shape{static_cast<int>(g.out_t), static_cast<int>(g.out_f),
                             static_cast<int>(g.cout)};
  auto out = Tensor<S>::zeros(oshape);
  kernels::conv2d_forward(x.data(), w.data(), b.data(), out.mutable_data(), g);
  if (detail::wants_grad(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape.record([x, w, b, out, g]() mutable {
      if (!out.has_grad()) return;
      const S* go = out.grad().data();
      if (x.requires_grad()) kernels::conv2d_dgrad(go, w.data(), x.grad_accum(), g);
      if (w.requires_grad()) kernels::conv2d_wgrad(x.data(), go, w.grad_accum(), g);
      if (b.requires_grad())
        kernels::conv2d_bgrad(go, b.grad_accum(), g.batch * g.out_t * g.out_f, g.cout);
    });
  }
  return out;
}

// Transposed convolution: the adjoint of a same-padded conv2d that maps the
// target shape to the input shape. Weight layout is kh x kw x Cout x Cin —
// the weight of that implied forward conv — so <conv2d(a;w), y> ==
// <a, conv2d_transpose(y;w)> holds with zero bias.
template <typename S>
Tensor<S> conv2d_transpose(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& b, int st, int sf, int target_t, int target_f) {
  if (x.ndim() != 3 && x.ndim() != 4)
    fail_dim("conv2d_transpose: input must be 3-d or 4-d, got " + shape_str(x.shape()));
  if (w.ndim() != 4) fail_dim("conv2d_transpose: weight must be kh x kw x Cout x Cin");
  const bool batched = x.ndim() == 4;
  const int64_t batch = batched ? x.dim(0) : 1;
  const int64_t in_t = x.dim(batched ? 1 : 0);
  const int64_t in_f = x.dim(batched ? 2 : 1);
  const int64_t cin = x.dim(batched ? 3 : 2);
  const int64_t cout = w.dim(2);
  if (w.dim(3) != cin)
    fail_dim("conv2d_transpose: channel mismatch, input " + shape_str(x.shape()) +
             " vs weight " + shape_str(w.shape()));
  if (b.ndim() != 1 || b.dim(0) != cout)
    fail_dim("conv2d_transpose: bias shape " + shape_str(b.shape()) + " does not match Cout " +
             std::to_string(cout));
  auto g = kernels::ConvGeom::same(batch, target_t, target_f, cout, w.dim(0), w.dim(1),
                                   static_cast<int>(cin), st, sf);
  if (g.out_t != in_t || g.out_f != in_f)
    fail_dim("conv2d_transpose: target (" + std::to_string(target_t) + "," +
             std::to_string(target_f) + ") unreachable from input " + shape_str(x.shape()) +
             " with stride (" + std::to_string(st) + "," + std::to_string(sf) + ")");
  Shape oshape = batched ? Shape{static_cast<int>(batch), target_t, target_f,
                                 static_cast<int>(cout)}
                         : Shape{target_t, target_f, static_cast<int>(cout)};
  auto out = Tensor<S>::zeros(oshape);
  kernels::conv2d_dgrad(x.data(), w.data(), out.mutable_data(), g);
  {
    S* po = out.mutable_data();
    const S* pb = b.data();
    const int64_t positions = batch * target_t * target_f;
#pragma omp parallel for schedule(static) if (positions > 4096)
    for (int64_t p = 0; p < positions; ++p)
      for (int64_t c = 0; c < cout; ++c) po[p * cout + c] += pb[c];
  }
  if (detail::wants_grad(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape.record([x, w, b, out, g, batch, cout]() mutable {
      if (!out.has_grad()) return;
      const S* go = out.grad().data();
      if (x.requires_grad()) {
        // adjoint of the adjoint: a plain forward conv, accumulated
        auto tmp = Tensor<S>::zeros(x.shape());
        kernels::conv2d_forward(go, w.data(), static_cast<const S*>(nullptr), tmp.mutable_data(),
                                g);
        S* dx = x.grad_accum();
        const S* pt = tmp.data();
        const int64_t n = x.size();
        for (int64_t i = 0; i < n; ++i) dx[i] += pt[i];
      }
      if (w.requires_grad()) kernels::conv2d_wgrad(go, x.data(), w.grad_accum(), g);
      if (b.requires_grad())
        kernels::conv2d_bgrad(go, b.grad_accum(), batch * g.in_t * g.in_f, cout);
    });
  }
  return out;
}

// ---- batch normalization ------------------------------------------------

enum class Mode { Train, Infer };

// Channel = last axis; statistics run over every other axis. Train mode also
// folds the batch statistics into the running buffers (in place — the
// buffers are owned state, not tape values).
template <typename S>
Tensor<S> batchnorm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gamma,
                    const Tensor<S>& beta, Tensor<S>& running_mean, Tensor<S>& running_var,
                    Mode mode, S eps, S momentum) {
  const int c = x.dim(x.ndim() - 1);
  const int64_t positions = x.size() / c;
  if (positions <= 0) fail_dim("batchnorm: empty batch");
  for (const Tensor<S>* t : std::initializer_list<const Tensor<S>*>{&gamma, &beta, &running_mean,
                                                                    &running_var})
    if (t->ndim() != 1 || t->dim(0) != c)
      fail_dim("batchnorm: parameter shape " + shape_str(t->shape()) + " does not match channels " +
               std::to_string(c));
  std::vector<S> m(static_cast<size_t>(c)), v(static_cast<size_t>(c));
  if (mode == Mode::Train) {
    kernels::channel_stats(x.data(), positions, c, m.data(), v.data());
    S* rm = running_mean.mutable_data();
    S* rv = running_var.mutable_data();
    for (int ch = 0; ch < c; ++ch) {
      rm[ch] = momentum * rm[ch] + (S(1) - momentum) * m[static_cast<size_t>(ch)];
      rv[ch] = momentum * rv[ch] + (S(1) - momentum) * v[static_cast<size_t>(ch)];
    }
  } else {
    std::copy(running_mean.data(), running_mean.data() + c, m.begin());
    std::copy(running_var.data(), running_var.data() + c, v.begin());
  }
  auto out = Tensor<S>::zeros(x.shape());
  kernels::bn_apply(x.data(), out.mutable_data(), positions, c, m.data(), v.data(), gamma.data(),
                    beta.data(), eps);
  if (detail::wants_grad(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    const bool train = mode == Mode::Train;
    tape.record([x, gamma, beta, out, m, v, positions, c, eps, train]() mutable {
      if (!out.has_grad()) return;
      const S* g = out.grad().data();
      const S* px = x.data();
      const S* pgam = gamma.data();
      S* dx = x.requires_grad() ? x.grad_accum() : nullptr;
      S* dgam = gamma.requires_grad() ? gamma.grad_accum() : nullptr;
      S* dbet = beta.requires_grad() ? beta.grad_accum() : nullptr;
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c; ++ch) {
        const S mu = m[static_cast<size_t>(ch)];
        const S inv = S(1) / std::sqrt(v[static_cast<size_t>(ch)] + eps);
        S sg = S(0), sgx = S(0);
        for (int64_t p = 0; p < positions; ++p) {
          const S gi = g[p * c + ch];
          sg += gi;
          sgx += gi * (px[p * c + ch] - mu) * inv;
        }
        if (dgam) dgam[ch] += sgx;
        if (dbet) dbet[ch] += sg;
        if (dx) {
          const S k = pgam[ch] * inv;
          if (train) {
            const S mg = sg / S(positions);
            const S mgx = sgx / S(positions);
            for (int64_t p = 0; p < positions; ++p) {
              const S xh = (px[p * c + ch] - mu) * inv;
              dx[p * c + ch] += k * (g[p * c + ch] - mg - xh * mgx);
            }
          } else {
            for (int64_t p = 0; p < positions; ++p) dx[p * c + ch] += k * g[p * c + ch];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace mtfatt
