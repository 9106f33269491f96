#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mtfatt/common.hpp"

namespace mtfatt {

// Iterative radix-2 complex FFT with precomputed twiddles. Power-of-two sizes
// only; transforms are in place over separate real/imag arrays. forward() is
// unscaled (negative-exponent convention), inverse() scales by 1/n.
template <typename S>
class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    if (n < 2 || (n & (n - 1)) != 0) fail_dim("fft size must be a power of two >= 2");
    log2n_ = 0;
    while ((1 << log2n_) < n) ++log2n_;
    rev_.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < log2n_; ++b) r |= ((i >> b) & 1) << (log2n_ - 1 - b);
      rev_[static_cast<size_t>(i)] = r;
    }
    cos_.resize(static_cast<size_t>(n / 2));
    sin_.resize(static_cast<size_t>(n / 2));
    for (int k = 0; k < n / 2; ++k) {
      const double a = -2.0 * M_PI * k / n;
      cos_[static_cast<size_t>(k)] = static_cast<S>(std::cos(a));
      sin_[static_cast<size_t>(k)] = static_cast<S>(std::sin(a));
    }
  }

  int size() const { return n_; }

  void forward(S* re, S* im) const { transform(re, im, false); }

  void inverse(S* re, S* im) const {
    transform(re, im, true);
    const S inv = S(1) / S(n_);
    for (int i = 0; i < n_; ++i) {
      re[i] *= inv;
      im[i] *= inv;
    }
  }

 private:
  void transform(S* re, S* im, bool conj) const {
    for (int i = 0; i < n_; ++i) {
      const int r = rev_[static_cast<size_t>(i)];
      if (i < r) {
        std::swap(re[i], re[r]);
        std::swap(im[i], im[r]);
      }
    }
    for (int len = 2; len <= n_; len <<= 1) {
      const int half = len / 2;
      const int step = n_ / len;  // twiddle stride into the length-n tables
      for (int base = 0; base < n_; base += len) {
        for (int j = 0; j < half; ++j) {
          const S wr = cos_[static_cast<size_t>(j * step)];
          const S wi = conj ? -sin_[static_cast<size_t>(j * step)]
                            : sin_[static_cast<size_t>(j * step)];
          const int a = base + j;
          const int b = a + half;
          const S tr = re[b] * wr - im[b] * wi;
          const S ti = re[b] * wi + im[b] * wr;
          re[b] = re[a] - tr;
          im[b] = im[a] - ti;
          re[a] += tr;
          im[a] += ti;
        }
      }
    }
  }

  int n_;
  int log2n_ = 0;
  std::vector<int> rev_;
  std::vector<S> cos_, sin_;
};

}  // namespace mtfatt
