#include <chrono>
#include <cstdio>

#include "mtfatt/kernels.hpp"
#include "mtfatt/reference.hpp"
#include "mtfatt/threads.hpp"

// Times the OpenMP kernels against their serial reference twins and checks
// that both produce the same numbers.
namespace {

using clock_t_ = std::chrono::steady_clock;

double ms_since(clock_t_::time_point t0) {
  return std::chrono::duration<double, std::milli>(clock_t_::now() - t0).count();
}

std::vector<float> random_vec(mtfatt::Rng& rng, int64_t n, double lo = -1, double hi = 1) {
  std::vector<float> v(static_cast<size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double w = 0;
  for (size_t i = 0; i < a.size(); ++i)
    w = std::max(w, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return w;
}

template <typename F>
double best_of(int reps, F fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock_t_::now();
    fn();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
  std::printf("%-18s serial %8.2f ms   parallel %8.2f ms   speedup %5.2fx   max|diff| %.3g\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
  using namespace mtfatt;
  configure_threads(0);
  std::printf("kernel benchmark, %d thread(s)\n", thread_count());
  Rng rng(99);

  {
    const int m = 256, k = 256, n = 256;
    auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
    std::vector<float> c_par(static_cast<size_t>(m) * n), c_ser(static_cast<size_t>(m) * n);
    const double tp = best_of(5, [&] { kernels::matmul(a.data(), b.data(), c_par.data(), m, k, n); });
    const double ts = best_of(5, [&] { ref::matmul_serial(a.data(), b.data(), c_ser.data(), m, k, n); });
    report("matmul 256^3", ts, tp, max_diff(c_par, c_ser));
  }
  {
    const int rows = 512, cols = 512;
    auto x = random_vec(rng, rows * cols, -4, 4);
    std::vector<float> y_par(x.size()), y_ser(x.size());
    const double tp = best_of(10, [&] { kernels::softmax_rows(x.data(), y_par.data(), rows, cols, 2.0f); });
    const double ts = best_of(10, [&] { ref::softmax_serial(x.data(), y_ser.data(), rows, cols, 2.0f); });
    report("softmax 512x512", ts, tp, max_diff(y_par, y_ser));
  }
  {
    auto g = kernels::ConvGeom::same(1, 64, 64, 32, 3, 3, 32, 1, 1);
    auto x = random_vec(rng, 64 * 64 * 32);
    auto w = random_vec(rng, 3 * 3 * 32 * 32, -0.2, 0.2);
    auto b = random_vec(rng, 32);
    std::vector<float> y_par(static_cast<size_t>(g.out_t) * g.out_f * g.cout);
    std::vector<float> y_ser(y_par.size());
    const double tp = best_of(5, [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), y_par.data(), g); });
    const double ts = best_of(5, [&] { ref::conv2d_serial(x.data(), w.data(), b.data(), y_ser.data(), g); });
    report("conv 64x64x32", ts, tp, max_diff(y_par, y_ser));

    std::vector<float> dx_par(x.size(), 0.0f), dx_ser(x.size(), 0.0f);
    const double tpd = best_of(5, [&] {
      std::fill(dx_par.begin(), dx_par.end(), 0.0f);
      kernels::conv2d_dgrad(y_par.data(), w.data(), dx_par.data(), g);
    });
    const double tsd = best_of(5, [&] {
      std::fill(dx_ser.begin(), dx_ser.end(), 0.0f);
      ref::conv2d_dgrad_serial(y_par.data(), w.data(), dx_ser.data(), g);
    });
    report("conv dgrad", tsd, tpd, max_diff(dx_par, dx_ser));

    std::vector<float> dw_par(w.size(), 0.0f), dw_ser(w.size(), 0.0f);
    const double tpw = best_of(5, [&] {
      std::fill(dw_par.begin(), dw_par.end(), 0.0f);
      kernels::conv2d_wgrad(x.data(), y_par.data(), dw_par.data(), g);
    });
    const double tsw = best_of(5, [&] {
      std::fill(dw_ser.begin(), dw_ser.end(), 0.0f);
      ref::conv2d_wgrad_serial(x.data(), y_par.data(), dw_ser.data(), g);
    });
    report("conv wgrad", tsw, tpw, max_diff(dw_par, dw_ser));
  }
  return 0;
}
