#pragma once

#include "mtfatt/ops.hpp"

// Central-difference gradient checking against the tape's reverse pass.
namespace mtfatt {

struct GradCheckResult {
  double max_abs_err = 0;
  double max_rel_err = 0;
  int coords = 0;

  bool ok(double tol = 1e-3) const { return coords > 0 && max_rel_err < tol; }
};

// `build` assembles a scalar loss from the given leaf tensors on a fresh
// tape. Analytic gradients come from one backward pass; each sampled
// coordinate is then verified by central differences. Leaves must have
// requires_grad set.
template <typename BuildLoss>
GradCheckResult grad_check(std::vector<Tensor<double>> leaves, BuildLoss build, double h = 1e-4,
                           int coords_per_leaf = 25, uint64_t seed = 42) {
  auto eval = [&]() {
    Tape<double> tape;
    Tensor<double> loss = build(tape);
    if (numel(loss.shape()) != 1) fail_dim("grad_check: loss must be scalar");
    return loss.value();
  };

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tensor<double> loss = build(tape);
    tape.backward(loss);
    for (auto& leaf : leaves) {
      const int64_t n = numel(leaf.shape());
      std::vector<double> g(static_cast<size_t>(n), 0.0);
      if (leaf.has_grad()) std::copy(leaf.grad().data(), leaf.grad().data() + n, g.begin());
      analytic.push_back(std::move(g));
      leaf.zero_grad();
    }
  }

  Rng rng(seed);
  GradCheckResult res;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const int64_t n = numel(leaf.shape());
    std::vector<int64_t> picks;
    if (n <= coords_per_leaf) {
      for (int64_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      for (int i = 0; i < coords_per_leaf; ++i)
        picks.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<size_t>(n))));
    }
    double* p = leaf.mutable_data();
    for (int64_t idx : picks) {
      const double keep = p[idx];
      p[idx] = keep + h;
      const double up = eval();
      p[idx] = keep - h;
      const double dn = eval();
      p[idx] = keep;
      const double fd = (up - dn) / (2 * h);
      const double an = analytic[li][static_cast<size_t>(idx)];
      const double abs_err = std::abs(fd - an);
      const double rel = abs_err / std::max({std::abs(fd), std::abs(an), 1e-6});
      res.max_abs_err = std::max(res.max_abs_err, abs_err);
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.coords;
    }
  }
  return res;
}

}  // namespace mtfatt
