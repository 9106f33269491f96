#pragma once

#include <functional>
#include <memory>
#include <utility>

#include "mtfatt/common.hpp"

namespace mtfatt {

// Dense row-major n-d array. The handle is cheap to copy; the payload is
// shared. Values are written once when the op that produces the tensor runs;
// after that only the grad buffer mutates (during backward), plus explicit
// owner-side updates through mutable_data() (optimizer steps, test harnesses).
template <typename S>
class Tensor {
  struct Data {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), S(0)); }

  static Tensor filled(Shape shape, S value) {
    Tensor t;
    t.d_ = std::make_shared<Data>();
    validate_shape(shape);
    t.d_->values.assign(static_cast<size_t>(numel(shape)), value);
    t.d_->shape = std::move(shape);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    validate_shape(shape);
    if (static_cast<int64_t>(values.size()) != numel(shape))
      fail_dim("tensor data size " + std::to_string(values.size()) +
               " does not match shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor scalar(S value) { return from({1}, {value}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }

  const S* data() const { return d_->values.data(); }
  S* mutable_data() { return d_->values.data(); }
  const std::vector<S>& values() const { return d_->values; }

  S value() const {
    if (size() != 1) fail_dim("scalar access on tensor of shape " + shape_str(shape()));
    return d_->values[0];
  }
  S at(int64_t i) const { return d_->values[static_cast<size_t>(i)]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  // Allocates the grad buffer (zeros) on first use. Const: the gradient is
  // auxiliary state of the shared payload, written through any handle —
  // backward closures hold const copies.
  S* grad_accum() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
    return d_->grad.data();
  }
  const std::vector<S>& grad() const {
    if (!has_grad())
      throw std::runtime_error("gradient not populated for tensor " + shape_str(shape()));
    return d_->grad;
  }
  void zero_grad() { d_->grad.clear(); }

  // Identity of the payload, for aliasing checks in tests.
  const void* id() const { return d_.get(); }

 private:
  static void validate_shape(const Shape& shape) {
    for (int d : shape)
      if (d <= 0) fail_dim("non-positive dimension in shape " + shape_str(shape));
  }

  std::shared_ptr<Data> d_;
};

// Records the backward closure of every differentiable op, in execution
// order. Replaying in reverse visits each node once in reverse topological
// order; per-tensor accumulation is additive, so fan-out sums up naturally.
// A tape belongs to one thread and one forward pass.
template <typename S>
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

  size_t node_count() const { return nodes_.size(); }

  void backward(Tensor<S> loss) {
    if (loss.size() != 1) fail_dim("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (used_) throw std::runtime_error("backward already ran on this tape; reset() first");
    if (!loss.requires_grad())
      throw std::runtime_error("loss is detached from the tape (no gradient path)");
    used_ = true;
    loss.grad_accum()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    used_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool used_ = false;
};

// Convenience for inference paths: a tape that records nothing.
template <typename S>
Tape<S> inference_tape() {
  Tape<S> t;
  t.set_recording(false);
  return t;
}

}  // namespace mtfatt
