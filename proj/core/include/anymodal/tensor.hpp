#pragma once

// Dense row-major tensors plus a reverse-mode tape.
//
// Tensors are cheap value types: shape by value, storage behind a shared_ptr.
// Every op produces a fresh buffer; nothing aliases mutable storage. A tensor
// participates in autodiff iff its grad buffer is non-null. Ops record a
// backward closure on the active tape when (a) a tape is open, (b) recording
// is not suspended, and (c) at least one input carries a grad buffer.

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace am::nn {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Throws std::invalid_argument with "op: message" formatting.
[[noreturn]] void op_error(const std::string& op, const std::string& msg);

template <typename T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // null => constant for autodiff

  TensorT() = default;

  static TensorT zeros(Shape s) {
    TensorT t;
    int64_t n = numel(s);
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T(0));
    return t;
  }

  static TensorT full(Shape s, T v) {
    TensorT t = zeros(std::move(s));
    for (T& x : *t.data) x = v;
    return t;
  }

  static TensorT from(Shape s, std::vector<T> values) {
    if (numel(s) != static_cast<int64_t>(values.size()))
      op_error("tensor", "value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(s));
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static TensorT scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(data); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  int64_t size() const { return defined() ? static_cast<int64_t>(data->size()) : 0; }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T* gptr() { return grad->data(); }
  const T* gptr() const { return grad->data(); }

  bool has_grad() const { return static_cast<bool>(grad); }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  // Detached copy sharing the data buffer but invisible to autodiff.
  TensorT detached() const {
    TensorT t;
    t.shape = shape;
    t.data = data;
    return t;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {
int& nograd_depth();
template <typename T>
void*& active_tape_slot();
}  // namespace detail

// Suspends recording for all tapes while alive. Used for frozen submodules
// and pure inference passes.
class NoGrad {
 public:
  NoGrad() { ++detail::nograd_depth(); }
  ~NoGrad() { --detail::nograd_depth(); }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

// Records backward closures in execution order; reverse execution order is a
// valid reverse-topological order because inputs always predate the ops that
// consume them. backward() may run once per tape and visits each node exactly
// once.
template <typename T>
class TapeT {
 public:
  TapeT() {
    prev_ = static_cast<TapeT*>(detail::active_tape_slot<T>());
    detail::active_tape_slot<T>() = this;
  }
  ~TapeT() { detail::active_tape_slot<T>() = prev_; }
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* active() {
    if (detail::nograd_depth() > 0) return nullptr;
    return static_cast<TapeT*>(detail::active_tape_slot<T>());
  }

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  size_t size() const { return nodes_.size(); }

  void backward(const TensorT<T>& loss) {
    if (consumed_) op_error("backward", "tape already consumed");
    if (loss.size() != 1)
      op_error("backward", "loss must be scalar, got shape " + shape_str(loss.shape));
    if (!loss.has_grad())
      op_error("backward", "loss does not depend on any tracked tensor");
    consumed_ = true;
    (*loss.grad)[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  TapeT* prev_ = nullptr;
  bool consumed_ = false;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

// True when an op invoked now should record a backward closure for inputs
// with grad buffers.
template <typename T>
inline bool recording() {
  return TapeT<T>::active() != nullptr;
}

}  // namespace am::nn
