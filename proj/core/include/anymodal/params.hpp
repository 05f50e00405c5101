#pragma once

// Named parameter registry plus Adam. A parameter is trainable iff its tensor
// carries a grad buffer, so freezing a parameter makes ops skip gradient
// accumulation into it entirely. Phase masks are applied with set_trainable.

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "anymodal/tensor.hpp"

namespace am::nn {

template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  bool trainable = true;
};

template <typename T>
class ParamStoreT {
 public:
  ParamT<T>& create(const std::string& name, Shape shape) {
    if (byname_.count(name)) op_error("params", "duplicate parameter name " + name);
    auto p = std::make_unique<ParamT<T>>();
    p->name = name;
    p->value = TensorT<T>::zeros(std::move(shape));
    p->value.ensure_grad();
    ParamT<T>* raw = p.get();
    byname_.emplace(name, raw);
    order_.push_back(std::move(p));
    return *raw;
  }

  bool has(const std::string& name) const { return byname_.count(name) > 0; }

  ParamT<T>* find(const std::string& name) {
    auto it = byname_.find(name);
    return it == byname_.end() ? nullptr : it->second;
  }

  ParamT<T>& get(const std::string& name) {
    ParamT<T>* p = find(name);
    if (!p) op_error("params", "unknown parameter " + name);
    return *p;
  }

  std::vector<ParamT<T>*> all() const {
    std::vector<ParamT<T>*> v;
    v.reserve(order_.size());
    for (const auto& p : order_) v.push_back(p.get());
    return v;
  }

  std::vector<ParamT<T>*> trainable() const {
    std::vector<ParamT<T>*> v;
    for (const auto& p : order_)
      if (p->trainable) v.push_back(p.get());
    return v;
  }

  // Marks parameters trainable per predicate. Frozen parameters drop their
  // grad buffer; newly trainable ones get a zeroed buffer.
  void set_trainable(const std::function<bool(const std::string&)>& pred) {
    for (const auto& p : order_) {
      p->trainable = pred(p->name);
      if (p->trainable) {
        p->value.ensure_grad();
        p->value.zero_grad();
      } else {
        p->value.grad.reset();
      }
    }
  }

  void remove(const std::string& name) {
    auto it = byname_.find(name);
    if (it == byname_.end()) op_error("params", "cannot remove unknown parameter " + name);
    byname_.erase(it);
    for (auto o = order_.begin(); o != order_.end(); ++o)
      if ((*o)->name == name) {
        order_.erase(o);
        break;
      }
  }

  void zero_grads() {
    for (const auto& p : order_)
      if (p->trainable) p->value.zero_grad();
  }

  size_t count() const { return order_.size(); }

  int64_t element_count() const {
    int64_t n = 0;
    for (const auto& p : order_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParamT<T>>> order_;
  std::unordered_map<std::string, ParamT<T>*> byname_;
};

using Param = ParamT<float>;
using ParamStore = ParamStoreT<float>;
using ParamStoreD = ParamStoreT<double>;

class Adam {
 public:
  struct Config {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
  };

  Adam(ParamStore& store, Config cfg) : store_(&store), cfg_(cfg) {}

  // lr_scale multiplies the configured rate (warm-up hooks in here).
  void step(float lr_scale = 1.0f);

  int64_t steps_taken() const { return t_; }

  // Moment buffers as named tensors ("opt/m/<param>", "opt/v/<param>",
  // "opt/step") for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void restore(const std::vector<std::pair<std::string, Tensor>>& state);

  const Config& config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  ParamStore* store_;
  Config cfg_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace am::nn
