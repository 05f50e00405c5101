#include "anymodal/params.hpp"

#include <cmath>
#include <cstring>

namespace am::nn {

void Adam::step(float lr_scale) {
  ++t_;
  double b1t = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  double b2t = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  float lr = cfg_.lr * lr_scale;
  for (Param* p : store_->trainable()) {
    Slot& s = slots_[p->name];
    size_t n = p->value.data->size();
    if (s.m.size() != n) {
      s.m.assign(n, 0.0f);
      s.v.assign(n, 0.0f);
    }
    float* w = p->value.ptr();
    const float* g = p->value.gptr();
    for (size_t i = 0; i < n; ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      float mhat = s.m[i] / static_cast<float>(b1t);
      float vhat = s.v[i] / static_cast<float>(b2t);
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (Param* p : store_->trainable()) {
    auto it = slots_.find(p->name);
    if (it == slots_.end()) continue;
    Shape s = p->value.shape;
    out.emplace_back("opt/m/" + p->name, Tensor::from(s, it->second.m));
    out.emplace_back("opt/v/" + p->name, Tensor::from(s, it->second.v));
  }
  out.emplace_back("opt/step", Tensor::scalar(static_cast<float>(t_)));
  return out;
}

void Adam::restore(const std::vector<std::pair<std::string, Tensor>>& state) {
  for (const auto& [name, tensor] : state) {
    if (name == "opt/step") {
      t_ = static_cast<int64_t>((*tensor.data)[0]);
      continue;
    }
    bool is_m = name.rfind("opt/m/", 0) == 0;
    bool is_v = name.rfind("opt/v/", 0) == 0;
    if (!is_m && !is_v) continue;
    std::string pname = name.substr(6);
    Param* p = store_->find(pname);
    if (!p) op_error("adam", "optimizer state for unknown parameter " + pname);
    Slot& s = slots_[pname];
    size_t n = p->value.data->size();
    if (tensor.data->size() != n)
      op_error("adam", "optimizer state size mismatch for " + pname);
    (is_m ? s.m : s.v) = *tensor.data;
    if (s.m.size() != n) s.m.assign(n, 0.0f);
    if (s.v.size() != n) s.v.assign(n, 0.0f);
  }
}

}  // namespace am::nn
