#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uvc/autodiff.hpp"
#include "uvc/rng.hpp"

namespace uvc {

// Named registry of trainable parameters and non-trainable buffers (batch-norm
// running statistics). Registration order is deterministic and defines the
// checkpoint layout.
template <typename T>
struct ParamSetT {
  std::vector<std::pair<std::string, VarT<T>>> params;
  std::vector<std::pair<std::string, std::shared_ptr<TensorT<T>>>> buffers;

  VarT<T> add(const std::string& name, TensorT<T> init) {
    auto v = VarT<T>::param(std::move(init));
    params.emplace_back(name, v);
    return v;
  }

  std::shared_ptr<TensorT<T>> add_buffer(const std::string& name, TensorT<T> init) {
    auto b = std::make_shared<TensorT<T>>(std::move(init));
    buffers.emplace_back(name, b);
    return b;
  }

  std::vector<VarT<T>> vars() const {
    std::vector<VarT<T>> out;
    out.reserve(params.size());
    for (auto& kv : params) out.push_back(kv.second);
    return out;
  }

  size_t count_scalars() const {
    size_t n = 0;
    for (auto& kv : params) n += kv.second.numel();
    return n;
  }
};

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);

// Hash of all parameter and buffer bytes; used for frozen-module and
// update-isolation checks.
template <typename T>
uint64_t hash_state(const ParamSetT<T>& ps) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& kv : ps.params)
    h = fnv1a64(kv.second.value().data.data(),
                kv.second.value().data.size() * sizeof(T), h);
  for (auto& kv : ps.buffers)
    h = fnv1a64(kv.second->data.data(), kv.second->data.size() * sizeof(T), h);
  return h;
}

template <typename T>
struct Conv2dT {
  VarT<T> w;
  VarT<T> b;
  int stride = 1;
  int pad = 0;

  static Conv2dT make(ParamSetT<T>& ps, const std::string& name, int cin, int cout,
                      int k, int stride, int pad, bool bias, Rng& rng) {
    Conv2dT c;
    c.stride = stride;
    c.pad = pad;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    c.w = ps.add(name + ".w",
                 TensorT<T>::randn({cout, cin, k, k}, rng, static_cast<T>(std_dev)));
    if (bias) c.b = ps.add(name + ".b", TensorT<T>::zeros({cout}));
    return c;
  }

  VarT<T> forward(const VarT<T>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct ConvTranspose2dT {
  VarT<T> w;
  VarT<T> b;
  int stride = 2;
  int pad = 1;

  static ConvTranspose2dT make(ParamSetT<T>& ps, const std::string& name, int cin,
                               int cout, int k, int stride, int pad, bool bias,
                               Rng& rng) {
    ConvTranspose2dT c;
    c.stride = stride;
    c.pad = pad;
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    c.w = ps.add(name + ".w",
                 TensorT<T>::randn({cin, cout, k, k}, rng, static_cast<T>(std_dev)));
    if (bias) c.b = ps.add(name + ".b", TensorT<T>::zeros({cout}));
    return c;
  }

  VarT<T> forward(const VarT<T>& x) const {
    return conv2d_transpose(x, w, b, stride, pad, 0);
  }
};

template <typename T>
struct BatchNorm2dT {
  VarT<T> gamma;
  VarT<T> beta;
  std::shared_ptr<TensorT<T>> running_mean;
  std::shared_ptr<TensorT<T>> running_var;
  T momentum = static_cast<T>(0.1);
  T eps = static_cast<T>(1e-5);

  static BatchNorm2dT make(ParamSetT<T>& ps, const std::string& name, int channels,
                           T gamma_init = T(1)) {
    BatchNorm2dT bn;
    bn.gamma = ps.add(name + ".gamma", TensorT<T>::full({channels}, gamma_init));
    bn.beta = ps.add(name + ".beta", TensorT<T>::zeros({channels}));
    bn.running_mean = ps.add_buffer(name + ".running_mean", TensorT<T>::zeros({channels}));
    bn.running_var = ps.add_buffer(name + ".running_var", TensorT<T>::full({channels}, T(1)));
    return bn;
  }

  VarT<T> forward(const VarT<T>& x, bool training) const {
    return batch_norm(x, gamma, beta, running_mean.get(), running_var.get(),
                      training, momentum, eps);
  }
};

// Adaptive moment estimation. beta1 defaults to the GAN-friendly 0.5.
template <typename T>
class AdamT {
 public:
  AdamT(std::vector<VarT<T>> params, T lr, T beta1 = static_cast<T>(0.5),
        T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = TensorT<T>::zeros(params_[i].shape());
      slots_[i].v = TensorT<T>::zeros(params_[i].shape());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().numel() != p.numel()) continue;  // untouched by last backward
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      for (size_t j = 0; j < p.numel(); ++j) {
        const T g = p.grad().data[j];
        m.data[j] = beta1_ * m.data[j] + (T(1) - beta1_) * g;
        v.data[j] = beta2_ * v.data[j] + (T(1) - beta2_) * g * g;
        const double mhat = static_cast<double>(m.data[j]) / bc1;
        const double vhat = static_cast<double>(v.data[j]) / bc2;
        p.value().data[j] -= static_cast<T>(static_cast<double>(lr_) * mhat /
                                            (std::sqrt(vhat) + static_cast<double>(eps_)));
      }
    }
  }

  void set_lr(T lr) { lr_ = lr; }

 private:
  struct Slot {
    TensorT<T> m, v;
  };
  std::vector<VarT<T>> params_;
  std::vector<Slot> slots_;
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace uvc
