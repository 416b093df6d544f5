#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "uvc/autodiff.hpp"
#include "uvc/error.hpp"
#include "uvc/rng.hpp"

namespace uvc {

// Central finite-difference check of reverse-mode gradients. `f` must rebuild
// the forward graph from the current parameter values on every call; the graph
// therefore sees parameter perturbations made between calls. Returns
// max over sampled coordinates of |analytic - numeric| / max(|a|, |n|, 1e-8).
// Meant to run on double-precision graphs so algorithmic error is not masked
// by float rounding.
template <typename T>
double gradient_check(const std::function<VarT<T>()>& f,
                      std::vector<VarT<T>> params, double h = 1e-3,
                      size_t max_coords_per_param = 24, uint64_t seed = 7) {
  // Params that the loss does not touch keep whatever gradient a previous
  // backward left behind; reset so their analytic gradient reads as zero.
  for (auto& p : params) p.grad() = TensorT<T>::zeros(p.shape());

  VarT<T> loss = f();
  if (loss.numel() != 1) throw_internal("gradient_check: loss must be scalar");
  if (!std::isfinite(static_cast<double>(loss.value().data[0])))
    throw_internal("gradient_check: non-finite loss at probe point");
  backward(loss);

  std::vector<TensorT<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  Rng rng(seed);
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const size_t n = p.numel();
    std::vector<size_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<size_t>(rng.uniform_int(0, static_cast<int>(n) - 1)));
    }
    for (size_t c : coords) {
      const T orig = p.value().data[c];
      p.value().data[c] = orig + static_cast<T>(h);
      const double fp = static_cast<double>(f().value().data[0]);
      p.value().data[c] = orig - static_cast<T>(h);
      const double fm = static_cast<double>(f().value().data[0]);
      p.value().data[c] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw_internal("gradient_check: non-finite loss under perturbation");
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi].data[c]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace uvc
