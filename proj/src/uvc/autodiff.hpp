#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "uvc/rng.hpp"
#include "uvc/tensor.hpp"

namespace uvc {

// Reverse-mode automatic differentiation over TensorT<T>. Graphs are built
// eagerly by the op functions below; backward() walks the graph in reverse
// creation order. T is float for training and double for gradient probes.

template <typename T>
struct NodeT {
  TensorT<T> value;
  TensorT<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT<T>>> parents;
  std::function<void(NodeT<T>&)> backprop;
  uint64_t id = 0;
};

template <typename T>
class VarT {
 public:
  VarT() = default;

  static VarT constant(TensorT<T> value);
  // Trainable leaf; participates in backward().
  static VarT param(TensorT<T> value);

  bool defined() const { return node_ != nullptr; }
  const TensorT<T>& value() const { return node_->value; }
  TensorT<T>& value() { return node_->value; }
  const TensorT<T>& grad() const { return node_->grad; }
  TensorT<T>& grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  size_t numel() const { return node_->value.numel(); }
  const std::vector<int>& shape() const { return node_->value.shape; }

  // Constant leaf sharing no graph history with this var (value copied).
  VarT detached() const { return constant(node_->value); }

  std::shared_ptr<NodeT<T>> node() const { return node_; }
  static VarT from_node(std::shared_ptr<NodeT<T>> n) {
    VarT v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<NodeT<T>> node_;
};

// Runs reverse-mode accumulation from a scalar root. Grads of every node
// reachable from the root are zeroed first, so graphs may be reused.
template <typename T>
void backward(const VarT<T>& root);

// ---- primitives -----------------------------------------------------------

// weights: (Cout, Cin, K, K); bias: (Cout) or undefined for none.
template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias,
               int stride, int padding);

// weights: (Cin, Cout, K, K). out_pad grows the bottom/right edge so a
// stride-2 transposed conv can exactly invert the paired conv's shape.
template <typename T>
VarT<T> conv2d_transpose(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias,
                         int stride, int padding, int out_pad = 0);

// gamma/beta: (C). Running statistics live outside the graph and are updated
// in training mode only.
template <typename T>
VarT<T> batch_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                   TensorT<T>* running_mean, TensorT<T>* running_var,
                   bool training, T momentum, T eps);

template <typename T>
VarT<T> relu(const VarT<T>& x);
template <typename T>
VarT<T> leaky_relu(const VarT<T>& x, T slope);
template <typename T>
VarT<T> sigmoid(const VarT<T>& x);
template <typename T>
VarT<T> tanh_act(const VarT<T>& x);

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b);
template <typename T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b);
template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b);
template <typename T>
VarT<T> scale(const VarT<T>& x, T c);
template <typename T>
VarT<T> add_const(const VarT<T>& x, T c);

// s must be a single-element var; broadcast over all of x.
template <typename T>
VarT<T> mul_scalar(const VarT<T>& x, const VarT<T>& s);
template <typename T>
VarT<T> div_scalar(const VarT<T>& x, const VarT<T>& s);

template <typename T>
VarT<T> abs_val(const VarT<T>& x);
template <typename T>
VarT<T> square(const VarT<T>& x);
template <typename T>
VarT<T> log_val(const VarT<T>& x);
template <typename T>
VarT<T> clamp(const VarT<T>& x, T lo, T hi);

template <typename T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b);
template <typename T>
VarT<T> upsample_nearest(const VarT<T>& x, int factor);
template <typename T>
VarT<T> global_avg_pool(const VarT<T>& x);
template <typename T>
VarT<T> crop(const VarT<T>& x, int y0, int x0, int h, int w);

template <typename T>
VarT<T> dropout(const VarT<T>& x, T p, Rng& rng, bool training);

template <typename T>
VarT<T> sum_all(const VarT<T>& x);
template <typename T>
VarT<T> mean_all(const VarT<T>& x);

// Throws a diagnostic error if any value is NaN/Inf.
template <typename T>
void check_finite(const TensorT<T>& t, const std::string& label);

using Var = VarT<float>;

}  // namespace uvc
