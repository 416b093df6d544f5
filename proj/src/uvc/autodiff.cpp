#include "uvc/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace uvc {

namespace {

uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

template <typename T>
std::shared_ptr<NodeT<T>> make_node(TensorT<T> value,
                                    std::vector<std::shared_ptr<NodeT<T>>> parents,
                                    std::function<void(NodeT<T>&)> bp) {
  auto n = std::make_shared<NodeT<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->backprop = std::move(bp);
  n->id = next_node_id();
  for (auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  return n;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Unrolls one sample's (C,H,W) block into (C*K*K) x (Ho*Wo). Row order
// matches the row-major flattening of a (Cout, Cin, K, K) weight tensor.
template <typename T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad,
            int Ho, int Wo, ColMat<T>& cols) {
  cols.resize(static_cast<Eigen::Index>(C) * K * K, static_cast<Eigen::Index>(Ho) * Wo);
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      T* cptr = cols.data() + (static_cast<size_t>(oy) * Wo + ox) * (C * K * K);
      int r = 0;
      for (int ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < K; ++ky) {
          int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < K; ++kx, ++r) {
            int ix = ox * stride + kx - pad;
            cptr[r] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                          ? x[(static_cast<size_t>(ci) * H + iy) * W + ix]
                          : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the column matrix back into (C,H,W).
template <typename T>
void col2im_add(const ColMat<T>& cols, int C, int H, int W, int K, int stride,
                int pad, int Ho, int Wo, T* out) {
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      const T* cptr = cols.data() + (static_cast<size_t>(oy) * Wo + ox) * (C * K * K);
      int r = 0;
      for (int ci = 0; ci < C; ++ci) {
        for (int ky = 0; ky < K; ++ky) {
          int iy = oy * stride + ky - pad;
          for (int kx = 0; kx < K; ++kx, ++r) {
            int ix = ox * stride + kx - pad;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W)
              out[(static_cast<size_t>(ci) * H + iy) * W + ix] += cptr[r];
          }
        }
      }
    }
  }
}

template <typename T>
void require_4d(const TensorT<T>& t, const char* op) {
  if (t.ndim() != 4) throw_data(std::string(op) + ": expected 4-d tensor, got " + t.shape_str());
}

}  // namespace

template <typename T>
VarT<T> VarT<T>::constant(TensorT<T> value) {
  return from_node(make_node<T>(std::move(value), {}, nullptr));
}

template <typename T>
VarT<T> VarT<T>::param(TensorT<T> value) {
  auto n = make_node<T>(std::move(value), {}, nullptr);
  n->requires_grad = true;
  return from_node(std::move(n));
}

template <typename T>
void backward(const VarT<T>& root) {
  if (root.numel() != 1) throw_internal("backward: root must be a scalar");
  auto root_node = root.node();
  if (!root_node->requires_grad) return;

  std::vector<NodeT<T>*> nodes;
  std::unordered_set<NodeT<T>*> seen;
  std::vector<NodeT<T>*> stack{root_node.get()};
  seen.insert(root_node.get());
  while (!stack.empty()) {
    NodeT<T>* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  for (NodeT<T>* n : nodes) n->grad = TensorT<T>::zeros(n->value.shape);
  std::sort(nodes.begin(), nodes.end(),
            [](const NodeT<T>* a, const NodeT<T>* b) { return a->id > b->id; });
  root_node->grad.data[0] = T(1);
  for (NodeT<T>* n : nodes)
    if (n->backprop) n->backprop(*n);
}

// ---- convolution ------------------------------------------------------------

template <typename T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias,
               int stride, int padding) {
  require_4d(x.value(), "conv2d input");
  require_4d(w.value(), "conv2d weights");
  const auto& xs = x.value().shape;
  const auto& ws = w.value().shape;
  const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[0], K = ws[2];
  if (ws[1] != Cin)
    throw_data("conv2d: input channels " + x.value().shape_str() +
               " do not match weights " + w.value().shape_str());
  if (ws[2] != ws[3]) throw_data("conv2d: only square kernels supported");
  if (H + 2 * padding < K || W + 2 * padding < K)
    throw_data("conv2d: kernel larger than padded input");
  const int Ho = (H + 2 * padding - K) / stride + 1;
  const int Wo = (W + 2 * padding - K) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.value().ndim() != 1 || bias.value().shape[0] != Cout))
    throw_data("conv2d: bias shape must be (Cout)");

  TensorT<T> out({B, Cout, Ho, Wo});
  {
    Eigen::Map<const RowMat<T>> Wm(w.value().data.data(), Cout, Cin * K * K);
    ColMat<T> cols;
    for (int b = 0; b < B; ++b) {
      im2col(x.value().data.data() + static_cast<size_t>(b) * Cin * H * W, Cin, H,
             W, K, stride, padding, Ho, Wo, cols);
      Eigen::Map<RowMat<T>> Om(out.data.data() + static_cast<size_t>(b) * Cout * Ho * Wo,
                               Cout, Ho * Wo);
      Om.noalias() = Wm * cols;
    }
    if (has_bias) {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < Cout; ++c) {
          T bv = bias.value().data[c];
          T* p = out.data.data() + ((static_cast<size_t>(b) * Cout + c) * Ho) * Wo;
          for (int i = 0; i < Ho * Wo; ++i) p[i] += bv;
        }
    }
  }

  std::vector<std::shared_ptr<NodeT<T>>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  auto bp = [B, Cin, H, W, Cout, K, stride, padding, Ho, Wo, has_bias](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    auto& wn = *n.parents[1];
    Eigen::Map<const RowMat<T>> Wm(wn.value.data.data(), Cout, Cin * K * K);
    ColMat<T> cols, dcols;
    for (int b = 0; b < B; ++b) {
      Eigen::Map<const RowMat<T>> Gm(
          n.grad.data.data() + static_cast<size_t>(b) * Cout * Ho * Wo, Cout, Ho * Wo);
      if (xn.requires_grad) {
        dcols.noalias() = Wm.transpose() * Gm;
        col2im_add(dcols, Cin, H, W, K, stride, padding, Ho, Wo,
                   xn.grad.data.data() + static_cast<size_t>(b) * Cin * H * W);
      }
      if (wn.requires_grad) {
        im2col(xn.value.data.data() + static_cast<size_t>(b) * Cin * H * W, Cin, H,
               W, K, stride, padding, Ho, Wo, cols);
        Eigen::Map<RowMat<T>> dWm(wn.grad.data.data(), Cout, Cin * K * K);
        dWm.noalias() += Gm * cols.transpose();
      }
      if (has_bias && n.parents[2]->requires_grad) {
        auto& bn = *n.parents[2];
        for (int c = 0; c < Cout; ++c) {
          const T* p = n.grad.data.data() + ((static_cast<size_t>(b) * Cout + c) * Ho) * Wo;
          double s = 0.0;
          for (int i = 0; i < Ho * Wo; ++i) s += static_cast<double>(p[i]);
          bn.grad.data[c] += static_cast<T>(s);
        }
      }
    }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), std::move(parents), bp));
}

template <typename T>
VarT<T> conv2d_transpose(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias,
                         int stride, int padding, int out_pad) {
  require_4d(x.value(), "conv2d_transpose input");
  require_4d(w.value(), "conv2d_transpose weights");
  const auto& xs = x.value().shape;
  const auto& ws = w.value().shape;
  const int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[1], K = ws[2];
  if (ws[0] != Cin)
    throw_data("conv2d_transpose: input channels " + x.value().shape_str() +
               " do not match weights " + w.value().shape_str());
  const int Ho = (H - 1) * stride + K - 2 * padding + out_pad;
  const int Wo = (W - 1) * stride + K - 2 * padding + out_pad;
  if (Ho <= 0 || Wo <= 0) throw_data("conv2d_transpose: non-positive output size");
  const bool has_bias = bias.defined();

  TensorT<T> out({B, Cout, Ho, Wo});
  {
    Eigen::Map<const RowMat<T>> Wm(w.value().data.data(), Cin, Cout * K * K);
    ColMat<T> cols;
    for (int b = 0; b < B; ++b) {
      Eigen::Map<const RowMat<T>> Xm(
          x.value().data.data() + static_cast<size_t>(b) * Cin * H * W, Cin, H * W);
      cols.noalias() = Wm.transpose() * Xm;
      col2im_add(cols, Cout, Ho, Wo, K, stride, padding, H, W,
                 out.data.data() + static_cast<size_t>(b) * Cout * Ho * Wo);
    }
    if (has_bias) {
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < Cout; ++c) {
          T bv = bias.value().data[c];
          T* p = out.data.data() + ((static_cast<size_t>(b) * Cout + c) * Ho) * Wo;
          for (int i = 0; i < Ho * Wo; ++i) p[i] += bv;
        }
    }
  }

  std::vector<std::shared_ptr<NodeT<T>>> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  auto bp = [B, Cin, H, W, Cout, K, stride, padding, Ho, Wo, has_bias](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    auto& wn = *n.parents[1];
    Eigen::Map<const RowMat<T>> Wm(wn.value.data.data(), Cin, Cout * K * K);
    ColMat<T> gcols;
    for (int b = 0; b < B; ++b) {
      im2col(n.grad.data.data() + static_cast<size_t>(b) * Cout * Ho * Wo, Cout, Ho,
             Wo, K, stride, padding, H, W, gcols);
      if (xn.requires_grad) {
        Eigen::Map<RowMat<T>> dXm(
            xn.grad.data.data() + static_cast<size_t>(b) * Cin * H * W, Cin, H * W);
        dXm.noalias() += Wm * gcols;
      }
      if (wn.requires_grad) {
        Eigen::Map<const RowMat<T>> Xm(
            xn.value.data.data() + static_cast<size_t>(b) * Cin * H * W, Cin, H * W);
        Eigen::Map<RowMat<T>> dWm(wn.grad.data.data(), Cin, Cout * K * K);
        dWm.noalias() += Xm * gcols.transpose();
      }
      if (has_bias && n.parents[2]->requires_grad) {
        auto& bn = *n.parents[2];
        for (int c = 0; c < Cout; ++c) {
          const T* p = n.grad.data.data() + ((static_cast<size_t>(b) * Cout + c) * Ho) * Wo;
          double s = 0.0;
          for (int i = 0; i < Ho * Wo; ++i) s += static_cast<double>(p[i]);
          bn.grad.data[c] += static_cast<T>(s);
        }
      }
    }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), std::move(parents), bp));
}

// ---- batch normalization ----------------------------------------------------

template <typename T>
VarT<T> batch_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta,
                   TensorT<T>* running_mean, TensorT<T>* running_var,
                   bool training, T momentum, T eps) {
  require_4d(x.value(), "batch_norm");
  const auto& xs = x.value().shape;
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (gamma.value().numel() != static_cast<size_t>(C) ||
      beta.value().numel() != static_cast<size_t>(C))
    throw_data("batch_norm: gamma/beta must have one entry per channel");
  if (training && B < 2)
    throw_data("batch_norm: training mode requires batch size >= 2, got 1");

  const size_t plane = static_cast<size_t>(H) * W;
  const size_t m = static_cast<size_t>(B) * plane;
  std::vector<T> mean(C), invstd(C);
  if (training) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* p = x.value().data.data() + ((static_cast<size_t>(b) * C + c) * plane);
        for (size_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
      }
      double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* p = x.value().data.data() + ((static_cast<size_t>(b) * C + c) * plane);
        for (size_t i = 0; i < plane; ++i) {
          double d = static_cast<double>(p[i]) - mu;
          v += d * d;
        }
      }
      v /= static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      if (running_mean && running_var) {
        double unbiased = (m > 1) ? v * static_cast<double>(m) / static_cast<double>(m - 1) : v;
        running_mean->data[c] = static_cast<T>((1.0 - momentum) *
                                    static_cast<double>(running_mean->data[c]) +
                                momentum * mu);
        running_var->data[c] = static_cast<T>((1.0 - momentum) *
                                   static_cast<double>(running_var->data[c]) +
                               momentum * unbiased);
      }
    }
  } else {
    if (!running_mean || !running_var)
      throw_data("batch_norm: eval mode requires running statistics");
    for (int c = 0; c < C; ++c) {
      mean[c] = running_mean->data[c];
      invstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(running_var->data[c]) + static_cast<double>(eps)));
    }
  }

  TensorT<T> xhat(x.value().shape);
  TensorT<T> out(x.value().shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* p = x.value().data.data() + ((static_cast<size_t>(b) * C + c) * plane);
      T* ph = xhat.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
      T* po = out.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
      const T g = gamma.value().data[c], be = beta.value().data[c];
      const T mu = mean[c], is = invstd[c];
      for (size_t i = 0; i < plane; ++i) {
        ph[i] = (p[i] - mu) * is;
        po[i] = g * ph[i] + be;
      }
    }

  auto bp = [B, C, plane, m, training, xhat, invstd](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    auto& gn = *n.parents[1];
    auto& bn = *n.parents[2];
    for (int c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* pg = n.grad.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
        const T* ph = xhat.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
        for (size_t i = 0; i < plane; ++i) {
          sum_g += static_cast<double>(pg[i]);
          sum_gx += static_cast<double>(pg[i]) * static_cast<double>(ph[i]);
        }
      }
      if (gn.requires_grad) gn.grad.data[c] += static_cast<T>(sum_gx);
      if (bn.requires_grad) bn.grad.data[c] += static_cast<T>(sum_g);
      if (xn.requires_grad) {
        const double gm = static_cast<double>(gn.value.data[c]);
        const double is = static_cast<double>(invstd[c]);
        if (training) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int b = 0; b < B; ++b) {
            const T* pg = n.grad.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
            const T* ph = xhat.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
            T* px = xn.grad.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
            for (size_t i = 0; i < plane; ++i) {
              double d = gm * is *
                         (static_cast<double>(pg[i]) -
                          inv_m * (sum_g + static_cast<double>(ph[i]) * sum_gx));
              px[i] += static_cast<T>(d);
            }
          }
        } else {
          for (int b = 0; b < B; ++b) {
            const T* pg = n.grad.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
            T* px = xn.grad.data.data() + ((static_cast<size_t>(b) * C + c) * plane);
            for (size_t i = 0; i < plane; ++i)
              px[i] += static_cast<T>(static_cast<double>(pg[i]) * gm * is);
          }
        }
      }
    }
  };
  return VarT<T>::from_node(
      make_node<T>(std::move(out), {x.node(), gamma.node(), beta.node()}, bp));
}

// ---- pointwise --------------------------------------------------------------

namespace {

template <typename T, typename FwdFn, typename BwdFn>
VarT<T> unary_op(const VarT<T>& x, FwdFn fwd, BwdFn bwd) {
  TensorT<T> out(x.value().shape);
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(x.value().data[i]);
  auto bp = [bwd](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (size_t i = 0; i < n.grad.numel(); ++i)
      xn.grad.data[i] += bwd(xn.value.data[i], n.value.data[i]) * n.grad.data[i];
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

}  // namespace

template <typename T>
VarT<T> relu(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
VarT<T> leaky_relu(const VarT<T>& x, T slope) {
  return unary_op(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
VarT<T> sigmoid(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
VarT<T> tanh_act(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
VarT<T> abs_val(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
VarT<T> square(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
VarT<T> log_val(const VarT<T>& x) {
  return unary_op(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
VarT<T> clamp(const VarT<T>& x, T lo, T hi) {
  return unary_op(
      x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
VarT<T> scale(const VarT<T>& x, T c) {
  return unary_op(
      x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
VarT<T> add_const(const VarT<T>& x, T c) {
  return unary_op(
      x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

namespace {

template <typename T, typename FwdFn>
VarT<T> binary_op(const VarT<T>& a, const VarT<T>& b, FwdFn fwd,
                  std::function<void(NodeT<T>&)> bp) {
  require_same_shape(a.value(), b.value(), "elementwise op");
  TensorT<T> out(a.value().shape);
  for (size_t i = 0; i < out.numel(); ++i)
    out.data[i] = fwd(a.value().data[i], b.value().data[i]);
  return VarT<T>::from_node(make_node<T>(std::move(out), {a.node(), b.node()}, bp));
}

}  // namespace

template <typename T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x + y; },
      [](NodeT<T>& n) {
        for (int k = 0; k < 2; ++k) {
          auto& p = *n.parents[k];
          if (!p.requires_grad) continue;
          for (size_t i = 0; i < n.grad.numel(); ++i) p.grad.data[i] += n.grad.data[i];
        }
      });
}

template <typename T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x - y; },
      [](NodeT<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad)
          for (size_t i = 0; i < n.grad.numel(); ++i) pa.grad.data[i] += n.grad.data[i];
        if (pb.requires_grad)
          for (size_t i = 0; i < n.grad.numel(); ++i) pb.grad.data[i] -= n.grad.data[i];
      });
}

template <typename T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x * y; },
      [](NodeT<T>& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad)
          for (size_t i = 0; i < n.grad.numel(); ++i)
            pa.grad.data[i] += pb.value.data[i] * n.grad.data[i];
        if (pb.requires_grad)
          for (size_t i = 0; i < n.grad.numel(); ++i)
            pb.grad.data[i] += pa.value.data[i] * n.grad.data[i];
      });
}

template <typename T>
VarT<T> mul_scalar(const VarT<T>& x, const VarT<T>& s) {
  if (s.numel() != 1) throw_data("mul_scalar: scale must be a single element");
  TensorT<T> out(x.value().shape);
  const T sv = s.value().data[0];
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * sv;
  auto bp = [](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    auto& sn = *n.parents[1];
    const T sv = sn.value.data[0];
    if (xn.requires_grad)
      for (size_t i = 0; i < n.grad.numel(); ++i) xn.grad.data[i] += sv * n.grad.data[i];
    if (sn.requires_grad) {
      double acc = 0.0;
      for (size_t i = 0; i < n.grad.numel(); ++i)
        acc += static_cast<double>(n.grad.data[i]) * static_cast<double>(xn.value.data[i]);
      sn.grad.data[0] += static_cast<T>(acc);
    }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node(), s.node()}, bp));
}

template <typename T>
VarT<T> div_scalar(const VarT<T>& x, const VarT<T>& s) {
  if (s.numel() != 1) throw_data("div_scalar: divisor must be a single element");
  TensorT<T> out(x.value().shape);
  const T sv = s.value().data[0];
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] / sv;
  auto bp = [](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    auto& sn = *n.parents[1];
    const T sv = sn.value.data[0];
    if (xn.requires_grad)
      for (size_t i = 0; i < n.grad.numel(); ++i) xn.grad.data[i] += n.grad.data[i] / sv;
    if (sn.requires_grad) {
      double acc = 0.0;
      for (size_t i = 0; i < n.grad.numel(); ++i)
        acc += static_cast<double>(n.grad.data[i]) * static_cast<double>(xn.value.data[i]);
      sn.grad.data[0] -= static_cast<T>(acc / (static_cast<double>(sv) * static_cast<double>(sv)));
    }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node(), s.node()}, bp));
}

// ---- shape ops ---------------------------------------------------------------

template <typename T>
VarT<T> concat_channels(const VarT<T>& a, const VarT<T>& b) {
  require_4d(a.value(), "concat");
  require_4d(b.value(), "concat");
  const auto& as = a.value().shape;
  const auto& bs = b.value().shape;
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw_data("concat: non-channel dims must match, got " + a.value().shape_str() +
               " vs " + b.value().shape_str());
  const int B = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
  const size_t plane = static_cast<size_t>(H) * W;
  TensorT<T> out({B, Ca + Cb, H, W});
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(a.value().data.data() + static_cast<size_t>(bi) * Ca * plane, Ca * plane,
                out.data.data() + static_cast<size_t>(bi) * (Ca + Cb) * plane);
    std::copy_n(b.value().data.data() + static_cast<size_t>(bi) * Cb * plane, Cb * plane,
                out.data.data() + (static_cast<size_t>(bi) * (Ca + Cb) + Ca) * plane);
  }
  auto bp = [B, Ca, Cb, plane](NodeT<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    for (int bi = 0; bi < B; ++bi) {
      const T* g = n.grad.data.data() + static_cast<size_t>(bi) * (Ca + Cb) * plane;
      if (pa.requires_grad) {
        T* pg = pa.grad.data.data() + static_cast<size_t>(bi) * Ca * plane;
        for (size_t i = 0; i < static_cast<size_t>(Ca) * plane; ++i) pg[i] += g[i];
      }
      if (pb.requires_grad) {
        T* pg = pb.grad.data.data() + static_cast<size_t>(bi) * Cb * plane;
        const T* gb = g + static_cast<size_t>(Ca) * plane;
        for (size_t i = 0; i < static_cast<size_t>(Cb) * plane; ++i) pg[i] += gb[i];
      }
    }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {a.node(), b.node()}, bp));
}

template <typename T>
VarT<T> upsample_nearest(const VarT<T>& x, int factor) {
  require_4d(x.value(), "upsample");
  if (factor < 1) throw_data("upsample: factor must be >= 1");
  const auto& xs = x.value().shape;
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  TensorT<T> out({B, C, H * factor, W * factor});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H * factor; ++y)
        for (int x2 = 0; x2 < W * factor; ++x2)
          out.at(b, c, y, x2) = x.value().at(b, c, y / factor, x2 / factor);
  auto bp = [B, C, H, W, factor](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H * factor; ++y)
          for (int x2 = 0; x2 < W * factor; ++x2)
            xn.grad.at(b, c, y / factor, x2 / factor) += n.grad.at(b, c, y, x2);
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
VarT<T> global_avg_pool(const VarT<T>& x) {
  require_4d(x.value(), "global_avg_pool");
  const auto& xs = x.value().shape;
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const size_t plane = static_cast<size_t>(H) * W;
  TensorT<T> out({B, C, 1, 1});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* p = x.value().data.data() + (static_cast<size_t>(b) * C + c) * plane;
      double s = 0.0;
      for (size_t i = 0; i < plane; ++i) s += static_cast<double>(p[i]);
      out.at(b, c, 0, 0) = static_cast<T>(s / static_cast<double>(plane));
    }
  auto bp = [B, C, plane](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const T g = n.grad.at(b, c, 0, 0) / static_cast<T>(plane);
        T* p = xn.grad.data.data() + (static_cast<size_t>(b) * C + c) * plane;
        for (size_t i = 0; i < plane; ++i) p[i] += g;
      }
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
VarT<T> crop(const VarT<T>& x, int y0, int x0, int h, int w) {
  require_4d(x.value(), "crop");
  const auto& xs = x.value().shape;
  const int B = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W)
    throw_data("crop: window exceeds image bounds, image " + x.value().shape_str());
  TensorT<T> out({B, C, h, w});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h; ++y)
        for (int x2 = 0; x2 < w; ++x2)
          out.at(b, c, y, x2) = x.value().at(b, c, y0 + y, x0 + x2);
  auto bp = [B, C, h, w, y0, x0](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y)
          for (int x2 = 0; x2 < w; ++x2)
            xn.grad.at(b, c, y0 + y, x0 + x2) += n.grad.at(b, c, y, x2);
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
VarT<T> dropout(const VarT<T>& x, T p, Rng& rng, bool training) {
  if (!training || p <= T(0)) return x;
  if (p >= T(1)) throw_data("dropout: rate must be < 1");
  TensorT<T> mask(x.value().shape);
  const T keep_scale = T(1) / (T(1) - p);
  for (size_t i = 0; i < mask.numel(); ++i)
    mask.data[i] = rng.uniform() < static_cast<double>(p) ? T(0) : keep_scale;
  TensorT<T> out(x.value().shape);
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x.value().data[i] * mask.data[i];
  auto bp = [mask](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    for (size_t i = 0; i < n.grad.numel(); ++i)
      xn.grad.data[i] += mask.data[i] * n.grad.data[i];
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
VarT<T> sum_all(const VarT<T>& x) {
  double s = 0.0;
  for (T v : x.value().data) s += static_cast<double>(v);
  TensorT<T> out({1});
  out.data[0] = static_cast<T>(s);
  auto bp = [](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    const T g = n.grad.data[0];
    for (size_t i = 0; i < xn.grad.numel(); ++i) xn.grad.data[i] += g;
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
VarT<T> mean_all(const VarT<T>& x) {
  const size_t n_elem = x.numel();
  double s = 0.0;
  for (T v : x.value().data) s += static_cast<double>(v);
  TensorT<T> out({1});
  out.data[0] = static_cast<T>(s / static_cast<double>(n_elem));
  auto bp = [n_elem](NodeT<T>& n) {
    auto& xn = *n.parents[0];
    if (!xn.requires_grad) return;
    const T g = n.grad.data[0] / static_cast<T>(n_elem);
    for (size_t i = 0; i < xn.grad.numel(); ++i) xn.grad.data[i] += g;
  };
  return VarT<T>::from_node(make_node<T>(std::move(out), {x.node()}, bp));
}

template <typename T>
void check_finite(const TensorT<T>& t, const std::string& label) {
  for (size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(static_cast<double>(t.data[i])))
      throw_internal("non-finite value in " + label + " at flat index " +
                     std::to_string(i));
  }
}

// ---- explicit instantiations -------------------------------------------------

#define UVC_INSTANTIATE(T)                                                         \
  template class VarT<T>;                                                          \
  template void backward<T>(const VarT<T>&);                                       \
  template VarT<T> conv2d<T>(const VarT<T>&, const VarT<T>&, const VarT<T>&, int,  \
                             int);                                                 \
  template VarT<T> conv2d_transpose<T>(const VarT<T>&, const VarT<T>&,             \
                                       const VarT<T>&, int, int, int);             \
  template VarT<T> batch_norm<T>(const VarT<T>&, const VarT<T>&, const VarT<T>&,   \
                                 TensorT<T>*, TensorT<T>*, bool, T, T);            \
  template VarT<T> relu<T>(const VarT<T>&);                                        \
  template VarT<T> leaky_relu<T>(const VarT<T>&, T);                               \
  template VarT<T> sigmoid<T>(const VarT<T>&);                                     \
  template VarT<T> tanh_act<T>(const VarT<T>&);                                    \
  template VarT<T> add<T>(const VarT<T>&, const VarT<T>&);                         \
  template VarT<T> sub<T>(const VarT<T>&, const VarT<T>&);                         \
  template VarT<T> mul<T>(const VarT<T>&, const VarT<T>&);                         \
  template VarT<T> scale<T>(const VarT<T>&, T);                                    \
  template VarT<T> add_const<T>(const VarT<T>&, T);                                \
  template VarT<T> mul_scalar<T>(const VarT<T>&, const VarT<T>&);                  \
  template VarT<T> div_scalar<T>(const VarT<T>&, const VarT<T>&);                  \
  template VarT<T> abs_val<T>(const VarT<T>&);                                     \
  template VarT<T> square<T>(const VarT<T>&);                                      \
  template VarT<T> log_val<T>(const VarT<T>&);                                     \
  template VarT<T> clamp<T>(const VarT<T>&, T, T);                                 \
  template VarT<T> concat_channels<T>(const VarT<T>&, const VarT<T>&);             \
  template VarT<T> upsample_nearest<T>(const VarT<T>&, int);                       \
  template VarT<T> global_avg_pool<T>(const VarT<T>&);                             \
  template VarT<T> crop<T>(const VarT<T>&, int, int, int, int);                    \
  template VarT<T> dropout<T>(const VarT<T>&, T, Rng&, bool);                      \
  template VarT<T> sum_all<T>(const VarT<T>&);                                     \
  template VarT<T> mean_all<T>(const VarT<T>&);                                    \
  template void check_finite<T>(const TensorT<T>&, const std::string&);

UVC_INSTANTIATE(float)
UVC_INSTANTIATE(double)

#undef UVC_INSTANTIATE

}  // namespace uvc
