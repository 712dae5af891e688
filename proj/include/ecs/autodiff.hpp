#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ecs/kernels.hpp"

// Reverse-mode tape. Every differentiable operation appends one node holding
// its output value plus a closure that scatters the node's gradient into its
// parents. backward() replays the closures in exact reverse execution order,
// so gradients accumulate additively when a value feeds several consumers.
// One tape serves one training step and is single-threaded.
namespace ecs {

struct var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class tape {
 public:
  using backward_fn = std::function<void(tape&, var self)>;

  var leaf(tensorf value) { return push(std::move(value), {}); }

  var record(tensorf value, backward_fn back) {
    return push(std::move(value), std::move(back));
  }

  const tensorf& val(var v) const { return node_at(v).value; }
  tensorf& grad(var v) { return node_at(v).grad; }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays in reverse order.
  void backward(var loss) {
    node& ln = node_at(loss);
    if (ln.value.numel() != 1) throw error("backward: loss must be a scalar");
    ln.grad[0] = 1.0f;
    for (int i = loss.id; i >= 0; --i) {
      node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this, var{i});
    }
  }

 private:
  struct node {
    tensorf value;
    tensorf grad;
    backward_fn back;
  };

  var push(tensorf value, backward_fn back) {
    node n;
    n.grad = tensorf(value.shape(), 0.0f);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  node& node_at(var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw error("tape: variable is not on this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<node> nodes_;
};

// Tape-recorded operations. Each validates that its output stays finite so a
// NaN/Inf cannot propagate silently through a training step.
namespace ops {

namespace detail {
inline void acc(tensorf& dst, const tensorf& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}
}  // namespace detail

inline var conv2d(tape& t, var x, var w, var b, int stride, int pad) {
  require_finite(t.val(x), "conv2d input");
  tensorf y = nn::conv2d(t.val(x), t.val(w), t.val(b), stride, pad);
  require_finite(y, "conv2d output");
  return t.record(std::move(y), [x, w, b, stride, pad](tape& tt, var self) {
    auto g = nn::conv2d_backward(tt.val(x), tt.val(w), tt.grad(self), stride, pad);
    detail::acc(tt.grad(x), g.gx);
    detail::acc(tt.grad(w), g.gw);
    detail::acc(tt.grad(b), g.gb);
  });
}

inline var depthwise_conv2d(tape& t, var x, var w, var b, int stride, int pad) {
  require_finite(t.val(x), "depthwise_conv2d input");
  tensorf y = nn::depthwise_conv2d(t.val(x), t.val(w), t.val(b), stride, pad);
  require_finite(y, "depthwise_conv2d output");
  return t.record(std::move(y), [x, w, b, stride, pad](tape& tt, var self) {
    auto g = nn::depthwise_conv2d_backward(tt.val(x), tt.val(w), tt.grad(self),
                                           stride, pad);
    detail::acc(tt.grad(x), g.gx);
    detail::acc(tt.grad(w), g.gw);
    detail::acc(tt.grad(b), g.gb);
  });
}

// Train-mode batchnorm. Normalizes with batch statistics and, when running
// stats are supplied, updates them in place by exponential moving average
// (the running variance gets the unbiased estimate).
inline var batchnorm_train(tape& t, var x, var gamma, var beta, float eps,
                           tensorf* running_mean = nullptr,
                           tensorf* running_var = nullptr,
                           float momentum = 0.9f) {
  auto f = nn::batchnorm_train(t.val(x), t.val(gamma), t.val(beta), eps);
  require_finite(f.y, "batchnorm output");
  if (running_mean && running_var) {
    const auto& xs = t.val(x);
    const float m = static_cast<float>(static_cast<std::size_t>(xs.dim(0)) *
                                       xs.dim(2) * xs.dim(3));
    const float corr = m / (m - 1.0f);
    for (int c = 0; c < xs.dim(1); ++c) {
      auto ci = static_cast<std::size_t>(c);
      (*running_mean)[ci] = momentum * (*running_mean)[ci] + (1.0f - momentum) * f.mean[ci];
      (*running_var)[ci] = momentum * (*running_var)[ci] + (1.0f - momentum) * f.var[ci] * corr;
    }
  }
  auto mean = std::move(f.mean);
  auto invstd = std::move(f.invstd);
  return t.record(std::move(f.y),
                  [x, gamma, beta, mean, invstd](tape& tt, var self) {
                    auto g = nn::batchnorm_train_backward(
                        tt.val(x), tt.val(gamma), mean, invstd, tt.grad(self));
                    detail::acc(tt.grad(x), g.gx);
                    detail::acc(tt.grad(gamma), g.ggamma);
                    detail::acc(tt.grad(beta), g.gbeta);
                  });
}

inline var batchnorm_infer(tape& t, var x, var gamma, var beta,
                           const tensorf& rmean, const tensorf& rvar,
                           float eps) {
  tensorf y = nn::batchnorm_infer(t.val(x), t.val(gamma), t.val(beta), rmean,
                                  rvar, eps);
  require_finite(y, "batchnorm output");
  return t.record(std::move(y),
                  [x, gamma, beta, rmean, rvar, eps](tape& tt, var self) {
                    auto g = nn::batchnorm_infer_backward(
                        tt.val(x), tt.val(gamma), rmean, rvar, eps, tt.grad(self));
                    detail::acc(tt.grad(x), g.gx);
                    detail::acc(tt.grad(gamma), g.ggamma);
                    detail::acc(tt.grad(beta), g.gbeta);
                  });
}

inline var activation(tape& t, var x, nn::act kind) {
  tensorf y = nn::activation(t.val(x), kind);
  require_finite(y, "activation output");
  return t.record(std::move(y), [x, kind](tape& tt, var self) {
    detail::acc(tt.grad(x),
                nn::activation_backward(tt.val(x), kind, tt.grad(self)));
  });
}

inline var global_avg_pool(tape& t, var x) {
  tensorf y = nn::global_avg_pool(t.val(x));
  return t.record(std::move(y), [x](tape& tt, var self) {
    detail::acc(tt.grad(x),
                nn::global_avg_pool_backward(tt.val(x), tt.grad(self)));
  });
}

inline var bilinear_upsample2x(tape& t, var x) {
  tensorf y = nn::bilinear_upsample2x(t.val(x));
  return t.record(std::move(y), [x](tape& tt, var self) {
    detail::acc(tt.grad(x),
                nn::resize_bilinear4_backward(tt.val(x), tt.grad(self)));
  });
}

inline var concat_channels(tape& t, var a, var b) {
  tensorf y = nn::concat_channels(t.val(a), t.val(b));
  return t.record(std::move(y), [a, b](tape& tt, var self) {
    const tensorf& gy = tt.grad(self);
    tensorf& ga = tt.grad(a);
    tensorf& gb = tt.grad(b);
    const int B = ga.dim(0), Ca = ga.dim(1), Cb = gb.dim(1);
    const std::size_t plane =
        static_cast<std::size_t>(ga.dim(2)) * ga.dim(3);
    for (int bi = 0; bi < B; ++bi) {
      const float* src =
          gy.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * plane;
      float* pa = ga.data() + static_cast<std::size_t>(bi) * Ca * plane;
      float* pb = gb.data() + static_cast<std::size_t>(bi) * Cb * plane;
      for (std::size_t i = 0; i < static_cast<std::size_t>(Ca) * plane; ++i)
        pa[i] += src[i];
      for (std::size_t i = 0; i < static_cast<std::size_t>(Cb) * plane; ++i)
        pb[i] += src[Ca * plane + i];
    }
  });
}

inline var scale_channels(tape& t, var x, var s) {
  tensorf y = nn::scale_channels(t.val(x), t.val(s));
  require_finite(y, "scale_channels output");
  return t.record(std::move(y), [x, s](tape& tt, var self) {
    const tensorf& gy = tt.grad(self);
    const tensorf& xv = tt.val(x);
    const tensorf& sv = tt.val(s);
    tensorf& gx = tt.grad(x);
    tensorf& gs = tt.grad(s);
    const int B = xv.dim(0), C = xv.dim(1);
    const std::size_t plane =
        static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    for (int bi = 0; bi < B; ++bi)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(bi) * C + c) * plane;
        const float f = sv.at4(bi, c, 0, 0);
        float acc = 0.0f;
        for (std::size_t i = 0; i < plane; ++i) {
          gx[off + i] += gy[off + i] * f;
          acc += gy[off + i] * xv[off + i];
        }
        gs.at4(bi, c, 0, 0) += acc;
      }
  });
}

inline var add(tape& t, var a, var b) {
  tensorf y = nn::add(t.val(a), t.val(b));
  require_finite(y, "add output");
  return t.record(std::move(y), [a, b](tape& tt, var self) {
    detail::acc(tt.grad(a), tt.grad(self));
    detail::acc(tt.grad(b), tt.grad(self));
  });
}

// sum(x * w) with constant weights; the usual scalar head for checks.
inline var weighted_sum(tape& t, var x, tensorf w) {
  const tensorf& xv = t.val(x);
  check_shape(xv.same_shape(w), "weighted_sum: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i)
    s += static_cast<double>(xv[i]) * w[i];
  tensorf y({1});
  y[0] = static_cast<float>(s);
  return t.record(std::move(y), [x, w = std::move(w)](tape& tt, var self) {
    const float g = tt.grad(self)[0];
    tensorf& gx = tt.grad(x);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g * w[i];
  });
}

}  // namespace ops
}  // namespace ecs
