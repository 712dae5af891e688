#pragma once

#include <cmath>

#include "ecs/autodiff.hpp"

namespace ecs {

struct loss_params {
  float dice_eps = 1.0f;      // smoothing term in numerator and denominator
  float focal_alpha = 2.0f;   // hard-example exponent
  float focal_beta = 4.0f;    // penalty reduction around soft targets
  float prob_clamp = 1e-7f;   // probabilities clamped to [c, 1-c] inside logs
  float mask_threshold = 0.5f;
};

namespace nn {

// loss = 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), y binary.
template <class T>
T dice_loss(const tensor<T>& p, const tensor<T>& y, T eps) {
  check_shape(p.same_shape(y), "dice_loss: shape mismatch");
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (!(y[i] == T(0) || y[i] == T(1)))
      throw value_error("dice_loss: target values must be 0 or 1");
    inter += static_cast<double>(p[i]) * static_cast<double>(y[i]);
    sp += static_cast<double>(p[i]);
    sy += static_cast<double>(y[i]);
  }
  const double a = 2.0 * inter + static_cast<double>(eps);
  const double d = sp + sy + static_cast<double>(eps);
  return static_cast<T>(1.0 - a / d);
}

template <class T>
tensor<T> dice_loss_backward(const tensor<T>& p, const tensor<T>& y, T eps,
                             T gloss) {
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    inter += static_cast<double>(p[i]) * static_cast<double>(y[i]);
    sp += static_cast<double>(p[i]);
    sy += static_cast<double>(y[i]);
  }
  const double a = 2.0 * inter + static_cast<double>(eps);
  const double d = sp + sy + static_cast<double>(eps);
  tensor<T> g(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i)
    g[i] = static_cast<T>(-(2.0 * static_cast<double>(y[i]) * d - a) / (d * d)) * gloss;
  return g;
}

// Penalty-reduced pixelwise focal loss for center heatmaps. Pixels with
// y == 1 count as positives; everything else is weighted down by (1-y)^beta.
// Normalized by the positive count (at least 1).
template <class T>
T focal_loss_heatmap(const tensor<T>& p, const tensor<T>& y, T alpha, T beta,
                     T clamp) {
  check_shape(p.same_shape(y), "focal_loss_heatmap: shape mismatch");
  double acc = 0.0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (y[i] < T(0) || y[i] > T(1))
      throw value_error("focal_loss_heatmap: target values must be in [0,1]");
    const double pc = std::min<double>(std::max<double>(p[i], clamp),
                                       1.0 - static_cast<double>(clamp));
    if (y[i] == T(1)) {
      ++npos;
      acc += std::pow(1.0 - pc, static_cast<double>(alpha)) * std::log(pc);
    } else {
      acc += std::pow(1.0 - static_cast<double>(y[i]), static_cast<double>(beta)) *
             std::pow(pc, static_cast<double>(alpha)) * std::log(1.0 - pc);
    }
  }
  const double n = static_cast<double>(npos ? npos : 1);
  return static_cast<T>(-acc / n);
}

template <class T>
tensor<T> focal_loss_heatmap_backward(const tensor<T>& p, const tensor<T>& y,
                                      T alpha, T beta, T clamp, T gloss) {
  std::size_t npos = 0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (y[i] == T(1)) ++npos;
  const double n = static_cast<double>(npos ? npos : 1);
  const double a = static_cast<double>(alpha), b = static_cast<double>(beta);
  tensor<T> g(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pc = std::min<double>(std::max<double>(p[i], clamp),
                                       1.0 - static_cast<double>(clamp));
    double d;
    if (y[i] == T(1)) {
      d = -a * std::pow(1.0 - pc, a - 1.0) * std::log(pc) +
          std::pow(1.0 - pc, a) / pc;
    } else {
      d = std::pow(1.0 - static_cast<double>(y[i]), b) *
          (a * std::pow(pc, a - 1.0) * std::log(1.0 - pc) -
           std::pow(pc, a) / (1.0 - pc));
    }
    g[i] = static_cast<T>(-d / n) * gloss;
  }
  return g;
}

}  // namespace nn

namespace ops {

inline var dice_loss(tape& t, var p, tensorf y, float eps) {
  const float l = nn::dice_loss(t.val(p), y, eps);
  require_finite(tensorf({1}, {l}), "dice_loss");
  return t.record(tensorf({1}, {l}),
                  [p, y = std::move(y), eps](tape& tt, var self) {
                    detail::acc(tt.grad(p),
                                nn::dice_loss_backward(tt.val(p), y, eps,
                                                       tt.grad(self)[0]));
                  });
}

inline var focal_loss_heatmap(tape& t, var p, tensorf y, float alpha,
                              float beta, float clamp) {
  const float l = nn::focal_loss_heatmap(t.val(p), y, alpha, beta, clamp);
  require_finite(tensorf({1}, {l}), "focal_loss_heatmap");
  return t.record(
      tensorf({1}, {l}),
      [p, y = std::move(y), alpha, beta, clamp](tape& tt, var self) {
        detail::acc(tt.grad(p),
                    nn::focal_loss_heatmap_backward(tt.val(p), y, alpha, beta,
                                                    clamp, tt.grad(self)[0]));
      });
}

}  // namespace ops
}  // namespace ecs
