#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ecs/tensor.hpp"

// Forward/backward numeric kernels. Everything here is a pure function of
// its inputs; tape bookkeeping lives in autodiff.hpp. Kernels are templated
// on the scalar type so the same code path can be re-run in double
// precision by the gradient checker.
namespace ecs::nn {

// ---------------------------------------------------------------- gemm ----

// C(MxN) += A(MxK) * B(KxN), row-major. i-k-j order so the inner loop is a
// contiguous axpy the compiler turns into FMAs.
template <class T>
void gemm_acc(const T* A, const T* B, T* C, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const T* arow = A + static_cast<std::size_t>(i) * K;
    T* crow = C + static_cast<std::size_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = arow[k];
      if (a == T(0)) continue;
      const T* brow = B + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <class T>
void transpose(const T* src, T* dst, int rows, int cols) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst[static_cast<std::size_t>(c) * rows + r] =
          src[static_cast<std::size_t>(r) * cols + c];
}

// -------------------------------------------------------------- conv2d ----

struct conv_out {
  int h = 0, w = 0;
};

inline conv_out conv2d_out_shape(int h, int w, int k, int stride, int pad) {
  check_shape(k >= 1 && (k % 2) == 1, "conv2d: kernel size must be odd");
  check_shape(stride >= 1, "conv2d: stride must be >= 1");
  check_shape(pad >= 0, "conv2d: pad must be >= 0");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  check_shape(h + 2 * pad >= k && w + 2 * pad >= k && ho >= 1 && wo >= 1,
              "conv2d: output would be empty");
  return {ho, wo};
}

namespace detail {

// One batch item: x (C,H,W) -> col (C*k*k, Ho*Wo).
template <class T>
void im2col(const T* x, T* col, int C, int H, int W, int k, int stride,
            int pad, int ho, int wo) {
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  std::size_t r = 0;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v, ++r) {
        T* crow = col + r * n;
        for (int i = 0; i < ho; ++i) {
          const int iy = i * stride - pad + u;
          T* dst = crow + static_cast<std::size_t>(i) * wo;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * W;
          for (int j = 0; j < wo; ++j) {
            const int ix = j * stride - pad + v;
            dst[j] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add the columns back: col (C*k*k, Ho*Wo) -> x (C,H,W).
template <class T>
void col2im_acc(const T* col, T* x, int C, int H, int W, int k, int stride,
                int pad, int ho, int wo) {
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  std::size_t r = 0;
  for (int c = 0; c < C; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v, ++r) {
        const T* crow = col + r * n;
        for (int i = 0; i < ho; ++i) {
          const int iy = i * stride - pad + u;
          if (iy < 0 || iy >= H) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * W;
          const T* src = crow + static_cast<std::size_t>(i) * wo;
          for (int j = 0; j < wo; ++j) {
            const int ix = j * stride - pad + v;
            if (ix >= 0 && ix < W) dst[ix] += src[j];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
tensor<T> conv2d(const tensor<T>& x, const tensor<T>& w, const tensor<T>& b,
                 int stride, int pad) {
  check_shape(x.ndim() == 4, "conv2d: input must be (B,C,H,W)");
  check_shape(w.ndim() == 4, "conv2d: weight must be (Cout,Cin,k,k)");
  check_shape(w.dim(2) == w.dim(3), "conv2d: kernel must be square");
  check_shape(w.dim(1) == x.dim(1), "conv2d: channel mismatch");
  check_shape(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d: bias mismatch");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), k = w.dim(2);
  const auto o = conv2d_out_shape(H, W, k, stride, pad);
  const std::size_t n = static_cast<std::size_t>(o.h) * o.w;
  const int K = C * k * k;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  tensor<T> y({B, Co, o.h, o.w});
  std::vector<T> col;
  if (!pointwise) col.resize(static_cast<std::size_t>(K) * n);
  for (int bi = 0; bi < B; ++bi) {
    const T* xb = x.data() + static_cast<std::size_t>(bi) * C * H * W;
    const T* cols = xb;
    if (!pointwise) {
      detail::im2col(xb, col.data(), C, H, W, k, stride, pad, o.h, o.w);
      cols = col.data();
    }
    T* yb = y.data() + static_cast<std::size_t>(bi) * Co * n;
    for (int co = 0; co < Co; ++co)
      std::fill(yb + co * n, yb + (co + 1) * n, b[static_cast<std::size_t>(co)]);
    gemm_acc(w.data(), cols, yb, Co, K, static_cast<int>(n));
  }
  return y;
}

template <class T>
struct conv2d_grads {
  tensor<T> gx, gw, gb;
};

template <class T>
conv2d_grads<T> conv2d_backward(const tensor<T>& x, const tensor<T>& w,
                                const tensor<T>& gy, int stride, int pad) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), k = w.dim(2);
  const auto o = conv2d_out_shape(H, W, k, stride, pad);
  check_shape(gy.dim(0) == B && gy.dim(1) == Co && gy.dim(2) == o.h &&
                  gy.dim(3) == o.w,
              "conv2d_backward: grad shape mismatch");
  const std::size_t n = static_cast<std::size_t>(o.h) * o.w;
  const int K = C * k * k;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  conv2d_grads<T> g{tensor<T>(x.shape()), tensor<T>(w.shape()),
                    tensor<T>({Co})};

  std::vector<T> wt(static_cast<std::size_t>(K) * Co);
  transpose(w.data(), wt.data(), Co, K);

  std::vector<T> col, colT(n * K), dcol;
  if (!pointwise) {
    col.resize(static_cast<std::size_t>(K) * n);
    dcol.resize(static_cast<std::size_t>(K) * n);
  }

  for (int bi = 0; bi < B; ++bi) {
    const T* xb = x.data() + static_cast<std::size_t>(bi) * C * H * W;
    const T* gyb = gy.data() + static_cast<std::size_t>(bi) * Co * n;

    const T* cols = xb;
    if (!pointwise) {
      detail::im2col(xb, col.data(), C, H, W, k, stride, pad, o.h, o.w);
      cols = col.data();
    }

    // gb
    for (int co = 0; co < Co; ++co) {
      T s = 0;
      const T* row = gyb + static_cast<std::size_t>(co) * n;
      for (std::size_t j = 0; j < n; ++j) s += row[j];
      g.gb[static_cast<std::size_t>(co)] += s;
    }

    // gw += gy(Co,n) * col^T(n,K)
    transpose(cols, colT.data(), K, static_cast<int>(n));
    gemm_acc(gyb, colT.data(), g.gw.data(), Co, static_cast<int>(n), K);

    // dcol(K,n) = w^T(K,Co) * gy(Co,n), then scatter back to gx
    T* dst = pointwise
                 ? g.gx.data() + static_cast<std::size_t>(bi) * C * H * W
                 : dcol.data();
    if (!pointwise) std::fill(dcol.begin(), dcol.end(), T(0));
    gemm_acc(wt.data(), gyb, dst, K, Co, static_cast<int>(n));
    if (!pointwise)
      detail::col2im_acc(dcol.data(),
                         g.gx.data() + static_cast<std::size_t>(bi) * C * H * W,
                         C, H, W, k, stride, pad, o.h, o.w);
  }
  return g;
}

// ---------------------------------------------------- depthwise conv2d ----

template <class T>
tensor<T> depthwise_conv2d(const tensor<T>& x, const tensor<T>& w,
                           const tensor<T>& b, int stride, int pad) {
  check_shape(x.ndim() == 4, "depthwise_conv2d: input must be (B,C,H,W)");
  check_shape(w.ndim() == 4 && w.dim(1) == 1 && w.dim(2) == w.dim(3),
              "depthwise_conv2d: weight must be (C,1,k,k)");
  check_shape(w.dim(0) == x.dim(1), "depthwise_conv2d: channel mismatch");
  check_shape(b.ndim() == 1 && b.dim(0) == x.dim(1),
              "depthwise_conv2d: bias mismatch");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int k = w.dim(2);
  const auto o = conv2d_out_shape(H, W, k, stride, pad);

  tensor<T> y({B, C, o.h, o.w});
  for (int bi = 0; bi < B; ++bi) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<std::size_t>(bi) * C + c) * H * W;
      const T* wc = w.data() + static_cast<std::size_t>(c) * k * k;
      T* yc = y.data() + (static_cast<std::size_t>(bi) * C + c) * o.h * o.w;
      const T bias = b[static_cast<std::size_t>(c)];
      for (int i = 0; i < o.h; ++i) {
        for (int j = 0; j < o.w; ++j) {
          T s = bias;
          const int y0 = i * stride - pad, x0 = j * stride - pad;
          for (int u = 0; u < k; ++u) {
            const int iy = y0 + u;
            if (iy < 0 || iy >= H) continue;
            for (int v = 0; v < k; ++v) {
              const int ix = x0 + v;
              if (ix < 0 || ix >= W) continue;
              s += xc[static_cast<std::size_t>(iy) * W + ix] * wc[u * k + v];
            }
          }
          yc[static_cast<std::size_t>(i) * o.w + j] = s;
        }
      }
    }
  }
  return y;
}

template <class T>
conv2d_grads<T> depthwise_conv2d_backward(const tensor<T>& x,
                                          const tensor<T>& w,
                                          const tensor<T>& gy, int stride,
                                          int pad) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int k = w.dim(2);
  const auto o = conv2d_out_shape(H, W, k, stride, pad);
  check_shape(gy.dim(0) == B && gy.dim(1) == C && gy.dim(2) == o.h &&
                  gy.dim(3) == o.w,
              "depthwise_conv2d_backward: grad shape mismatch");

  conv2d_grads<T> g{tensor<T>(x.shape()), tensor<T>(w.shape()),
                    tensor<T>({C})};
  for (int bi = 0; bi < B; ++bi) {
    for (int c = 0; c < C; ++c) {
      const T* xc = x.data() + (static_cast<std::size_t>(bi) * C + c) * H * W;
      const T* wc = w.data() + static_cast<std::size_t>(c) * k * k;
      const T* gyc =
          gy.data() + (static_cast<std::size_t>(bi) * C + c) * o.h * o.w;
      T* gxc = g.gx.data() + (static_cast<std::size_t>(bi) * C + c) * H * W;
      T* gwc = g.gw.data() + static_cast<std::size_t>(c) * k * k;
      T gb = 0;
      for (int i = 0; i < o.h; ++i) {
        for (int j = 0; j < o.w; ++j) {
          const T gyv = gyc[static_cast<std::size_t>(i) * o.w + j];
          gb += gyv;
          const int y0 = i * stride - pad, x0 = j * stride - pad;
          for (int u = 0; u < k; ++u) {
            const int iy = y0 + u;
            if (iy < 0 || iy >= H) continue;
            for (int v = 0; v < k; ++v) {
              const int ix = x0 + v;
              if (ix < 0 || ix >= W) continue;
              const std::size_t xi = static_cast<std::size_t>(iy) * W + ix;
              gxc[xi] += gyv * wc[u * k + v];
              gwc[u * k + v] += gyv * xc[xi];
            }
          }
        }
      }
      g.gb[static_cast<std::size_t>(c)] += gb;
    }
  }
  return g;
}

// ----------------------------------------------------------- batchnorm ----

template <class T>
struct bn_fwd {
  tensor<T> y;
  std::vector<T> mean, var, invstd;  // per channel; var is the biased batch variance
};

template <class T>
bn_fwd<T> batchnorm_train(const tensor<T>& x, const tensor<T>& gamma,
                          const tensor<T>& beta, T eps) {
  check_shape(x.ndim() == 4, "batchnorm: input must be (B,C,H,W)");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_shape(gamma.ndim() == 1 && gamma.dim(0) == C && beta.dim(0) == C,
              "batchnorm: affine shape mismatch");
  const std::size_t m = static_cast<std::size_t>(B) * H * W;
  if (m < 2)
    throw value_error("batchnorm: train mode needs at least 2 values per channel");

  bn_fwd<T> r{tensor<T>(x.shape()), std::vector<T>(C), std::vector<T>(C),
              std::vector<T>(C)};
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    T sum = 0;
    for (int bi = 0; bi < B; ++bi) {
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const T mu = sum / static_cast<T>(m);
    T sq = 0;
    for (int bi = 0; bi < B; ++bi) {
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = p[i] - mu;
        sq += d * d;
      }
    }
    const T var = sq / static_cast<T>(m);
    const T inv = T(1) / std::sqrt(var + eps);
    r.mean[static_cast<std::size_t>(c)] = mu;
    r.var[static_cast<std::size_t>(c)] = var;
    r.invstd[static_cast<std::size_t>(c)] = inv;
    const T g = gamma[static_cast<std::size_t>(c)], be = beta[static_cast<std::size_t>(c)];
    for (int bi = 0; bi < B; ++bi) {
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T* q = r.y.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * inv + be;
    }
  }
  return r;
}

template <class T>
struct bn_grads {
  tensor<T> gx, ggamma, gbeta;
};

template <class T>
bn_grads<T> batchnorm_train_backward(const tensor<T>& x, const tensor<T>& gamma,
                                     const std::vector<T>& mean,
                                     const std::vector<T>& invstd,
                                     const tensor<T>& gy) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const T m = static_cast<T>(static_cast<std::size_t>(B) * H * W);

  bn_grads<T> g{tensor<T>(x.shape()), tensor<T>({C}), tensor<T>({C})};
  for (int c = 0; c < C; ++c) {
    const T mu = mean[static_cast<std::size_t>(c)], inv = invstd[static_cast<std::size_t>(c)];
    T sum_gy = 0, sum_gy_xhat = 0;
    for (int bi = 0; bi < B; ++bi) {
      const T* px = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      const T* pg = gy.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_gy += pg[i];
        sum_gy_xhat += pg[i] * (px[i] - mu) * inv;
      }
    }
    g.gbeta[static_cast<std::size_t>(c)] = sum_gy;
    g.ggamma[static_cast<std::size_t>(c)] = sum_gy_xhat;
    const T ga = gamma[static_cast<std::size_t>(c)];
    const T k1 = sum_gy / m, k2 = sum_gy_xhat / m;
    for (int bi = 0; bi < B; ++bi) {
      const T* px = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      const T* pg = gy.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T* pq = g.gx.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xhat = (px[i] - mu) * inv;
        pq[i] = ga * inv * (pg[i] - k1 - xhat * k2);
      }
    }
  }
  return g;
}

template <class T>
tensor<T> batchnorm_infer(const tensor<T>& x, const tensor<T>& gamma,
                          const tensor<T>& beta, const tensor<T>& rmean,
                          const tensor<T>& rvar, T eps) {
  check_shape(x.ndim() == 4, "batchnorm: input must be (B,C,H,W)");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_shape(gamma.dim(0) == C && beta.dim(0) == C && rmean.dim(0) == C &&
                  rvar.dim(0) == C,
              "batchnorm: affine/stat shape mismatch");
  tensor<T> y(x.shape());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    const T inv = T(1) / std::sqrt(rvar[static_cast<std::size_t>(c)] + eps);
    const T g = gamma[static_cast<std::size_t>(c)];
    const T mu = rmean[static_cast<std::size_t>(c)], be = beta[static_cast<std::size_t>(c)];
    for (int bi = 0; bi < B; ++bi) {
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T* q = y.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * inv + be;
    }
  }
  return y;
}

template <class T>
bn_grads<T> batchnorm_infer_backward(const tensor<T>& x, const tensor<T>& gamma,
                                     const tensor<T>& rmean,
                                     const tensor<T>& rvar, T eps,
                                     const tensor<T>& gy) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  bn_grads<T> g{tensor<T>(x.shape()), tensor<T>({C}), tensor<T>({C})};
  for (int c = 0; c < C; ++c) {
    const T inv = T(1) / std::sqrt(rvar[static_cast<std::size_t>(c)] + eps);
    const T mu = rmean[static_cast<std::size_t>(c)];
    const T ga = gamma[static_cast<std::size_t>(c)];
    T sg = 0, sgx = 0;
    for (int bi = 0; bi < B; ++bi) {
      const T* px = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      const T* pg = gy.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T* pq = g.gx.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sg += pg[i];
        sgx += pg[i] * (px[i] - mu) * inv;
        pq[i] = pg[i] * ga * inv;
      }
    }
    g.gbeta[static_cast<std::size_t>(c)] = sg;
    g.ggamma[static_cast<std::size_t>(c)] = sgx;
  }
  return g;
}

// --------------------------------------------------------- activations ----

enum class act { sigmoid, swish, relu };

template <class T>
T sigmoid1(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                   : std::exp(v) / (T(1) + std::exp(v));
}

template <class T>
tensor<T> activation(const tensor<T>& x, act kind) {
  tensor<T> y(x.shape());
  const std::size_t n = x.numel();
  switch (kind) {
    case act::sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid1(x[i]);
      break;
    case act::swish:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid1(x[i]);
      break;
    case act::relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
  }
  return y;
}

template <class T>
tensor<T> activation_backward(const tensor<T>& x, act kind,
                              const tensor<T>& gy) {
  tensor<T> gx(x.shape());
  const std::size_t n = x.numel();
  switch (kind) {
    case act::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        const T s = sigmoid1(x[i]);
        gx[i] = gy[i] * s * (T(1) - s);
      }
      break;
    case act::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const T s = sigmoid1(x[i]);
        gx[i] = gy[i] * (s + x[i] * s * (T(1) - s));
      }
      break;
    case act::relu:
      for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
      break;
  }
  return gx;
}

// ------------------------------------------------------------- pooling ----

template <class T>
tensor<T> global_avg_pool(const tensor<T>& x) {
  check_shape(x.ndim() == 4, "global_avg_pool: input must be (B,C,H,W)");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  tensor<T> y({B, C, 1, 1});
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      y.at4(bi, c, 0, 0) = s / static_cast<T>(plane);
    }
  return y;
}

template <class T>
tensor<T> global_avg_pool_backward(const tensor<T>& x, const tensor<T>& gy) {
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  tensor<T> gx(x.shape());
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const T g = gy.at4(bi, c, 0, 0) / static_cast<T>(plane);
      T* p = gx.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = g;
    }
  return gx;
}

// ----------------------------------------------------- bilinear resize ----

// Half-pixel-center convention: src = (dst + 0.5) * in/out - 0.5, clamped.
template <class T>
tensor<T> resize_bilinear4(const tensor<T>& x, int oh, int ow) {
  check_shape(x.ndim() == 4, "resize_bilinear: input must be (B,C,H,W)");
  check_shape(oh >= 1 && ow >= 1, "resize_bilinear: target size must be positive");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  tensor<T> y({B, C, oh, ow});
  const double sy = static_cast<double>(H) / oh;
  const double sx = static_cast<double>(W) / ow;
  for (int i = 0; i < oh; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, H - 1);
    const T wy = static_cast<T>(fy - y0);
    for (int j = 0; j < ow; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, W - 1);
      const T wx = static_cast<T>(fx - x0);
      for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
          const T v00 = x.at4(bi, c, y0, x0), v01 = x.at4(bi, c, y0, x1);
          const T v10 = x.at4(bi, c, y1, x0), v11 = x.at4(bi, c, y1, x1);
          y.at4(bi, c, i, j) = (T(1) - wy) * ((T(1) - wx) * v00 + wx * v01) +
                               wy * ((T(1) - wx) * v10 + wx * v11);
        }
    }
  }
  return y;
}

template <class T>
tensor<T> resize_bilinear4_backward(const tensor<T>& x, const tensor<T>& gy) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int oh = gy.dim(2), ow = gy.dim(3);
  tensor<T> gx(x.shape());
  const double sy = static_cast<double>(H) / oh;
  const double sx = static_cast<double>(W) / ow;
  for (int i = 0; i < oh; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, H - 1);
    const T wy = static_cast<T>(fy - y0);
    for (int j = 0; j < ow; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, W - 1);
      const T wx = static_cast<T>(fx - x0);
      for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
          const T g = gy.at4(bi, c, i, j);
          gx.at4(bi, c, y0, x0) += (T(1) - wy) * (T(1) - wx) * g;
          gx.at4(bi, c, y0, x1) += (T(1) - wy) * wx * g;
          gx.at4(bi, c, y1, x0) += wy * (T(1) - wx) * g;
          gx.at4(bi, c, y1, x1) += wy * wx * g;
        }
    }
  }
  return gx;
}

template <class T>
tensor<T> bilinear_upsample2x(const tensor<T>& x) {
  return resize_bilinear4(x, x.dim(2) * 2, x.dim(3) * 2);
}

// ------------------------------------------------------------- merging ----

template <class T>
tensor<T> concat_channels(const tensor<T>& a, const tensor<T>& b) {
  check_shape(a.ndim() == 4 && b.ndim() == 4, "concat: inputs must be 4-d");
  check_shape(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                  a.dim(3) == b.dim(3),
              "concat: batch/spatial mismatch");
  const int B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  tensor<T> y({B, Ca + Cb, a.dim(2), a.dim(3)});
  for (int bi = 0; bi < B; ++bi) {
    T* dst = y.data() + static_cast<std::size_t>(bi) * (Ca + Cb) * plane;
    const T* pa = a.data() + static_cast<std::size_t>(bi) * Ca * plane;
    const T* pb = b.data() + static_cast<std::size_t>(bi) * Cb * plane;
    std::copy(pa, pa + Ca * plane, dst);
    std::copy(pb, pb + Cb * plane, dst + Ca * plane);
  }
  return y;
}

// Broadcast multiply: x (B,C,H,W) * s (B,C,1,1).
template <class T>
tensor<T> scale_channels(const tensor<T>& x, const tensor<T>& s) {
  check_shape(s.ndim() == 4 && s.dim(0) == x.dim(0) && s.dim(1) == x.dim(1) &&
                  s.dim(2) == 1 && s.dim(3) == 1,
              "scale_channels: scale must be (B,C,1,1)");
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  tensor<T> y(x.shape());
  for (int bi = 0; bi < B; ++bi)
    for (int c = 0; c < C; ++c) {
      const T f = s.at4(bi, c, 0, 0);
      const T* p = x.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      T* q = y.data() + (static_cast<std::size_t>(bi) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * f;
    }
  return y;
}

template <class T>
tensor<T> add(const tensor<T>& a, const tensor<T>& b) {
  check_shape(a.same_shape(b), "add: shape mismatch");
  tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

}  // namespace ecs::nn
