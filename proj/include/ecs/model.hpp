#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecs/autodiff.hpp"
#include "ecs/common.hpp"

namespace ecs {

// Desk-scale encoder-decoder for two-class slice segmentation. The encoder
// is a truncated MBConv stack (stem + 5 stages, /16 bottleneck); the decoder
// has exactly 4 upsampling blocks, each doubling height and width, fed by 4
// skip connections, with strictly decreasing filter counts; the head is a
// 1x1 convolution + sigmoid.
struct model_config {
  int input_size = 96;  // square, divisible by 16
  // stem width + widths of the 5 MBConv stages
  std::array<int, 6> stage_widths{16, 16, 24, 32, 48, 64};
  // blocks per stage; increases with depth like the encoder family it trims
  std::array<int, 5> stage_repeats{1, 2, 3, 4, 4};
  // first-block stride per stage (stem itself has stride 2)
  std::array<int, 5> stage_strides{1, 2, 2, 2, 1};
  int expand = 4;
  float se_ratio = 0.25f;
  std::array<int, 4> decoder_filters{32, 24, 16, 8};
  float bn_eps = 1e-5f;
  float bn_momentum = 0.9f;

  void validate() const {
    if (input_size < 16 || input_size % 16 != 0)
      throw config_error("model_config: input_size must be a positive multiple of 16");
    int down = 2;  // stem
    for (int s : stage_strides) {
      if (s != 1 && s != 2) throw config_error("model_config: stage strides must be 1 or 2");
      down *= s;
    }
    if (down != 16)
      throw config_error("model_config: encoder must downsample by exactly 16");
    for (int w : stage_widths)
      if (w < 1) throw config_error("model_config: stage widths must be positive");
    for (int r : stage_repeats)
      if (r < 1) throw config_error("model_config: stage repeats must be >= 1");
    for (std::size_t i = 1; i < decoder_filters.size(); ++i)
      if (decoder_filters[i] >= decoder_filters[i - 1])
        throw config_error("model_config: decoder filters must be strictly decreasing");
    if (decoder_filters[3] < 1)
      throw config_error("model_config: decoder filters must be positive");
    if (expand < 1) throw config_error("model_config: expand factor must be >= 1");
    if (se_ratio <= 0.0f || se_ratio > 1.0f)
      throw config_error("model_config: se_ratio must be in (0,1]");
  }

  int se_reduced(int cin) const {
    const int r = static_cast<int>(cin * se_ratio);
    return r < 1 ? 1 : r;
  }
};

// Named parameter collection. "enc."/"dec." prefixes partition the tensors;
// batchnorm running statistics live in `state` (serialized, not counted as
// parameters).
struct model {
  model_config cfg;
  std::vector<std::string> param_order;
  std::vector<std::string> state_order;
  std::unordered_map<std::string, tensorf> params;
  std::unordered_map<std::string, tensorf> state;

  tensorf& p(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw error("model: unknown parameter " + name);
    return it->second;
  }
  const tensorf& p(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw error("model: unknown parameter " + name);
    return it->second;
  }
  tensorf& s(const std::string& name) {
    auto it = state.find(name);
    if (it == state.end()) throw error("model: unknown state tensor " + name);
    return it->second;
  }
  const tensorf& s(const std::string& name) const {
    auto it = state.find(name);
    if (it == state.end()) throw error("model: unknown state tensor " + name);
    return it->second;
  }

  void add_param(const std::string& name, tensorf t) {
    param_order.push_back(name);
    params.emplace(name, std::move(t));
  }
  void add_state(const std::string& name, tensorf t) {
    state_order.push_back(name);
    state.emplace(name, std::move(t));
  }
};

struct param_report {
  long long total = 0;
  long long encoder = 0;
  long long decoder = 0;
};

inline param_report param_count(const model& m) {
  param_report r;
  for (const auto& name : m.param_order) {
    const long long n = static_cast<long long>(m.params.at(name).numel());
    r.total += n;
    if (name.rfind("enc.", 0) == 0)
      r.encoder += n;
    else
      r.decoder += n;
  }
  return r;
}

// ------------------------------------------------------------- building ----

namespace detail {

inline void init_conv(model& m, rng& rg, const std::string& prefix, int cout,
                      int cin_per_group, int k, int groups_cout_dim) {
  // He-uniform over fan-in; biases start at zero.
  const float limit = std::sqrt(6.0f / static_cast<float>(cin_per_group * k * k));
  tensorf w({groups_cout_dim, cin_per_group, k, k});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rg.uniform_f(-limit, limit);
  m.add_param(prefix + ".w", std::move(w));
  m.add_param(prefix + ".b", tensorf({cout}, 0.0f));
}

inline void init_bn(model& m, const std::string& prefix, int c) {
  m.add_param(prefix + ".gamma", tensorf({c}, 1.0f));
  m.add_param(prefix + ".beta", tensorf({c}, 0.0f));
  m.add_state(prefix + ".mean", tensorf({c}, 0.0f));
  m.add_state(prefix + ".var", tensorf({c}, 1.0f));
}

inline void init_mbconv(model& m, rng& rg, const std::string& pfx, int cin,
                        int cout, int expand, int se_red) {
  const int e = cin * expand;
  init_conv(m, rg, pfx + ".expand.conv", e, cin, 1, e);
  init_bn(m, pfx + ".expand.bn", e);
  init_conv(m, rg, pfx + ".dw.conv", e, 1, 3, e);
  init_bn(m, pfx + ".dw.bn", e);
  init_conv(m, rg, pfx + ".se.fc1", se_red, e, 1, se_red);
  init_conv(m, rg, pfx + ".se.fc2", e, se_red, 1, e);
  init_conv(m, rg, pfx + ".proj.conv", cout, e, 1, cout);
  init_bn(m, pfx + ".proj.bn", cout);
}

}  // namespace detail

inline model build_model(const model_config& cfg, std::uint64_t seed) {
  cfg.validate();
  model m;
  m.cfg = cfg;
  rng rg(seed);

  detail::init_conv(m, rg, "enc.stem.conv", cfg.stage_widths[0], 3, 3,
                    cfg.stage_widths[0]);
  detail::init_bn(m, "enc.stem.bn", cfg.stage_widths[0]);

  int cin = cfg.stage_widths[0];
  for (int s = 0; s < 5; ++s) {
    const int cout = cfg.stage_widths[static_cast<std::size_t>(s) + 1];
    for (int b = 0; b < cfg.stage_repeats[static_cast<std::size_t>(s)]; ++b) {
      const int bin = (b == 0) ? cin : cout;
      const std::string pfx =
          "enc.s" + std::to_string(s) + ".b" + std::to_string(b);
      detail::init_mbconv(m, rg, pfx, bin, cout, cfg.expand,
                          cfg.se_reduced(bin));
    }
    cin = cout;
  }

  // decoder: concat(skip) -> conv-bn-swish x2 -> upsample, four times
  const std::array<int, 4> skip_ch{cfg.stage_widths[4], cfg.stage_widths[3],
                                   cfg.stage_widths[2], cfg.stage_widths[1]};
  int dch = cfg.stage_widths[5];
  for (int u = 0; u < 4; ++u) {
    const int f = cfg.decoder_filters[static_cast<std::size_t>(u)];
    const std::string pfx = "dec.u" + std::to_string(u + 1);
    detail::init_conv(m, rg, pfx + ".conv1", f, dch + skip_ch[static_cast<std::size_t>(u)], 3, f);
    detail::init_bn(m, pfx + ".bn1", f);
    detail::init_conv(m, rg, pfx + ".conv2", f, f, 3, f);
    detail::init_bn(m, pfx + ".bn2", f);
    dch = f;
  }
  detail::init_conv(m, rg, "dec.head.conv", 1, dch, 1, 1);
  return m;
}

// ------------------------------------------------------------- contexts ----

// Training context: records every operation on a tape and exposes parameter
// vars so the optimizer can read gradients afterwards.
class tape_context {
 public:
  using value = var;

  tape_context(tape& t, model& m, bool train)
      : t_(t), m_(m), train_(train) {}

  var input(tensorf x) {
    require_finite(x, "model input");
    return t_.leaf(std::move(x));
  }

  var pvar(const std::string& name) {
    auto it = pvars_.find(name);
    if (it != pvars_.end()) return it->second;
    var v = t_.leaf(m_.p(name));
    pvars_.emplace(name, v);
    return v;
  }

  const std::unordered_map<std::string, var>& param_vars() const {
    return pvars_;
  }

  var conv(var x, const std::string& name, int stride, int pad) {
    return ops::conv2d(t_, x, pvar(name + ".w"), pvar(name + ".b"), stride, pad);
  }
  var dwconv(var x, const std::string& name, int stride, int pad) {
    return ops::depthwise_conv2d(t_, x, pvar(name + ".w"), pvar(name + ".b"),
                                 stride, pad);
  }
  var bn(var x, const std::string& prefix) {
    var g = pvar(prefix + ".gamma");
    var b = pvar(prefix + ".beta");
    if (train_)
      return ops::batchnorm_train(t_, x, g, b, m_.cfg.bn_eps,
                                  &m_.s(prefix + ".mean"),
                                  &m_.s(prefix + ".var"), m_.cfg.bn_momentum);
    return ops::batchnorm_infer(t_, x, g, b, m_.s(prefix + ".mean"),
                                m_.s(prefix + ".var"), m_.cfg.bn_eps);
  }
  var act(var x, nn::act kind) { return ops::activation(t_, x, kind); }
  var gap(var x) { return ops::global_avg_pool(t_, x); }
  var scalech(var x, var s) { return ops::scale_channels(t_, x, s); }
  var add(var a, var b) { return ops::add(t_, a, b); }
  var concat(var a, var b) { return ops::concat_channels(t_, a, b); }
  var up2(var x) { return ops::bilinear_upsample2x(t_, x); }

  tape& t() { return t_; }

 private:
  tape& t_;
  model& m_;
  bool train_;
  std::unordered_map<std::string, var> pvars_;
};

// Plain evaluation context, templated on the scalar type. Pure: train mode
// normalizes with batch statistics but never touches the running averages,
// which is what a finite-difference recompute needs.
template <class T>
class eval_context {
 public:
  using value = tensor<T>;

  eval_context(const model& m, bool train) : m_(m), train_(train) {}

  tensor<T> input(tensorf x) {
    require_finite(x, "model input");
    return cast<T>(x);
  }

  tensor<T> fetch(const std::string& name) { return cast<T>(m_.p(name)); }

  tensor<T> conv(const tensor<T>& x, const std::string& name, int stride,
                 int pad) {
    return nn::conv2d(x, fetch(name + ".w"), fetch(name + ".b"), stride, pad);
  }
  tensor<T> dwconv(const tensor<T>& x, const std::string& name, int stride,
                   int pad) {
    return nn::depthwise_conv2d(x, fetch(name + ".w"), fetch(name + ".b"),
                                stride, pad);
  }
  tensor<T> bn(const tensor<T>& x, const std::string& prefix) {
    if (train_) {
      auto f = nn::batchnorm_train(x, fetch(prefix + ".gamma"),
                                   fetch(prefix + ".beta"),
                                   static_cast<T>(m_.cfg.bn_eps));
      return std::move(f.y);
    }
    return nn::batchnorm_infer(x, fetch(prefix + ".gamma"),
                               fetch(prefix + ".beta"),
                               cast<T>(m_.s(prefix + ".mean")),
                               cast<T>(m_.s(prefix + ".var")),
                               static_cast<T>(m_.cfg.bn_eps));
  }
  tensor<T> act(const tensor<T>& x, nn::act kind) {
    return nn::activation(x, kind);
  }
  tensor<T> gap(const tensor<T>& x) { return nn::global_avg_pool(x); }
  tensor<T> scalech(const tensor<T>& x, const tensor<T>& s) {
    return nn::scale_channels(x, s);
  }
  tensor<T> add(const tensor<T>& a, const tensor<T>& b) { return nn::add(a, b); }
  tensor<T> concat(const tensor<T>& a, const tensor<T>& b) {
    return nn::concat_channels(a, b);
  }
  tensor<T> up2(const tensor<T>& x) { return nn::bilinear_upsample2x(x); }

 private:
  const model& m_;
  bool train_;
};

// -------------------------------------------------------------- forward ----

namespace detail {

template <class Ctx>
typename Ctx::value mbconv(Ctx& cx, const std::string& pfx,
                           typename Ctx::value x, int cin, int cout,
                           int stride) {
  using V = typename Ctx::value;
  V h = cx.conv(x, pfx + ".expand.conv", 1, 0);
  h = cx.bn(h, pfx + ".expand.bn");
  h = cx.act(h, nn::act::swish);
  h = cx.dwconv(h, pfx + ".dw.conv", stride, 1);
  h = cx.bn(h, pfx + ".dw.bn");
  h = cx.act(h, nn::act::swish);
  // squeeze-excitation gate
  V s = cx.gap(h);
  s = cx.conv(s, pfx + ".se.fc1", 1, 0);
  s = cx.act(s, nn::act::swish);
  s = cx.conv(s, pfx + ".se.fc2", 1, 0);
  s = cx.act(s, nn::act::sigmoid);
  h = cx.scalech(h, s);
  h = cx.conv(h, pfx + ".proj.conv", 1, 0);
  h = cx.bn(h, pfx + ".proj.bn");
  if (stride == 1 && cin == cout) h = cx.add(h, x);
  return h;
}

}  // namespace detail

// Single wiring shared by training, inference, and the double-precision
// oracle path. Input (B,3,S,S) in [0,1]; output (B,1,S,S) in (0,1).
template <class Ctx>
typename Ctx::value forward_net(Ctx& cx, const model_config& cfg,
                                typename Ctx::value x) {
  using V = typename Ctx::value;
  V h = cx.conv(x, "enc.stem.conv", 2, 1);
  h = cx.bn(h, "enc.stem.bn");
  h = cx.act(h, nn::act::swish);

  std::vector<V> skips;  // encoder features at /2, /4, /8, /16
  int cin = cfg.stage_widths[0];
  for (int s = 0; s < 5; ++s) {
    const int cout = cfg.stage_widths[static_cast<std::size_t>(s) + 1];
    for (int b = 0; b < cfg.stage_repeats[static_cast<std::size_t>(s)]; ++b) {
      const int bin = (b == 0) ? cin : cout;
      const int stride =
          (b == 0) ? cfg.stage_strides[static_cast<std::size_t>(s)] : 1;
      h = detail::mbconv(cx, "enc.s" + std::to_string(s) + ".b" + std::to_string(b),
                         h, bin, cout, stride);
    }
    cin = cout;
    if (s < 4) skips.push_back(h);
  }

  for (int u = 0; u < 4; ++u) {
    const std::string pfx = "dec.u" + std::to_string(u + 1);
    h = cx.concat(h, skips[static_cast<std::size_t>(3 - u)]);
    h = cx.conv(h, pfx + ".conv1", 1, 1);
    h = cx.bn(h, pfx + ".bn1");
    h = cx.act(h, nn::act::swish);
    h = cx.conv(h, pfx + ".conv2", 1, 1);
    h = cx.bn(h, pfx + ".bn2");
    h = cx.act(h, nn::act::swish);
    h = cx.up2(h);
  }
  h = cx.conv(h, "dec.head.conv", 1, 0);
  return cx.act(h, nn::act::sigmoid);
}

// Convenience inference entry point.
inline tensorf forward_infer(const model& m, const tensorf& batch) {
  check_shape(batch.ndim() == 4 && batch.dim(1) == 3 &&
                  batch.dim(2) == m.cfg.input_size &&
                  batch.dim(3) == m.cfg.input_size,
              "forward: input must be (B,3,S,S) with S = config input_size");
  eval_context<float> cx(m, false);
  return forward_net(cx, m.cfg, cx.input(batch));
}

}  // namespace ecs
