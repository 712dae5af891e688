#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecs/tensor.hpp"

namespace ecs {

// Bias-corrected Adam. One state entry per parameter tensor, keyed by name.
struct adam_state {
  struct slot {
    tensorf m, v;
  };
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  long t = 0;
  std::unordered_map<std::string, slot> slots;
};

// Updates one parameter in place. The step counter is advanced by the caller
// via adam_begin_step once per optimizer step.
inline void adam_update(adam_state& st, const std::string& name, tensorf& param,
                        const tensorf& grad) {
  check_shape(param.same_shape(grad), "adam: param/grad shape mismatch");
  auto it = st.slots.find(name);
  if (it == st.slots.end()) {
    it = st.slots.emplace(name, adam_state::slot{tensorf(param.shape(), 0.0f),
                                                 tensorf(param.shape(), 0.0f)}).first;
  }
  adam_state::slot& s = it->second;
  check_shape(s.m.same_shape(param), "adam: state/param shape mismatch");
  const float b1 = st.beta1, b2 = st.beta2;
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(st.t));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(st.t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    s.m[i] = b1 * s.m[i] + (1.0f - b1) * grad[i];
    s.v[i] = b2 * s.v[i] + (1.0f - b2) * grad[i] * grad[i];
    const float mhat = s.m[i] / c1;
    const float vhat = s.v[i] / c2;
    param[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

inline void adam_begin_step(adam_state& st) { ++st.t; }

// Halves the learning rate when the watched loss stops improving.
struct plateau_scheduler {
  float factor = 0.5f;
  int patience = 5;
  float min_lr = 1e-5f;
  float best = std::numeric_limits<float>::max();
  int bad_epochs = 0;

  // Returns true when the learning rate was reduced this call.
  bool step(float loss, float& lr) {
    if (loss < best) {
      best = loss;
      bad_epochs = 0;
      return false;
    }
    if (++bad_epochs <= patience) return false;
    bad_epochs = 0;
    const float next = std::max(lr * factor, min_lr);
    const bool reduced = next < lr;
    lr = next;
    return reduced;
  }
};

}  // namespace ecs
