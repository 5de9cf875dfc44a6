#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace imip {

template <typename S>
struct AdamConfig {
  S lr = S(1e-5);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S epsilon = S(1e-8);
};

// Moments for a fixed set of parameter blocks plus one shared step counter.
// Moments are zero until the first update.
template <typename S>
struct AdamState {
  AdamConfig<S> config;
  std::int64_t step_count = 0;
  std::vector<std::vector<S>> first_moment;
  std::vector<std::vector<S>> second_moment;

  AdamState() = default;
  AdamState(AdamConfig<S> cfg, const std::vector<std::size_t>& block_sizes)
      : config(cfg) {
    for (std::size_t n : block_sizes) {
      first_moment.emplace_back(n, S(0));
      second_moment.emplace_back(n, S(0));
    }
  }
};

template <typename S>
struct AdamBlock {
  S* params;
  const S* grads;
  std::size_t n;
  std::string name;  // used in diagnostics only
};

// One bias-corrected Adam update over all blocks. Deterministic given
// (params, grads, state); throws on non-finite gradients, naming the block.
template <typename S>
void adam_step(const std::vector<AdamBlock<S>>& blocks, AdamState<S>& state) {
  if (blocks.size() != state.first_moment.size())
    throw std::invalid_argument("adam_step: block count mismatch");

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const AdamBlock<S>& b = blocks[bi];
    if (b.n != state.first_moment[bi].size())
      throw std::invalid_argument("adam_step: block size mismatch in " + b.name);
    for (std::size_t i = 0; i < b.n; ++i)
      if (!std::isfinite(double(b.grads[i])))
        throw std::runtime_error("adam_step: non-finite gradient in " + b.name);
  }

  state.step_count += 1;
  const S b1 = state.config.beta1, b2 = state.config.beta2;
  const S corr1 = S(1) - S(std::pow(double(b1), double(state.step_count)));
  const S corr2 = S(1) - S(std::pow(double(b2), double(state.step_count)));

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const AdamBlock<S>& b = blocks[bi];
    S* m = state.first_moment[bi].data();
    S* v = state.second_moment[bi].data();
    for (std::size_t i = 0; i < b.n; ++i) {
      const S g = b.grads[i];
      m[i] = b1 * m[i] + (S(1) - b1) * g;
      v[i] = b2 * v[i] + (S(1) - b2) * g * g;
      const S m_hat = m[i] / corr1;
      const S v_hat = v[i] / corr2;
      b.params[i] -= state.config.lr * m_hat / (S(std::sqrt(double(v_hat))) + state.config.epsilon);
    }
  }
}

}  // namespace imip
