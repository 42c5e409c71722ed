// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fgmatch/errors.hpp"
#include "fgmatch/heads.hpp"

namespace fgmatch {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// First/second moment estimates, one buffer per parameter block.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  template <class Real>
  static AdamState for_params(const BasicHeadParams<Real>& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.m = params.zero_gradients();
    s.v = params.zero_gradients();
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update. All gradients are checked before any
/// parameter changes; a non-finite entry raises NumericError naming its block.
template <class Real>
void adam_step(BasicHeadParams<Real>& params, const Gradients& grads, AdamState& state) {
  const auto& cfg = state.config;
  if (!(cfg.lr > 0.0)) throw UsageError("adam: learning rate must be positive");
  if (grads.size() != params.blocks.size() || state.m.size() != params.blocks.size() ||
      state.v.size() != params.blocks.size()) {
    throw UsageError("adam: gradient/state block count does not match parameters");
  }
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const std::size_t n = params.blocks[b].value.span().size();
    if (grads[b].size() != n || state.m[b].size() != n || state.v[b].size() != n) {
      throw UsageError("adam: shape mismatch in block '" + params.blocks[b].name + "'");
    }
    for (double g : grads[b]) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter block '" + params.blocks[b].name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto values = params.blocks[b].value.span();
    auto& m = state.m[b];
    auto& v = state.v[b];
    const auto& g = grads[b];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      values[i] = static_cast<Real>(static_cast<double>(values[i]) - update);
    }
  }
}

}  // namespace fgmatch
