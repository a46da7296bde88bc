#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "dtgan/rng.hpp"

namespace dtgan::sanitizer {

struct SanitizeConfig {
  float clip = 1.0f;   // l2 norm bound C, > 0
  float sigma = 0.0f;  // noise multiplier, >= 0
  uint64_t seed = 0;   // used when constructing the noise stream externally
};

/// g / max(1, ||g||_2 / C). Identity below the threshold, direction
/// preserved above it. Rejects non-finite input.
Eigen::VectorXf clip(const Eigen::VectorXf& g, float bound);

/// DP-SGD estimator over a batch of per-sample gradients (one row each):
/// (1/B) sum_i [ clip(g_i, C) + N(0, sigma^2 C^2 I) ], noise drawn
/// independently per sample from `noise_rng`. With sigma = 0 this is the
/// exact mean of the clipped rows.
Eigen::VectorXf sanitize(const Eigen::MatrixXf& per_sample_grads, const SanitizeConfig& cfg,
                         Rng& noise_rng);

}  // namespace dtgan::sanitizer
