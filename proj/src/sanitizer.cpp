#include "dtgan/sanitizer.hpp"

#include <cassert>
#include <cmath>

#include "dtgan/common.hpp"

namespace dtgan::sanitizer {

Eigen::VectorXf clip(const Eigen::VectorXf& g, float bound) {
  if (!(bound > 0.0f)) throw ConfigError("clip bound must be > 0");
  if (!g.allFinite()) throw DataError("gradient has non-finite entries");
  float norm = g.norm();
  float scale = 1.0f / std::max(1.0f, norm / bound);
  return g * scale;
}

Eigen::VectorXf sanitize(const Eigen::MatrixXf& per_sample_grads, const SanitizeConfig& cfg,
                         Rng& noise_rng) {
  if (per_sample_grads.rows() < 1) throw ConfigError("batch must be non-empty");
  if (!(cfg.sigma >= 0.0f)) throw ConfigError("sigma must be >= 0");

  const auto batch = per_sample_grads.rows();
  const auto dim = per_sample_grads.cols();
  const float noise_std = cfg.sigma * cfg.clip;

  Eigen::VectorXf acc = Eigen::VectorXf::Zero(dim);
  for (Eigen::Index i = 0; i < batch; ++i) {
    Eigen::VectorXf clipped = clip(per_sample_grads.row(i).transpose(), cfg.clip);
    assert(clipped.norm() <= cfg.clip * (1.0f + 1e-5f));
    acc += clipped;
    if (noise_std > 0.0f) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        acc[d] += noise_std * static_cast<float>(noise_rng.normal());
      }
    }
  }
  return acc / static_cast<float>(batch);
}

}  // namespace dtgan::sanitizer
