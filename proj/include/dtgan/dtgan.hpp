#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtgan/accountant.hpp"
#include "dtgan/neural.hpp"
#include "dtgan/rng.hpp"
#include "dtgan/tabular.hpp"

namespace dtgan::gan {

inline constexpr float kClipBound = 1.0f;  // fixed by the gradient penalty

enum class Variant { none, dp_discriminator, dp_generator };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct DtganConfig {
  Variant variant = Variant::none;
  double sigma = 0.0;  // <= 0 with a budget and max_epochs means: calibrate
  double tau = 10.0;
  int batch = 64;
  int n_critic = 5;
  std::optional<accountant::DpBudget> budget;
  long max_epochs = 0;  // 0 = stop on budget only
  int shards = 10;      // dp_generator: number of disjoint shards N_d
  bool info_loss = true;
  bool classification_loss = true;
  bool condition_loss = true;
  bool strict_dp = true;  // dp_discriminator: force info/classification off
  uint64_t seed = 0;
  int noise_dim = 100;
  std::vector<int> gen_hidden = {256, 256};
  std::vector<int> disc_hidden = {256, 256};
  std::vector<int> cls_hidden = {64};
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.9f;
  std::string preset = "default";  // "default" | "baseline"

  std::string to_json() const;
  static DtganConfig from_json(const std::string& json);
  void validate() const;
};

struct LossBreakdown {
  double wasserstein = 0.0;    // E[D(fake)] - E[D(real)]
  double penalty = 0.0;        // tau * E[(||grad D(interp)|| - 1)^2]
  double grad_norm_mean = 0.0; // mean interpolate gradient norm
  double adversarial = 0.0;    // -E[D(G(z))]
  double info_mean = 0.0;
  double info_sd = 0.0;
  double classification = 0.0;
  double condition = 0.0;
};

struct StepRecord {
  long iteration = 0;      // generator iterations so far
  long charged_steps = 0;  // ledger steps so far
  LossBreakdown losses;
  double epsilon = 0.0;  // spend after this record (inf when non-private)

  std::string to_json() const;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Spherical interpolation between two rows; falls back to linear blending
/// when the vectors are near parallel or near zero.
Eigen::VectorXf slerp(const Eigen::VectorXf& x0, const Eigen::VectorXf& x1, float t);
Eigen::MatrixXf slerp_batch(const Eigen::MatrixXf& x0, const Eigen::MatrixXf& x1,
                            const Eigen::VectorXf& ts);

/// Maps raw generator outputs into encoded space: tanh on continuous slots,
/// softmax within each categorical block.
class OutputTransform {
 public:
  explicit OutputTransform(const tabular::Schema& schema);

  Eigen::MatrixXf forward(const Eigen::MatrixXf& raw) const;
  /// dL/draw given transformed outputs y and upstream dL/dy.
  Eigen::MatrixXf backward(const Eigen::MatrixXf& y, const Eigen::MatrixXf& dy) const;

 private:
  struct Block {
    int offset;
    int width;
    bool categorical;
  };
  std::vector<Block> blocks_;
  int width_;
};

/// Critic loss values on one batch triple (report-side; gradients are
/// produced by d_grad_components).
struct DLossResult {
  double loss = 0.0;
  LossBreakdown breakdown;
};
DLossResult d_loss(const neural::DenseNetF& critic, const Eigen::MatrixXf& real,
                   const Eigen::MatrixXf& fake, const Eigen::VectorXf& ts, double tau);

/// The three gradient sources of one critic update, kept separate so DP
/// training can sanitize only the real-data term.
struct DiscGradComponents {
  neural::RowMatrix<float> real_rows;  // per-sample grads of -D(x_i), B x P
  Eigen::VectorXf fake_grad;           // grad of +E[D(fake)]
  Eigen::VectorXf penalty_grad;        // grad of tau * E[(||grad|| - 1)^2]
  double wasserstein = 0.0;
  double penalty = 0.0;
  double grad_norm_mean = 0.0;
};
DiscGradComponents d_grad_components(const neural::DenseNetF& critic, const Eigen::MatrixXf& real,
                                     const Eigen::MatrixXf& fake, const Eigen::VectorXf& ts,
                                     double tau);

/// Information-loss value and gradient w.r.t. the fake features:
/// || mean f_r - mean f_f ||_2 + || sd f_r - sd f_f ||_2 (population sd).
struct InfoLossResult {
  double mean_term = 0.0;
  double sd_term = 0.0;
  Eigen::MatrixXf d_fake;  // B x F
};
InfoLossResult info_loss(const Eigen::MatrixXf& f_real, const Eigen::MatrixXf& f_fake);

/// Per-loss generator gradients in raw output space (each dy is scaled so
/// that param_grads(trace, dy) equals the loss gradient). Kept separate so
/// the DP generator can sanitize adversarial/info/classification paths and
/// leave the condition path clean.
struct GeneratorGradSignals {
  LossBreakdown losses;
  Eigen::MatrixXf dy_adversarial;
  Eigen::MatrixXf dy_info;            // zero-size when disabled
  Eigen::MatrixXf dy_classification;  // zero-size when disabled
  Eigen::MatrixXf dy_condition;       // zero-size when disabled
};

/// The releasable artifact: generator weights + schema + accounting
/// transcript. Holds no training rows.
struct TrainedModel {
  neural::DenseNetF generator;
  tabular::Schema schema;
  accountant::Transcript transcript;
  std::string config_json;  // resolved config echo
  int noise_dim = 100;
  std::string stop_reason;  // "budget" | "max_epochs"
  std::vector<StepRecord> history;
};

TrainedModel train_dtgan(const DtganConfig& config, const tabular::Schema& schema,
                         const tabular::Table& data, const StepCallback& on_step = {});
TrainedModel train_dtgan_d(const DtganConfig& config, const tabular::Schema& schema,
                           const tabular::Table& data, const StepCallback& on_step = {});
TrainedModel train_dtgan_g(const DtganConfig& config, const tabular::Schema& schema,
                           const tabular::Table& data, const StepCallback& on_step = {});

/// Draws conditions and noise, runs the generator, and decodes. Reads no
/// training data.
tabular::Table sample(const TrainedModel& model, long n, Rng rng);
tabular::Table sample(const TrainedModel& model, long n, uint64_t seed);

void save_model(const TrainedModel& model, const std::string& path);  // atomic
TrainedModel load_model(const std::string& path);

}  // namespace dtgan::gan
